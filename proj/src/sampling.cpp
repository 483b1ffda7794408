#include "symphony/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "symphony/errors.hpp"

namespace symphony {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Ranges per General MIDI family (8 programs each), refined for common
// orchestral programs.
constexpr std::array<std::pair<int, int>, 16> kFamilyRanges = {{
    {21, 108},  // piano
    {48, 108},  // chromatic percussion
    {36, 96},   // organ
    {40, 88},   // guitar
    {28, 67},   // bass
    {28, 103},  // strings
    {36, 96},   // ensemble
    {34, 84},   // brass
    {49, 91},   // reed
    {60, 96},   // pipe
    {36, 96},   // synth lead
    {36, 96},   // synth pad
    {36, 96},   // synth effects
    {48, 84},   // ethnic
    {48, 84},   // percussive
    {36, 84},   // sound effects
}};

}  // namespace

RangeTable default_range_table() {
  RangeTable t{};
  for (int p = 0; p < 128; ++p) t[static_cast<std::size_t>(p)] = kFamilyRanges[static_cast<std::size_t>(p / 8)];
  t[40] = {55, 103};  // violin
  t[41] = {48, 91};   // viola
  t[42] = {36, 76};   // cello
  t[43] = {28, 67};   // contrabass
  t[56] = {54, 86};   // trumpet
  t[57] = {40, 72};   // trombone
  t[58] = {28, 58};   // tuba
  t[60] = {34, 77};   // french horn
  t[68] = {58, 91};   // oboe
  t[70] = {34, 75};   // bassoon
  t[71] = {50, 94};   // clarinet
  t[72] = {74, 108};  // piccolo
  t[73] = {60, 96};   // flute
  return t;
}

RangeTable open_range_table() {
  RangeTable t{};
  t.fill({0, 127});
  return t;
}

nlohmann::json sampling_to_json(const SamplingConfig& c) {
  nlohmann::json ranges = nlohmann::json::array();
  for (int p = 0; p < 128; ++p) {
    const auto& r = c.range_table[static_cast<std::size_t>(p)];
    ranges.push_back({{"program", p}, {"low", r.first}, {"high", r.second}});
  }
  return {{"top_p", c.top_p},
          {"temperature", c.temperature},
          {"lambda_hn", c.params.lambda_hn},
          {"lambda_nn", c.params.lambda_nn},
          {"seed", c.seed},
          {"retry_budget", c.retry_budget},
          {"range_table", ranges}};
}

SamplingConfig sampling_from_json(const nlohmann::json& j) {
  SamplingConfig c;
  c.top_p = j.value("top_p", c.top_p);
  c.temperature = j.value("temperature", c.temperature);
  c.params.lambda_hn = j.value("lambda_hn", c.params.lambda_hn);
  c.params.lambda_nn = j.value("lambda_nn", c.params.lambda_nn);
  c.seed = j.value("seed", c.seed);
  c.retry_budget = j.value("retry_budget", c.retry_budget);
  if (j.contains("range_table")) {
    for (const auto& r : j.at("range_table")) {
      const int p = r.at("program").get<int>();
      const int lo = r.at("low").get<int>();
      const int hi = r.at("high").get<int>();
      if (p < 0 || p > 127 || lo < 0 || hi > 127 || lo > hi) throw ValidationError("invalid range table entry");
      c.range_table[static_cast<std::size_t>(p)] = {lo, hi};
    }
  }
  if (!(c.top_p > 0.0 && c.top_p <= 1.0)) throw ValidationError("top_p must lie in (0, 1]");
  if (!(c.temperature > 0.0)) throw ValidationError("temperature must be positive");
  if (c.retry_budget < 0) throw ValidationError("retry_budget must be non-negative");
  return c;
}

std::vector<double> nucleus_probs(std::span<const double> logits, double top_p, double temperature) {
  double m = kNegInf;
  for (double x : logits) {
    if (std::isnan(x)) throw SamplingError("NaN logit");
    m = std::max(m, x);
  }
  if (!std::isfinite(m)) throw SamplingError("every logit is -inf");
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp((logits[i] - m) / temperature);
    z += p[i];
  }
  for (double& x : p) x /= z;

  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    mass += p[order[keep]];
    ++keep;
    if (mass >= top_p - 1e-12) break;  // tolerate rounding in the running sum
  }
  std::vector<double> out(p.size(), 0.0);
  for (std::size_t i = 0; i < keep; ++i) out[order[i]] = p[order[i]] / mass;
  return out;
}

int nucleus_sample(std::span<const double> logits, const SamplingConfig& cfg, std::mt19937_64& rng) {
  const auto p = nucleus_probs(logits, cfg.top_p, cfg.temperature);
  std::discrete_distribution<int> pick(p.begin(), p.end());
  return pick(rng);
}

void mask_pitch_range(std::span<double> logits, std::pair<int, int> range) {
  const int n = std::min<int>(128, static_cast<int>(logits.size()));
  for (int p = 0; p < n; ++p) {
    if (p < range.first || p > range.second) logits[static_cast<std::size_t>(p)] = kNegInf;
  }
}

}  // namespace symphony
