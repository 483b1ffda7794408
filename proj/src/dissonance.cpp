#include "symphony/dissonance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "symphony/errors.hpp"
#include "symphony/tokenizer.hpp"

namespace symphony {

namespace {

// Interval classes 1, 5 and 6 are fixed; 2-4 follow the Plomp-Levelt ordering.
constexpr std::array<double, 7> kDefaultIc = {0.0, 1.0, 0.55, 0.2, 0.15, 0.1, 0.95};

}  // namespace

DissonanceMatrix::DissonanceMatrix() : DissonanceMatrix(kDefaultIc, RegisterDecay{}) {}

DissonanceMatrix::DissonanceMatrix(const std::array<double, 7>& interval_weights, RegisterDecay decay)
    : ic_(interval_weights), decay_(decay), table_(128 * 128) {
  for (double v : ic_) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("interval weights must lie in [0, 1]");
  }
  for (int a = 0; a < 128; ++a) {
    for (int b = 0; b < 128; ++b) {
      const int ic = interval_class(a, b);
      double w = ic_[ic];
      if (decay_.enabled && ic >= 1 && ic <= 4) {
        const double depth = std::max(0, decay_.pivot - std::min(a, b));
        w = std::min(1.0, w * std::min(2.0, 1.0 + decay_.rate * depth));
      }
      table_[a * 128 + b] = w;
    }
  }
}

DissonanceMatrix default_w() { return DissonanceMatrix(); }

double pair_weight(int p1, int p2, const DissonanceMatrix& w) { return w.pair(p1, p2); }

nlohmann::json w_to_json(const DissonanceMatrix& w) {
  return {{"ic", w.interval_weights()},
          {"decay", {{"enabled", w.decay().enabled}, {"pivot", w.decay().pivot}, {"rate", w.decay().rate}}}};
}

DissonanceMatrix w_from_json(const nlohmann::json& j) {
  auto ic = kDefaultIc;
  if (j.contains("ic")) {
    const auto v = j.at("ic").get<std::vector<double>>();
    if (v.size() != 7) throw ValidationError("\"ic\" must hold 7 interval-class weights");
    std::copy(v.begin(), v.end(), ic.begin());
  }
  RegisterDecay decay;
  if (j.contains("decay")) {
    const auto& d = j.at("decay");
    decay.enabled = d.value("enabled", false);
    decay.pivot = d.value("pivot", decay.pivot);
    decay.rate = d.value("rate", decay.rate);
  }
  return DissonanceMatrix(ic, decay);
}

namespace {

void normalize(std::array<double, 128>& v, double count) {
  if (count <= 0.0) return;
  for (double& x : v) x /= count;
}

OccupancyFrame frame_at(const std::vector<PlacedNote>& notes, const HarmonySkeleton& sk, int t) {
  const int beat = sk.beat_at(t);
  if (beat < 0) throw BoundsError("time step " + std::to_string(t) + " beyond skeleton");
  const PcSet allowed = sk.beats[beat].allowed();
  OccupancyFrame f;
  f.t = t;
  double hc = 0.0;
  double nc = 0.0;
  for (int p : sounding_at(notes, t)) {
    if (allowed & pc_bit(p)) {
      f.h[p] += 1.0;
      hc += 1.0;
    } else {
      f.n[p] += 1.0;
      nc += 1.0;
    }
  }
  normalize(f.h, hc);
  normalize(f.n, nc);
  return f;
}

}  // namespace

OccupancyFrame classify(const Score& score, const HarmonySkeleton& sk, int t) {
  return frame_at(placed_notes(score), sk, t);
}

DissonanceScore d_total(const Score& score, const HarmonySkeleton& sk, const DissonanceParams& params,
                        const DissonanceMatrix& w) {
  const auto notes = placed_notes(score);
  const int steps = sk.total_length();
  DissonanceScore out;
  out.steps = steps;
  double hn_sum = 0.0;
  double nn_sum = 0.0;
  std::vector<int> hs;
  std::vector<int> ns;
  for (int t = 0; t < steps; ++t) {
    const auto f = frame_at(notes, sk, t);
    hs.clear();
    ns.clear();
    for (int p = 0; p < 128; ++p) {
      if (f.h[p] > 0.0) hs.push_back(p);
      if (f.n[p] > 0.0) ns.push_back(p);
    }
    double hn = 0.0;
    for (int i : hs) {
      for (int j : ns) hn += f.h[i] * w.pair(i, j) * f.n[j];
    }
    double nn = 0.0;
    for (int i : ns) {
      for (int j : ns) nn += f.n[i] * w.pair(i, j) * f.n[j];
    }
    hn_sum += hn;
    nn_sum += 0.5 * nn;
  }
  out.total = params.lambda_hn * hn_sum + params.lambda_nn * nn_sum;
  if (steps > 0) {
    out.hn_mean = hn_sum / steps;
    out.nn_mean = nn_sum / steps;
  }
  return out;
}

double pitch_penalty(int pitch, const PitchContext& ctx) {
  const auto& w = *ctx.w;
  const bool harmonic = ctx.allowed & pc_bit(pitch);
  double against_h = 0.0;
  double against_n = 0.0;
  for (int a : ctx.active) {
    if (ctx.allowed & pc_bit(a)) {
      against_h += w.pair(pitch, a);
    } else {
      against_n += w.pair(pitch, a);
    }
  }
  if (harmonic) return ctx.params.lambda_hn * against_n;
  return ctx.params.lambda_hn * against_h + ctx.params.lambda_nn * against_n;
}

namespace {

double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

std::vector<double> adjust_pitch_logits(std::span<const double> logits, const PitchContext& ctx) {
  std::vector<double> out(logits.begin(), logits.end());
  const int n = std::min<int>(128, static_cast<int>(logits.size()));
  std::vector<double> before(out.begin(), out.begin() + n);
  for (int p = 0; p < n; ++p) {
    if (std::isfinite(out[p])) out[p] -= pitch_penalty(p, ctx);
  }
  const double lse_before = log_sum_exp(before);
  if (!std::isfinite(lse_before)) return out;
  const double lse_after = log_sum_exp(std::span<const double>(out.data(), n));
  const double shift = lse_before - lse_after;
  for (int p = 0; p < n; ++p) out[p] += shift;
  return out;
}

}  // namespace symphony
