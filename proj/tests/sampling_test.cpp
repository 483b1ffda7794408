#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "symphony/errors.hpp"
#include "symphony/sampling.hpp"
#include "symphony/tokenizer.hpp"

namespace symphony {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> log_of(const std::vector<double>& probs) {
  std::vector<double> out;
  for (double p : probs) out.push_back(std::log(p));
  return out;
}

TEST(Nucleus, TruncatesToSmallestPrefixReachingTopP) {
  const auto p = nucleus_probs(log_of({0.6, 0.3, 0.09, 0.01}), 0.9, 1.0);
  ASSERT_EQ(p.size(), 4u);
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-12);
  EXPECT_EQ(p[2], 0.0);
  EXPECT_EQ(p[3], 0.0);
}

TEST(Nucleus, DominantTokenTakesAllMass) {
  const auto p = nucleus_probs(std::vector<double>{0.0, 45.0, 1.0}, 0.99, 1.0);
  EXPECT_EQ(p[1], 1.0);
  std::mt19937_64 rng(3);
  SamplingConfig cfg;
  for (int i = 0; i < 100; ++i) EXPECT_EQ(nucleus_sample(std::vector<double>{0.0, 45.0, 1.0}, cfg, rng), 1);
}

TEST(Nucleus, UniformLogitsKeepEveryToken) {
  const auto p = nucleus_probs(std::vector<double>(4, 2.5), 0.99, 1.0);
  for (double x : p) EXPECT_NEAR(x, 0.25, 1e-15);
}

TEST(Nucleus, TemperatureSharpensAndFlattens) {
  const std::vector<double> logits = {1.0, 0.0};
  const double base = nucleus_probs(logits, 1.0, 1.0)[0];
  EXPECT_GT(nucleus_probs(logits, 1.0, 0.5)[0], base);
  EXPECT_LT(nucleus_probs(logits, 1.0, 2.0)[0], base);
  EXPECT_NEAR(base, 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(Nucleus, MaskedTokensAreNeverDrawn) {
  std::mt19937_64 rng(5);
  SamplingConfig cfg;
  const std::vector<double> logits = {0.0, -kInf, 0.0, -kInf};
  for (int i = 0; i < 200; ++i) {
    const int t = nucleus_sample(logits, cfg, rng);
    EXPECT_TRUE(t == 0 || t == 2);
  }
}

TEST(Nucleus, RejectsDegenerateLogits) {
  EXPECT_THROW(nucleus_probs(std::vector<double>(3, -kInf), 0.99, 1.0), SamplingError);
  EXPECT_THROW(nucleus_probs(std::vector<double>{0.0, std::nan("")}, 0.99, 1.0), SamplingError);
}

TEST(Nucleus, DeterministicGivenSeed) {
  const std::vector<double> logits = {0.1, 0.4, -0.3, 0.2, 0.0};
  SamplingConfig cfg;
  std::mt19937_64 a(11), b(11);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(nucleus_sample(logits, cfg, a), nucleus_sample(logits, cfg, b));
}

TEST(RangeMask, BlocksPitchesOutsideRangeOnly) {
  std::vector<double> logits(kTokenVocabSize, 0.0);
  mask_pitch_range(logits, {55, 103});
  for (int id = 0; id < kTokenVocabSize; ++id) {
    const bool blocked = is_pitch_id(id) && (id < 55 || id > 103);
    EXPECT_EQ(std::isinf(logits[id]), blocked) << id;
  }
}

TEST(RangeTable, DefaultsAreOrderedAndWithinMidi) {
  const auto table = default_range_table();
  for (const auto& [lo, hi] : table) {
    EXPECT_LE(0, lo);
    EXPECT_LT(lo, hi);
    EXPECT_LE(hi, 127);
  }
  EXPECT_EQ(table[40], (std::pair<int, int>{55, 103}));
  for (const auto& r : open_range_table()) EXPECT_EQ(r, (std::pair<int, int>{0, 127}));
}

TEST(SamplingConfig, DefaultsAndJson) {
  const SamplingConfig d;
  EXPECT_EQ(d.top_p, 0.99);
  EXPECT_EQ(d.temperature, 1.0);
  EXPECT_EQ(d.params.lambda_hn, 1.0);
  EXPECT_EQ(d.params.lambda_nn, 10.0);
  EXPECT_EQ(d.retry_budget, 8);

  auto j = sampling_to_json(d);
  j["top_p"] = 0.5;
  j["range_table"] = nlohmann::json::array({{{"program", 0}, {"low", 40}, {"high", 80}}});
  const auto c = sampling_from_json(j);
  EXPECT_EQ(c.top_p, 0.5);
  EXPECT_EQ(c.range_table[0], (std::pair<int, int>{40, 80}));
  EXPECT_EQ(c.range_table[40], d.range_table[40]);
  EXPECT_THROW(sampling_from_json({{"top_p", 0.0}}), ValidationError);
  EXPECT_THROW(sampling_from_json({{"temperature", -1.0}}), ValidationError);
}

}  // namespace
}  // namespace symphony
