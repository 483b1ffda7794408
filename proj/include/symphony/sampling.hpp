#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"
#include "symphony/dissonance.hpp"

namespace symphony {

/// Playable [low, high] MIDI pitch bounds per General MIDI program.
using RangeTable = std::array<std::pair<int, int>, 128>;
RangeTable default_range_table();
RangeTable open_range_table();

struct SamplingConfig {
  double top_p = 0.99;
  double temperature = 1.0;
  DissonanceParams params{1.0, 10.0};
  std::uint64_t seed = 0;
  RangeTable range_table = default_range_table();
  int retry_budget = 8;
};

nlohmann::json sampling_to_json(const SamplingConfig& c);
/// Missing fields keep their defaults; "range_table" may list overrides as
/// {"program": p, "low": l, "high": h}.
SamplingConfig sampling_from_json(const nlohmann::json& j);

/// Temperature-scaled nucleus distribution: the smallest set of most likely
/// tokens whose mass reaches top_p, renormalized. Throws SamplingError when
/// every logit is -inf.
std::vector<double> nucleus_probs(std::span<const double> logits, double top_p, double temperature);
int nucleus_sample(std::span<const double> logits, const SamplingConfig& cfg, std::mt19937_64& rng);

/// Sets pitch logits outside [low, high] to -inf.
void mask_pitch_range(std::span<double> logits, std::pair<int, int> range);

}  // namespace symphony
