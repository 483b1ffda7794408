#pragma once

#include <array>
#include <span>
#include <vector>

#include "json.hpp"
#include "symphony/harmony.hpp"
#include "symphony/score.hpp"

namespace symphony {

struct RegisterDecay {
  bool enabled = false;
  int pivot = 48;
  double rate = 0.05;
};

/// Symmetric clash weights between pitches, built from an interval-class table
/// and optionally amplified for close intervals in a low register.
class DissonanceMatrix {
 public:
  DissonanceMatrix();
  DissonanceMatrix(const std::array<double, 7>& interval_weights, RegisterDecay decay);

  const std::array<double, 7>& interval_weights() const { return ic_; }
  const RegisterDecay& decay() const { return decay_; }

  /// 12x12 pitch-class weight.
  double pc(int a, int b) const { return ic_[interval_class(a, b)]; }
  /// Weight between two concrete MIDI pitches, including register decay.
  double pair(int p1, int p2) const { return table_[p1 * 128 + p2]; }

 private:
  std::array<double, 7> ic_;
  RegisterDecay decay_;
  std::vector<double> table_;
};

DissonanceMatrix default_w();
double pair_weight(int p1, int p2, const DissonanceMatrix& w);

nlohmann::json w_to_json(const DissonanceMatrix& w);
DissonanceMatrix w_from_json(const nlohmann::json& j);

struct DissonanceParams {
  double lambda_hn = 1.0;
  double lambda_nn = 10.0;
};

/// Normalized occupancy of harmonic (h) and non-harmonic (n) pitches at one grid step.
struct OccupancyFrame {
  int t = 0;
  std::array<double, 128> h{};
  std::array<double, 128> n{};
};

OccupancyFrame classify(const Score& score, const HarmonySkeleton& sk, int t);

struct DissonanceScore {
  double total = 0.0;
  double hn_mean = 0.0;
  double nn_mean = 0.0;
  int steps = 0;
};

/// Harmonic/non-harmonic and non-harmonic/non-harmonic clash summed over
/// every grid step of the skeleton, weighted by `params`, plus per-step means.
DissonanceScore d_total(const Score& score, const HarmonySkeleton& sk, const DissonanceParams& params,
                        const DissonanceMatrix& w);

struct PitchContext {
  std::vector<int> active;  // pitches sounding at the pending onset
  PcSet allowed = 0;        // template + extensions of the beat
  DissonanceParams params;
  const DissonanceMatrix* w = nullptr;
};

/// Dissonance a candidate pitch would add against the active notes.
double pitch_penalty(int pitch, const PitchContext& ctx);

/// Lowers each pitch-token logit by its penalty, then shifts all pitch logits
/// so their total probability mass (and every non-pitch probability) is unchanged.
std::vector<double> adjust_pitch_logits(std::span<const double> logits, const PitchContext& ctx);

}  // namespace symphony
