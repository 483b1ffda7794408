#pragma once

#include <string>
#include <vector>

#include "symphony/harmony.hpp"
#include "symphony/model.hpp"
#include "symphony/sampling.hpp"
#include "symphony/score.hpp"

namespace symphony {

struct GenerationStats {
  int retries = 0;     // grammar-violating samples that were redrawn
  int fallbacks = 0;   // cells closed early after the retry budget ran out
  int forced_eot = 0;  // cells closed because they reached E tokens
  std::vector<std::string> log;
};

struct GeneratedWindow {
  Score score;
  model::WindowExample window;  // the sampled tokens, ready for teacher forcing
  GenerationStats stats;
};

/// Samples one window conditioned on a harmony skeleton. Bar lengths follow
/// the skeleton; track ids, instruments and event tokens are sampled. Pitch
/// steps mask the instrument range, apply the dissonance adjustment against
/// the notes already sounding, then draw from the nucleus. Deterministic for a
/// fixed model, skeleton and seed. Throws ShapeError when the skeleton has
/// more bars than the model holds.
GeneratedWindow generate_window(const model::HierModel& m, const HarmonySkeleton& sk, const SamplingConfig& cfg);

}  // namespace symphony
