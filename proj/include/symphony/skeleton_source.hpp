#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "symphony/harmony.hpp"
#include "symphony/nn.hpp"

namespace symphony {

struct SkeletonRejection {
  std::size_t index = 0;
  std::vector<FilterReason> reasons;
};

struct SkeletonBatch {
  std::vector<HarmonySkeleton> accepted;
  std::vector<SkeletonRejection> rejected;
  std::size_t total = 0;
  double survival_rate() const { return total ? static_cast<double>(accepted.size()) / total : 0.0; }
  nlohmann::json report() const;
};

/// Runs every skeleton through filter_skeleton, keeping the survivors in order.
SkeletonBatch filter_skeletons(const std::vector<HarmonySkeleton>& skeletons, const FilterConfig& cfg);

/// Reads skeletons from a file: MIDI files are analyzed, JSON holds one
/// skeleton or an array of them, and .jsonl holds one skeleton per line.
std::vector<HarmonySkeleton> read_skeletons(const std::string& path);

struct SkeletonDecoderConfig {
  int width = 32;
  int heads = 2;
  int layers = 2;
  int max_beats = 64;
  std::uint64_t seed = 1;
};

/// A small causal decoder over per-beat chord symbols, used as a stand-in
/// skeleton generator. Sampled chords are voiced as a bass root plus the chord
/// tones in the octave above middle C, with no extensions.
class ToySkeletonDecoder {
 public:
  static constexpr int kNoChord = kTemplateCount;
  static constexpr int kBos = kTemplateCount + 1;
  static constexpr int kVocab = kTemplateCount + 2;

  explicit ToySkeletonDecoder(const SkeletonDecoderConfig& cfg = {});

  /// Full-batch training; returns the final mean cross-entropy per beat.
  double train(const std::vector<HarmonySkeleton>& corpus, int steps, double lr);
  HarmonySkeleton sample(std::mt19937_64& rng, const std::vector<int>& bar_lengths, double top_p = 0.99,
                         double temperature = 1.0) const;
  /// Mean log-probability per beat of the skeleton's chord sequence.
  double log_prob(const HarmonySkeleton& sk) const;

  nn::ParamStore& params() { return store_; }

 private:
  ad::Var logits(const std::vector<int>& inputs) const;

  SkeletonDecoderConfig cfg_;
  nn::ParamStore store_;
  ad::Var tok_emb_, pos_emb_;
  std::vector<nn::Block> blocks_;
  nn::LayerNorm ln_;
  nn::Linear out_;
};

int chord_symbol(const ChordTemplate& chord);
ChordTemplate chord_of_symbol(int symbol);
/// Bass root in octave 3 plus the chord tones between 60 and 71.
std::vector<int> voice_chord(const ChordTemplate& chord);

}  // namespace symphony
