#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "symphony/autograd.hpp"
#include "symphony/nn.hpp"
#include "symphony/tokenizer.hpp"

namespace symphony::model {

using ad::Matrix;
using ad::Var;

// Decoder-input symbols beyond the token vocabulary.
inline constexpr int kBosId = kTokenVocabSize;
inline constexpr int kPadId = kTokenVocabSize + 1;
inline constexpr int kModelVocab = kTokenVocabSize + 2;
inline constexpr int kBarLengthVocab = kMaxBarLength + 1;
inline constexpr int kEndOfBar = kMaxTracksPerBar;
inline constexpr int kTrackVocab = kMaxTracksPerBar + 1;
inline constexpr int kInstrumentVocab = 128;
inline constexpr int kNone = -1;

inline constexpr double kMetaWeight = 0.05;
inline constexpr double kHarmonyWeight = 0.5;
inline constexpr double kMusicWeight = 1.0;

struct ModelConfig {
  int B = 8;
  int T = 4;
  int E = 16;
  int E_h = 16;
  int D = 64;
  int heads = 4;
  int event_encoder_layers = 1;
  int track_encoder_layers = 1;
  int bar_decoder_layers = 1;
  int track_decoder_layers = 1;
  int harmony_decoder_layers = 1;
  int music_decoder_layers = 2;
  /// How many bars ahead a music bar may read harmony in the bar decoder; -1 = whole window.
  int harmony_lookahead = -1;
  bool harmony_stream = true;
  bool previous_bar_stream = true;
  std::uint64_t seed = 1;

  /// Sizes of the published large model, kept for reference only.
  static ModelConfig full_scale();
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

struct CellExample {
  int track_id = 0;
  int instrument = 0;
  std::vector<int> tokens;  // token ids ending with EOT
  friend bool operator==(const CellExample&, const CellExample&) = default;
};

struct BarExample {
  int bar_length = 32;
  std::vector<int> harmony;  // harmony token ids ending with EOT
  std::vector<CellExample> cells;
  friend bool operator==(const BarExample&, const BarExample&) = default;
};

struct WindowExample {
  std::vector<BarExample> bars;
  friend bool operator==(const WindowExample&, const WindowExample&) = default;
};

/// Row i of bar b holds the slot of the same track id in bar b-1, or kNone.
using TrackPrevIndexMap = std::vector<std::vector<int>>;
TrackPrevIndexMap build_track_prev_index_map(const std::vector<std::vector<int>>& track_ids);

struct LossBreakdown {
  double l_meta = 0.0;
  double l_harm = 0.0;
  double l_music = 0.0;
  double total = 0.0;
};
double combine_losses(double l_meta, double l_harm, double l_music);

/// Hidden states of one decoded cell after each music-decoder layer except the last.
struct CellMemory {
  std::vector<Matrix> layer_outputs;
  int length = 0;
};

struct MusicDecodeInput {
  /// Decoder input ids per cell (BOS first); every cell is laid out over `rows_per_cell` rows.
  std::vector<std::vector<int>> inputs;
  int rows_per_cell = 0;
  Var context;    // [cells, D] track-aligned context
  Var meta;       // [cells, D] metadata embedding
  Var harmony;    // harmony event context rows
  std::vector<std::pair<int, int>> harmony_rows;  // per cell: (first row, valid rows) in `harmony`
  int harmony_stride = 0;                         // rows per harmony cell in `harmony`
  /// Previous-bar retrieval, either a cell of this batch (prev_cell) or a cached memory.
  std::vector<int> prev_cell;
  std::vector<const CellMemory*> prev_memory;
};

struct MusicDecodeOutput {
  Var logits;                        // [cells * rows_per_cell, kTokenVocabSize]; padding rows are zero
  std::vector<Var> layer_outputs;    // after each layer
  /// For every even layer, the cell each cell retrieved from (-1 = skipped).
  std::vector<std::vector<int>> retrieval_trace;
};

struct Activations {
  Matrix z_hB, z_T, z_B, c_hB, c_B, c_T, c_h;
};

struct ForwardResult {
  Var l_meta, l_harm, l_music, total;
  LossBreakdown values;
  Var music_logits;      // [cells * E, vocab]
  Var harmony_logits;    // [bars * E_h, vocab]
  Var bar_length_logits; // [bars, 129]
  Var track_logits;      // [track targets, 33]
  Var instrument_logits; // [cells, 128]
  Activations acts;
  std::vector<std::vector<int>> retrieval_trace;
  std::vector<std::pair<int, int>> cells;  // (bar, slot) per cell
  /// Rows per cell in the music and harmony logits: the longest cell of the window.
  int music_stride = 0;
  int harmony_stride = 0;
  /// Targets aligned with the logits above (-1 = padding).
  std::vector<int> music_targets, harmony_targets;
};

/// Per-stage attention-score entry counts for one forward pass.
enum Stage : int {
  kStageEventEncoderMusic = 0,
  kStageEventEncoderHarmony,
  kStageTrackEncoder,
  kStageBarDecoder,
  kStageTrackDecoder,
  kStageHarmonyDecoder,
  kStageMusicSelf,
  kStageMusicCrossHarmony,
  kStageMusicCrossPrevious,
  kStageCount
};
const char* stage_name(int stage);
using StageCounts = std::array<long long, kStageCount>;

/// Counts implied by the layer layout on a full grid (every bar, slot and event present).
StageCounts analytic_attention_cost(const ModelConfig& cfg);

class HierModel {
 public:
  explicit HierModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

  ForwardResult forward(const WindowExample& w) const;
  /// Mean of the per-window components over a batch.
  LossBreakdown batch_loss(const std::vector<WindowExample>& batch, Var* total_out) const;

  // Individual stages, exposed for inference and tests.
  Var embed_tokens(const std::vector<std::vector<int>>& cells, int rows_per_cell, const Var& additive) const;
  Var encode_events(const std::vector<std::vector<int>>& cells, int rows_per_cell, const Var& additive,
                    int counter_slot) const;
  Var encode_tracks(const Var& z_T, const std::vector<int>& tracks_per_bar) const;
  std::pair<Var, Var> bar_decode(const Var& z_hB, const Var& z_B) const;
  Var right_shift(const Var& c, bool harmony) const;
  Var track_decode(const Var& shifted_c_B, const Var& z_T, const std::vector<int>& tracks_per_bar) const;
  /// Context seen by slot t of each bar: the shifted bar context at slot 0, else c_T of slot t-1.
  Var track_context(const Var& shifted_c_B, const Var& c_T, const std::vector<int>& tracks_per_bar,
                    bool include_end_slot) const;
  /// Decoder inputs are laid out over rows = inputs[0].size() per bar.
  Var harmony_event_decode(const Var& shifted_c_hB, const std::vector<std::vector<int>>& inputs) const;
  Var harmony_logits(const Var& c_h) const;
  /// Harmony logits for the first `lengths[b]` rows of each bar; other rows are zero.
  Var harmony_logits(const Var& c_h, const std::vector<int>& lengths, int stride) const;
  MusicDecodeOutput music_event_decode(const MusicDecodeInput& in) const;
  Var meta_embedding(const std::vector<int>& bar_lengths, const std::vector<int>& track_ids,
                     const std::vector<int>& instruments) const;
  Var bar_length_logits(const Var& shifted_c_B) const;
  Var track_logits(const Var& context) const;
  Var instrument_logits(const Var& context, const std::vector<int>& track_ids) const;

  /// Counts measured by running a full-grid random window through forward().
  StageCounts measure_attention_cost() const;

 private:
  Var project_valid(const nn::LayerNorm& ln, const nn::Linear& head, const Var& x, const std::vector<int>& lengths,
                    int stride) const;

  ModelConfig cfg_;
  nn::ParamStore store_;
  Var tok_emb_, ev_pos_, trk_pos_, bar_pos_, stream_emb_;
  Var bar_len_emb_, track_emb_, inst_emb_;
  Var start_bar_, start_harmony_bar_;
  std::vector<nn::Block> event_encoder_, track_encoder_, bar_decoder_, track_decoder_, harmony_decoder_,
      music_decoder_;
  nn::LayerNorm music_out_ln_, harmony_out_ln_, bar_len_ln_, track_ln_, inst_ln_;
  nn::Linear music_out_, harmony_out_, bar_len_head_, track_head_, inst_head_;
};

/// Decoder inputs (BOS + all but the last token) padded to `rows`.
std::vector<int> shifted_input(const std::vector<int>& tokens, int rows);
/// Targets padded with -1 to `rows`.
std::vector<int> padded_targets(const std::vector<int>& tokens, int rows);

}  // namespace symphony::model
