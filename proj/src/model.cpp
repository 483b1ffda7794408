#include "symphony/model.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "symphony/errors.hpp"

namespace symphony::model {

namespace {

constexpr double kEmbeddingScale = 0.1;

std::vector<ad::AttentionSegment> per_cell_segments(int cells, int rows, ad::MaskKind kind,
                                                    const std::vector<int>* valid = nullptr) {
  std::vector<ad::AttentionSegment> segs;
  segs.reserve(static_cast<std::size_t>(cells));
  for (int c = 0; c < cells; ++c) {
    ad::AttentionSegment s{c * rows, rows, c * rows, rows, {kind, {}}};
    if (valid) s.k_valid = (*valid)[static_cast<std::size_t>(c)];
    segs.push_back(std::move(s));
  }
  return segs;
}

std::vector<ad::AttentionSegment> per_bar_segments(const std::vector<int>& tracks_per_bar, ad::MaskKind kind) {
  std::vector<ad::AttentionSegment> segs;
  int start = 0;
  for (int n : tracks_per_bar) {
    segs.push_back({start, n, start, n, {kind, {}}});
    start += n;
  }
  return segs;
}

Var run_stack(const std::vector<nn::Block>& blocks, Var x, const std::vector<ad::AttentionSegment>& segs, int slot) {
  for (const auto& b : blocks) x = b(x, segs, {}, {}, slot);
  return x;
}

Var mean_cross_entropy(const Var& logits, const std::vector<int>& targets, int* count_out = nullptr) {
  const int count = static_cast<int>(std::count_if(targets.begin(), targets.end(), [](int t) { return t >= 0; }));
  if (count_out) *count_out = count;
  if (count == 0) return ad::zeros(1, 1);
  return ad::scale(ad::cross_entropy_sum(logits, targets), 1.0 / count);
}

int non_pad_length(const std::vector<int>& ids) {
  return static_cast<int>(std::count_if(ids.begin(), ids.end(), [](int id) { return id != kPadId; }));
}

}  // namespace

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.B = 32;
  c.T = 32;
  c.E = 32;
  c.E_h = 64;
  c.D = 512;
  c.heads = 8;
  c.event_encoder_layers = 4;
  c.track_encoder_layers = 4;
  c.bar_decoder_layers = 4;
  c.track_decoder_layers = 4;
  c.harmony_decoder_layers = 8;
  c.music_decoder_layers = 9;
  return c;
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ValidationError("model config: " + what);
  };
  require(B >= 1 && B <= kMaxBarsPerWindow, "B must be in [1, 32]");
  require(T >= 1 && T <= kMaxTracksPerBar, "T must be in [1, 32]");
  require(E >= 1 && E <= kMusicCapacity, "E must be in [1, 32]");
  require(E_h >= 1 && E_h <= kHarmonyCapacity, "E_h must be in [1, 64]");
  require(D >= 1 && heads >= 1 && D % heads == 0, "D must be a positive multiple of heads");
  require(event_encoder_layers >= 0 && track_encoder_layers >= 0 && bar_decoder_layers >= 0 &&
              track_decoder_layers >= 0 && harmony_decoder_layers >= 0 && music_decoder_layers >= 1,
          "layer counts");
  require(harmony_lookahead >= -1, "harmony_lookahead must be >= -1");
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"B", c.B},
          {"T", c.T},
          {"E", c.E},
          {"E_h", c.E_h},
          {"D", c.D},
          {"heads", c.heads},
          {"layers",
           {{"event_encoder", c.event_encoder_layers},
            {"track_encoder", c.track_encoder_layers},
            {"bar_decoder", c.bar_decoder_layers},
            {"track_decoder", c.track_decoder_layers},
            {"harmony_decoder", c.harmony_decoder_layers},
            {"music_decoder", c.music_decoder_layers}}},
          {"harmony_lookahead", c.harmony_lookahead},
          {"harmony_stream", c.harmony_stream},
          {"previous_bar_stream", c.previous_bar_stream},
          {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.B = j.value("B", c.B);
  c.T = j.value("T", c.T);
  c.E = j.value("E", c.E);
  c.E_h = j.value("E_h", c.E_h);
  c.D = j.value("D", c.D);
  c.heads = j.value("heads", c.heads);
  if (j.contains("layers")) {
    const auto& l = j.at("layers");
    c.event_encoder_layers = l.value("event_encoder", c.event_encoder_layers);
    c.track_encoder_layers = l.value("track_encoder", c.track_encoder_layers);
    c.bar_decoder_layers = l.value("bar_decoder", c.bar_decoder_layers);
    c.track_decoder_layers = l.value("track_decoder", c.track_decoder_layers);
    c.harmony_decoder_layers = l.value("harmony_decoder", c.harmony_decoder_layers);
    c.music_decoder_layers = l.value("music_decoder", c.music_decoder_layers);
  }
  c.harmony_lookahead = j.value("harmony_lookahead", c.harmony_lookahead);
  c.harmony_stream = j.value("harmony_stream", c.harmony_stream);
  c.previous_bar_stream = j.value("previous_bar_stream", c.previous_bar_stream);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

TrackPrevIndexMap build_track_prev_index_map(const std::vector<std::vector<int>>& track_ids) {
  TrackPrevIndexMap map(track_ids.size());
  for (std::size_t b = 0; b < track_ids.size(); ++b) {
    std::set<int> seen;
    for (int id : track_ids[b]) {
      if (!seen.insert(id).second) {
        throw ValidationError("track id " + std::to_string(id) + " repeated in bar " + std::to_string(b));
      }
    }
    map[b].assign(track_ids[b].size(), kNone);
    if (b == 0) continue;
    const auto& prev = track_ids[b - 1];
    for (std::size_t i = 0; i < track_ids[b].size(); ++i) {
      auto it = std::find(prev.begin(), prev.end(), track_ids[b][i]);
      if (it != prev.end()) map[b][i] = static_cast<int>(it - prev.begin());
    }
  }
  return map;
}

double combine_losses(double l_meta, double l_harm, double l_music) {
  return kMetaWeight * l_meta + kHarmonyWeight * l_harm + kMusicWeight * l_music;
}

const char* stage_name(int stage) {
  static constexpr const char* kNames[] = {"event_encoder_music", "event_encoder_harmony", "track_encoder",
                                           "bar_decoder",         "track_decoder",         "harmony_decoder",
                                           "music_self",          "music_cross_harmony",   "music_cross_previous"};
  return kNames[stage];
}

StageCounts analytic_attention_cost(const ModelConfig& c) {
  const long long B = c.B, T = c.T, E = c.E, Eh = c.E_h, H = c.heads;
  const long long odd = (c.music_decoder_layers + 1) / 2;
  const long long even = c.music_decoder_layers / 2;
  StageCounts s{};
  s[kStageEventEncoderMusic] = c.event_encoder_layers * B * T * E * E * H;
  s[kStageEventEncoderHarmony] = c.event_encoder_layers * B * Eh * Eh * H;
  s[kStageTrackEncoder] = c.track_encoder_layers * B * T * T * H;
  s[kStageBarDecoder] = c.bar_decoder_layers * (2 * B) * (2 * B) * H;
  s[kStageTrackDecoder] = c.track_decoder_layers * B * T * T * H;
  s[kStageHarmonyDecoder] = c.harmony_decoder_layers * B * Eh * Eh * H;
  s[kStageMusicSelf] = c.music_decoder_layers * B * T * E * E * H;
  s[kStageMusicCrossHarmony] = c.harmony_stream ? odd * B * T * E * Eh * H : 0;
  s[kStageMusicCrossPrevious] = c.previous_bar_stream ? even * (B - 1) * T * E * E * H : 0;
  return s;
}

std::vector<int> shifted_input(const std::vector<int>& tokens, int rows) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(rows));
  out.push_back(kBosId);
  for (std::size_t i = 0; i + 1 < tokens.size() && static_cast<int>(out.size()) < rows; ++i) out.push_back(tokens[i]);
  while (static_cast<int>(out.size()) < rows) out.push_back(kPadId);
  return out;
}

std::vector<int> padded_targets(const std::vector<int>& tokens, int rows) {
  std::vector<int> out(tokens.begin(), tokens.begin() + std::min<std::ptrdiff_t>(rows, static_cast<std::ptrdiff_t>(tokens.size())));
  while (static_cast<int>(out.size()) < rows) out.push_back(-1);
  return out;
}

HierModel::HierModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const Eigen::Index D = cfg_.D;
  auto emb = [&](const std::string& name, Eigen::Index rows) {
    return store_.add(name, nn::normal_init(rng, rows, D, kEmbeddingScale));
  };
  tok_emb_ = emb("tok_emb", kModelVocab);
  ev_pos_ = emb("event_pos", std::max(cfg_.E, cfg_.E_h));
  trk_pos_ = emb("track_pos", cfg_.T);
  bar_pos_ = emb("bar_pos", cfg_.B);
  stream_emb_ = emb("stream_emb", 2);
  bar_len_emb_ = emb("bar_length_emb", kBarLengthVocab);
  track_emb_ = emb("track_emb", kTrackVocab);
  inst_emb_ = emb("instrument_emb", kInstrumentVocab);
  start_bar_ = emb("start_bar", 1);
  start_harmony_bar_ = emb("start_harmony_bar", 1);
  auto stack = [&](const std::string& name, int n, bool cross) {
    std::vector<nn::Block> blocks;
    for (int i = 0; i < n; ++i) {
      blocks.emplace_back(store_, name + "." + std::to_string(i), D, cfg_.heads, cross, rng);
    }
    return blocks;
  };
  event_encoder_ = stack("event_encoder", cfg_.event_encoder_layers, false);
  track_encoder_ = stack("track_encoder", cfg_.track_encoder_layers, false);
  bar_decoder_ = stack("bar_decoder", cfg_.bar_decoder_layers, false);
  track_decoder_ = stack("track_decoder", cfg_.track_decoder_layers, false);
  harmony_decoder_ = stack("harmony_decoder", cfg_.harmony_decoder_layers, false);
  music_decoder_ = stack("music_decoder", cfg_.music_decoder_layers, true);
  music_out_ln_ = nn::LayerNorm(store_, "music_out.ln", D);
  music_out_ = nn::Linear(store_, "music_out", D, kTokenVocabSize, rng);
  harmony_out_ln_ = nn::LayerNorm(store_, "harmony_out.ln", D);
  harmony_out_ = nn::Linear(store_, "harmony_out", D, kTokenVocabSize, rng);
  bar_len_ln_ = nn::LayerNorm(store_, "bar_length_head.ln", D);
  bar_len_head_ = nn::Linear(store_, "bar_length_head", D, kBarLengthVocab, rng);
  track_ln_ = nn::LayerNorm(store_, "track_head.ln", D);
  track_head_ = nn::Linear(store_, "track_head", D, kTrackVocab, rng);
  inst_ln_ = nn::LayerNorm(store_, "instrument_head.ln", D);
  inst_head_ = nn::Linear(store_, "instrument_head", D, kInstrumentVocab, rng);
}

Var HierModel::embed_tokens(const std::vector<std::vector<int>>& cells, int rows_per_cell, const Var& additive) const {
  if (rows_per_cell > ev_pos_.rows()) throw ShapeError("cell longer than the event axis");
  std::vector<int> ids;
  std::vector<int> pos;
  std::vector<int> owner;
  ids.reserve(cells.size() * static_cast<std::size_t>(rows_per_cell));
  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (static_cast<int>(cells[c].size()) > rows_per_cell) throw ShapeError("cell has more tokens than rows");
    for (int r = 0; r < rows_per_cell; ++r) {
      const int id = r < static_cast<int>(cells[c].size()) ? cells[c][static_cast<std::size_t>(r)] : kPadId;
      if (id < 0 || id >= kModelVocab) throw ShapeError("token id out of range");
      ids.push_back(id);
      pos.push_back(r);
      owner.push_back(static_cast<int>(c));
    }
  }
  Var x = ad::add(ad::gather_rows(tok_emb_, ids), ad::gather_rows(ev_pos_, pos));
  if (additive.defined()) x = ad::add(x, ad::gather_rows(additive, owner));
  return x;
}

Var HierModel::encode_events(const std::vector<std::vector<int>>& cells, int rows_per_cell, const Var& additive,
                             int counter_slot) const {
  const int n = static_cast<int>(cells.size());
  if (n == 0) return ad::zeros(0, cfg_.D);
  Var x = embed_tokens(cells, rows_per_cell, additive);
  std::vector<int> valid;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> groups;
  for (int c = 0; c < n; ++c) {
    const int len = std::min<int>(rows_per_cell, static_cast<int>(cells[static_cast<std::size_t>(c)].size()));
    valid.push_back(len);
    groups.emplace_back(static_cast<Eigen::Index>(c) * rows_per_cell, len);
  }
  x = run_stack(event_encoder_, x, per_cell_segments(n, rows_per_cell, ad::MaskKind::Full, &valid), counter_slot);
  return nn::pool_groups(x, groups);
}

Var HierModel::encode_tracks(const Var& z_T, const std::vector<int>& tracks_per_bar) const {
  std::vector<int> slots;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> groups;
  int start = 0;
  for (int n : tracks_per_bar) {
    if (n > cfg_.T) throw ShapeError("bar holds more tracks than T");
    for (int t = 0; t < n; ++t) slots.push_back(t);
    groups.emplace_back(start, n);
    start += n;
  }
  if (start != z_T.rows()) throw ShapeError("encode_tracks: track count does not match z_T rows");
  if (start == 0) return ad::zeros(static_cast<Eigen::Index>(tracks_per_bar.size()), cfg_.D);
  Var x = ad::add(z_T, ad::gather_rows(trk_pos_, slots));
  x = run_stack(track_encoder_, x, per_bar_segments(tracks_per_bar, ad::MaskKind::Full), kStageTrackEncoder);
  return nn::pool_groups(x, groups);
}

std::pair<Var, Var> HierModel::bar_decode(const Var& z_hB, const Var& z_B) const {
  const Eigen::Index nb = z_hB.rows();
  if (z_B.rows() != nb || z_hB.cols() != cfg_.D || z_B.cols() != cfg_.D) throw ShapeError("bar_decode: shapes");
  if (nb > cfg_.B) throw ShapeError("window holds more bars than B");
  if (nb == 0) return {ad::zeros(0, cfg_.D), ad::zeros(0, cfg_.D)};
  std::vector<int> bar_index;
  std::vector<int> stream;
  for (int s = 0; s < 2; ++s) {
    for (Eigen::Index b = 0; b < nb; ++b) {
      bar_index.push_back(static_cast<int>(b));
      stream.push_back(s);
    }
  }
  const Var parts[] = {z_hB, z_B};
  Var x = ad::add(ad::concat_rows(parts), ad::add(ad::gather_rows(bar_pos_, bar_index), ad::gather_rows(stream_emb_, stream)));
  // Harmony rows are causal among themselves; music row i reads harmony up to
  // i + lookahead and music up to i.
  ad::AttentionMask mask{ad::MaskKind::Custom, ad::BoolMatrix::Constant(2 * nb, 2 * nb, false)};
  for (Eigen::Index i = 0; i < nb; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) mask.allowed(i, j) = true;
    const Eigen::Index reach = cfg_.harmony_lookahead < 0 ? nb - 1 : std::min(nb - 1, i + cfg_.harmony_lookahead);
    for (Eigen::Index j = 0; j <= reach; ++j) mask.allowed(nb + i, j) = true;
    for (Eigen::Index j = 0; j <= i; ++j) mask.allowed(nb + i, nb + j) = true;
  }
  const std::vector<ad::AttentionSegment> segs = {{0, 2 * nb, 0, 2 * nb, mask}};
  x = run_stack(bar_decoder_, x, segs, kStageBarDecoder);
  return {ad::rows(x, 0, nb), ad::rows(x, nb, nb)};
}

Var HierModel::right_shift(const Var& c, bool harmony) const {
  const Var& start = harmony ? start_harmony_bar_ : start_bar_;
  if (c.rows() == 0) return ad::zeros(0, cfg_.D);
  if (c.rows() == 1) return start;
  const Var parts[] = {start, ad::rows(c, 0, c.rows() - 1)};
  return ad::concat_rows(parts);
}

Var HierModel::track_decode(const Var& shifted_c_B, const Var& z_T, const std::vector<int>& tracks_per_bar) const {
  if (static_cast<Eigen::Index>(tracks_per_bar.size()) != shifted_c_B.rows()) throw ShapeError("track_decode: bars");
  std::vector<int> bar_of;
  std::vector<int> slots;
  for (std::size_t b = 0; b < tracks_per_bar.size(); ++b) {
    if (tracks_per_bar[b] > cfg_.T) throw ShapeError("bar holds more tracks than T");
    for (int t = 0; t < tracks_per_bar[b]; ++t) {
      bar_of.push_back(static_cast<int>(b));
      slots.push_back(t);
    }
  }
  if (static_cast<Eigen::Index>(bar_of.size()) != z_T.rows()) throw ShapeError("track_decode: z_T rows");
  if (bar_of.empty()) return ad::zeros(0, cfg_.D);
  Var x = ad::add(ad::add(z_T, ad::gather_rows(shifted_c_B, bar_of)), ad::gather_rows(trk_pos_, slots));
  return run_stack(track_decoder_, x, per_bar_segments(tracks_per_bar, ad::MaskKind::Causal), kStageTrackDecoder);
}

Var HierModel::track_context(const Var& shifted_c_B, const Var& c_T, const std::vector<int>& tracks_per_bar,
                             bool include_end_slot) const {
  const Eigen::Index nb = shifted_c_B.rows();
  std::vector<int> index;
  int first = 0;
  for (Eigen::Index b = 0; b < nb; ++b) {
    const int n = tracks_per_bar[static_cast<std::size_t>(b)];
    const int slots = include_end_slot && n < cfg_.T ? n + 1 : n;
    for (int t = 0; t < slots; ++t) {
      index.push_back(t == 0 ? static_cast<int>(b) : static_cast<int>(nb) + first + t - 1);
    }
    first += n;
  }
  if (index.empty()) return ad::zeros(0, cfg_.D);
  const Var parts[] = {shifted_c_B, c_T};
  return ad::gather_rows(ad::concat_rows(parts), index);
}

Var HierModel::harmony_event_decode(const Var& shifted_c_hB, const std::vector<std::vector<int>>& inputs) const {
  if (static_cast<Eigen::Index>(inputs.size()) != shifted_c_hB.rows()) throw ShapeError("harmony decode: bars");
  if (inputs.empty()) return ad::zeros(0, cfg_.D);
  const int rows = static_cast<int>(inputs.front().size());
  if (rows > cfg_.E_h) throw ShapeError("harmony decode: more rows than E_h");
  for (const auto& in : inputs) {
    if (static_cast<int>(in.size()) != rows) throw ShapeError("harmony decode: ragged inputs");
  }
  Var x = embed_tokens(inputs, rows, shifted_c_hB);
  return run_stack(harmony_decoder_, x,
                   per_cell_segments(static_cast<int>(inputs.size()), rows, ad::MaskKind::Causal),
                   kStageHarmonyDecoder);
}

Var HierModel::harmony_logits(const Var& c_h) const { return harmony_out_(harmony_out_ln_(c_h)); }

Var HierModel::harmony_logits(const Var& c_h, const std::vector<int>& lengths, int stride) const {
  return project_valid(harmony_out_ln_, harmony_out_, c_h, lengths, stride);
}

// Applies the output head to the valid rows only and scatters the result back
// into the padded layout.
Var HierModel::project_valid(const nn::LayerNorm& ln, const nn::Linear& head, const Var& x,
                             const std::vector<int>& lengths, int stride) const {
  std::vector<int> valid;
  std::vector<int> scatter(static_cast<std::size_t>(x.rows()), -1);
  for (std::size_t c = 0; c < lengths.size(); ++c) {
    for (int r = 0; r < lengths[c]; ++r) {
      const int row = static_cast<int>(c) * stride + r;
      scatter[static_cast<std::size_t>(row)] = static_cast<int>(valid.size());
      valid.push_back(row);
    }
  }
  if (valid.empty()) return ad::zeros(x.rows(), head.w.cols());
  return ad::gather_rows(head(ln(ad::gather_rows(x, valid))), scatter);
}

MusicDecodeOutput HierModel::music_event_decode(const MusicDecodeInput& in) const {
  const int n = static_cast<int>(in.inputs.size());
  const int rows = in.rows_per_cell;
  MusicDecodeOutput out;
  if (n == 0) {
    out.logits = ad::zeros(0, kTokenVocabSize);
    return out;
  }
  const bool cached = !in.prev_memory.empty();
  if (cached ? static_cast<int>(in.prev_memory.size()) != n : static_cast<int>(in.prev_cell.size()) != n) {
    throw ShapeError("music decode: previous-bar mapping size");
  }
  Var x = embed_tokens(in.inputs, rows, ad::add(in.context, in.meta));
  std::vector<int> lengths;
  for (const auto& ids : in.inputs) lengths.push_back(non_pad_length(ids));
  const auto self_segs = per_cell_segments(n, rows, ad::MaskKind::Causal);

  for (std::size_t li = 0; li < music_decoder_.size(); ++li) {
    const int layer = static_cast<int>(li) + 1;  // 1-based: odd layers read harmony
    std::vector<ad::AttentionSegment> cross;
    Var memory;
    int cross_slot = kStageMusicCrossHarmony;
    if (layer % 2 == 1) {
      if (cfg_.harmony_stream && in.harmony.defined()) {
        memory = in.harmony;
        for (int c = 0; c < n; ++c) {
          const auto [first, valid] = in.harmony_rows[static_cast<std::size_t>(c)];
          ad::AttentionSegment s{c * rows, rows, first, in.harmony_stride, {}};
          s.k_valid = valid;
          cross.push_back(std::move(s));
        }
      }
    } else {
      cross_slot = kStageMusicCrossPrevious;
      std::vector<int> trace(static_cast<std::size_t>(n), kNone);
      if (cfg_.previous_bar_stream) {
        if (cached) {
          std::vector<Var> parts;
          Eigen::Index offset = 0;
          for (int c = 0; c < n; ++c) {
            const CellMemory* m = in.prev_memory[static_cast<std::size_t>(c)];
            if (!m) continue;
            const Matrix& h = m->layer_outputs.at(static_cast<std::size_t>(layer - 2));
            parts.push_back(ad::constant(h));
            ad::AttentionSegment s{c * rows, rows, offset, h.rows(), {}};
            s.k_valid = m->length;
            cross.push_back(std::move(s));
            trace[static_cast<std::size_t>(c)] = c;
            offset += h.rows();
          }
          if (!parts.empty()) memory = ad::concat_rows(parts);
        } else {
          memory = x;  // output of layer - 1
          for (int c = 0; c < n; ++c) {
            const int p = in.prev_cell[static_cast<std::size_t>(c)];
            if (p == kNone) continue;
            if (p < 0 || p >= n) throw ValidationError("previous-bar map points outside the batch");
            ad::AttentionSegment s{c * rows, rows, p * rows, rows, {}};
            s.k_valid = lengths[static_cast<std::size_t>(p)];
            cross.push_back(std::move(s));
            trace[static_cast<std::size_t>(c)] = p;
          }
        }
      }
      out.retrieval_trace.push_back(std::move(trace));
    }
    x = music_decoder_[li](x, self_segs, memory, cross, kStageMusicSelf, cross_slot);
    out.layer_outputs.push_back(x);
  }
  out.logits = project_valid(music_out_ln_, music_out_, x, lengths, rows);
  return out;
}

Var HierModel::meta_embedding(const std::vector<int>& bar_lengths, const std::vector<int>& track_ids,
                              const std::vector<int>& instruments) const {
  if (bar_lengths.empty()) return ad::zeros(0, cfg_.D);
  for (int v : bar_lengths) {
    if (v < 0 || v >= kBarLengthVocab) throw ShapeError("bar length outside vocabulary");
  }
  for (int v : track_ids) {
    if (v < 0 || v >= kTrackVocab) throw ShapeError("track id outside vocabulary");
  }
  for (int v : instruments) {
    if (v < 0 || v >= kInstrumentVocab) throw ShapeError("instrument outside vocabulary");
  }
  return ad::add(ad::add(ad::gather_rows(bar_len_emb_, bar_lengths), ad::gather_rows(track_emb_, track_ids)),
                 ad::gather_rows(inst_emb_, instruments));
}

Var HierModel::bar_length_logits(const Var& shifted_c_B) const { return bar_len_head_(bar_len_ln_(shifted_c_B)); }

Var HierModel::track_logits(const Var& context) const { return track_head_(track_ln_(context)); }

Var HierModel::instrument_logits(const Var& context, const std::vector<int>& track_ids) const {
  return inst_head_(inst_ln_(ad::add(context, ad::gather_rows(track_emb_, track_ids))));
}

ForwardResult HierModel::forward(const WindowExample& w) const {
  ForwardResult r;
  const int nb = static_cast<int>(w.bars.size());
  if (nb > cfg_.B) throw ShapeError("window holds " + std::to_string(nb) + " bars; B is " + std::to_string(cfg_.B));

  std::vector<int> tracks_per_bar;
  std::vector<std::vector<int>> ids_per_bar;
  std::vector<std::vector<int>> music_cells;
  std::vector<std::vector<int>> harmony_cells;
  std::vector<int> cell_bar_len, cell_ids, cell_inst, cell_bar;
  for (int b = 0; b < nb; ++b) {
    const auto& bar = w.bars[static_cast<std::size_t>(b)];
    if (static_cast<int>(bar.cells.size()) > cfg_.T) throw ShapeError("bar " + std::to_string(b) + " exceeds T");
    if (static_cast<int>(bar.harmony.size()) > cfg_.E_h) throw ShapeError("harmony of bar " + std::to_string(b) + " exceeds E_h");
    tracks_per_bar.push_back(static_cast<int>(bar.cells.size()));
    harmony_cells.push_back(bar.harmony);
    ids_per_bar.emplace_back();
    for (std::size_t s = 0; s < bar.cells.size(); ++s) {
      const auto& cell = bar.cells[s];
      if (static_cast<int>(cell.tokens.size()) > cfg_.E) throw ShapeError("cell exceeds E");
      if (cell.track_id < 0 || cell.track_id >= kMaxTracksPerBar) throw ShapeError("track id out of range");
      ids_per_bar.back().push_back(cell.track_id);
      music_cells.push_back(cell.tokens);
      cell_bar_len.push_back(bar.bar_length);
      cell_ids.push_back(cell.track_id);
      cell_inst.push_back(cell.instrument);
      cell_bar.push_back(b);
      r.cells.emplace_back(b, static_cast<int>(s));
    }
  }
  const auto map = build_track_prev_index_map(ids_per_bar);
  std::vector<int> first_cell(static_cast<std::size_t>(nb) + 1, 0);
  for (int b = 0; b < nb; ++b) first_cell[static_cast<std::size_t>(b) + 1] = first_cell[static_cast<std::size_t>(b)] + tracks_per_bar[static_cast<std::size_t>(b)];
  std::vector<int> prev_cell;
  for (int b = 0; b < nb; ++b) {
    for (int s = 0; s < tracks_per_bar[static_cast<std::size_t>(b)]; ++s) {
      const int j = map[static_cast<std::size_t>(b)][static_cast<std::size_t>(s)];
      prev_cell.push_back(j == kNone ? kNone : first_cell[static_cast<std::size_t>(b) - 1] + j);
    }
  }
  const int n_cells = static_cast<int>(music_cells.size());

  if (nb == 0) {
    r.l_meta = r.l_harm = r.l_music = r.total = ad::zeros(1, 1);
    return r;
  }

  // Cells are padded to the longest cell of the window; valid rows do not
  // depend on the amount of padding.
  int music_rows = 1;
  for (const auto& c : music_cells) music_rows = std::max(music_rows, static_cast<int>(c.size()));
  int harmony_rows = 1;
  for (const auto& h : harmony_cells) harmony_rows = std::max(harmony_rows, static_cast<int>(h.size()));
  r.music_stride = music_rows;
  r.harmony_stride = harmony_rows;

  const Var meta = meta_embedding(cell_bar_len, cell_ids, cell_inst);
  const Var z_T = encode_events(music_cells, music_rows, meta, kStageEventEncoderMusic);
  const Var z_hB = encode_events(harmony_cells, harmony_rows, {}, kStageEventEncoderHarmony);
  const Var z_B = encode_tracks(z_T, tracks_per_bar);
  const auto [c_hB, c_B] = bar_decode(z_hB, z_B);
  const Var sc_B = right_shift(c_B, false);
  const Var sc_hB = right_shift(c_hB, true);
  const Var c_T = track_decode(sc_B, z_T, tracks_per_bar);
  const Var ctx = track_context(sc_B, c_T, tracks_per_bar, false);

  std::vector<std::vector<int>> harmony_inputs;
  std::vector<int> harmony_lengths;
  for (const auto& h : harmony_cells) {
    harmony_inputs.push_back(shifted_input(h, harmony_rows));
    harmony_lengths.push_back(static_cast<int>(h.size()));
    const auto t = padded_targets(h, harmony_rows);
    r.harmony_targets.insert(r.harmony_targets.end(), t.begin(), t.end());
  }
  const Var c_h = harmony_event_decode(sc_hB, harmony_inputs);
  r.harmony_logits = harmony_logits(c_h, harmony_lengths, harmony_rows);

  MusicDecodeInput in;
  in.rows_per_cell = music_rows;
  in.context = ctx;
  in.meta = meta;
  in.harmony = c_h;
  in.harmony_stride = harmony_rows;
  in.prev_cell = prev_cell;
  for (int c = 0; c < n_cells; ++c) {
    const auto& tokens = music_cells[static_cast<std::size_t>(c)];
    in.inputs.push_back(shifted_input(tokens, music_rows));
    const auto t = padded_targets(tokens, music_rows);
    r.music_targets.insert(r.music_targets.end(), t.begin(), t.end());
    const int b = cell_bar[static_cast<std::size_t>(c)];
    in.harmony_rows.emplace_back(b * harmony_rows, harmony_lengths[static_cast<std::size_t>(b)]);
  }
  auto music = music_event_decode(in);
  r.music_logits = music.logits;
  r.retrieval_trace = std::move(music.retrieval_trace);

  // Metadata heads.
  std::vector<int> bar_targets;
  for (const auto& bar : w.bars) bar_targets.push_back(bar.bar_length);
  std::vector<int> track_targets;
  for (int b = 0; b < nb; ++b) {
    for (int id : ids_per_bar[static_cast<std::size_t>(b)]) track_targets.push_back(id);
    if (tracks_per_bar[static_cast<std::size_t>(b)] < cfg_.T) track_targets.push_back(kEndOfBar);
  }
  r.bar_length_logits = bar_length_logits(sc_B);
  r.track_logits = track_logits(track_context(sc_B, c_T, tracks_per_bar, true));
  r.instrument_logits = n_cells ? instrument_logits(ctx, cell_ids) : ad::zeros(0, kInstrumentVocab);

  const double meta_count = static_cast<double>(bar_targets.size() + track_targets.size() + cell_inst.size());
  Var meta_sum = ad::add(ad::cross_entropy_sum(r.bar_length_logits, bar_targets),
                         ad::cross_entropy_sum(r.track_logits, track_targets));
  if (n_cells) meta_sum = ad::add(meta_sum, ad::cross_entropy_sum(r.instrument_logits, cell_inst));
  r.l_meta = ad::scale(meta_sum, 1.0 / meta_count);
  r.l_harm = mean_cross_entropy(r.harmony_logits, r.harmony_targets);
  r.l_music = n_cells ? mean_cross_entropy(r.music_logits, r.music_targets) : ad::zeros(1, 1);
  r.total = ad::add(ad::add(ad::scale(r.l_meta, kMetaWeight), ad::scale(r.l_harm, kHarmonyWeight)),
                    ad::scale(r.l_music, kMusicWeight));
  r.values = {r.l_meta.scalar(), r.l_harm.scalar(), r.l_music.scalar(), r.total.scalar()};

  r.acts = {z_hB.value(), z_T.value(), z_B.value(), c_hB.value(), c_B.value(), c_T.value(), c_h.value()};
  return r;
}

LossBreakdown HierModel::batch_loss(const std::vector<WindowExample>& batch, Var* total_out) const {
  LossBreakdown sum;
  Var total = ad::zeros(1, 1);
  if (batch.empty()) {
    if (total_out) *total_out = total;
    return sum;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& w : batch) {
    const auto r = forward(w);
    sum.l_meta += r.values.l_meta * inv;
    sum.l_harm += r.values.l_harm * inv;
    sum.l_music += r.values.l_music * inv;
    total = ad::add(total, ad::scale(r.total, inv));
  }
  sum.total = total.scalar();
  if (total_out) *total_out = total;
  return sum;
}

StageCounts HierModel::measure_attention_cost() const {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> tok(0, kTokenVocabSize - 1);
  WindowExample w;
  for (int b = 0; b < cfg_.B; ++b) {
    BarExample bar;
    for (int i = 0; i < cfg_.E_h; ++i) bar.harmony.push_back(tok(rng));
    for (int t = 0; t < cfg_.T; ++t) {
      CellExample cell{t, t, {}};
      for (int i = 0; i < cfg_.E; ++i) cell.tokens.push_back(tok(rng));
      bar.cells.push_back(std::move(cell));
    }
    w.bars.push_back(std::move(bar));
  }
  ad::AttentionCounter counter;
  {
    ad::NoGradGuard no_grad;
    ad::CounterScope scope(&counter);
    forward(w);
  }
  StageCounts s{};
  for (int i = 0; i < kStageCount; ++i) s[static_cast<std::size_t>(i)] = counter.entries[static_cast<std::size_t>(i)];
  return s;
}

}  // namespace symphony::model
