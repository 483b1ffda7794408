#include "symphony/generate.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <optional>

#include "symphony/corpus.hpp"
#include "symphony/dissonance.hpp"
#include "symphony/errors.hpp"
#include "symphony/tokenizer.hpp"

namespace symphony {

namespace {

using model::CellMemory;
using model::HierModel;
using model::kBosId;
using model::Var;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct CellContext {
  Var ctx;
  Var meta;
  Var c_h;
  int harmony_length = 0;
  int harmony_rows = 0;
  const CellMemory* prev = nullptr;
  int bar_length = 32;
  int bar_start = 0;
  std::pair<int, int> range{0, 127};
};

class WindowSampler {
 public:
  WindowSampler(const HierModel& m, const HarmonySkeleton& sk, const SamplingConfig& cfg)
      : m_(m), sk_(sk), cfg_(cfg), rng_(cfg.seed), w_(default_w()) {}

  GeneratedWindow run();

 private:
  model::MusicDecodeInput decode_input(const CellContext& c, const std::vector<int>& tokens) const;
  std::vector<int> sample_cell(const CellContext& c);
  std::vector<int> active_at(int t, const std::vector<NoteEvent>& current, int bar_start) const;
  int sample_masked(std::vector<double> logits);

  const HierModel& m_;
  const HarmonySkeleton& sk_;
  const SamplingConfig& cfg_;
  std::mt19937_64 rng_;
  DissonanceMatrix w_;
  std::vector<PlacedNote> placed_;
  GenerationStats stats_;
};

model::MusicDecodeInput WindowSampler::decode_input(const CellContext& c, const std::vector<int>& tokens) const {
  model::MusicDecodeInput in;
  std::vector<int> ids{kBosId};
  ids.insert(ids.end(), tokens.begin(), tokens.end());
  in.rows_per_cell = static_cast<int>(ids.size());
  in.inputs = {std::move(ids)};
  in.context = c.ctx;
  in.meta = c.meta;
  in.harmony = c.c_h;
  in.harmony_rows = {{0, c.harmony_length}};
  in.harmony_stride = c.harmony_rows;
  in.prev_memory = {c.prev};
  return in;
}

std::vector<int> WindowSampler::active_at(int t, const std::vector<NoteEvent>& current, int bar_start) const {
  std::vector<int> out;
  for (const auto& n : placed_) {
    if (n.start <= t && t < n.end) out.push_back(n.pitch);
  }
  for (const auto& n : current) {
    if (bar_start + n.onset <= t && t < bar_start + n.onset + n.duration) out.push_back(n.pitch);
  }
  return out;
}

int WindowSampler::sample_masked(std::vector<double> logits) { return nucleus_sample(logits, cfg_, rng_); }

std::vector<int> WindowSampler::sample_cell(const CellContext& c) {
  const int capacity = m_.config().E;
  TokenGrammar g(c.bar_length);
  std::vector<int> tokens;
  std::vector<NoteEvent> notes;
  std::size_t closable_len = 0;
  auto close_at_prefix = [&](const char* why) {
    tokens.resize(closable_len);
    tokens.push_back(kEotId);
    ++stats_.fallbacks;
    stats_.log.push_back(std::string(why) + "; cell closed after " + std::to_string(closable_len) + " tokens");
  };

  while (true) {
    if (static_cast<int>(tokens.size()) == capacity - 1) {
      ++stats_.forced_eot;
      if (g.closable()) {
        tokens.push_back(kEotId);
      } else {
        close_at_prefix("capacity reached mid-group");
      }
      break;
    }
    const auto out = m_.music_event_decode(decode_input(c, tokens));
    const auto row = out.logits.value().row(static_cast<Eigen::Index>(tokens.size()));
    std::vector<double> logits(row.data(), row.data() + row.size());
    if (g.pitch_allowed()) {
      mask_pitch_range(logits, c.range);
      const int t = c.bar_start + g.onset();
      const int beat = sk_.beat_at(t);
      PitchContext pc;
      pc.active = active_at(t, notes, c.bar_start);
      pc.allowed = beat >= 0 ? sk_.beats[static_cast<std::size_t>(beat)].allowed() : PcSet{0};
      pc.params = cfg_.params;
      pc.w = &w_;
      logits = adjust_pitch_logits(logits, pc);
    }
    std::optional<int> accepted;
    for (int attempt = 0; attempt <= cfg_.retry_budget; ++attempt) {
      int id;
      try {
        id = sample_masked(logits);
      } catch (const SamplingError&) {
        break;
      }
      if (!g.check(token_from_id(id))) {
        accepted = id;
        break;
      }
      ++stats_.retries;
      logits[static_cast<std::size_t>(id)] = kNegInf;
    }
    if (!accepted) {
      close_at_prefix("retry budget exhausted");
      break;
    }
    const Token tok = token_from_id(*accepted);
    if (tok.kind == TokenKind::Pitch) notes.push_back({tok.value, g.onset(), g.duration()});
    g.push(tok);
    tokens.push_back(*accepted);
    if (g.finished()) break;
    if (g.closable()) closable_len = tokens.size();
  }
  return tokens;
}

GeneratedWindow WindowSampler::run() {
  const auto& mc = m_.config();
  const int nb = static_cast<int>(sk_.bar_lengths.size());
  if (nb > mc.B) {
    throw ShapeError("skeleton has " + std::to_string(nb) + " bars; the model window holds " + std::to_string(mc.B));
  }
  const auto harmony = harmony_token_ids(sk_, mc.E_h);
  GeneratedWindow result;
  if (nb == 0) return result;

  int harmony_rows = 1;
  for (const auto& h : harmony) harmony_rows = std::max(harmony_rows, static_cast<int>(h.size()));
  const Var z_hB = m_.encode_events(harmony, harmony_rows, {}, model::kStageEventEncoderHarmony);
  ad::Matrix z_B = ad::Matrix::Zero(nb, mc.D);
  std::map<int, int> instrument_of;
  std::map<int, CellMemory> prev_memory;
  int bar_start = 0;

  for (int b = 0; b < nb; ++b) {
    const int bar_length = sk_.bar_lengths[static_cast<std::size_t>(b)];
    const auto [c_hB, c_B] = m_.bar_decode(z_hB, Var(z_B));
    const Var sc_B = ad::rows(m_.right_shift(c_B, false), b, 1);
    const Var sc_hB = ad::rows(m_.right_shift(c_hB, true), b, 1);
    const auto& h = harmony[static_cast<std::size_t>(b)];
    const Var c_h = m_.harmony_event_decode(sc_hB, {model::shifted_input(h, harmony_rows)});

    model::BarExample bar;
    bar.bar_length = bar_length;
    bar.harmony = h;
    Bar score_bar;
    score_bar.bar_length = bar_length;
    std::vector<Var> z_rows;
    Var c_T;
    std::vector<bool> used(model::kTrackVocab, false);
    std::map<int, CellMemory> memory;

    for (int slot = 0; slot < mc.T; ++slot) {
      const Var ctx = slot == 0 ? sc_B : ad::rows(c_T, slot - 1, 1);
      const auto tl = m_.track_logits(ctx).value();
      std::vector<double> track_logits(tl.data(), tl.data() + tl.size());
      for (int id = 0; id < model::kEndOfBar; ++id) {
        if (used[static_cast<std::size_t>(id)]) track_logits[static_cast<std::size_t>(id)] = kNegInf;
      }
      const int id = sample_masked(track_logits);
      if (id == model::kEndOfBar) break;
      used[static_cast<std::size_t>(id)] = true;

      int instrument;
      if (auto it = instrument_of.find(id); it != instrument_of.end()) {
        instrument = it->second;
      } else {
        const auto il = m_.instrument_logits(ctx, {id}).value();
        instrument = sample_masked(std::vector<double>(il.data(), il.data() + il.size()));
        instrument_of[id] = instrument;
      }

      CellContext cell;
      cell.ctx = ctx;
      cell.meta = m_.meta_embedding({bar_length}, {id}, {instrument});
      cell.c_h = c_h;
      cell.harmony_length = static_cast<int>(h.size());
      cell.harmony_rows = harmony_rows;
      auto pm = prev_memory.find(id);
      cell.prev = pm == prev_memory.end() ? nullptr : &pm->second;
      cell.bar_length = bar_length;
      cell.bar_start = bar_start;
      cell.range = cfg_.range_table[static_cast<std::size_t>(instrument)];
      const auto tokens = sample_cell(cell);

      // Cache what later slots and the next bar read from this cell.
      const int len = static_cast<int>(tokens.size());
      const auto full = m_.music_event_decode([&] {
        auto in = decode_input(cell, tokens);
        in.inputs = {model::shifted_input(tokens, len)};
        in.rows_per_cell = len;
        return in;
      }());
      CellMemory mem;
      mem.length = len;
      for (std::size_t l = 0; l + 1 < full.layer_outputs.size(); ++l) mem.layer_outputs.push_back(full.layer_outputs[l].value());
      memory[id] = std::move(mem);

      z_rows.push_back(m_.encode_events({tokens}, len, cell.meta, model::kStageEventEncoderMusic));
      const std::vector<int> tracks{slot + 1};
      c_T = m_.track_decode(sc_B, ad::concat_rows(z_rows), tracks);

      TrackBar tb = decode(tokens_of(tokens), bar_length);
      tb.track_id = id;
      tb.instrument_id = instrument;
      for (const auto& n : tb.events) {
        placed_.push_back({n.pitch, bar_start + n.onset, bar_start + n.onset + n.duration, b, id});
      }
      score_bar.tracks.push_back(std::move(tb));
      bar.cells.push_back({id, instrument, tokens});
    }

    if (!z_rows.empty()) {
      const std::vector<int> tracks{static_cast<int>(z_rows.size())};
      z_B.row(b) = m_.encode_tracks(ad::concat_rows(z_rows), tracks).value().row(0);
    }
    prev_memory = std::move(memory);
    std::sort(bar.cells.begin(), bar.cells.end(),
              [](const model::CellExample& x, const model::CellExample& y) { return x.track_id < y.track_id; });
    result.window.bars.push_back(std::move(bar));
    result.score.bars.push_back(std::move(score_bar));
    bar_start += bar_length;
  }
  normalize(result.score);
  result.stats = std::move(stats_);
  return result;
}

}  // namespace

GeneratedWindow generate_window(const model::HierModel& m, const HarmonySkeleton& sk, const SamplingConfig& cfg) {
  ad::NoGradGuard no_grad;
  return WindowSampler(m, sk, cfg).run();
}

}  // namespace symphony
