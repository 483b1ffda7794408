#include <gtest/gtest.h>

#include <random>

#include "support/gradcheck.hpp"
#include "support/windows.hpp"
#include "symphony/errors.hpp"
#include "symphony/model.hpp"

namespace symphony::model {
namespace {

using testing::random_ids;
using testing::random_window;
using testing::rows_equal;

ModelConfig small_config() {
  ModelConfig c;
  c.B = 4;
  c.T = 3;
  c.E = 6;
  c.E_h = 5;
  c.D = 16;
  c.heads = 2;
  c.music_decoder_layers = 4;
  return c;
}

// Row offset of cell (bar, slot) in the music logits.
int cell_index(const ForwardResult& r, int bar, int slot) {
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    if (r.cells[i] == std::make_pair(bar, slot)) return static_cast<int>(i);
  }
  return -1;
}

TEST(TrackPrevIndexMap, HandTracedExample) {
  const auto map = build_track_prev_index_map({{3, 5}, {5, 9}});
  EXPECT_EQ(map[0], (std::vector<int>{kNone, kNone}));
  EXPECT_EQ(map[1], (std::vector<int>{1, kNone}));
}

TEST(TrackPrevIndexMap, IdentityAndAllNew) {
  const auto same = build_track_prev_index_map({{0, 1, 2}, {0, 1, 2}});
  EXPECT_EQ(same[1], (std::vector<int>{0, 1, 2}));
  const auto fresh = build_track_prev_index_map({{0, 1}, {4, 5}});
  EXPECT_EQ(fresh[1], (std::vector<int>{kNone, kNone}));
}

TEST(TrackPrevIndexMap, DuplicateIdRejected) {
  EXPECT_THROW(build_track_prev_index_map({{1, 1}}), ValidationError);
}

TEST(ModelConfig, DefaultsAndJson) {
  const ModelConfig c;
  EXPECT_EQ(c.B, 8);
  EXPECT_EQ(c.T, 4);
  EXPECT_EQ(c.E, 16);
  EXPECT_EQ(c.E_h, 16);
  EXPECT_EQ(c.D, 64);
  const auto ref = ModelConfig::full_scale();
  EXPECT_EQ(ref.D, 512);
  EXPECT_EQ(ref.harmony_decoder_layers, 8);
  EXPECT_EQ(ref.music_decoder_layers, 9);
  EXPECT_EQ(config_from_json(config_to_json(small_config())), small_config());
  ModelConfig bad;
  bad.D = 10;
  bad.heads = 4;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(HierModel, ShapesAtDeskConfig) {
  const ModelConfig cfg;
  HierModel m(cfg);
  std::mt19937_64 rng(3);
  const auto w = random_window(rng, cfg, cfg.B, true);
  const auto r = m.forward(w);
  const int cells = cfg.B * cfg.T;
  EXPECT_EQ(r.acts.z_T.rows(), cells);
  EXPECT_EQ(r.acts.z_T.cols(), cfg.D);
  EXPECT_EQ(r.acts.z_hB.rows(), cfg.B);
  EXPECT_EQ(r.acts.z_B.rows(), cfg.B);
  EXPECT_EQ(r.acts.c_hB.rows(), cfg.B);
  EXPECT_EQ(r.acts.c_B.rows(), cfg.B);
  EXPECT_EQ(r.acts.c_T.rows(), cells);
  EXPECT_EQ(r.acts.c_h.rows(), cfg.B * cfg.E_h);
  EXPECT_EQ(r.music_logits.rows(), cells * cfg.E);
  EXPECT_EQ(r.music_logits.cols(), kTokenVocabSize);
  EXPECT_EQ(r.bar_length_logits.cols(), kBarLengthVocab);
  EXPECT_EQ(r.track_logits.cols(), 33);
  EXPECT_EQ(r.instrument_logits.cols(), 128);
  EXPECT_TRUE(r.values.l_meta >= 0 && r.values.l_harm >= 0 && r.values.l_music >= 0);
}

TEST(HierModel, DeterministicForward) {
  HierModel m(small_config());
  std::mt19937_64 rng(4);
  const auto w = random_window(rng, small_config(), 3);
  EXPECT_EQ(m.forward(w).music_logits.value(), m.forward(w).music_logits.value());
}

TEST(HierModel, EmptyCellPoolsToZero) {
  HierModel m(small_config());
  const auto z = m.encode_events({{}, {1, 2}}, 6, {}, kStageEventEncoderMusic);
  EXPECT_TRUE(z.value().row(0).isZero(0));
  EXPECT_FALSE(z.value().row(1).isZero(0));
  const auto zb = m.encode_tracks(ad::zeros(0, 16), {0, 0});
  EXPECT_TRUE(zb.value().isZero(0));
}

TEST(HierModel, RightShift) {
  HierModel m(small_config());
  std::mt19937_64 rng(5);
  const Var c(nn::normal_init(rng, 3, 16, 1.0));
  const Var s = m.right_shift(c, false);
  ASSERT_EQ(s.rows(), 3);
  EXPECT_EQ(s.value().row(0), m.params().get("start_bar").value().row(0));
  EXPECT_EQ(s.value().row(1), c.value().row(0));
  EXPECT_EQ(s.value().row(2), c.value().row(1));
  const Var one = m.right_shift(ad::rows(c, 0, 1), false);
  EXPECT_EQ(one.value(), m.params().get("start_bar").value());
  const Var twice = m.right_shift(s, false);
  EXPECT_EQ(twice.value().row(1), m.params().get("start_bar").value().row(0));
  EXPECT_EQ(twice.value().row(2), c.value().row(0));
}

TEST(HierModel, SingleBarMusicCanReadItsHarmony) {
  ModelConfig cfg = small_config();
  cfg.harmony_lookahead = 0;
  HierModel m(cfg);
  std::mt19937_64 rng(6);
  const Var zh(nn::normal_init(rng, 1, 16, 1.0));
  const Var zb(nn::normal_init(rng, 1, 16, 1.0));
  const auto [ch1, cb1] = m.bar_decode(zh, zb);
  const Var zh2(nn::normal_init(rng, 1, 16, 1.0));
  const auto [ch2, cb2] = m.bar_decode(zh2, zb);
  EXPECT_NE(cb1.value(), cb2.value());
}

TEST(HierModel, BarCausalityUnderMusicPerturbation) {
  const auto cfg = small_config();
  HierModel m(cfg);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    auto w = random_window(rng, cfg, 4);
    const auto base = m.forward(w);
    const int j = 2;
    for (auto& cell : w.bars[j].cells) cell.tokens = random_ids(rng, static_cast<int>(cell.tokens.size()));
    w.bars[j].bar_length = w.bars[j].bar_length % kMaxBarLength + 1;
    const auto pert = m.forward(w);
    const int before = cell_index(base, j, 0);
    EXPECT_TRUE(rows_equal(base.music_logits.value(), pert.music_logits.value(), 0, before * base.music_stride));
    EXPECT_TRUE(rows_equal(base.harmony_logits.value(), pert.harmony_logits.value(), 0, base.harmony_logits.rows()));
    EXPECT_TRUE(rows_equal(base.bar_length_logits.value(), pert.bar_length_logits.value(), 0, j + 1));
    EXPECT_FALSE(rows_equal(base.music_logits.value(), pert.music_logits.value(), before * base.music_stride,
                            base.music_logits.rows() - before * base.music_stride));
  }
}

TEST(HierModel, BarCausalityUnderHarmonyPerturbation) {
  ModelConfig cfg = small_config();
  cfg.harmony_lookahead = 0;
  HierModel m(cfg);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(100 + seed);
    auto w = random_window(rng, cfg, 4);
    const auto base = m.forward(w);
    const int j = 2;
    w.bars[j].harmony = random_ids(rng, static_cast<int>(w.bars[j].harmony.size()));
    const auto pert = m.forward(w);
    const int before = cell_index(base, j, 0);
    EXPECT_TRUE(rows_equal(base.music_logits.value(), pert.music_logits.value(), 0, before * base.music_stride));
    EXPECT_TRUE(rows_equal(base.harmony_logits.value(), pert.harmony_logits.value(), 0, j * base.harmony_stride));
    EXPECT_TRUE(rows_equal(base.track_logits.value(), pert.track_logits.value(), 0, 1));
  }
}

TEST(HierModel, HarmonyLookaheadHorizon) {
  ModelConfig cfg = small_config();
  cfg.harmony_lookahead = 1;
  HierModel m(cfg);
  std::mt19937_64 rng(9);
  auto w = random_window(rng, cfg, 4);
  const auto base = m.forward(w);
  w.bars[3].harmony = random_ids(rng, static_cast<int>(w.bars[3].harmony.size()));
  const auto pert = m.forward(w);
  // Music bar 2 may see harmony bar 3; music bar 1 may not.
  EXPECT_EQ(base.acts.c_B.row(1), pert.acts.c_B.row(1));
  EXPECT_NE(base.acts.c_B.row(2), pert.acts.c_B.row(2));
  const auto full = HierModel([&] {
    ModelConfig c = cfg;
    c.harmony_lookahead = -1;
    return c;
  }());
  const auto fb = full.forward(w);
  w.bars[3].harmony = random_ids(rng, static_cast<int>(w.bars[3].harmony.size()));
  EXPECT_NE(fb.acts.c_B.row(0), full.forward(w).acts.c_B.row(0));
}

TEST(HierModel, TrackCausalityWithinBar) {
  const auto cfg = small_config();
  HierModel m(cfg);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(200 + seed);
    auto w = random_window(rng, cfg, 3);
    const int b = 1;
    if (w.bars[b].cells.size() < 2) continue;
    const auto base = m.forward(w);
    const int tp = static_cast<int>(w.bars[b].cells.size()) - 1;
    auto& cell = w.bars[b].cells[static_cast<std::size_t>(tp)];
    cell.tokens = random_ids(rng, static_cast<int>(cell.tokens.size()));
    const auto pert = m.forward(w);
    for (int t = 0; t < tp; ++t) {
      const int c = cell_index(base, b, t);
      EXPECT_TRUE(rows_equal(base.acts.c_T, pert.acts.c_T, c, 1));
      EXPECT_TRUE(rows_equal(base.music_logits.value(), pert.music_logits.value(), c * base.music_stride, base.music_stride));
    }
    // The perturbed cell's own context comes from earlier slots only.
    const int own = cell_index(base, b, tp);
    EXPECT_FALSE(rows_equal(base.acts.z_T, pert.acts.z_T, own, 1));
    EXPECT_TRUE(rows_equal(base.instrument_logits.value(), pert.instrument_logits.value(), own, 1));
  }
}

TEST(HierModel, TrackStageBarsInteractOnlyThroughBarContext) {
  HierModel m(small_config());
  std::mt19937_64 rng(11);
  const Var sc(nn::normal_init(rng, 2, 16, 1.0));
  const Var z(nn::normal_init(rng, 4, 16, 1.0));
  const auto base = m.track_decode(sc, z, {2, 2});
  Matrix zv = z.value();
  zv.row(3).setRandom();
  const auto pert = m.track_decode(sc, Var(zv), {2, 2});
  EXPECT_EQ(base.value().topRows(2), pert.value().topRows(2));
  EXPECT_EQ(base.value().row(2), pert.value().row(2));
}

TEST(HierModel, EventCausalityWithinCell) {
  const auto cfg = small_config();
  HierModel m(cfg);
  std::mt19937_64 rng(12);
  auto w = random_window(rng, cfg, 2, true);
  const auto base = m.forward(w);
  const int k = 3;
  w.bars[1].cells[1].tokens[k] = (w.bars[1].cells[1].tokens[k] + 1) % kTokenVocabSize;
  const auto moved = m.forward(w);
  const int c = cell_index(base, 1, 1);
  EXPECT_TRUE(rows_equal(base.music_logits.value(), moved.music_logits.value(), c * cfg.E, k + 1));
  EXPECT_FALSE(rows_equal(base.music_logits.value(), moved.music_logits.value(), c * cfg.E + k + 1, 1));
  // Music reads the whole current-bar harmony, so harmony is checked on its own.
  w.bars[1].harmony[k] = (w.bars[1].harmony[k] + 1) % kTokenVocabSize;
  const auto pert = m.forward(w);
  EXPECT_TRUE(rows_equal(base.harmony_logits.value(), pert.harmony_logits.value(), cfg.E_h, k + 1));
  EXPECT_FALSE(rows_equal(base.harmony_logits.value(), pert.harmony_logits.value(), cfg.E_h + k + 1, 1));
}

struct DecodeFixture {
  ModelConfig cfg = small_config();
  std::mt19937_64 rng{13};
  MusicDecodeInput in;

  explicit DecodeFixture(int cells = 4) {
    in.rows_per_cell = cfg.E;
    in.context = Var(nn::normal_init(rng, cells, cfg.D, 0.5));
    in.meta = Var(nn::normal_init(rng, cells, cfg.D, 0.5));
    in.harmony = Var(nn::normal_init(rng, 2 * cfg.E_h, cfg.D, 0.5));
    in.harmony_stride = cfg.E_h;
    for (int c = 0; c < cells; ++c) {
      in.inputs.push_back(shifted_input(random_ids(rng, cfg.E - 1), cfg.E));
      in.harmony_rows.emplace_back(c < 2 ? 0 : cfg.E_h, 4);
    }
    // Cells 0, 1 are bar 0; cell 2 follows cell 1, cell 3 has no predecessor.
    in.prev_cell = {kNone, kNone, 1, kNone};
  }
};

TEST(MusicDecoder, RetrievalReadsOnlyTheMappedCell) {
  DecodeFixture f;
  HierModel m(f.cfg);
  const auto base = m.music_event_decode(f.in);
  for (const auto& trace : base.retrieval_trace) EXPECT_EQ(trace, f.in.prev_cell);
  ASSERT_EQ(base.retrieval_trace.size(), 2u);

  auto unmapped = f.in;
  unmapped.inputs[0] = shifted_input(random_ids(f.rng, f.cfg.E - 1), f.cfg.E);
  const auto a = m.music_event_decode(unmapped);
  EXPECT_TRUE(rows_equal(base.logits.value(), a.logits.value(), 2 * f.cfg.E, 2 * f.cfg.E));

  auto mapped = f.in;
  mapped.inputs[1] = shifted_input(random_ids(f.rng, f.cfg.E - 1), f.cfg.E);
  const auto b = m.music_event_decode(mapped);
  EXPECT_FALSE(rows_equal(base.logits.value(), b.logits.value(), 2 * f.cfg.E, f.cfg.E));
  EXPECT_TRUE(rows_equal(base.logits.value(), b.logits.value(), 3 * f.cfg.E, f.cfg.E));
}

TEST(MusicDecoder, SkippedRetrievalIsIdentity) {
  DecodeFixture f;
  HierModel m(f.cfg);
  const auto base = m.music_event_decode(f.in);
  ModelConfig off = f.cfg;
  off.previous_bar_stream = false;
  const auto no_prev = HierModel(off).music_event_decode(f.in);
  // Cell 3 has no predecessor, so disabling the stream leaves it unchanged.
  EXPECT_TRUE(rows_equal(base.logits.value(), no_prev.logits.value(), 3 * f.cfg.E, f.cfg.E));
  EXPECT_FALSE(rows_equal(base.logits.value(), no_prev.logits.value(), 2 * f.cfg.E, f.cfg.E));
}

TEST(MusicDecoder, CachedMemoryMatchesBatchedRetrieval) {
  DecodeFixture f;
  HierModel m(f.cfg);
  const auto base = m.music_event_decode(f.in);
  CellMemory mem;
  mem.length = f.cfg.E - 1;
  for (std::size_t l = 0; l + 1 < base.layer_outputs.size(); ++l) {
    mem.layer_outputs.push_back(base.layer_outputs[l].value().middleRows(f.cfg.E, f.cfg.E));
  }
  MusicDecodeInput one;
  one.rows_per_cell = f.cfg.E;
  one.inputs = {f.in.inputs[2]};
  one.context = ad::rows(f.in.context, 2, 1);
  one.meta = ad::rows(f.in.meta, 2, 1);
  one.harmony = f.in.harmony;
  one.harmony_stride = f.cfg.E_h;
  one.harmony_rows = {f.in.harmony_rows[2]};
  one.prev_memory = {&mem};
  const auto cached = m.music_event_decode(one);
  EXPECT_LT((cached.logits.value() - base.logits.value().middleRows(2 * f.cfg.E, f.cfg.E)).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(MusicDecoder, PaddingAmountDoesNotChangeValidRows) {
  DecodeFixture f;
  HierModel m(f.cfg);
  const auto base = m.music_event_decode(f.in);
  auto narrow = f.in;
  const int rows = f.cfg.E - 1;
  narrow.rows_per_cell = rows;
  for (auto& in : narrow.inputs) in.resize(static_cast<std::size_t>(rows));
  const auto w = m.music_event_decode(narrow);
  for (int c = 0; c < 4; ++c) {
    const Matrix a = base.logits.value().middleRows(c * f.cfg.E, f.cfg.E - 1);
    const Matrix b = w.logits.value().middleRows(c * rows, f.cfg.E - 1);
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_TRUE(base.logits.value().row(f.cfg.E - 1).isZero(0));
}

TEST(MusicDecoder, MapOutsideBatchRejected) {
  DecodeFixture f;
  f.in.prev_cell[2] = 9;
  HierModel m(f.cfg);
  EXPECT_THROW(m.music_event_decode(f.in), ValidationError);
}

TEST(MusicDecoder, TwoStreamsAreLive) {
  ModelConfig on = small_config();
  ModelConfig off = on;
  off.harmony_stream = false;
  off.previous_bar_stream = false;
  HierModel a(on);
  HierModel b(off);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(300 + seed);
    const auto w = random_window(rng, on, 3);
    EXPECT_NE(a.forward(w).music_logits.value(), b.forward(w).music_logits.value());
  }
}

TEST(Loss, CombinationWeights) {
  EXPECT_DOUBLE_EQ(combine_losses(1, 1, 1), 1.55);
  HierModel m(small_config());
  std::mt19937_64 rng(14);
  const auto r = m.forward(random_window(rng, small_config(), 3));
  EXPECT_DOUBLE_EQ(r.values.total, 0.05 * r.values.l_meta + 0.5 * r.values.l_harm + r.values.l_music);
}

TEST(Loss, EmptyWindowGivesZero) {
  HierModel m(small_config());
  const auto r = m.forward(WindowExample{});
  EXPECT_EQ(r.values.total, 0.0);
  EXPECT_EQ(r.values.l_meta, 0.0);
  Var total;
  const auto l = m.batch_loss({WindowExample{}, WindowExample{}}, &total);
  EXPECT_EQ(l.total, 0.0);
  EXPECT_EQ(total.scalar(), 0.0);
}

TEST(Loss, GradientMatchesCentralDifferences) {
  ModelConfig cfg;
  cfg.B = 2;
  cfg.T = 2;
  cfg.E = 4;
  cfg.E_h = 4;
  cfg.D = 8;
  cfg.heads = 2;
  HierModel m(cfg);
  std::mt19937_64 rng(15);
  const std::vector<WindowExample> batch = {random_window(rng, cfg, 2), random_window(rng, cfg, 2)};
  std::vector<Var> params;
  for (auto& [name, p] : m.params().entries()) params.push_back(p);
  const auto r = testing::grad_check(params, [&] {
    Var total;
    m.batch_loss(batch, &total);
    return total;
  }, 2, 1e-3);
  EXPECT_GE(r.checked, 20);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(AttentionCost, MeasuredMatchesAnalytic) {
  for (const auto& [B, T, E] : std::vector<std::array<int, 3>>{{1, 1, 1}, {2, 2, 4}, {3, 2, 5}}) {
    ModelConfig cfg = small_config();
    cfg.B = B;
    cfg.T = T;
    cfg.E = E;
    cfg.E_h = E;
    cfg.music_decoder_layers = 3;
    EXPECT_EQ(HierModel(cfg).measure_attention_cost(), analytic_attention_cost(cfg));
  }
}

TEST(AttentionCost, UnitGrid) {
  ModelConfig cfg = small_config();
  cfg.B = cfg.T = cfg.E = cfg.E_h = 1;
  const auto s = HierModel(cfg).measure_attention_cost();
  const long long H = cfg.heads;
  EXPECT_EQ(s[kStageEventEncoderMusic], cfg.event_encoder_layers * H);
  EXPECT_EQ(s[kStageTrackEncoder], cfg.track_encoder_layers * H);
  EXPECT_EQ(s[kStageTrackDecoder], cfg.track_decoder_layers * H);
  EXPECT_EQ(s[kStageMusicSelf], cfg.music_decoder_layers * H);
  // The bar decoder runs over the concatenated harmony and music rows.
  EXPECT_EQ(s[kStageBarDecoder], cfg.bar_decoder_layers * 4 * H);
  EXPECT_EQ(s[kStageMusicCrossPrevious], 0);
}

TEST(AttentionCost, DoublingScales) {
  ModelConfig cfg = small_config();
  cfg.B = 2;
  cfg.T = 2;
  cfg.E = 4;
  cfg.E_h = 4;
  const auto base = HierModel(cfg).measure_attention_cost();
  ModelConfig e2 = cfg;
  e2.E = 8;
  const auto se = HierModel(e2).measure_attention_cost();
  EXPECT_EQ(se[kStageEventEncoderMusic], 4 * base[kStageEventEncoderMusic]);
  EXPECT_EQ(se[kStageMusicSelf], 4 * base[kStageMusicSelf]);
  ModelConfig t2 = cfg;
  t2.T = 4;
  const auto st = HierModel(t2).measure_attention_cost();
  EXPECT_EQ(st[kStageTrackEncoder], 4 * base[kStageTrackEncoder]);
  EXPECT_EQ(st[kStageTrackDecoder], 4 * base[kStageTrackDecoder]);
  EXPECT_EQ(st[kStageEventEncoderMusic], 2 * base[kStageEventEncoderMusic]);
  ModelConfig b2 = cfg;
  b2.B = 4;
  const auto sb = HierModel(b2).measure_attention_cost();
  EXPECT_EQ(sb[kStageBarDecoder], 4 * base[kStageBarDecoder]);
}

TEST(HierModel, CapacityViolationsThrow) {
  const auto cfg = small_config();
  HierModel m(cfg);
  std::mt19937_64 rng(16);
  auto w = random_window(rng, cfg, 1);
  w.bars[0].cells[0].tokens = random_ids(rng, cfg.E + 1);
  EXPECT_THROW(m.forward(w), ShapeError);
  EXPECT_THROW(m.forward(random_window(rng, cfg, cfg.B + 1)), ShapeError);
}

}  // namespace
}  // namespace symphony::model
