#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "support/generators.hpp"
#include "support/oracles.hpp"
#include "symphony/errors.hpp"
#include "symphony/harmony.hpp"

namespace symphony {
namespace {

Score one_bar(std::vector<NoteEvent> events, int bar_length = 32) {
  Score s;
  TrackBar tb{0, 0, std::move(events)};
  normalize_events(tb.events);
  s.bars.push_back(Bar{bar_length, {tb}});
  return s;
}

std::array<double, 12> hist_of(std::initializer_list<std::pair<int, double>> entries) {
  std::array<double, 12> h{};
  for (auto [pc, w] : entries) h[pc] = w;
  return h;
}

HarmonyBeat beat_with(ChordTemplate chord, std::vector<int> tones, PcSet ext = 0) {
  HarmonyBeat b;
  b.chord = chord;
  b.tones = std::move(tones);
  b.extensions = ext;
  return b;
}

HarmonySkeleton skeleton_from_bars(const std::vector<std::vector<HarmonyBeat>>& bars) {
  HarmonySkeleton sk;
  for (const auto& bar : bars) {
    sk.bar_lengths.push_back(static_cast<int>(bar.size()) * kBeatLength);
    for (auto b : bar) {
      b.beat_index = static_cast<int>(sk.beats.size());
      sk.beats.push_back(b);
    }
  }
  return sk;
}

constexpr ChordTemplate kCmaj{0, ChordQuality::Maj};
constexpr ChordTemplate kG7{7, ChordQuality::Dom7};

TEST(Templates, CountAndShapes) {
  const auto& all = all_templates();
  EXPECT_EQ(all.size(), 108u);
  for (const auto& t : all) {
    const int n = std::popcount(static_cast<unsigned>(t.pcs()));
    EXPECT_TRUE(n == 3 || n == 4) << t.name();
    EXPECT_TRUE(t.pcs() & pc_bit(t.root));
  }
  EXPECT_EQ(kCmaj.pcs(), pc_set_of({0, 4, 7}));
  EXPECT_EQ(kG7.pcs(), pc_set_of({7, 11, 2, 5}));
  EXPECT_EQ((ChordTemplate{11, ChordQuality::HalfDim7}.pcs()), pc_set_of({11, 2, 5, 9}));
  EXPECT_EQ(kG7.name(), "Gdom7");
}

TEST(PcHistogram, Examples) {
  EXPECT_EQ(pc_histogram(one_bar({{60, 0, 8}}), 0), hist_of({{0, 8.0}}));
  EXPECT_EQ(pc_histogram(one_bar({{60, 0, 8}, {64, 4, 4}}), 0), hist_of({{0, 8.0}, {4, 4.0}}));
  EXPECT_EQ(pc_histogram(one_bar({{60, 0, 8}}), 2), hist_of({}));
  // A note spanning several beats contributes its overlap with each.
  EXPECT_EQ(pc_histogram(one_bar({{62, 4, 20}}), 1), hist_of({{2, 8.0}}));
  EXPECT_EQ(pc_histogram(one_bar({{62, 4, 20}}), 2), hist_of({{2, 8.0}}));
  EXPECT_THROW(pc_histogram(one_bar({{60, 0, 8}}), 4), BoundsError);
  EXPECT_THROW(pc_histogram(one_bar({{60, 0, 8}}), -1), BoundsError);
}

TEST(MatchTemplate, ExactTriadHasUnitSimilarity) {
  const auto m = match_template(hist_of({{0, 1}, {4, 1}, {7, 1}}));
  EXPECT_EQ(m.chord, kCmaj);
  EXPECT_DOUBLE_EQ(m.similarity, 1.0);
}

TEST(MatchTemplate, EveryPureTemplateFindsItself) {
  for (const auto& t : all_templates()) {
    std::array<double, 12> h{};
    for (int pc : pcs_of(t.pcs())) h[pc] = 3.0;
    const auto m = match_template(h);
    EXPECT_NEAR(m.similarity, 1.0, 1e-15) << t.name();
    // dim7 and aug are symmetric; the lowest root of the same shape wins.
    EXPECT_EQ(m.chord.pcs(), t.pcs()) << t.name();
    EXPECT_EQ(m.chord.quality, t.quality);
  }
}

TEST(MatchTemplate, AgreesWithBruteForceListing) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> w(0, 4);
  for (int trial = 0; trial < 3000; ++trial) {
    std::array<double, 12> h{};
    for (auto& x : h) x = trial % 2 ? w(rng) : (w(rng) > 2 ? w(rng) * 2.0 : 0.0);
    if (std::all_of(h.begin(), h.end(), [](double x) { return x == 0.0; })) h[trial % 12] = 1.0;
    const auto listing = testing::all_similarities(h);
    double best = -1.0;
    for (const auto& s : listing) best = std::max(best, s.similarity);
    // Tie set, then fewer tones, then listing order.
    const testing::ScoredTemplate* pick = nullptr;
    for (const auto& s : listing) {
      if (std::abs(s.similarity - best) > 1e-12) continue;
      const int n = std::popcount(static_cast<unsigned>(s.chord.pcs()));
      if (!pick || n < std::popcount(static_cast<unsigned>(pick->chord.pcs()))) pick = &s;
    }
    const auto m = match_template(h);
    ASSERT_EQ(m.chord, pick->chord) << trial;
    ASSERT_NEAR(m.similarity, best, 1e-12);
  }
}

TEST(MatchTemplate, RootAndMajorThirdHistogram) {
  const auto h = hist_of({{0, 8}, {4, 4}});
  const auto listing = testing::all_similarities(h);
  const auto best = std::max_element(listing.begin(), listing.end(),
                                     [](auto& a, auto& b) { return a.similarity < b.similarity; });
  const auto m = match_template(h);
  EXPECT_NEAR(m.similarity, best->similarity, 1e-12);
  // C maj, A min and C aug all reach 12/sqrt(80*3); the triads tie and C precedes A.
  EXPECT_EQ(m.chord, kCmaj);
}

TEST(MatchTemplate, MajorMinorTieGoesToQualityOrder) {
  const auto h = hist_of({{0, 1}, {3, 1}, {4, 1}, {7, 1}});
  const auto listing = testing::all_similarities(h);
  int ties = 0;
  for (const auto& s : listing) ties += std::abs(s.similarity - std::sqrt(3.0) / 2.0) < 1e-12 ? 1 : 0;
  EXPECT_EQ(ties, 2);
  EXPECT_EQ(match_template(h).chord, kCmaj);
}

TEST(MatchTemplate, ZeroHistogramIsEmptyTemplate) {
  EXPECT_TRUE(match_template(hist_of({})).chord.empty());
}

TEST(FindExtensions, Examples) {
  EXPECT_EQ(find_extensions(pc_set_of({0, 4, 7}), kCmaj), 0);
  EXPECT_EQ(find_extensions(pc_set_of({0, 2, 4, 7, 9}), kCmaj), 0);
  EXPECT_EQ(find_extensions(pc_set_of({0, 4, 7, 10}), kCmaj), 0);
  EXPECT_EQ(find_extensions(pc_set_of({0, 4, 7, 11}), kCmaj), 0);
  EXPECT_EQ(find_extensions(pc_set_of({0, 4, 6, 7}), kCmaj), 0);
  EXPECT_EQ(find_extensions(pc_set_of({0, 3, 4, 7}), kCmaj), 0);
  // C dim {0,3,6}: 9 is a third away from 6 and 0, so it is admitted.
  const ChordTemplate cdim{0, ChordQuality::Dim};
  EXPECT_EQ(find_extensions(pc_set_of({0, 3, 6, 9}), cdim), pc_set_of({9}));
}

TEST(FindExtensions, MatchesExhaustiveSearchOnRandomCases) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> set(0, 4095);
  std::uniform_int_distribution<int> tpl(0, kTemplateCount - 1);
  for (int i = 0; i < 100000; ++i) {
    const auto present = static_cast<PcSet>(set(rng));
    const auto& t = all_templates()[tpl(rng)];
    ASSERT_EQ(find_extensions(present, t), testing::brute_force_extensions(present, t)) << present << " " << t.name();
  }
}

TEST(FindExtensions, ResultIsSound) {
  for (unsigned present = 0; present < 4096; present += 7) {
    for (const auto& t : all_templates()) {
      const PcSet ext = find_extensions(static_cast<PcSet>(present), t);
      ASSERT_EQ(ext & t.pcs(), 0);
      ASSERT_EQ(ext & ~present & 0xFFF, 0);
      for (int e : pcs_of(ext)) {
        for (int o : pcs_of(static_cast<PcSet>(ext | t.pcs()))) {
          if (o == e) continue;
          const int ic = interval_class(e, o);
          ASSERT_TRUE(ic != 1 && ic != 2);
        }
      }
    }
  }
}

TEST(AnalyzeSkeleton, HeldTriad) {
  const auto sk = analyze_skeleton(one_bar({{60, 0, 32}, {64, 0, 32}, {67, 0, 32}}));
  ASSERT_EQ(sk.beats.size(), 4u);
  for (const auto& b : sk.beats) {
    EXPECT_EQ(b.chord, kCmaj);
    EXPECT_EQ(b.extensions, 0);
    EXPECT_EQ(b.tones, (std::vector<int>{60, 64, 67}));
  }
}

TEST(AnalyzeSkeleton, PassingToneExcluded) {
  const auto sk = analyze_skeleton(one_bar({{60, 0, 32}, {64, 0, 32}, {67, 0, 32}, {62, 8, 4}}));
  EXPECT_EQ(sk.beats[1].chord, kCmaj);
  EXPECT_EQ(sk.beats[1].tones, (std::vector<int>{60, 64, 67}));
}

TEST(AnalyzeSkeleton, ExtensionToneIsKept) {
  // C dim plus A: A becomes an extension and its pitch stays among the tones.
  const auto sk = analyze_skeleton(one_bar({{60, 0, 8}, {63, 0, 8}, {66, 0, 8}, {69, 0, 2}}, 8));
  ASSERT_EQ(sk.beats.size(), 1u);
  EXPECT_EQ(sk.beats[0].allowed(), pc_set_of({0, 3, 6, 9}));
  EXPECT_EQ(sk.beats[0].tones, (std::vector<int>{60, 63, 66, 69}));
}

TEST(AnalyzeSkeleton, SilentBarCarriesTemplate) {
  Score s = one_bar({{60, 0, 32}, {64, 0, 32}, {67, 0, 32}});
  s.bars.push_back(Bar{32, {}});
  const auto sk = analyze_skeleton(s);
  ASSERT_EQ(sk.beats.size(), 8u);
  for (int i = 4; i < 8; ++i) {
    EXPECT_EQ(sk.beats[i].chord, kCmaj);
    EXPECT_TRUE(sk.beats[i].tones.empty());
  }
  // Leading silence gets the empty template.
  Score lead;
  lead.bars.push_back(Bar{32, {}});
  EXPECT_TRUE(analyze_skeleton(lead).beats[0].chord.empty());
}

TEST(AnalyzeSkeleton, BeatCountFollowsBarLengths) {
  Score s;
  s.bars.push_back(Bar{24, {}});
  s.bars.push_back(Bar{12, {}});
  s.bars.push_back(Bar{32, {}});
  const auto sk = analyze_skeleton(s);
  EXPECT_EQ(sk.beats.size(), 3u + 2u + 4u);
  EXPECT_EQ(sk.beat_span(4), (std::pair<int, int>{32, 36}));
  EXPECT_EQ(sk.beat_at(33), 4);
  EXPECT_EQ(sk.beat_at(36), 5);
  EXPECT_EQ(sk.bar_of_beat(4), 1);
  EXPECT_EQ(sk.total_length(), 68);
  EXPECT_EQ(sk.beat_at(68), -1);
}

TEST(AnalyzeSkeleton, InvariantsOnRandomScores) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const Score s = testing::random_score(rng);
    const auto sk = analyze_skeleton(s);
    int expected = 0;
    for (const auto& b : s.bars) expected += beats_in_bar(b.bar_length);
    ASSERT_EQ(static_cast<int>(sk.beats.size()), expected);
    for (const auto& b : sk.beats) {
      ASSERT_EQ(b.extensions & b.chord.pcs(), 0);
      ASSERT_EQ(b.tone_pcs() & ~b.allowed(), 0);
    }
  }
}

TEST(PrecisionRecall, Examples) {
  auto ref = skeleton_from_bars({{beat_with(kCmaj, {60, 64, 67}), beat_with(kCmaj, {48, 52, 55})}});
  auto gen = skeleton_from_bars({{beat_with(kCmaj, {60, 64}), beat_with(kCmaj, {48, 52})}});
  auto pr = precision_recall(ref, gen);
  EXPECT_DOUBLE_EQ(pr.precision, 1.0);
  EXPECT_DOUBLE_EQ(pr.recall, 2.0 / 3.0);
  auto other = skeleton_from_bars({{beat_with(kG7, {59, 62}), beat_with(kG7, {65, 71})}});
  pr = precision_recall(ref, other);
  EXPECT_EQ(pr.precision, 0.0);
  EXPECT_EQ(pr.recall, 0.0);
  pr = precision_recall(ref, ref);
  EXPECT_EQ(pr.precision, 1.0);
  EXPECT_EQ(pr.recall, 1.0);
  auto short_sk = skeleton_from_bars({{beat_with(kCmaj, {60})}});
  EXPECT_THROW(precision_recall(ref, short_sk), ShapeError);
}

TEST(PrecisionRecall, SelfAnalysisIsPerfect) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 100; ++i) {
    const Score s = i % 2 ? testing::random_score(rng) : testing::random_tonal_score(rng);
    const auto sk = analyze_skeleton(s);
    const auto pr = precision_recall(sk, sk);
    ASSERT_EQ(pr.precision, 1.0);
    ASSERT_EQ(pr.recall, 1.0);
  }
}

TEST(Filter, HeldTriadIsRepetitive) {
  std::vector<std::vector<HarmonyBeat>> bars(32, std::vector<HarmonyBeat>(4, beat_with(kCmaj, {60, 64, 67})));
  const auto v = filter_skeleton(skeleton_from_bars(bars), {});
  EXPECT_FALSE(v.accepted);
  EXPECT_EQ(v.reasons, std::vector<FilterReason>{FilterReason::Repetition});
  EXPECT_DOUBLE_EQ(v.repetition, 1.0);
}

TEST(Filter, AlternatingDominantTonicPassesCadenceRule) {
  std::vector<std::vector<HarmonyBeat>> bars;
  for (int b = 0; b < 32; ++b) {
    bars.push_back(std::vector<HarmonyBeat>(4, b % 2 == 0 ? beat_with(kG7, {55, 59, 62, 65})
                                                          : beat_with(kCmaj, {48, 52, 55})));
  }
  const auto sk = skeleton_from_bars(bars);
  EXPECT_EQ(count_cadences(sk), 16);
  FilterConfig cfg;
  cfg.require_cadences = true;
  cfg.require_major_minor_start = false;
  // Held chords repeat within each bar; the repetition rule is relaxed so the
  // cadence rule is checked on its own.
  cfg.max_repetition = 1.0;
  const auto v = filter_skeleton(sk, cfg);
  EXPECT_TRUE(v.accepted);
  EXPECT_EQ(v.cadences, 16);
  cfg.min_cadences_per_32_bars = 17;
  EXPECT_EQ(filter_skeleton(sk, cfg).reasons, std::vector<FilterReason>{FilterReason::TooFewCadences});
}

TEST(Filter, ThinSkeletonIsLowDensity) {
  std::vector<std::vector<HarmonyBeat>> bars;
  for (int b = 0; b < 8; ++b) {
    bars.push_back({beat_with(kCmaj, {60, 64}), beat_with(kG7, {59, 62}), beat_with(kCmaj, {55, 64}),
                    beat_with(kG7, {62, 65})});
  }
  const auto v = filter_skeleton(skeleton_from_bars(bars), {});
  EXPECT_FALSE(v.accepted);
  EXPECT_EQ(v.reasons, std::vector<FilterReason>{FilterReason::LowDensity});
  EXPECT_DOUBLE_EQ(v.tones_per_beat, 2.0);
}

TEST(Filter, RepetitionUsesWorstWindow) {
  std::vector<std::vector<HarmonyBeat>> bars;
  const std::vector<HarmonyBeat> varied = {beat_with(kCmaj, {60, 64, 67}), beat_with(kG7, {59, 62, 65}),
                                           beat_with(kCmaj, {60, 64, 67}), beat_with(kG7, {59, 62, 65})};
  for (int b = 0; b < 8; ++b) bars.push_back(varied);
  // One held bar: 3 duplicates among 15 transitions of any window containing it.
  bars[5] = std::vector<HarmonyBeat>(4, beat_with({9, ChordQuality::Min}, {57, 60, 64}));
  const auto sk = skeleton_from_bars(bars);
  EXPECT_DOUBLE_EQ(repetition_rate(sk, 4), 3.0 / 15.0);
  EXPECT_TRUE(filter_skeleton(sk, {}).accepted);
  bars[6] = bars[5];
  EXPECT_DOUBLE_EQ(repetition_rate(skeleton_from_bars(bars), 4), 7.0 / 15.0);
}

TEST(Filter, FirstChordAndLogProbHooks) {
  std::vector<std::vector<HarmonyBeat>> bars;
  for (int b = 0; b < 4; ++b) {
    bars.push_back({beat_with(kG7, {55, 59, 62}), beat_with(kCmaj, {60, 64, 67}), beat_with(kG7, {55, 59, 65}),
                    beat_with(kCmaj, {48, 64, 67})});
  }
  const auto sk = skeleton_from_bars(bars);
  FilterConfig cfg;
  cfg.require_major_minor_start = true;
  cfg.log_prob = [](const HarmonySkeleton& s) { return -static_cast<double>(s.beats.size()); };
  cfg.min_log_prob = -10.0;
  const auto v = filter_skeleton(sk, cfg);
  EXPECT_EQ(v.reasons, (std::vector<FilterReason>{FilterReason::FirstChordQuality, FilterReason::LogProbability}));
  cfg.min_log_prob = -16.0;
  cfg.require_major_minor_start = false;
  EXPECT_TRUE(filter_skeleton(sk, cfg).accepted);
}

TEST(Prune, ClearsExtensionsAndIsIdempotent) {
  const ChordTemplate cdim{0, ChordQuality::Dim};
  auto sk = skeleton_from_bars({{beat_with(cdim, {60, 63, 66, 69}, pc_bit(9)), beat_with(kCmaj, {60, 64})}});
  const auto once = prune_to_template(sk);
  EXPECT_EQ(once.beats[0].extensions, 0);
  EXPECT_EQ(once.beats[0].chord, cdim);
  EXPECT_EQ(once.beats[0].tones, (std::vector<int>{60, 63, 66}));
  EXPECT_EQ(prune_to_template(once), once);
  std::mt19937_64 rng(23);
  for (int i = 0; i < 100; ++i) {
    const auto a = analyze_skeleton(testing::random_score(rng));
    const auto p = prune_to_template(a);
    for (std::size_t k = 0; k < a.beats.size(); ++k) ASSERT_LE(p.beats[k].tones.size(), a.beats[k].tones.size());
    ASSERT_EQ(prune_to_template(p), p);
  }
}

TEST(SkeletonJson, RoundTrip) {
  std::mt19937_64 rng(29);
  const auto sk = analyze_skeleton(testing::random_tonal_score(rng));
  const auto j = skeleton_to_json(sk);
  EXPECT_EQ(j["beat_len"], 8);
  EXPECT_EQ(skeleton_from_json(j), sk);
  auto bad = j;
  bad["bar_lens"] = {32};
  EXPECT_THROW(skeleton_from_json(bad), ShapeError);
}

TEST(SkeletonScore, TonesBecomeBeatLongNotes) {
  auto sk = skeleton_from_bars({{beat_with(kCmaj, {60, 64}), beat_with(kG7, {59})}});
  const Score s = skeleton_to_score(sk);
  ASSERT_EQ(s.bars.size(), 1u);
  EXPECT_EQ(s.bars[0].bar_length, 16);
  EXPECT_EQ(s.bars[0].tracks[0].events, (std::vector<NoteEvent>{{60, 0, 8}, {64, 0, 8}, {59, 8, 8}}));
}

}  // namespace
}  // namespace symphony
