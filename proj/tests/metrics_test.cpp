#include <gtest/gtest.h>

#include <random>

#include "support/generators.hpp"
#include "symphony/errors.hpp"
#include "symphony/metrics.hpp"

namespace symphony {
namespace {

Bar melody_bar(std::vector<NoteEvent> melody, int accompaniment_pitch = 40) {
  Bar bar{32, {}};
  TrackBar top{0, 73, std::move(melody)};
  normalize_events(top.events);
  bar.tracks.push_back(top);
  bar.tracks.push_back(TrackBar{1, 32, {{accompaniment_pitch, 0, 32}}});
  return bar;
}

Bar run_of(int duration, int pitch = 72) {
  std::vector<NoteEvent> ev;
  for (int t = 0; t < 32; t += duration) ev.push_back({pitch, t, duration});
  return melody_bar(ev);
}

TEST(TrackDensity, Examples) {
  Score s;
  Bar a{32, {}};
  for (int t = 0; t < 3; ++t) a.tracks.push_back(TrackBar{t, 0, {{60, 0, 8}}});
  Bar b{32, {}};
  for (int t = 0; t < 5; ++t) b.tracks.push_back(TrackBar{t, 0, {{60, 0, 8}}});
  s.bars = {a, b};
  EXPECT_DOUBLE_EQ(track_density(s), 4.0);

  Score silent;
  silent.bars.push_back(Bar{32, {TrackBar{0, 0, {}}, TrackBar{1, 0, {}}}});
  EXPECT_DOUBLE_EQ(track_density(silent), 0.0);

  Score ten;
  for (int i = 0; i < 4; ++i) {
    Bar bar{32, {}};
    for (int t = 0; t < 10; ++t) bar.tracks.push_back(TrackBar{t, 0, {{50 + t, 0, 32}}});
    ten.bars.push_back(bar);
  }
  EXPECT_DOUBLE_EQ(track_density(ten), 10.0);
  EXPECT_THROW(track_density(Score{}), UndefinedMetricError);
}

TEST(Skyline, HighestDurationWeightedMeanPitch) {
  Bar bar{32, {}};
  // Track 0: mean (84*2 + 48*30)/32 = 50.25; track 1: held 60.
  bar.tracks.push_back(TrackBar{0, 0, {{84, 0, 2}, {48, 2, 30}}});
  bar.tracks.push_back(TrackBar{1, 0, {{60, 0, 32}}});
  bar.tracks.push_back(TrackBar{2, 0, {}});
  EXPECT_EQ(skyline_track(bar), 1);
  EXPECT_EQ(skyline_track(Bar{32, {TrackBar{0, 0, {}}}}), -1);
}

TEST(PredominantDuration, ModeWithShorterTieBreak) {
  EXPECT_EQ(predominant_duration(TrackBar{0, 0, {{60, 0, 8}, {62, 8, 4}, {64, 12, 4}, {65, 16, 8}}}), 4);
  EXPECT_EQ(predominant_duration(TrackBar{0, 0, {{60, 0, 8}, {62, 8, 4}, {64, 12, 8}}}), 8);
}

TEST(MelodicMovement, Examples) {
  Score same;
  same.bars = {run_of(8), run_of(8), run_of(8)};
  EXPECT_DOUBLE_EQ(melodic_movement(same), 0.0);

  Score alternating;
  alternating.bars = {run_of(8), run_of(4), run_of(8), run_of(4)};
  EXPECT_DOUBLE_EQ(melodic_movement(alternating), 1.0);

  Score mixed;
  mixed.bars = {run_of(8), run_of(8), run_of(4), run_of(4)};
  EXPECT_DOUBLE_EQ(melodic_movement(mixed), 1.0 / 3.0);

  Score single;
  single.bars = {run_of(8)};
  EXPECT_THROW(melodic_movement(single), UndefinedMetricError);
}

TEST(MelodicOrnament, StepwiseRunIntoSustainedNote) {
  Score s;
  s.bars = {run_of(32), run_of(32), run_of(32), run_of(32)};
  EXPECT_DOUBLE_EQ(melodic_ornament(s), 0.0);
  // D-E-F eighths landing on a half-note G in the third bar.
  s.bars[2] = melody_bar({{74, 0, 8}, {74, 8, 4}, {76, 12, 4}, {77, 16, 4}, {79, 20, 12}});
  EXPECT_DOUBLE_EQ(melodic_ornament(s), 0.25);
  // C-E-F has a leap and does not count.
  s.bars[2] = melody_bar({{74, 0, 8}, {72, 8, 4}, {76, 12, 4}, {77, 16, 4}, {79, 20, 12}});
  EXPECT_DOUBLE_EQ(melodic_ornament(s), 0.0);
  // Descending sixteenths also count; a run crossing the bar line belongs to the landing bar.
  s.bars[0] = melody_bar({{72, 0, 26}, {81, 26, 2}, {79, 28, 2}, {77, 30, 2}});
  s.bars[1] = melody_bar({{76, 0, 32}});
  EXPECT_DOUBLE_EQ(melodic_ornament(s), 0.25);
  // Mixed directions are not a run.
  s.bars[0] = melody_bar({{72, 0, 26}, {77, 26, 2}, {79, 28, 2}, {77, 30, 2}});
  EXPECT_DOUBLE_EQ(melodic_ornament(s), 0.0);
}

TEST(Evaluate, NoReferenceLeavesPrecisionAbsent) {
  std::mt19937_64 rng(2);
  const Score s = testing::random_tonal_score(rng);
  const auto r = evaluate(s, nullptr);
  EXPECT_FALSE(r.prc);
  EXPECT_FALSE(r.rec);
  EXPECT_TRUE(r.absent.count("prc"));
  EXPECT_TRUE(r.trk && r.d_hn && r.d_nn && r.mov && r.orn);
  const auto j = report_to_json(r);
  EXPECT_TRUE(j["prc"].is_null());
  EXPECT_EQ(j["trk"], 3.0);
}

TEST(Evaluate, SelfReferenceAndSkeletonToneScores) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    const Score s = testing::random_tonal_score(rng, 4, 2 + i % 3);
    const auto ref = analyze_skeleton(s);
    auto r = evaluate(s, &ref);
    ASSERT_EQ(*r.prc, 1.0);
    ASSERT_EQ(*r.rec, 1.0);
    const Score tones_only = skeleton_to_score(ref);
    r = evaluate(tones_only, &ref);
    ASSERT_EQ(*r.prc, 1.0);
    // Shared code path with the dissonance module.
    const auto d = d_total(tones_only, ref, {}, default_w());
    ASSERT_EQ(*r.d_hn, d.hn_mean);
    ASSERT_EQ(*r.d_nn, d.nn_mean);
  }
}

TEST(Evaluate, DeterministicAndInRange) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 50; ++i) {
    const Score s = testing::random_score(rng);
    if (s.bars.empty()) continue;
    const auto ref = analyze_skeleton(testing::random_tonal_score(rng, static_cast<int>(s.bars.size())));
    const auto a = evaluate(s, &ref);
    ASSERT_EQ(a, evaluate(s, &ref));
    for (const auto& v : {a.mov, a.orn}) {
      if (v) {
        ASSERT_GE(*v, 0.0);
        ASSERT_LE(*v, 1.0);
      }
    }
    if (a.prc) {
      ASSERT_GE(*a.prc, 0.0);
      ASSERT_LE(*a.rec, 1.0);
    }
    ASSERT_LE(*a.trk, 32.0);
  }
}

}  // namespace
}  // namespace symphony
