#include <gtest/gtest.h>

#include <random>
#include <set>

#include "support/generators.hpp"
#include "support/oracles.hpp"
#include "symphony/tokenizer.hpp"

namespace symphony {
namespace {

using V = std::vector<Token>;

TrackBar bar_of(std::vector<NoteEvent> events) {
  TrackBar tb{0, 0, std::move(events)};
  normalize_events(tb.events);
  return tb;
}

TEST(Encode, EmptyTrackBar) {
  EXPECT_EQ(encode(bar_of({}), 32).tokens, V{Token::eot()});
}

TEST(Encode, SingleNoteDropsDownbeatPosition) {
  const auto tb = bar_of({{60, 0, 8}});
  const V expected = {Token::dur(8), Token::pitch(60), Token::eot()};
  EXPECT_EQ(testing::naive_remi(tb), (V{Token::pos(0), Token::dur(8), Token::pitch(60), Token::eot()}));
  EXPECT_EQ(testing::pass_by_pass_encode(tb), expected);
  EXPECT_EQ(encode(tb, 32).tokens, expected);
}

TEST(Encode, LegatoFusesDurationAndNextPosition) {
  const auto tb = bar_of({{60, 0, 8}, {62, 8, 8}});
  const V expected = {Token::legato(8), Token::pitch(60), Token::dur(8), Token::pitch(62), Token::eot()};
  EXPECT_EQ(testing::pass_by_pass_encode(tb), expected);
  EXPECT_EQ(encode(tb, 32).tokens, expected);
}

TEST(Encode, ChordSharesOneDuration) {
  const auto tb = bar_of({{67, 0, 16}, {60, 0, 16}, {64, 0, 16}});
  const V expected = {Token::dur(16), Token::pitch(60), Token::pitch(64), Token::pitch(67), Token::eot()};
  EXPECT_EQ(testing::pass_by_pass_encode(tb), expected);
  EXPECT_EQ(encode(tb, 32).tokens, expected);
}

TEST(Encode, FusibleSubgroupIsOrderedLast) {
  // At onset 4: durations 2, 4 and 12; the next group starts at 8, so Dur 4 fuses.
  const auto tb = bar_of({{50, 4, 2}, {52, 4, 4}, {55, 4, 12}, {57, 8, 1}});
  const V expected = {Token::pos(4),    Token::dur(2),    Token::pitch(50), Token::dur(12), Token::pitch(55),
                      Token::legato(4), Token::pitch(52), Token::dur(1),    Token::pitch(57), Token::eot()};
  EXPECT_EQ(encode(tb, 32).tokens, expected);
  EXPECT_EQ(testing::pass_by_pass_encode(tb), expected);
}

TEST(Encode, ChainedLegatoFusions) {
  const auto tb = bar_of({{60, 0, 4}, {62, 4, 4}, {64, 8, 4}, {65, 12, 20}});
  const V expected = {Token::legato(4), Token::pitch(60), Token::legato(4), Token::pitch(62),
                      Token::legato(4), Token::pitch(64), Token::dur(20),   Token::pitch(65), Token::eot()};
  EXPECT_EQ(encode(tb, 32).tokens, expected);
  EXPECT_EQ(decode(expected, 32), tb);
}

TEST(Encode, CapacityOverflowCarriesFullStream) {
  std::vector<NoteEvent> ev;
  for (int i = 0; i < 20; ++i) ev.push_back({40 + i, i, 1 + (i % 3) * 5});
  const auto tb = bar_of(ev);
  try {
    encode(tb, 32);
    FAIL();
  } catch (const TruncationError& e) {
    EXPECT_EQ(e.capacity(), kMusicCapacity);
    EXPECT_GT(static_cast<int>(e.full().size()), kMusicCapacity);
    EXPECT_EQ(e.full(), encode_unbounded(tb, 32));
    EXPECT_EQ(decode(e.full(), 32), tb);
  }
  // Harmony capacity is larger.
  EXPECT_NO_THROW(encode(tb, 32, SequenceClass::Harmony));
}

TEST(Encode, TruncationDropsWholeTrailingGroups) {
  std::vector<NoteEvent> ev;
  for (int onset = 0; onset < 24; onset += 2) {
    ev.push_back({60, onset, 1});
    ev.push_back({64, onset, 3});
  }
  const auto tb = bar_of(ev);
  const auto cut = encode_truncated(tb, 32, kMusicCapacity);
  ASSERT_LE(static_cast<int>(cut.size()), kMusicCapacity);
  EXPECT_EQ(cut.back(), Token::eot());
  const TrackBar back = decode(cut, 32);
  // Every kept onset carries both notes of its chord; kept onsets are a prefix.
  std::map<int, int> per_onset;
  for (const auto& e : back.events) per_onset[e.onset]++;
  int expect_onset = 0;
  for (auto [onset, count] : per_onset) {
    EXPECT_EQ(onset, expect_onset);
    EXPECT_EQ(count, 2);
    expect_onset += 2;
  }
  EXPECT_FALSE(per_onset.empty());
}

TEST(Decode, ExamplesFromEncode) {
  EXPECT_TRUE(decode(V{Token::eot()}, 32).events.empty());
  const V two = {Token::legato(8), Token::pitch(60), Token::dur(8), Token::pitch(62), Token::eot()};
  EXPECT_EQ(decode(two, 32).events, (std::vector<NoteEvent>{{60, 0, 8}, {62, 8, 8}}));
}

TEST(Decode, RejectsGrammarViolations) {
  auto expect_error_at = [](const V& v, std::size_t index) {
    try {
      decode(v, 32);
      ADD_FAILURE() << to_string(v);
    } catch (const DecodeError& e) {
      EXPECT_EQ(e.index(), index) << to_string(v) << ": " << e.what();
    }
  };
  expect_error_at({Token::pos(40), Token::dur(8), Token::pitch(60), Token::eot()}, 0);
  expect_error_at({Token::pitch(60), Token::eot()}, 0);
  expect_error_at({Token::pos(8), Token::dur(1), Token::pitch(60), Token::pos(4), Token::dur(1), Token::pitch(61),
                   Token::eot()},
                  3);
  expect_error_at({Token::pos(20), Token::legato(16), Token::pitch(60), Token::eot()}, 1);
  expect_error_at({Token::dur(8), Token::pitch(64), Token::pitch(60), Token::eot()}, 2);
  expect_error_at({Token::dur(8), Token::pitch(60)}, 2);
  expect_error_at({Token::dur(8), Token::eot()}, 1);
  expect_error_at({Token::pos(0), Token::dur(8), Token::pitch(60), Token::eot()}, 0);
  expect_error_at({Token::legato(8), Token::pitch(60), Token::eot()}, 2);
  expect_error_at({Token::dur(8), Token::pitch(60), Token::eot(), Token::eot()}, 3);
}

TEST(Grammar, PositionsAreMonotoneAndPitchNeedsDuration) {
  TokenGrammar g(32);
  EXPECT_FALSE(g.pitch_allowed());
  EXPECT_TRUE(g.closable());
  g.push(Token::pos(4));
  EXPECT_FALSE(g.closable());
  EXPECT_TRUE(g.check(Token::pitch(60)).has_value());
  g.push(Token::dur(4));
  EXPECT_TRUE(g.pitch_allowed());
  EXPECT_EQ(g.onset(), 4);
  EXPECT_EQ(g.duration(), 4);
  g.push(Token::pitch(60));
  EXPECT_TRUE(g.closable());
  EXPECT_TRUE(g.check(Token::pos(2)).has_value());
  EXPECT_TRUE(g.check(Token::pitch(59)).has_value());
  EXPECT_FALSE(g.check(Token::pitch(61)).has_value());
  EXPECT_THROW(g.push(Token::pos(8)), std::invalid_argument);  // fusible, must be a Legato instead
  g.push(Token::eot());
  EXPECT_TRUE(g.finished());
}

TEST(Serialization, JsonAndBinaryRoundTrip) {
  const V v = {Token::pos(4), Token::legato(4), Token::pitch(60), Token::dur(128), Token::pitch(127), Token::eot()};
  const auto j = tokens_to_json(v);
  EXPECT_EQ(j[0]["k"], "Pos");
  EXPECT_EQ(j[0]["v"], 4);
  EXPECT_FALSE(j[5].contains("v"));
  EXPECT_EQ(tokens_from_json(j), v);
  const auto bin = tokens_to_binary(v);
  EXPECT_EQ(bin.size(), 2 * v.size());
  EXPECT_EQ(tokens_from_binary(bin), v);
}

TEST(Vocabulary, IdsAreStableAndDisjoint) {
  std::set<int> seen;
  for (int p = 0; p < 128; ++p) seen.insert(token_id(Token::pitch(p)));
  for (int p = 0; p < 128; ++p) seen.insert(token_id(Token::pos(p)));
  for (int d = 1; d <= 128; ++d) seen.insert(token_id(Token::dur(d)));
  for (int d = 1; d <= 128; ++d) seen.insert(token_id(Token::legato(d)));
  seen.insert(token_id(Token::eot()));
  EXPECT_EQ(static_cast<int>(seen.size()), kTokenVocabSize);
  EXPECT_EQ(*seen.rbegin(), kTokenVocabSize - 1);
  for (int id : seen) EXPECT_EQ(token_id(token_from_id(id)), id);
  EXPECT_EQ(token_id(Token::pitch(60)), 60);
  EXPECT_EQ(token_id(Token::pos(0)), 128);
  EXPECT_EQ(token_id(Token::dur(1)), 256);
  EXPECT_EQ(token_id(Token::legato(128)), 511);
  EXPECT_EQ(token_id(Token::eot()), kEotId);
}

TEST(RoundTrip, RandomTrackBars) {
  std::mt19937_64 rng(7);
  static constexpr int kLengths[] = {8, 12, 24, 32, 48, 128};
  for (int i = 0; i < 10000; ++i) {
    const int len = kLengths[i % 6];
    const TrackBar tb = testing::random_track_bar(rng, len);
    const auto stream = encode_unbounded(tb, len);
    ASSERT_EQ(stream, testing::pass_by_pass_encode(tb)) << i;
    const TrackBar back = decode(stream, len);
    ASSERT_EQ(back, tb) << i << " " << to_string(stream);
    ASSERT_EQ(encode_unbounded(back, len), stream);
    ASSERT_LE(stream.size(), testing::naive_remi(tb).size());
    int last = -1;
    for (const auto& e : back.events) {
      ASSERT_GE(e.onset, last);
      last = e.onset;
    }
  }
}

TEST(RoundTrip, GrammarAcceptsExactlyCanonicalStreams) {
  // Any stream the grammar accepts must re-encode to itself.
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> id(0, kTokenVocabSize - 1);
  std::uniform_int_distribution<int> small(1, 16);
  int decoded = 0;
  for (int i = 0; i < 20000; ++i) {
    TokenGrammar g(32);
    V v;
    for (int step = 0; step < 12 && !g.finished(); ++step) {
      Token t = token_from_id(id(rng));
      if (t.kind == TokenKind::Dur || t.kind == TokenKind::Legato) t.value = small(rng);
      if (t.kind == TokenKind::Pos) t.value %= 32;
      if (g.check(t)) continue;
      g.push(t);
      v.push_back(t);
    }
    if (!g.finished()) {
      if (!g.closable()) continue;
      g.push(Token::eot());
      v.push_back(Token::eot());
    }
    const TrackBar tb = decode(v, 32);
    ASSERT_EQ(encode_unbounded(tb, 32), v) << to_string(v);
    ++decoded;
  }
  EXPECT_GT(decoded, 1000);
}

}  // namespace
}  // namespace symphony
