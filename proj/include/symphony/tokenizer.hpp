#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "symphony/score.hpp"

namespace symphony {

enum class TokenKind : std::uint8_t { Pitch = 0, Pos = 1, Dur = 2, Legato = 3, Eot = 4 };

struct Token {
  TokenKind kind = TokenKind::Eot;
  int value = 0;

  static Token pitch(int v) { return {TokenKind::Pitch, v}; }
  static Token pos(int v) { return {TokenKind::Pos, v}; }
  static Token dur(int v) { return {TokenKind::Dur, v}; }
  static Token legato(int v) { return {TokenKind::Legato, v}; }
  static Token eot() { return {TokenKind::Eot, 0}; }

  friend bool operator==(const Token&, const Token&) = default;
};

std::string to_string(const Token& t);
std::string to_string(std::span<const Token> tokens);

// Stable vocabulary layout: Pitch 0-127, Pos 128-255, Dur 256-383 (1-128),
// Legato 384-511 (1-128), EOT 512.
inline constexpr int kTokenVocabSize = 513;
inline constexpr int kEotId = 512;
int token_id(const Token& t);
Token token_from_id(int id);
inline constexpr bool is_pitch_id(int id) { return id >= 0 && id < 128; }

inline constexpr int kMusicCapacity = 32;
inline constexpr int kHarmonyCapacity = 64;

enum class SequenceClass { Music, Harmony };
int capacity_of(SequenceClass cls);

struct TokenSequence {
  std::vector<Token> tokens;
  SequenceClass cls = SequenceClass::Music;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// The encoded sequence does not fit its capacity; `full()` holds the
/// untruncated stream so the caller can decide how to cut it.
class TruncationError : public std::length_error {
 public:
  TruncationError(std::vector<Token> full, int capacity);
  const std::vector<Token>& full() const { return full_; }
  int capacity() const { return capacity_; }

 private:
  std::vector<Token> full_;
  int capacity_;
};

class DecodeError : public std::invalid_argument {
 public:
  DecodeError(const std::string& what, std::size_t index)
      : std::invalid_argument(what + " at token " + std::to_string(index)), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

/// Compressed REMI encoding of one (bar, track) cell.
///
/// Notes are grouped by onset and, within an onset, by duration. The position
/// token of a group at onset 0 is omitted. When a duration sub-group ends
/// exactly where the next group starts, it is emitted last in its group as a
/// Legato token, which also stands in for the next group's position token.
TokenSequence encode(const TrackBar& track_bar, int bar_length,
                     SequenceClass cls = SequenceClass::Music);

/// Same stream as encode() with no capacity check.
std::vector<Token> encode_unbounded(const TrackBar& track_bar, int bar_length);

/// Drops trailing onset groups until the stream fits `capacity`.
std::vector<Token> encode_truncated(const TrackBar& track_bar, int bar_length, int capacity);

/// Inverse of encode(). Only canonical streams are accepted, so
/// encode(decode(s)) == s for every stream that decodes.
TrackBar decode(std::span<const Token> tokens, int bar_length);
inline TrackBar decode(const TokenSequence& seq, int bar_length) { return decode(seq.tokens, bar_length); }

/// Incremental validator for the canonical token grammar.
class TokenGrammar {
 public:
  explicit TokenGrammar(int bar_length);

  /// Reason the token is not acceptable next, or nullopt.
  std::optional<std::string> check(const Token& t) const;
  /// Appends a token; throws std::invalid_argument if check() fails.
  void push(const Token& t);

  bool closable() const;
  bool finished() const { return finished_; }
  bool pitch_allowed() const { return sub_ != Sub::None; }
  /// Onset of the group the next pitch would join.
  int onset() const { return group_pos_; }
  int duration() const { return cur_dur_; }
  int bar_length() const { return bar_length_; }

 private:
  enum class Sub { None, Dur, Legato };
  int bar_length_;
  bool started_ = false;
  bool finished_ = false;
  int group_pos_ = 0;
  std::optional<int> implied_next_;
  std::vector<int> group_durs_;
  int last_plain_dur_ = 0;
  bool legato_in_group_ = false;
  Sub sub_ = Sub::None;
  int cur_dur_ = 0;
  int last_pitch_ = -1;
  int sub_pitches_ = 0;
};

nlohmann::json tokens_to_json(std::span<const Token> tokens);
std::vector<Token> tokens_from_json(const nlohmann::json& j);
std::vector<std::uint8_t> tokens_to_binary(std::span<const Token> tokens);
std::vector<Token> tokens_from_binary(std::span<const std::uint8_t> bytes);

}  // namespace symphony
