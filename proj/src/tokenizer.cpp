#include "symphony/tokenizer.hpp"

#include <algorithm>
#include <map>

#include "symphony/errors.hpp"

namespace symphony {

namespace {

constexpr const char* kKindNames[] = {"Pitch", "Pos", "Dur", "Legato", "EOT"};

struct Group {
  int onset = 0;
  // duration -> ascending pitches
  std::map<int, std::vector<int>> subgroups;
};

std::vector<Group> group_notes(const TrackBar& track_bar, int bar_length) {
  std::map<int, Group> by_onset;
  for (const auto& e : track_bar.events) {
    if (e.onset < 0 || e.onset >= bar_length) throw ValidationError("note onset outside bar");
    if (e.duration < 1 || e.duration > kMaxDuration) throw ValidationError("note duration outside [1, 128]");
    if (e.pitch < 0 || e.pitch > 127) throw ValidationError("pitch outside [0, 127]");
    auto& g = by_onset[e.onset];
    g.onset = e.onset;
    g.subgroups[e.duration].push_back(e.pitch);
  }
  std::vector<Group> groups;
  for (auto& [onset, g] : by_onset) {
    for (auto& [d, pitches] : g.subgroups) {
      std::sort(pitches.begin(), pitches.end());
      pitches.erase(std::unique(pitches.begin(), pitches.end()), pitches.end());
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

std::vector<Token> encode_groups(const std::vector<Group>& groups) {
  std::vector<Token> out;
  bool implied = false;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    if (!implied && g.onset != 0) out.push_back(Token::pos(g.onset));
    std::optional<int> fused;
    if (i + 1 < groups.size()) {
      const int gap = groups[i + 1].onset - g.onset;
      if (g.subgroups.count(gap)) fused = gap;
    }
    for (const auto& [d, pitches] : g.subgroups) {
      if (fused && d == *fused) continue;
      out.push_back(Token::dur(d));
      for (int p : pitches) out.push_back(Token::pitch(p));
    }
    if (fused) {
      out.push_back(Token::legato(*fused));
      for (int p : g.subgroups.at(*fused)) out.push_back(Token::pitch(p));
    }
    implied = fused.has_value();
  }
  out.push_back(Token::eot());
  return out;
}

}  // namespace

std::string to_string(const Token& t) {
  std::string s = "[";
  s += kKindNames[static_cast<int>(t.kind)];
  if (t.kind != TokenKind::Eot) s += ":" + std::to_string(t.value);
  return s + "]";
}

std::string to_string(std::span<const Token> tokens) {
  std::string s;
  for (const auto& t : tokens) s += to_string(t);
  return s;
}

int token_id(const Token& t) {
  switch (t.kind) {
    case TokenKind::Pitch:
      return t.value;
    case TokenKind::Pos:
      return 128 + t.value;
    case TokenKind::Dur:
      return 256 + t.value - 1;
    case TokenKind::Legato:
      return 384 + t.value - 1;
    case TokenKind::Eot:
      return kEotId;
  }
  return kEotId;
}

Token token_from_id(int id) {
  if (id < 0 || id >= kTokenVocabSize) throw BoundsError("token id " + std::to_string(id) + " out of vocabulary");
  if (id < 128) return Token::pitch(id);
  if (id < 256) return Token::pos(id - 128);
  if (id < 384) return Token::dur(id - 256 + 1);
  if (id < 512) return Token::legato(id - 384 + 1);
  return Token::eot();
}

int capacity_of(SequenceClass cls) { return cls == SequenceClass::Music ? kMusicCapacity : kHarmonyCapacity; }

TruncationError::TruncationError(std::vector<Token> full, int capacity)
    : std::length_error("token sequence of length " + std::to_string(full.size()) + " exceeds capacity " +
                        std::to_string(capacity)),
      full_(std::move(full)),
      capacity_(capacity) {}

std::vector<Token> encode_unbounded(const TrackBar& track_bar, int bar_length) {
  return encode_groups(group_notes(track_bar, bar_length));
}

TokenSequence encode(const TrackBar& track_bar, int bar_length, SequenceClass cls) {
  auto tokens = encode_unbounded(track_bar, bar_length);
  const int cap = capacity_of(cls);
  if (static_cast<int>(tokens.size()) > cap) throw TruncationError(std::move(tokens), cap);
  return {std::move(tokens), cls};
}

std::vector<Token> encode_truncated(const TrackBar& track_bar, int bar_length, int capacity) {
  auto groups = group_notes(track_bar, bar_length);
  auto tokens = encode_groups(groups);
  while (static_cast<int>(tokens.size()) > capacity && !groups.empty()) {
    groups.pop_back();
    tokens = encode_groups(groups);
  }
  return tokens;
}

TokenGrammar::TokenGrammar(int bar_length) : bar_length_(bar_length) {}

std::optional<std::string> TokenGrammar::check(const Token& t) const {
  if (finished_) return "token after EOT";
  const bool sub_open_empty = sub_ != Sub::None && sub_pitches_ == 0;
  const bool group_without_notes = started_ && !implied_next_ && group_durs_.empty();
  switch (t.kind) {
    case TokenKind::Pitch:
      if (t.value < 0 || t.value > 127) return "pitch out of range";
      if (sub_ == Sub::None) return "pitch before any duration";
      if (t.value <= last_pitch_) return "pitches not ascending";
      return std::nullopt;
    case TokenKind::Pos: {
      if (sub_open_empty) return "duration without pitches";
      if (group_without_notes) return "position group without notes";
      if (implied_next_) return "position after legato";
      if (t.value < 0 || t.value >= bar_length_) return "position outside bar";
      if (!started_) {
        if (t.value == 0) return "explicit downbeat position";
        return std::nullopt;
      }
      if (t.value <= group_pos_) return "position regression";
      for (int d : group_durs_) {
        if (group_pos_ + d == t.value) return "fusible group not written as legato";
      }
      return std::nullopt;
    }
    case TokenKind::Dur:
    case TokenKind::Legato: {
      if (t.value < 1 || t.value > kMaxDuration) return "duration out of range";
      if (sub_open_empty) return "duration without pitches";
      const bool opens_group = !started_ || implied_next_.has_value();
      const int pos = !started_ ? 0 : (implied_next_ ? *implied_next_ : group_pos_);
      if (!opens_group) {
        if (legato_in_group_) return "sub-group after legato";
        if (std::find(group_durs_.begin(), group_durs_.end(), t.value) != group_durs_.end()) {
          return "repeated duration in group";
        }
        if (t.kind == TokenKind::Dur && t.value <= last_plain_dur_) return "durations not ascending";
      }
      if (t.kind == TokenKind::Legato && pos + t.value >= bar_length_) return "legato advances past bar end";
      return std::nullopt;
    }
    case TokenKind::Eot:
      if (sub_open_empty) return "duration without pitches";
      if (group_without_notes) return "position group without notes";
      if (implied_next_) return "legato without a following group";
      return std::nullopt;
  }
  return "unknown token kind";
}

bool TokenGrammar::closable() const { return !check(Token::eot()).has_value(); }

void TokenGrammar::push(const Token& t) {
  if (auto err = check(t)) throw std::invalid_argument(*err);
  auto open_group = [&](int pos) {
    started_ = true;
    group_pos_ = pos;
    implied_next_.reset();
    group_durs_.clear();
    last_plain_dur_ = 0;
    legato_in_group_ = false;
    sub_ = Sub::None;
  };
  switch (t.kind) {
    case TokenKind::Pitch:
      last_pitch_ = t.value;
      ++sub_pitches_;
      break;
    case TokenKind::Pos:
      open_group(t.value);
      break;
    case TokenKind::Dur:
    case TokenKind::Legato:
      if (!started_) {
        open_group(0);
      } else if (implied_next_) {
        open_group(*implied_next_);
      }
      group_durs_.push_back(t.value);
      cur_dur_ = t.value;
      last_pitch_ = -1;
      sub_pitches_ = 0;
      if (t.kind == TokenKind::Dur) {
        sub_ = Sub::Dur;
        last_plain_dur_ = t.value;
      } else {
        sub_ = Sub::Legato;
        legato_in_group_ = true;
        implied_next_ = group_pos_ + t.value;
      }
      break;
    case TokenKind::Eot:
      finished_ = true;
      sub_ = Sub::None;
      break;
  }
}

TrackBar decode(std::span<const Token> tokens, int bar_length) {
  TokenGrammar grammar(bar_length);
  TrackBar out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& t = tokens[i];
    if (auto err = grammar.check(t)) throw DecodeError(*err, i);
    grammar.push(t);
    if (t.kind == TokenKind::Pitch) out.events.push_back({t.value, grammar.onset(), grammar.duration()});
  }
  if (!grammar.finished()) throw DecodeError("missing EOT", tokens.size());
  normalize_events(out.events);
  return out;
}

nlohmann::json tokens_to_json(std::span<const Token> tokens) {
  auto arr = nlohmann::json::array();
  for (const auto& t : tokens) {
    nlohmann::json j{{"k", kKindNames[static_cast<int>(t.kind)]}};
    if (t.kind != TokenKind::Eot) j["v"] = t.value;
    arr.push_back(std::move(j));
  }
  return arr;
}

std::vector<Token> tokens_from_json(const nlohmann::json& j) {
  std::vector<Token> out;
  for (const auto& item : j) {
    const auto kind = item.at("k").get<std::string>();
    auto it = std::find(std::begin(kKindNames), std::end(kKindNames), kind);
    if (it == std::end(kKindNames)) throw std::invalid_argument("unknown token kind " + kind);
    Token t{static_cast<TokenKind>(it - std::begin(kKindNames)), 0};
    if (t.kind != TokenKind::Eot) t.value = item.at("v").get<int>();
    out.push_back(t);
  }
  return out;
}

std::vector<std::uint8_t> tokens_to_binary(std::span<const Token> tokens) {
  std::vector<std::uint8_t> out;
  out.reserve(tokens.size() * 2);
  for (const auto& t : tokens) {
    out.push_back(static_cast<std::uint8_t>(t.kind));
    out.push_back(static_cast<std::uint8_t>(t.value));
  }
  return out;
}

std::vector<Token> tokens_from_binary(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 2 != 0) throw std::invalid_argument("binary token stream has odd length");
  std::vector<Token> out;
  for (std::size_t i = 0; i < bytes.size(); i += 2) {
    if (bytes[i] > 4) throw std::invalid_argument("unknown binary token kind");
    out.push_back({static_cast<TokenKind>(bytes[i]), bytes[i + 1]});
  }
  return out;
}

}  // namespace symphony
