#include "symphony/corpus.hpp"

#include <fstream>

#include "symphony/errors.hpp"

namespace symphony {

std::vector<int> token_ids(std::span<const Token> tokens) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(token_id(t));
  return out;
}

std::vector<Token> tokens_of(std::span<const int> ids) {
  std::vector<Token> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(token_from_id(id));
  return out;
}

std::vector<std::vector<int>> harmony_token_ids(const HarmonySkeleton& sk, int capacity) {
  const Score rendered = skeleton_to_score(sk);
  std::vector<std::vector<int>> out;
  for (std::size_t b = 0; b < rendered.bars.size(); ++b) {
    const Bar& bar = rendered.bars[b];
    const TrackBar empty;
    const TrackBar& tb = bar.tracks.empty() ? empty : bar.tracks.front();
    auto tokens = encode_unbounded(tb, bar.bar_length);
    if (static_cast<int>(tokens.size()) > capacity) {
      throw CapacityError("harmony of bar " + std::to_string(b) + " needs " + std::to_string(tokens.size()) +
                          " tokens; capacity is " + std::to_string(capacity));
    }
    out.push_back(token_ids(tokens));
  }
  return out;
}

model::WindowExample window_from_score(const Score& score, const HarmonySkeleton& sk, const model::ModelConfig& cfg) {
  if (static_cast<int>(score.bars.size()) > cfg.B) {
    throw ShapeError("window has " + std::to_string(score.bars.size()) + " bars; the model holds " +
                     std::to_string(cfg.B));
  }
  if (sk.bar_lengths.size() != score.bars.size()) throw ShapeError("skeleton and score differ in bar count");
  const auto harmony = harmony_token_ids(sk, cfg.E_h);
  model::WindowExample w;
  for (std::size_t b = 0; b < score.bars.size(); ++b) {
    const Bar& bar = score.bars[b];
    if (static_cast<int>(bar.tracks.size()) > cfg.T) {
      throw ShapeError("bar " + std::to_string(b) + " has " + std::to_string(bar.tracks.size()) +
                       " tracks; the model holds " + std::to_string(cfg.T));
    }
    model::BarExample be;
    be.bar_length = bar.bar_length;
    be.harmony = harmony[b];
    for (const auto& tb : bar.tracks) {
      const auto tokens = encode_unbounded(tb, bar.bar_length);
      if (static_cast<int>(tokens.size()) > cfg.E) {
        throw CapacityError("bar " + std::to_string(b) + " track " + std::to_string(tb.track_id) + " needs " +
                            std::to_string(tokens.size()) + " tokens; capacity is " + std::to_string(cfg.E));
      }
      be.cells.push_back({tb.track_id, tb.instrument_id, token_ids(tokens)});
    }
    std::sort(be.cells.begin(), be.cells.end(),
              [](const model::CellExample& a, const model::CellExample& c) { return a.track_id < c.track_id; });
    w.bars.push_back(std::move(be));
  }
  return w;
}

Score score_from_window(const model::WindowExample& w) {
  Score s;
  for (const auto& be : w.bars) {
    Bar bar;
    bar.bar_length = be.bar_length;
    for (const auto& cell : be.cells) {
      TrackBar tb = decode(tokens_of(cell.tokens), be.bar_length);
      tb.track_id = cell.track_id;
      tb.instrument_id = cell.instrument;
      bar.tracks.push_back(std::move(tb));
    }
    s.bars.push_back(std::move(bar));
  }
  normalize(s);
  return s;
}

namespace {

struct ToyChord {
  int root;
  bool minor;
};

Bar toy_bar(const ToyChord& c) {
  const int third = c.minor ? 3 : 4;
  Bar bar;
  bar.bar_length = 32;
  TrackBar bass{0, 32, {{36 + c.root, 0, 32}}};
  TrackBar pad{1, 48, {}};
  for (int onset : {0, 16}) {
    for (int iv : {0, third, 7}) pad.events.push_back({60 + c.root + iv, onset, 16});
  }
  TrackBar melody{2, 73, {}};
  const int line[] = {third, 7, 12, 7};
  for (int i = 0; i < 4; ++i) melody.events.push_back({72 + c.root + line[i], 8 * i, 8});
  bar.tracks = {bass, pad, melody};
  return bar;
}

}  // namespace

std::vector<Score> toy_scores() {
  const std::vector<std::vector<ToyChord>> progressions = {
      {{0, false}, {5, false}, {7, false}, {0, false}},
      {{9, true}, {2, true}, {4, false}, {9, true}},
      {{5, false}, {10, false}, {0, false}, {5, false}},
      {{7, false}, {0, false}, {2, false}, {7, false}},
  };
  std::vector<Score> out;
  for (const auto& prog : progressions) {
    Score s;
    for (const auto& c : prog) s.bars.push_back(toy_bar(c));
    normalize(s);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<model::WindowExample> toy_corpus(const model::ModelConfig& cfg) {
  std::vector<model::WindowExample> out;
  for (const auto& s : toy_scores()) out.push_back(window_from_score(s, analyze_skeleton(s), cfg));
  return out;
}

nlohmann::json window_to_json(const model::WindowExample& w) {
  nlohmann::json bars = nlohmann::json::array();
  for (const auto& b : w.bars) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : b.cells) {
      cells.push_back({{"track_id", c.track_id}, {"instrument", c.instrument}, {"tokens", c.tokens}});
    }
    bars.push_back({{"bar_length", b.bar_length}, {"harmony", b.harmony}, {"cells", cells}});
  }
  return {{"bars", bars}};
}

model::WindowExample window_from_json(const nlohmann::json& j) {
  model::WindowExample w;
  for (const auto& b : j.at("bars")) {
    model::BarExample be;
    be.bar_length = b.at("bar_length").get<int>();
    be.harmony = b.at("harmony").get<std::vector<int>>();
    for (const auto& c : b.at("cells")) {
      be.cells.push_back({c.at("track_id").get<int>(), c.at("instrument").get<int>(),
                          c.at("tokens").get<std::vector<int>>()});
    }
    w.bars.push_back(std::move(be));
  }
  return w;
}

void write_jsonl(const std::string& path, const std::vector<model::WindowExample>& windows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& w : windows) out << window_to_json(w).dump() << '\n';
}

std::vector<model::WindowExample> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<model::WindowExample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(window_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace symphony
