#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "symphony/harmony.hpp"
#include "symphony/model.hpp"
#include "symphony/score.hpp"
#include "symphony/tokenizer.hpp"

namespace symphony {

std::vector<int> token_ids(std::span<const Token> tokens);
std::vector<Token> tokens_of(std::span<const int> ids);

/// Harmony token ids per bar: the skeleton tones of each bar as one cell.
/// Throws CapacityError when a bar needs more than `capacity` tokens.
std::vector<std::vector<int>> harmony_token_ids(const HarmonySkeleton& sk, int capacity);

/// Tokenizes a score against its skeleton into one training window.
/// Throws ShapeError when the window is larger than the model's grid and
/// CapacityError when a cell does not fit E tokens.
model::WindowExample window_from_score(const Score& score, const HarmonySkeleton& sk, const model::ModelConfig& cfg);
Score score_from_window(const model::WindowExample& w);

/// Four short 4/4 pieces (bass, pad, melody) over distinct progressions.
std::vector<Score> toy_scores();
std::vector<model::WindowExample> toy_corpus(const model::ModelConfig& cfg);

nlohmann::json window_to_json(const model::WindowExample& w);
model::WindowExample window_from_json(const nlohmann::json& j);
void write_jsonl(const std::string& path, const std::vector<model::WindowExample>& windows);
std::vector<model::WindowExample> read_jsonl(const std::string& path);

}  // namespace symphony
