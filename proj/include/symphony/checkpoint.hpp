#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "symphony/model.hpp"
#include "symphony/optim.hpp"

namespace symphony {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout: 8-byte magic, u32 version, u64 header length, JSON header
/// (model config, tensor names and shapes, optimizer step count, extra), then
/// every tensor as little-endian doubles in header order, followed by the
/// optimizer moments when present.
std::vector<std::uint8_t> checkpoint_bytes(const model::HierModel& m, const optim::AdamW* opt = nullptr,
                                           const nlohmann::json& extra = nlohmann::json::object());

struct LoadedCheckpoint {
  std::unique_ptr<model::HierModel> model;
  nlohmann::json extra;
  bool has_optimizer = false;
  long optimizer_steps = 0;
  std::vector<ad::Matrix> first_moments;
  std::vector<ad::Matrix> second_moments;
};

/// Throws ValidationError on a malformed or mismatched file.
LoadedCheckpoint checkpoint_from_bytes(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const model::HierModel& m, const optim::AdamW* opt = nullptr,
                     const nlohmann::json& extra = nlohmann::json::object());
LoadedCheckpoint load_checkpoint(const std::string& path);

/// Copies saved moments and step count into an optimizer over the same model.
void restore_optimizer(const LoadedCheckpoint& ckpt, optim::AdamW& opt);

}  // namespace symphony
