#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "symphony/model.hpp"
#include "symphony/optim.hpp"

namespace symphony {

/// The loss became NaN or infinite.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int steps = 2000;
  double lr = 1e-3;
  double weight_decay = 0.0;
  int warmup = 20;
  double lr_floor_ratio = 0.1;
  /// Stop early once the batch loss falls below this value; <= 0 never stops.
  double target_loss = 0.1;
};

nlohmann::json train_to_json(const TrainConfig& c);
TrainConfig train_from_json(const nlohmann::json& j);

/// Desk-scale configuration used for the toy corpus.
model::ModelConfig toy_model_config();
TrainConfig toy_train_config();

struct TrainResult {
  int steps_run = 0;
  /// First step (1-based count) at which the loss fell below the target, or -1.
  int reached_target_at = -1;
  model::LossBreakdown last;
  std::vector<double> history;
};

/// Full-batch training with AdamW and cosine annealing. `on_step` is called
/// after every step with the step index and the pre-update loss.
TrainResult train(model::HierModel& m, optim::AdamW& opt, const std::vector<model::WindowExample>& corpus,
                  const TrainConfig& cfg,
                  const std::function<void(int, const model::LossBreakdown&)>& on_step = {});

optim::AdamWConfig adamw_config(const TrainConfig& cfg);

}  // namespace symphony
