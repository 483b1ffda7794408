#include "symphony/train.hpp"

#include <cmath>

namespace symphony {

nlohmann::json train_to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"warmup", c.warmup},
          {"lr_floor_ratio", c.lr_floor_ratio},
          {"target_loss", c.target_loss}};
}

TrainConfig train_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.warmup = j.value("warmup", c.warmup);
  c.lr_floor_ratio = j.value("lr_floor_ratio", c.lr_floor_ratio);
  c.target_loss = j.value("target_loss", c.target_loss);
  return c;
}

model::ModelConfig toy_model_config() {
  model::ModelConfig c;
  c.E_h = 32;
  return c;
}

TrainConfig toy_train_config() { return {}; }

optim::AdamWConfig adamw_config(const TrainConfig& cfg) {
  optim::AdamWConfig o;
  o.lr = cfg.lr;
  o.weight_decay = cfg.weight_decay;
  return o;
}

TrainResult train(model::HierModel& m, optim::AdamW& opt, const std::vector<model::WindowExample>& corpus,
                  const TrainConfig& cfg, const std::function<void(int, const model::LossBreakdown&)>& on_step) {
  TrainResult r;
  for (int step = 0; step < cfg.steps; ++step) {
    m.params().zero_grad();
    ad::Var total;
    const auto l = m.batch_loss(corpus, &total);
    if (!std::isfinite(l.total)) {
      throw TrainingError("non-finite loss at step " + std::to_string(step) + " (meta " + std::to_string(l.l_meta) +
                          ", harm " + std::to_string(l.l_harm) + ", music " + std::to_string(l.l_music) + ")");
    }
    r.last = l;
    r.history.push_back(l.total);
    r.steps_run = step + 1;
    if (on_step) on_step(step, l);
    if (cfg.target_loss > 0.0 && l.total < cfg.target_loss) {
      r.reached_target_at = step + 1;
      break;
    }
    ad::backward(total);
    opt.step(optim::cosine_lr(cfg.lr, step, cfg.steps, cfg.warmup, cfg.lr * cfg.lr_floor_ratio));
  }
  return r;
}

}  // namespace symphony
