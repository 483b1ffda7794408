#pragma once

#include <vector>

#include "symphony/nn.hpp"

namespace symphony::optim {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables
};

/// Cosine annealing from `base` to `floor` over `total` steps after a linear warmup.
double cosine_lr(double base, long step, long total, long warmup = 0, double floor = 0.0);

class AdamW {
 public:
  AdamW(nn::ParamStore& params, AdamWConfig cfg);

  /// Applies one update using the gradients currently stored on the parameters.
  /// Returns the pre-clip gradient norm.
  double step(double lr);
  long steps_taken() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

  std::vector<nn::Matrix>& first_moments() { return m_; }
  std::vector<nn::Matrix>& second_moments() { return v_; }
  const std::vector<nn::Matrix>& first_moments() const { return m_; }
  const std::vector<nn::Matrix>& second_moments() const { return v_; }
  void set_steps_taken(long t) { t_ = t; }

 private:
  nn::ParamStore& params_;
  AdamWConfig cfg_;
  std::vector<nn::Matrix> m_;
  std::vector<nn::Matrix> v_;
  long t_ = 0;
};

}  // namespace symphony::optim
