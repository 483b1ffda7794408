#include "symphony/optim.hpp"

#include <cmath>
#include <numbers>

namespace symphony::optim {

double cosine_lr(double base, long step, long total, long warmup, double floor) {
  if (warmup > 0 && step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total <= warmup) return base;
  const double progress =
      std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(std::max<long>(1, total - warmup)));
  return floor + 0.5 * (base - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(nn::ParamStore& params, AdamWConfig cfg) : params_(params), cfg_(cfg) {
  for (const auto& [name, v] : params_.entries()) {
    m_.push_back(nn::Matrix::Zero(v.rows(), v.cols()));
    v_.push_back(nn::Matrix::Zero(v.rows(), v.cols()));
  }
}

double AdamW::step(double lr) {
  auto& entries = params_.entries();
  double norm2 = 0.0;
  for (const auto& [name, p] : entries) {
    if (p.grad().size() != 0) norm2 += p.grad().squaredNorm();
  }
  const double norm = std::sqrt(norm2);
  const double clip = (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& p = entries[i].second;
    if (p.grad().size() == 0) continue;
    const nn::Matrix g = p.grad() * clip;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    nn::Matrix& w = p.mutable_value();
    w *= (1.0 - lr * cfg_.weight_decay);
    w.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
  return norm;
}

}  // namespace symphony::optim
