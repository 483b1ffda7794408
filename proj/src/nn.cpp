#include "symphony/nn.hpp"

#include <cmath>
#include <optional>

#include "symphony/errors.hpp"

namespace symphony::nn {

Var& ParamStore::add(const std::string& name, Matrix init) {
  if (index_.count(name)) throw ValidationError("duplicate parameter " + name);
  index_[name] = params_.size();
  params_.emplace_back(name, Var(std::move(init), true));
  return params_.back().second;
}

Var& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter " + name);
  return params_[it->second].second;
}

const Var& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter " + name);
  return params_[it->second].second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : params_) n += static_cast<std::size_t>(v.value().size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, v] : params_) v.zero_grad();
}

Matrix normal_init(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> g(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

Linear::Linear(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, std::mt19937_64& rng,
               bool bias, double init_scale) {
  w = store.add(name + ".w", normal_init(rng, in, out, init_scale / std::sqrt(static_cast<double>(in))));
  if (bias) b = store.add(name + ".b", Matrix::Zero(1, out));
}

Var Linear::operator()(const Var& x) const {
  Var y = ad::matmul(x, w);
  return b.defined() ? ad::add_row(y, b) : y;
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, Eigen::Index width) {
  gain = store.add(name + ".g", Matrix::Ones(1, width));
  bias = store.add(name + ".b", Matrix::Zero(1, width));
}

Var LayerNorm::operator()(const Var& x) const { return ad::layer_norm(x, gain, bias); }

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name, Eigen::Index width, int heads_,
                                       std::mt19937_64& rng)
    : q(store, name + ".q", width, width, rng),
      k(store, name + ".k", width, width, rng),
      v(store, name + ".v", width, width, rng),
      o(store, name + ".o", width, width, rng, false, 0.5),
      heads(heads_) {}

Var MultiHeadAttention::operator()(const Var& x, const Var& memory,
                                   std::span<const ad::AttentionSegment> segments) const {
  const Var& mem = memory.defined() ? memory : x;
  return o(ad::segment_attention(q(x), k(mem), v(mem), segments, heads));
}

FeedForward::FeedForward(ParamStore& store, const std::string& name, Eigen::Index width, std::mt19937_64& rng)
    : up(store, name + ".up", width, 2 * width, rng), down(store, name + ".down", 2 * width, width, rng, true, 0.5) {}

Var FeedForward::operator()(const Var& x) const { return down(ad::gelu(up(x))); }

Block::Block(ParamStore& store, const std::string& name, Eigen::Index width, int heads, bool cross,
             std::mt19937_64& rng)
    : ln_self(store, name + ".ln_self", width),
      ln_ff(store, name + ".ln_ff", width),
      self_attn(store, name + ".self", width, heads, rng),
      ff(store, name + ".ff", width, rng),
      has_cross(cross) {
  if (cross) {
    ln_cross = LayerNorm(store, name + ".ln_cross", width);
    cross_attn = MultiHeadAttention(store, name + ".cross", width, heads, rng);
  }
}

Var Block::operator()(const Var& x, std::span<const ad::AttentionSegment> self_segments, const Var& memory,
                      std::span<const ad::AttentionSegment> cross_segments, int self_slot, int cross_slot) const {
  Var h = x;
  {
    std::optional<ad::CounterSlot> slot;
    if (self_slot >= 0) slot.emplace(self_slot);
    h = ad::add(h, self_attn(ln_self(h), {}, self_segments));
  }
  if (has_cross && !cross_segments.empty()) {
    std::optional<ad::CounterSlot> slot;
    if (cross_slot >= 0) slot.emplace(cross_slot);
    h = ad::add(h, cross_attn(ln_cross(h), memory, cross_segments));
  }
  return ad::add(h, ff(ln_ff(h)));
}

Var pool_groups(const Var& x, const std::vector<std::pair<Eigen::Index, Eigen::Index>>& groups) {
  Matrix p = Matrix::Zero(static_cast<Eigen::Index>(groups.size()), x.rows());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto [start, count] = groups[g];
    for (Eigen::Index r = 0; r < count; ++r) p(static_cast<Eigen::Index>(g), start + r) = 1.0 / static_cast<double>(count);
  }
  return ad::matmul(ad::constant(std::move(p)), x);
}

}  // namespace symphony::nn
