#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "symphony/autograd.hpp"

namespace symphony::nn {

using ad::Matrix;
using ad::Var;

/// Named trainable tensors in registration order.
class ParamStore {
 public:
  Var& add(const std::string& name, Matrix init);
  Var& get(const std::string& name);
  const Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<std::pair<std::string, Var>>& entries() { return params_; }
  const std::vector<std::pair<std::string, Var>>& entries() const { return params_; }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Var>> params_;
  std::map<std::string, std::size_t> index_;
};

Matrix normal_init(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev);

struct Linear {
  Var w;  // [in, out]
  Var b;  // [1, out], undefined when bias-free

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, std::mt19937_64& rng,
         bool bias = true, double init_scale = 1.0);
  Var operator()(const Var& x) const;
};

struct LayerNorm {
  Var gain;
  Var bias;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, Eigen::Index width);
  Var operator()(const Var& x) const;
};

/// Multi-head attention projections. The output projection has no bias so
/// that a query row with no keys contributes exactly zero to the residual.
struct MultiHeadAttention {
  Linear q, k, v, o;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, Eigen::Index width, int heads,
                     std::mt19937_64& rng);
  Var operator()(const Var& x, const Var& memory, std::span<const ad::AttentionSegment> segments) const;
};

struct FeedForward {
  Linear up, down;

  FeedForward() = default;
  FeedForward(ParamStore& store, const std::string& name, Eigen::Index width, std::mt19937_64& rng);
  Var operator()(const Var& x) const;
};

/// Pre-norm transformer block with optional cross-attention.
struct Block {
  LayerNorm ln_self, ln_cross, ln_ff;
  MultiHeadAttention self_attn;
  MultiHeadAttention cross_attn;
  FeedForward ff;
  bool has_cross = false;

  Block() = default;
  Block(ParamStore& store, const std::string& name, Eigen::Index width, int heads, bool cross,
        std::mt19937_64& rng);

  /// `self_segments` index rows of x; `cross_segments` map rows of x to rows of
  /// `memory`. An empty cross list skips cross-attention.
  Var operator()(const Var& x, std::span<const ad::AttentionSegment> self_segments, const Var& memory = {},
                 std::span<const ad::AttentionSegment> cross_segments = {}, int self_slot = -1,
                 int cross_slot = -1) const;
};

/// Masked mean of row groups: output row g averages rows [start_g, start_g + count_g)
/// of x, or is zero when count_g is 0.
Var pool_groups(const Var& x, const std::vector<std::pair<Eigen::Index, Eigen::Index>>& groups);

}  // namespace symphony::nn
