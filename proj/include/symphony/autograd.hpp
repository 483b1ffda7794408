#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace symphony::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g);
};

/// Handle to a value in the computation graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return node_ != nullptr; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph construction in its scope (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

/// Runs reverse-mode accumulation from a 1x1 root.
void backward(const Var& root);

Var constant(Matrix value);
Var zeros(Eigen::Index rows, Eigen::Index cols);

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a + row, broadcasting a 1xN row over every row of a.
Var add_row(const Var& a, const Var& row);
Var exp(const Var& a);
Var clamp(const Var& a, double lo, double hi);
Var minimum(const Var& a, const Var& b);
Var gelu(const Var& a);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

Var rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var concat_rows(std::span<const Var> parts);
/// Picks rows by index; -1 yields a zero row.
Var gather_rows(const Var& table, std::span<const int> index);
/// Mean over rows as a 1xN row; zero row when there are no rows.
Var mean_rows(const Var& a, Eigen::Index cols);
Var sum_all(const Var& a);

/// Sum over rows of -log softmax(logits)[target]; negative targets are skipped.
Var cross_entropy_sum(const Var& logits, std::span<const int> targets);
/// Column of log softmax(logits)[target] per row; rows with a negative target give 0.
Var log_prob_of(const Var& logits, std::span<const int> targets);

enum class MaskKind { Full, Causal, Custom };
struct AttentionMask {
  MaskKind kind = MaskKind::Full;
  BoolMatrix allowed;  // used for Custom; (query, key) -> may attend

  bool allows(Eigen::Index q, Eigen::Index k) const {
    switch (kind) {
      case MaskKind::Full:
        return true;
      case MaskKind::Causal:
        return k <= q;
      case MaskKind::Custom:
        return allowed(q, k);
    }
    return false;
  }
};

/// Multi-head scaled dot-product attention over column-split heads. Rows whose
/// mask allows no key produce zeros.
Var attention(const Var& q, const Var& k, const Var& v, const AttentionMask& mask, int heads);

/// Independent attention problems packed into shared q/k/v matrices: each
/// segment attends rows [q_start, q_start + q_len) of q to rows
/// [k_start, k_start + k_len) of k and v. Uncovered query rows produce zeros.
struct AttentionSegment {
  Eigen::Index q_start = 0;
  Eigen::Index q_len = 0;
  Eigen::Index k_start = 0;
  Eigen::Index k_len = 0;
  AttentionMask mask;
  /// Keys at or past this offset are padding; -1 means all keys are valid.
  Eigen::Index k_valid = -1;
};
Var segment_attention(const Var& q, const Var& k, const Var& v, std::span<const AttentionSegment> segments,
                      int heads);

// Attention-score bookkeeping: every attention() call adds
// queries * keys * heads to the active counter slot, if one is installed.
inline constexpr int kMaxCounterSlots = 16;
struct AttentionCounter {
  std::array<long long, kMaxCounterSlots> entries{};
  int slot = 0;
};
class CounterScope {
 public:
  explicit CounterScope(AttentionCounter* counter);
  ~CounterScope();
  CounterScope(const CounterScope&) = delete;
  CounterScope& operator=(const CounterScope&) = delete;

 private:
  AttentionCounter* previous_;
};
/// Sets the slot charged by subsequent attention() calls; restores on exit.
class CounterSlot {
 public:
  explicit CounterSlot(int slot);
  ~CounterSlot();
  CounterSlot(const CounterSlot&) = delete;
  CounterSlot& operator=(const CounterSlot&) = delete;

 private:
  int previous_;
};

}  // namespace symphony::ad
