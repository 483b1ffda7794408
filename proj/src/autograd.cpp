#include "symphony/autograd.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include "symphony/errors.hpp"

namespace symphony::ad {

namespace {

thread_local bool g_grad_enabled = true;
thread_local AttentionCounter* g_counter = nullptr;
thread_local int g_slot = 0;

using NodePtr = std::shared_ptr<Node>;

Var make(Matrix value, std::vector<NodePtr> parents, std::function<void(Node&)> bw) {
  Var out(std::move(value));
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  if (!any) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  n.parents = std::move(parents);
  n.backward = std::move(bw);
  return out;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (!requires_grad) return;
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_) node_->grad.resize(0, 0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) {
  if (!root.requires_grad()) return;
  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->accumulate(Matrix::Ones(root.rows(), root.cols()));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

Var constant(Matrix value) { return Var(std::move(value)); }
Var zeros(Eigen::Index rows, Eigen::Index cols) { return Var(Matrix::Zero(rows, cols)); }

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  auto an = a.node();
  auto bn = b.node();
  return make(a.value() * b.value(), {an, bn}, [an, bn](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad * bn->value.transpose());
    if (bn->requires_grad) bn->accumulate(an->value.transpose() * self.grad);
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  auto an = a.node();
  auto bn = b.node();
  return make(a.value() + b.value(), {an, bn}, [an, bn](Node& self) {
    an->accumulate(self.grad);
    bn->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  auto an = a.node();
  auto bn = b.node();
  return make(a.value() - b.value(), {an, bn}, [an, bn](Node& self) {
    an->accumulate(self.grad);
    bn->accumulate(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  auto an = a.node();
  auto bn = b.node();
  return make(a.value().cwiseProduct(b.value()), {an, bn}, [an, bn](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad.cwiseProduct(bn->value));
    if (bn->requires_grad) bn->accumulate(self.grad.cwiseProduct(an->value));
  });
}

Var scale(const Var& a, double s) {
  auto an = a.node();
  return make(a.value() * s, {an}, [an, s](Node& self) { an->accumulate(self.grad * s); });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: row must be 1xN");
  auto an = a.node();
  auto rn = row.node();
  Matrix v = a.value();
  v.rowwise() += row.value().row(0);
  return make(std::move(v), {an, rn}, [an, rn](Node& self) {
    an->accumulate(self.grad);
    if (rn->requires_grad) rn->accumulate(self.grad.colwise().sum());
  });
}

Var exp(const Var& a) {
  auto an = a.node();
  Matrix v = a.value().array().exp().matrix();
  return make(v, {an}, [an](Node& self) { an->accumulate(self.grad.cwiseProduct(self.value)); });
}

Var clamp(const Var& a, double lo, double hi) {
  auto an = a.node();
  Matrix v = a.value().cwiseMax(lo).cwiseMin(hi);
  return make(std::move(v), {an}, [an, lo, hi](Node& self) {
    Matrix g = self.grad;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      const double x = an->value.data()[i];
      if (x < lo || x > hi) g.data()[i] = 0.0;
    }
    an->accumulate(g);
  });
}

Var minimum(const Var& a, const Var& b) {
  check_same_shape(a, b, "minimum");
  auto an = a.node();
  auto bn = b.node();
  return make(a.value().cwiseMin(b.value()), {an, bn}, [an, bn](Node& self) {
    Matrix ga = Matrix::Zero(self.grad.rows(), self.grad.cols());
    Matrix gb = ga;
    for (Eigen::Index i = 0; i < ga.size(); ++i) {
      if (an->value.data()[i] <= bn->value.data()[i]) {
        ga.data()[i] = self.grad.data()[i];
      } else {
        gb.data()[i] = self.grad.data()[i];
      }
    }
    an->accumulate(ga);
    bn->accumulate(gb);
  });
}

Var gelu(const Var& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double kA = 0.044715;
  auto an = a.node();
  const Matrix& x = a.value();
  Matrix v(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double z = x.data()[i];
    v.data()[i] = 0.5 * z * (1.0 + std::tanh(kC * (z + kA * z * z * z)));
  }
  return make(std::move(v), {an}, [an](Node& self) {
    const Matrix& x = an->value;
    Matrix g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double z = x.data()[i];
      const double u = kC * (z + kA * z * z * z);
      const double t = std::tanh(u);
      const double du = kC * (1.0 + 3.0 * kA * z * z);
      g.data()[i] = self.grad.data()[i] * (0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * du);
    }
    an->accumulate(g);
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (gain.cols() != d || bias.cols() != d) throw ShapeError("layer_norm: parameter width mismatch");
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = x.value().row(i);
    const double mean = row.mean();
    const double var = (row.array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (row.array() - mean) * inv_std(i);
  }
  Matrix y = xhat;
  y.array().rowwise() *= gain.value().row(0).array();
  y.rowwise() += bias.value().row(0);
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  return make(std::move(y), {xn, gn, bn}, [xn, gn, bn, xhat, inv_std](Node& self) {
    const Matrix& g = self.grad;
    if (gn->requires_grad) gn->accumulate(g.cwiseProduct(xhat).colwise().sum());
    if (bn->requires_grad) bn->accumulate(g.colwise().sum());
    if (xn->requires_grad) {
      const Eigen::Index d = g.cols();
      Matrix gx(g.rows(), d);
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        Eigen::RowVectorXd gh = g.row(i).array() * gn->value.row(0).array();
        const double m1 = gh.mean();
        const double m2 = (gh.array() * xhat.row(i).array()).mean();
        gx.row(i) = (gh.array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
      }
      xn->accumulate(gx);
    }
  });
}

Var rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("rows: slice out of range");
  auto an = a.node();
  Matrix v = a.value().middleRows(start, count);
  return make(std::move(v), {an}, [an, start, count](Node& self) {
    Matrix g = Matrix::Zero(an->value.rows(), an->value.cols());
    g.middleRows(start, count) = self.grad;
    an->accumulate(g);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    total += p.rows();
  }
  Matrix v(total, cols);
  std::vector<NodePtr> parents;
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    parents.push_back(p.node());
    offsets.push_back(at);
    at += p.rows();
  }
  auto ps = parents;
  return make(std::move(v), std::move(parents), [ps, offsets](Node& self) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (ps[i]->requires_grad) ps[i]->accumulate(self.grad.middleRows(offsets[i], ps[i]->value.rows()));
    }
  });
}

Var gather_rows(const Var& table, std::span<const int> index) {
  auto tn = table.node();
  const Eigen::Index cols = table.cols();
  Matrix v = Matrix::Zero(static_cast<Eigen::Index>(index.size()), cols);
  std::vector<int> idx(index.begin(), index.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= table.rows()) throw BoundsError("gather_rows: index " + std::to_string(idx[i]) + " out of range");
    if (idx[i] >= 0) v.row(static_cast<Eigen::Index>(i)) = table.value().row(idx[i]);
  }
  return make(std::move(v), {tn}, [tn, idx](Node& self) {
    Matrix g = Matrix::Zero(tn->value.rows(), tn->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= 0) g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
    tn->accumulate(g);
  });
}

Var mean_rows(const Var& a, Eigen::Index cols) {
  if (!a.defined() || a.rows() == 0) return zeros(1, cols);
  auto an = a.node();
  const double inv = 1.0 / static_cast<double>(a.rows());
  Matrix v = a.value().colwise().sum() * inv;
  return make(std::move(v), {an}, [an, inv](Node& self) {
    Matrix g = self.grad.replicate(an->value.rows(), 1) * inv;
    an->accumulate(g);
  });
}

Var sum_all(const Var& a) {
  auto an = a.node();
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return make(std::move(v), {an}, [an](Node& self) {
    an->accumulate(Matrix::Constant(an->value.rows(), an->value.cols(), self.grad(0, 0)));
  });
}

namespace {

// Row-wise softmax of logits; rows of -inf stay zero.
Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    if (!std::isfinite(m)) {
      p.row(i).setZero();
      continue;
    }
    p.row(i) = (logits.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

}  // namespace

Var cross_entropy_sum(const Var& logits, std::span<const int> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) throw ShapeError("cross_entropy: target count");
  Matrix p = softmax_rows(logits.value());
  double loss = 0.0;
  std::vector<int> t(targets.begin(), targets.end());
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < 0) continue;
    loss -= std::log(std::max(p(static_cast<Eigen::Index>(i), t[i]), std::numeric_limits<double>::min()));
  }
  Matrix v(1, 1);
  v(0, 0) = loss;
  auto ln = logits.node();
  return make(std::move(v), {ln}, [ln, p, t](Node& self) {
    Matrix g = Matrix::Zero(p.rows(), p.cols());
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] < 0) continue;
      const auto r = static_cast<Eigen::Index>(i);
      g.row(r) = p.row(r);
      g(r, t[i]) -= 1.0;
    }
    ln->accumulate(g * self.grad(0, 0));
  });
}

Var log_prob_of(const Var& logits, std::span<const int> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) throw ShapeError("log_prob_of: target count");
  Matrix p = softmax_rows(logits.value());
  std::vector<int> t(targets.begin(), targets.end());
  Matrix v(logits.rows(), 1);
  for (std::size_t i = 0; i < t.size(); ++i) {
    v(static_cast<Eigen::Index>(i), 0) =
        t[i] < 0 ? 0.0 : std::log(std::max(p(static_cast<Eigen::Index>(i), t[i]), std::numeric_limits<double>::min()));
  }
  auto ln = logits.node();
  return make(std::move(v), {ln}, [ln, p, t](Node& self) {
    Matrix g = -p;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      if (t[i] < 0) {
        g.row(r).setZero();
        continue;
      }
      g(r, t[i]) += 1.0;
      g.row(r) *= self.grad(r, 0);
    }
    ln->accumulate(g);
  });
}

Var attention(const Var& q, const Var& k, const Var& v, const AttentionMask& mask, int heads) {
  const AttentionSegment seg{0, q.rows(), 0, k.rows(), mask};
  return segment_attention(q, k, v, std::span<const AttentionSegment>(&seg, 1), heads);
}

Var segment_attention(const Var& q, const Var& k, const Var& v, std::span<const AttentionSegment> segments,
                      int heads) {
  const Eigen::Index d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != k.rows()) throw ShapeError("attention: q/k/v shapes disagree");
  if (heads <= 0 || d % heads != 0) throw ShapeError("attention: width not divisible by heads");
  for (const auto& sg : segments) {
    if (sg.q_start < 0 || sg.q_len < 0 || sg.q_start + sg.q_len > q.rows() || sg.k_start < 0 || sg.k_len < 0 ||
        sg.k_start + sg.k_len > k.rows()) {
      throw ShapeError("attention: segment outside q/k rows");
    }
    if (sg.mask.kind == MaskKind::Custom && (sg.mask.allowed.rows() != sg.q_len || sg.mask.allowed.cols() != sg.k_len)) {
      throw ShapeError("attention: mask shape");
    }
    if (g_counter) g_counter->entries[g_slot] += static_cast<long long>(sg.q_len) * sg.k_len * heads;
  }

  const Eigen::Index dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix out = Matrix::Zero(q.rows(), d);
  // probs[segment * heads + head]
  std::vector<Matrix> probs(segments.size() * static_cast<std::size_t>(heads));
  for (std::size_t si = 0; si < segments.size(); ++si) {
    const auto& sg = segments[si];
    if (sg.q_len == 0 || sg.k_len == 0) continue;
    for (int h = 0; h < heads; ++h) {
      const auto qh = q.value().block(sg.q_start, h * dh, sg.q_len, dh);
      const auto kh = k.value().block(sg.k_start, h * dh, sg.k_len, dh);
      const auto vh = v.value().block(sg.k_start, h * dh, sg.k_len, dh);
      Matrix sco = (qh * kh.transpose()) * sc;
      const Eigen::Index valid = sg.k_valid < 0 ? sg.k_len : std::min(sg.k_valid, sg.k_len);
      if (sg.mask.kind != MaskKind::Full || valid < sg.k_len) {
        for (Eigen::Index i = 0; i < sg.q_len; ++i) {
          for (Eigen::Index j = 0; j < sg.k_len; ++j) {
            if (j >= valid || !sg.mask.allows(i, j)) sco(i, j) = -std::numeric_limits<double>::infinity();
          }
        }
      }
      Matrix pr = softmax_rows(sco);
      out.block(sg.q_start, h * dh, sg.q_len, dh) += pr * vh;
      probs[si * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)] = std::move(pr);
    }
  }
  auto qn = q.node();
  auto kn = k.node();
  auto vn = v.node();
  std::vector<AttentionSegment> segs;
  segs.reserve(segments.size());
  for (const auto& sg : segments) segs.push_back({sg.q_start, sg.q_len, sg.k_start, sg.k_len, {}});
  return make(std::move(out), {qn, kn, vn}, [qn, kn, vn, probs, segs, heads, dh, sc](Node& self) {
    Matrix gq = Matrix::Zero(qn->value.rows(), qn->value.cols());
    Matrix gk = Matrix::Zero(kn->value.rows(), kn->value.cols());
    Matrix gv = Matrix::Zero(vn->value.rows(), vn->value.cols());
    for (std::size_t si = 0; si < segs.size(); ++si) {
      const auto& sg = segs[si];
      if (sg.q_len == 0 || sg.k_len == 0) continue;
      for (int h = 0; h < heads; ++h) {
        const Matrix& pr = probs[si * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
        const auto go = self.grad.block(sg.q_start, h * dh, sg.q_len, dh);
        const auto qh = qn->value.block(sg.q_start, h * dh, sg.q_len, dh);
        const auto kh = kn->value.block(sg.k_start, h * dh, sg.k_len, dh);
        const auto vh = vn->value.block(sg.k_start, h * dh, sg.k_len, dh);
        gv.block(sg.k_start, h * dh, sg.k_len, dh) += pr.transpose() * go;
        Matrix dp = go * vh.transpose();
        Eigen::VectorXd row_dot = (dp.cwiseProduct(pr)).rowwise().sum();
        Matrix ds = pr.cwiseProduct(dp.colwise() - row_dot) * sc;
        gq.block(sg.q_start, h * dh, sg.q_len, dh) += ds * kh;
        gk.block(sg.k_start, h * dh, sg.k_len, dh) += ds.transpose() * qh;
      }
    }
    if (qn->requires_grad) qn->accumulate(gq);
    if (kn->requires_grad) kn->accumulate(gk);
    if (vn->requires_grad) vn->accumulate(gv);
  });
}

CounterScope::CounterScope(AttentionCounter* counter) : previous_(g_counter) { g_counter = counter; }
CounterScope::~CounterScope() { g_counter = previous_; }

CounterSlot::CounterSlot(int slot) : previous_(g_slot) {
  if (slot < 0 || slot >= kMaxCounterSlots) throw BoundsError("attention counter slot");
  g_slot = slot;
}
CounterSlot::~CounterSlot() { g_slot = previous_; }

}  // namespace symphony::ad
