#include "symphony/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

#include "symphony/errors.hpp"
#include "symphony/generate.hpp"
#include "symphony/metrics.hpp"

namespace symphony {

using ad::Matrix;
using ad::Var;

void GrpoConfig::validate() const {
  if (K < 1) throw ValidationError("GRPO needs K >= 1");
  if (G < 2) throw ValidationError("GRPO needs groups of at least 2 rollouts");
  if (!(clip_epsilon > 0.0)) throw ValidationError("clip_epsilon must be positive");
  if (!(kl_coeff >= 0.0)) throw ValidationError("kl_coeff must be non-negative");
  if (!(lr > 0.0)) throw ValidationError("GRPO lr must be positive");
}

nlohmann::json grpo_to_json(const GrpoConfig& c) {
  return {{"K", c.K},       {"G", c.G},   {"clip_epsilon", c.clip_epsilon}, {"kl_coeff", c.kl_coeff},
          {"lr", c.lr}, {"sequence_level", c.sequence_level}};
}

GrpoConfig grpo_from_json(const nlohmann::json& j) {
  GrpoConfig c;
  c.K = j.value("K", c.K);
  c.G = j.value("G", c.G);
  c.clip_epsilon = j.value("clip_epsilon", c.clip_epsilon);
  c.kl_coeff = j.value("kl_coeff", c.kl_coeff);
  c.lr = j.value("lr", c.lr);
  c.sequence_level = j.value("sequence_level", c.sequence_level);
  c.validate();
  return c;
}

std::vector<double> group_advantages(const std::vector<double>& rewards) {
  if (rewards.size() < 2) throw ValidationError("group advantages need at least two rewards");
  const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
  if (*lo == *hi) return std::vector<double>(rewards.size(), 0.0);
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> a;
  a.reserve(rewards.size());
  for (double r : rewards) a.push_back((r - mean) / (sd + 1e-8));
  return a;
}

namespace {

Matrix column(const std::vector<double>& v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[i];
  return m;
}

}  // namespace

GrpoLoss grpo_objective(const Var& logp, const std::vector<double>& logp_old, const std::vector<double>& logp_ref,
                        const std::vector<int>& sequence_of, const std::vector<double>& advantages,
                        const GrpoConfig& cfg) {
  const auto n = static_cast<std::size_t>(logp.rows());
  if (logp.cols() != 1 || logp_old.size() != n || logp_ref.size() != n || sequence_of.size() != n) {
    throw ShapeError("GRPO objective inputs disagree in length");
  }
  const int n_seq = static_cast<int>(advantages.size());
  std::vector<int> lengths(n_seq, 0);
  for (int s : sequence_of) {
    if (s < 0 || s >= n_seq) throw ShapeError("token assigned to an unknown sequence");
    ++lengths[s];
  }
  const int live = static_cast<int>(std::count_if(lengths.begin(), lengths.end(), [](int l) { return l > 0; }));
  GrpoLoss out;
  if (live == 0) {
    out.loss = ad::zeros(1, 1);
    return out;
  }

  // Row s averages the tokens of sequence s and divides by the number of live sequences.
  Matrix avg = Matrix::Zero(n_seq, static_cast<Eigen::Index>(n));
  for (std::size_t t = 0; t < n; ++t) {
    const int s = sequence_of[t];
    avg(s, static_cast<Eigen::Index>(t)) = 1.0 / (lengths[s] * static_cast<double>(live));
  }
  const Var per_seq_mean = ad::constant(avg);

  const Var log_ratio = ad::sub(logp, ad::constant(column(logp_old)));
  Var ratio;
  Var adv;
  if (cfg.sequence_level) {
    Matrix per_token_share = avg * static_cast<double>(live);
    ratio = ad::exp(ad::matmul(ad::constant(per_token_share), log_ratio));
    Matrix a(n_seq, 1);
    for (int s = 0; s < n_seq; ++s) a(s, 0) = lengths[s] > 0 ? advantages[s] / live : 0.0;
    adv = ad::constant(a);
  } else {
    ratio = ad::exp(log_ratio);
    std::vector<double> a(n);
    for (std::size_t t = 0; t < n; ++t) a[t] = advantages[sequence_of[t]];
    adv = ad::constant(column(a));
  }
  if (!ratio.value().allFinite()) throw GrpoError("non-finite importance ratio");

  const Var unclipped = ad::mul(ratio, adv);
  const Var clipped = ad::mul(ad::clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon), adv);
  const Var surrogate_terms = ad::minimum(unclipped, clipped);
  const Var surrogate =
      cfg.sequence_level ? ad::sum_all(surrogate_terms) : ad::sum_all(ad::matmul(per_seq_mean, surrogate_terms));

  const Var d = ad::sub(ad::constant(column(logp_ref)), logp);
  const Var kl_terms = ad::sub(ad::sub(ad::exp(d), d), ad::constant(Matrix::Ones(static_cast<Eigen::Index>(n), 1)));
  const Var kl = ad::sum_all(ad::matmul(per_seq_mean, kl_terms));

  out.loss = ad::sub(ad::scale(kl, cfg.kl_coeff), surrogate);
  out.surrogate = surrogate.scalar();
  out.kl = kl.scalar();
  const Matrix& r = ratio.value();
  out.mean_ratio = r.mean();
  out.clip_fraction =
      static_cast<double>(((r.array() < 1.0 - cfg.clip_epsilon) || (r.array() > 1.0 + cfg.clip_epsilon)).count()) /
      static_cast<double>(r.size());
  if (!std::isfinite(out.loss.scalar())) throw GrpoError("non-finite GRPO loss");
  return out;
}

Var music_token_log_probs(const model::HierModel& m, const model::WindowExample& w) {
  const auto fwd = m.forward(w);
  std::vector<int> valid;
  for (std::size_t i = 0; i < fwd.music_targets.size(); ++i) {
    if (fwd.music_targets[i] >= 0) valid.push_back(static_cast<int>(i));
  }
  if (valid.empty()) return ad::zeros(0, 1);
  return ad::gather_rows(ad::log_prob_of(fwd.music_logits, fwd.music_targets), valid);
}

namespace {

std::vector<double> values_of(const Var& column_var) {
  const Matrix& v = column_var.value();
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace

GrpoStepResult grpo_step(model::HierModel& policy, const model::HierModel& reference, optim::AdamW& opt,
                         std::vector<TrajectoryGroup>& groups, const GrpoConfig& cfg) {
  std::vector<Var> columns;
  std::vector<double> old_all, ref_all, advantages;
  std::vector<int> sequence_of;
  for (auto& group : groups) {
    std::vector<double> rewards;
    for (const auto& t : group) rewards.push_back(t.reward);
    const auto adv = group_advantages(rewards);
    for (std::size_t i = 0; i < group.size(); ++i) {
      auto& traj = group[i];
      const Var logp = music_token_log_probs(policy, traj.window);
      const auto n = static_cast<std::size_t>(logp.rows());
      if (traj.logp_old.empty()) traj.logp_old = values_of(logp);
      if (traj.logp_ref.empty()) {
        ad::NoGradGuard guard;
        traj.logp_ref = values_of(music_token_log_probs(reference, traj.window));
      }
      if (traj.logp_old.size() != n || traj.logp_ref.size() != n) {
        throw ShapeError("trajectory log-probabilities do not match its tokens");
      }
      const int seq = static_cast<int>(advantages.size());
      advantages.push_back(adv[i]);
      if (n == 0) continue;
      columns.push_back(logp);
      old_all.insert(old_all.end(), traj.logp_old.begin(), traj.logp_old.end());
      ref_all.insert(ref_all.end(), traj.logp_ref.begin(), traj.logp_ref.end());
      sequence_of.insert(sequence_of.end(), n, seq);
    }
  }
  GrpoStepResult r;
  r.sequences = static_cast<int>(advantages.size());
  r.tokens = static_cast<int>(sequence_of.size());
  if (columns.empty()) return r;

  const Var logp = ad::concat_rows(columns);
  const auto obj = grpo_objective(logp, old_all, ref_all, sequence_of, advantages, cfg);
  r.loss = obj.loss.scalar();
  r.surrogate = obj.surrogate;
  r.kl = obj.kl;
  r.mean_ratio = obj.mean_ratio;
  r.clip_fraction = obj.clip_fraction;

  policy.params().zero_grad();
  ad::backward(obj.loss);
  for (const auto& [name, p] : policy.params().entries()) {
    if (p.grad().size() > 0 && !p.grad().allFinite()) {
      policy.params().zero_grad();
      throw GrpoError("non-finite gradient in " + name);
    }
  }
  r.grad_norm = opt.step(cfg.lr);
  return r;
}

BanditResult run_bandit(const GrpoConfig& cfg, const std::array<double, 2>& rewards, int steps, double lr,
                        std::uint64_t seed) {
  cfg.validate();
  Var logits(Matrix::Zero(1, 2), true);
  const Matrix initial = logits.value();
  auto log_softmax = [](const Matrix& z) {
    const double lse = std::log(z.array().exp().sum());
    return Matrix((z.array() - lse).matrix());
  };
  const int best = rewards[1] > rewards[0] ? 1 : 0;
  std::mt19937_64 rng(seed);
  BanditResult out;
  out.best_action_prob.push_back(std::exp(log_softmax(logits.value())(0, best)));
  const std::vector<int> tile(cfg.G, 0);
  for (int step = 0; step < steps; ++step) {
    const Matrix lp = log_softmax(logits.value());
    std::bernoulli_distribution pick_one(std::exp(lp(0, 1)));
    std::vector<int> actions(cfg.G);
    std::vector<double> r(cfg.G), old(cfg.G), ref(cfg.G);
    std::vector<int> seq(cfg.G);
    const Matrix ref_lp = log_softmax(initial);
    for (int g = 0; g < cfg.G; ++g) {
      actions[g] = pick_one(rng) ? 1 : 0;
      r[g] = rewards[actions[g]];
      old[g] = lp(0, actions[g]);
      ref[g] = ref_lp(0, actions[g]);
      seq[g] = g;
    }
    const Var logp = ad::log_prob_of(ad::gather_rows(logits, tile), actions);
    const auto obj = grpo_objective(logp, old, ref, seq, group_advantages(r), cfg);
    logits.zero_grad();
    ad::backward(obj.loss);
    logits.mutable_value() -= lr * logits.grad();
    out.best_action_prob.push_back(std::exp(log_softmax(logits.value())(0, best)));
  }
  return out;
}

nlohmann::json rollout_to_json(const RolloutRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"epoch", r.epoch}, {"k", r.k},           {"g", r.g}, {"reward", r.reward},
          {"d_hn", opt(r.d_hn)}, {"d_nn", opt(r.d_nn)}, {"trk", opt(r.trk)}};
}

namespace {

struct Rollout {
  GeneratedWindow generated;
  double reward = 0.0;
  MetricsReport metrics;
};

Rollout roll_out(const model::HierModel& snapshot, const HarmonySkeleton& sk, SamplingConfig sampling,
                 const RewardSpec& spec, EmbeddingClient* client) {
  Rollout r;
  r.generated = generate_window(snapshot, sk, sampling);
  r.reward = reward(r.generated.score, sk, spec, client);
  r.metrics = evaluate(r.generated.score, &sk, sampling.params);
  return r;
}

}  // namespace

std::vector<EpochSummary> run_grpo(model::HierModel& policy, const model::HierModel& reference, optim::AdamW& opt,
                                   const std::vector<HarmonySkeleton>& skeletons, const GrpoRunConfig& cfg,
                                   EmbeddingClient* client, const std::function<void(const RolloutRecord&)>& on_rollout,
                                   const std::function<void(const EpochSummary&)>& on_epoch) {
  cfg.grpo.validate();
  if (skeletons.empty()) throw ValidationError("GRPO needs at least one skeleton");
  const int workers = std::max(1, cfg.workers);
  std::vector<EpochSummary> summaries;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochSummary summary;
    summary.epoch = epoch;
    std::vector<TrajectoryGroup> groups;
    double reward_sum = 0.0;
    int reward_count = 0;
    for (int k = 0; k < cfg.grpo.K; ++k) {
      const auto& sk = skeletons[(static_cast<std::size_t>(epoch) * cfg.grpo.K + k) % skeletons.size()];
      std::vector<Rollout> rollouts(cfg.grpo.G);
      bool failed = false;
      // The policy is not modified until every rollout of the epoch is done,
      // so the workers share it read-only.
      for (int start = 0; start < cfg.grpo.G && !failed; start += workers) {
        std::vector<std::future<Rollout>> pending;
        for (int g = start; g < std::min(cfg.grpo.G, start + workers); ++g) {
          SamplingConfig sampling = cfg.sampling;
          sampling.seed = cfg.seed + (static_cast<std::uint64_t>(epoch) * cfg.grpo.K + k) * cfg.grpo.G + g;
          pending.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred, roll_out,
                                       std::cref(policy), std::cref(sk), sampling, std::cref(cfg.reward), client));
        }
        for (std::size_t i = 0; i < pending.size(); ++i) {
          try {
            rollouts[start + i] = pending[i].get();
          } catch (const RewardError&) {
            failed = true;
          }
        }
      }
      if (failed) {
        ++summary.groups_discarded;
        continue;
      }
      TrajectoryGroup group;
      for (int g = 0; g < cfg.grpo.G; ++g) {
        auto& ro = rollouts[g];
        if (on_rollout) {
          on_rollout({epoch, k, g, ro.reward, ro.metrics.d_hn, ro.metrics.d_nn, ro.metrics.trk});
        }
        reward_sum += ro.reward;
        ++reward_count;
        group.push_back({std::move(ro.generated.window), ro.reward, {}, {}});
      }
      groups.push_back(std::move(group));
    }
    summary.groups_used = static_cast<int>(groups.size());
    summary.mean_reward = reward_count ? reward_sum / reward_count : 0.0;
    if (!groups.empty()) {
      try {
        summary.step = grpo_step(policy, reference, opt, groups, cfg.grpo);
        summary.step_applied = true;
      } catch (const GrpoError&) {
        summary.step_applied = false;
      }
    }
    summaries.push_back(summary);
    if (on_epoch) on_epoch(summary);
  }
  return summaries;
}

}  // namespace symphony
