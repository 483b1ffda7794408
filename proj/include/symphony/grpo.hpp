#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "symphony/autograd.hpp"
#include "symphony/harmony.hpp"
#include "symphony/model.hpp"
#include "symphony/optim.hpp"
#include "symphony/reward.hpp"
#include "symphony/sampling.hpp"

namespace symphony {

/// Non-finite importance ratios or losses; the step is not applied.
class GrpoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GrpoConfig {
  int K = 16;  // skeletons per epoch
  int G = 32;  // rollouts per skeleton
  double clip_epsilon = 0.2;
  double kl_coeff = 0.01;
  double lr = 4e-5;
  /// One importance ratio per rollout (geometric mean over its tokens) instead of one per token.
  bool sequence_level = false;

  void validate() const;
};

nlohmann::json grpo_to_json(const GrpoConfig& c);
GrpoConfig grpo_from_json(const nlohmann::json& j);

/// (r_i - mean) / (population std + 1e-8). Throws ValidationError when G < 2.
std::vector<double> group_advantages(const std::vector<double>& rewards);

struct GrpoLoss {
  ad::Var loss;
  double surrogate = 0.0;  // mean clipped surrogate (to be maximized)
  double kl = 0.0;         // mean per-token KL estimate
  double mean_ratio = 1.0;
  double clip_fraction = 0.0;
};

/// Clipped surrogate with a per-token KL penalty, averaged over each
/// sequence's tokens and then over sequences:
///   loss = -mean_s mean_t [min(r A_s, clip(r, 1-eps, 1+eps) A_s) - beta KL_t]
/// with r = exp(logp - logp_old) and KL_t = exp(ref - logp) - (ref - logp) - 1.
/// `logp` is an N x 1 column; `sequence_of` maps each token to its sequence.
/// Throws GrpoError on non-finite ratios.
GrpoLoss grpo_objective(const ad::Var& logp, const std::vector<double>& logp_old, const std::vector<double>& logp_ref,
                        const std::vector<int>& sequence_of, const std::vector<double>& advantages,
                        const GrpoConfig& cfg);

struct Trajectory {
  model::WindowExample window;
  double reward = 0.0;
  /// Per music token log-probabilities at sampling time and under the
  /// reference policy. Empty vectors are filled in by grpo_step.
  std::vector<double> logp_old;
  std::vector<double> logp_ref;
};

/// Rollouts sharing one skeleton.
using TrajectoryGroup = std::vector<Trajectory>;

/// Teacher-forced log-probabilities of every music token of the window, in cell order.
ad::Var music_token_log_probs(const model::HierModel& m, const model::WindowExample& w);

struct GrpoStepResult {
  double loss = 0.0;
  double surrogate = 0.0;
  double kl = 0.0;
  double mean_ratio = 1.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  int sequences = 0;
  int tokens = 0;
};

/// One optimizer step of the policy on a batch of groups. Advantages are
/// normalized within each group. Throws GrpoError without touching the policy
/// when a ratio or the loss is not finite.
GrpoStepResult grpo_step(model::HierModel& policy, const model::HierModel& reference, optim::AdamW& opt,
                         std::vector<TrajectoryGroup>& groups, const GrpoConfig& cfg);

struct BanditResult {
  std::vector<double> best_action_prob;  // before the first step and after every step
};

/// Two-action bandit with fixed rewards: a 1x2 logit vector sampled G times
/// per step and updated with the GRPO objective.
BanditResult run_bandit(const GrpoConfig& cfg, const std::array<double, 2>& rewards, int steps, double lr,
                        std::uint64_t seed);

struct RolloutRecord {
  int epoch = 0;
  int k = 0;
  int g = 0;
  double reward = 0.0;
  std::optional<double> d_hn, d_nn, trk;
};
nlohmann::json rollout_to_json(const RolloutRecord& r);

struct GrpoRunConfig {
  GrpoConfig grpo;
  SamplingConfig sampling;
  RewardSpec reward;
  int epochs = 10;
  std::uint64_t seed = 0;
  /// Concurrent rollout generation.
  int workers = 1;
};

struct EpochSummary {
  int epoch = 0;
  double mean_reward = 0.0;
  int groups_used = 0;
  int groups_discarded = 0;
  bool step_applied = false;
  GrpoStepResult step;
};

/// Epoch loop: K skeletons (cycled from `skeletons`), G rollouts each from a
/// frozen snapshot of the policy, rewards, one policy update. Groups whose
/// reward fails are discarded. `on_rollout` receives every scored rollout.
std::vector<EpochSummary> run_grpo(model::HierModel& policy, const model::HierModel& reference, optim::AdamW& opt,
                                   const std::vector<HarmonySkeleton>& skeletons, const GrpoRunConfig& cfg,
                                   EmbeddingClient* client = nullptr,
                                   const std::function<void(const RolloutRecord&)>& on_rollout = {},
                                   const std::function<void(const EpochSummary&)>& on_epoch = {});

}  // namespace symphony
