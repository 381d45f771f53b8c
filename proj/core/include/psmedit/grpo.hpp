#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "psmedit/psm_editing.hpp"
#include "psmedit/rewards.hpp"
#include "psmedit/sequence_model.hpp"
#include "psmedit/token_domain.hpp"

namespace psmedit {

struct GrpoConfig {
  int group_size = 8;
  double kl_beta = 0.01;
  double clip_epsilon = 0.2;
  double learning_rate = 1e-6;
  int steps = 400;
  /// Micro-batches of `batch_queries` groups per optimizer step.
  int grad_accum = 10;
  int batch_queries = 4;
  double advantage_epsilon = 1e-8;
  /// Optimizer passes over each rollout batch. One keeps the ratio at 1.
  int inner_epochs = 1;
  std::string optimizer = "sgd";
  double clip_norm = 1.0;
  int checkpoint_every = 50;
  std::uint64_t seed = 0;
  /// Rollout threads; 0 means one per hardware core.
  int workers = 0;
  SamplingConfig sampling{1.0, std::numeric_limits<int>::max(), 64, 0};

  void validate() const;
  OptimizerConfig optimizer_config() const;
};

nlohmann::json to_json(const GrpoConfig& c);

struct RolloutGroup {
  EditQuery query;
  std::uint64_t query_id = 0;
  /// Sampled middles, EOS stripped.
  std::vector<TokenSeq> candidates;
  /// Middles plus the terminating EOS when emitted; the scored actions.
  std::vector<TokenSeq> actions;
  std::vector<std::vector<double>> old_logprobs;
  std::vector<std::vector<double>> ref_logprobs;
  std::vector<RewardBreakdown> breakdowns;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

/// G samples from the old policy; candidate i of query q at step s uses rng
/// stream derive_seed(seed, s, q, i).
RolloutGroup rollout(const ModelParams& policy_old, const SpecialTokens& sp, const EditQuery& query,
                     std::uint64_t query_id, std::uint64_t step, const GrpoConfig& config);

/// (R_i - mean R) / (population std R + eps).
std::vector<double> advantages(std::span<const double> rewards, double advantage_epsilon);

/// Fills breakdowns, rewards and advantages.
void score_group(RolloutGroup& group, const WorldSpec& world, const Critic& critic, const RewardConfig& reward_config,
                 const GrpoConfig& config);

/// Fills reference log-probs for the KL term.
void attach_reference(RolloutGroup& group, const ModelParams& reference);

struct LossStats {
  double surrogate = 0.0;
  double kl_estimate = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
};

/// Adds the gradient of the loss
///   -mean_groups mean_candidates mean_tokens [min(rho A, clip(rho) A) - beta k3]
/// into `grad`. rho uses the old log-probs recorded in each group.
LossStats surrogate_gradient(const ModelParams& policy, std::span<const RolloutGroup> groups, const GrpoConfig& config,
                             std::span<double> grad);

/// One optimizer step on the surrogate loss.
LossStats surrogate_step(ModelParams& policy, Optimizer& optimizer, std::span<const RolloutGroup> groups,
                         const GrpoConfig& config);

struct StepMetrics {
  std::uint64_t step = 0;
  double mean_reward = 0.0;
  double valid_fraction = 0.0;
  double mean_r_sc = 0.0;
  double mean_wer = 0.0;
  double mean_len_dev = 0.0;
  double kl_estimate = 0.0;
  double surrogate = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
};

nlohmann::json to_json(const StepMetrics& m);

struct RolloutRecord {
  std::uint64_t step;
  std::uint64_t query_id;
  int candidate;
  RewardBreakdown breakdown;
};

nlohmann::json to_json(const RolloutRecord& r);

struct TrainCallbacks {
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const RolloutRecord&)> on_rollout;
  /// Called after each completed step whose number is a multiple of
  /// checkpoint_every, and after the last step.
  std::function<void(std::uint64_t step, const ModelParams&, const Optimizer&)> on_checkpoint;
};

/// Queries used for RL: infill examples and random edits drawn from the
/// training corpus in the given proportions.
struct QueryMix {
  double infill = 0.25;
  double insertion = 0.25;
  double deletion = 0.25;
  double substitution = 0.25;
};

std::vector<EditQuery> build_query_pool(const WorldSpec& world, const SpecialTokens& sp,
                                        std::span<const Utterance> corpus, std::size_t count, const QueryMix& mix,
                                        Rng& rng);

/// Runs steps [start_step, config.steps). Each step refreshes the old policy,
/// draws grad_accum * batch_queries queries from the pool, rolls out, scores
/// and applies inner_epochs surrogate steps.
std::vector<StepMetrics> train(ModelParams& policy, Optimizer& optimizer, const ModelParams& reference,
                               const WorldSpec& world, const SpecialTokens& sp, const Critic& critic,
                               std::span<const EditQuery> pool, const GrpoConfig& config,
                               const RewardConfig& reward_config, std::uint64_t start_step = 0,
                               const TrainCallbacks& callbacks = {});

}  // namespace psmedit
