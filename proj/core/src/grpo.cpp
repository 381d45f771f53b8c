#include "psmedit/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "psmedit/parallel.hpp"

namespace psmedit {

void GrpoConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("grpo: " + what); };
  if (group_size < 2) fail("group_size must be >= 2");
  if (!(kl_beta >= 0.0)) fail("kl_beta must be >= 0");
  if (!(clip_epsilon >= 0.0)) fail("clip_epsilon must be >= 0");
  if (!(learning_rate >= 0.0)) fail("learning_rate must be >= 0");
  if (steps < 0) fail("steps must be >= 0");
  if (grad_accum < 1) fail("grad_accum must be >= 1");
  if (batch_queries < 1) fail("batch_queries must be >= 1");
  if (!(advantage_epsilon >= 0.0)) fail("advantage_epsilon must be >= 0");
  if (inner_epochs < 1) fail("inner_epochs must be >= 1");
  if (checkpoint_every < 1) fail("checkpoint_every must be >= 1");
  if (workers < 0) fail("workers must be >= 0");
  optimizer_config().validate();
  sampling.validate();
}

OptimizerConfig GrpoConfig::optimizer_config() const {
  OptimizerConfig oc;
  oc.kind = optimizer;
  oc.learning_rate = learning_rate;
  oc.clip_norm = clip_norm;
  return oc;
}

nlohmann::json to_json(const GrpoConfig& c) {
  return {{"group_size", c.group_size},
          {"kl_beta", c.kl_beta},
          {"clip_epsilon", c.clip_epsilon},
          {"learning_rate", c.learning_rate},
          {"steps", c.steps},
          {"grad_accum", c.grad_accum},
          {"batch_queries", c.batch_queries},
          {"advantage_epsilon", c.advantage_epsilon},
          {"inner_epochs", c.inner_epochs},
          {"optimizer", c.optimizer},
          {"clip_norm", c.clip_norm},
          {"checkpoint_every", c.checkpoint_every},
          {"seed", c.seed},
          {"workers", c.workers},
          {"sampling", to_json(c.sampling)}};
}

RolloutGroup rollout(const ModelParams& policy_old, const SpecialTokens& sp, const EditQuery& query,
                     std::uint64_t query_id, std::uint64_t step, const GrpoConfig& config) {
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(config.group_size));
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = derive_seed(config.seed, step, query_id, i);
  auto samples = sample_many(policy_old, query.policy_input(), config.sampling, seeds, sp.eos);
  RolloutGroup g;
  g.query = query;
  g.query_id = query_id;
  for (auto& s : samples) {
    g.actions.push_back(s.actions(sp.eos));
    g.candidates.push_back(std::move(s.tokens));
    g.old_logprobs.push_back(std::move(s.logprobs));
  }
  return g;
}

std::vector<double> advantages(std::span<const double> rewards, double advantage_epsilon) {
  if (rewards.size() < 2) throw DomainError("advantages: group needs at least 2 rewards");
  // the rounded mean of equal values can miss them by an ulp
  if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; }))
    return std::vector<double>(rewards.size(), 0.0);
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) out.push_back((r - mean) / (sd + advantage_epsilon));
  return out;
}

void score_group(RolloutGroup& group, const WorldSpec& world, const Critic& critic, const RewardConfig& reward_config,
                 const GrpoConfig& config) {
  group.breakdowns.clear();
  group.rewards.clear();
  for (const auto& mid : group.candidates) {
    group.breakdowns.push_back(score_rollout(world, critic, group.query, mid, reward_config));
    group.rewards.push_back(group.breakdowns.back().total);
  }
  group.advantages = advantages(group.rewards, config.advantage_epsilon);
}

void attach_reference(RolloutGroup& group, const ModelParams& reference) {
  group.ref_logprobs.clear();
  const auto prompt = group.query.policy_input();
  for (const auto& a : group.actions) group.ref_logprobs.push_back(eval_logprobs(reference, prompt, a));
}

LossStats surrogate_gradient(const ModelParams& policy, std::span<const RolloutGroup> groups, const GrpoConfig& config,
                             std::span<double> grad) {
  LossStats st;
  if (groups.empty()) return st;
  const double eps = config.clip_epsilon;
  const double beta = config.kl_beta;
  const double group_w = 1.0 / static_cast<double>(groups.size());
  std::size_t tokens = 0, clipped = 0;
  double kl_sum = 0.0;
  for (const auto& g : groups) {
    if (g.advantages.size() != g.actions.size() || g.old_logprobs.size() != g.actions.size()) {
      throw DomainError("surrogate: group is missing rewards or log-probs");
    }
    const bool use_ref = beta != 0.0;
    if (use_ref && g.ref_logprobs.size() != g.actions.size()) throw DomainError("surrogate: missing reference log-probs");
    const auto prompt = g.query.policy_input();
    const double cand_w = group_w / static_cast<double>(g.actions.size());
    for (std::size_t i = 0; i < g.actions.size(); ++i) {
      const auto& act = g.actions[i];
      if (act.empty()) continue;
      const double adv = g.advantages[i];
      // nothing to learn from this candidate
      if (adv == 0.0 && !use_ref) continue;
      const double w = cand_w / static_cast<double>(act.size());
      const auto& old = g.old_logprobs[i];
      const std::vector<double>* ref = use_ref ? &g.ref_logprobs[i] : nullptr;
      double objective = 0.0, kl = 0.0;
      std::size_t n_clipped = 0;
      accumulate_logprob_gradient(
          policy, prompt, act,
          [&](std::span<const double> lp, std::span<double> dl) {
            for (std::size_t t = 0; t < lp.size(); ++t) {
              const double rho = std::exp(lp[t] - old[t]);
              const double rho_c = std::clamp(rho, 1.0 - eps, 1.0 + eps);
              const double unclipped = rho * adv;
              const double clipped_term = rho_c * adv;
              if (rho != rho_c) ++n_clipped;
              double d = unclipped <= clipped_term ? unclipped : 0.0;
              double j = std::min(unclipped, clipped_term);
              if (ref != nullptr) {
                const double delta = (*ref)[t] - lp[t];
                const double k3 = std::exp(delta) - delta - 1.0;
                kl += k3;
                j -= beta * k3;
                d -= beta * (1.0 - std::exp(delta));
              }
              objective += j;
              // minimizing -J
              dl[t] = -w * d;
            }
          },
          grad);
      if (!std::isfinite(objective) || !std::isfinite(kl)) throw TrainingError("surrogate: non-finite loss");
      st.surrogate += w * objective;
      kl_sum += kl;
      tokens += act.size();
      clipped += n_clipped;
    }
  }
  st.kl_estimate = tokens > 0 ? kl_sum / static_cast<double>(tokens) : 0.0;
  st.clip_fraction = tokens > 0 ? static_cast<double>(clipped) / static_cast<double>(tokens) : 0.0;
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  st.grad_norm = std::sqrt(sq);
  return st;
}

LossStats surrogate_step(ModelParams& policy, Optimizer& optimizer, std::span<const RolloutGroup> groups,
                         const GrpoConfig& config) {
  std::vector<double> grad(policy.size(), 0.0);
  auto st = surrogate_gradient(policy, groups, config, grad);
  st.grad_norm = optimizer.step(policy, grad);
  return st;
}

nlohmann::json to_json(const StepMetrics& m) {
  return {{"step", m.step},
          {"mean_reward", m.mean_reward},
          {"valid_fraction", m.valid_fraction},
          {"mean_r_sc", m.mean_r_sc},
          {"mean_wer", m.mean_wer},
          {"mean_len_dev", m.mean_len_dev},
          {"kl_estimate", m.kl_estimate},
          {"surrogate", m.surrogate},
          {"clip_fraction", m.clip_fraction},
          {"grad_norm", m.grad_norm}};
}

nlohmann::json to_json(const RolloutRecord& r) {
  nlohmann::json j = {{"step", r.step}, {"query_id", r.query_id}, {"candidate", r.candidate}};
  j.update(to_json(r.breakdown));
  return j;
}

std::vector<EditQuery> build_query_pool(const WorldSpec& world, const SpecialTokens& sp,
                                        std::span<const Utterance> corpus, std::size_t count, const QueryMix& mix,
                                        Rng& rng) {
  if (corpus.empty()) throw BuildError("query pool: empty corpus");
  const double weights[4] = {mix.infill, mix.insertion, mix.deletion, mix.substitution};
  const double total = weights[0] + weights[1] + weights[2] + weights[3];
  if (!(total > 0.0) || std::any_of(std::begin(weights), std::end(weights), [](double w) { return w < 0.0; })) {
    throw ConfigError("query pool: mix weights must be >= 0 with a positive sum");
  }
  std::vector<EditQuery> pool;
  pool.reserve(count);
  std::size_t attempts = 0;
  while (pool.size() < count) {
    if (++attempts > 20 * count + 100) throw BuildError("query pool: corpus cannot host the requested queries");
    const auto& utt = corpus[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(corpus.size()) - 1))];
    double u = uniform_unit(rng) * total;
    int kind = 0;
    while (kind < 3 && u >= weights[kind]) u -= weights[kind++];
    if (kind == 0) {
      auto ex = make_training_example(sp, utt, rng);
      if (ex) pool.push_back(std::move(ex->query));
      continue;
    }
    const auto ek = static_cast<EditKind>(kind - 1);
    auto spec = random_edit_spec(world, utt, ek, rng);
    if (spec) pool.push_back(apply_edit_spec(world, sp, utt, *spec, rng));
  }
  return pool;
}

std::vector<StepMetrics> train(ModelParams& policy, Optimizer& optimizer, const ModelParams& reference,
                               const WorldSpec& world, const SpecialTokens& sp, const Critic& critic,
                               std::span<const EditQuery> pool, const GrpoConfig& config,
                               const RewardConfig& reward_config, std::uint64_t start_step,
                               const TrainCallbacks& callbacks) {
  config.validate();
  reward_config.validate();
  std::vector<StepMetrics> history;
  const auto steps = static_cast<std::uint64_t>(config.steps);
  if (start_step >= steps) return history;
  if (pool.empty()) throw ConfigError("grpo: empty query pool");
  const std::size_t per_step = static_cast<std::size_t>(config.grad_accum) * static_cast<std::size_t>(config.batch_queries);

  for (std::uint64_t step = start_step; step < steps; ++step) {
    const FrozenModel old = freeze(policy);
    std::vector<RolloutGroup> groups(per_step);
    parallel_for(per_step, config.workers > 0 ? config.workers : default_workers(), [&](std::size_t slot) {
      Rng pick(derive_seed(config.seed, 0x706f6f6cULL, step, slot));
      const auto qid = static_cast<std::uint64_t>(uniform_int(pick, 0, static_cast<std::int64_t>(pool.size()) - 1));
      auto g = rollout(old, sp, pool[qid], qid, step, config);
      score_group(g, world, critic, reward_config, config);
      if (config.kl_beta != 0.0) attach_reference(g, reference);
      groups[slot] = std::move(g);
    });

    StepMetrics m;
    m.step = step;
    std::size_t n = 0, n_valid = 0, n_finite_sc = 0;
    for (const auto& g : groups) {
      for (std::size_t i = 0; i < g.breakdowns.size(); ++i) {
        const auto& b = g.breakdowns[i];
        ++n;
        m.mean_reward += b.total;
        m.mean_wer += b.wer;
        m.mean_len_dev += b.len_dev;
        if (b.valid) ++n_valid;
        if (std::isfinite(b.r_sc)) {
          m.mean_r_sc += b.r_sc;
          ++n_finite_sc;
        }
        if (callbacks.on_rollout) callbacks.on_rollout({step, g.query_id, static_cast<int>(i), b});
      }
    }
    m.mean_reward /= static_cast<double>(n);
    m.mean_wer /= static_cast<double>(n);
    m.mean_len_dev /= static_cast<double>(n);
    m.valid_fraction = static_cast<double>(n_valid) / static_cast<double>(n);
    m.mean_r_sc = n_finite_sc > 0 ? m.mean_r_sc / static_cast<double>(n_finite_sc) : 0.0;

    LossStats ls;
    for (int e = 0; e < config.inner_epochs; ++e) ls = surrogate_step(policy, optimizer, groups, config);
    m.kl_estimate = ls.kl_estimate;
    m.surrogate = ls.surrogate;
    m.clip_fraction = ls.clip_fraction;
    m.grad_norm = ls.grad_norm;
    history.push_back(m);
    if (callbacks.on_step) callbacks.on_step(m);
    const bool last = step + 1 == steps;
    if (callbacks.on_checkpoint && (last || (step + 1) % static_cast<std::uint64_t>(config.checkpoint_every) == 0)) {
      callbacks.on_checkpoint(step + 1, policy, optimizer);
    }
  }
  return history;
}

}  // namespace psmedit
