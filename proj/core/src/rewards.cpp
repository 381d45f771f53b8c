#include "psmedit/rewards.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace psmedit {

void RewardConfig::validate() const {
  if (!(tau_wer >= 0.0)) throw ConfigError("rewards: tau_wer must be >= 0");
  if (!(tau_len >= 0.0)) throw ConfigError("rewards: tau_len must be >= 0");
  if (!(r_base >= 0.0)) throw ConfigError("rewards: r_base must be >= 0");
}

nlohmann::json to_json(const RewardConfig& c) {
  return {{"tau_wer", c.tau_wer},
          {"tau_len", c.tau_len},
          {"r_base", c.r_base},
          {"critic_kind", c.critic_kind == CriticKind::exact ? "exact" : "learned"}};
}

nlohmann::json to_json(const RewardBreakdown& b) {
  // -inf is not representable in JSON; null marks an impossible middle
  nlohmann::json r_sc = std::isfinite(b.r_sc) ? nlohmann::json(b.r_sc) : nlohmann::json(nullptr);
  return {{"r_sc", r_sc},          {"r_wer", b.r_wer},     {"wer", b.wer},   {"len_gen", b.len_gen},
          {"len_gt", b.len_gt},    {"len_dev", b.len_dev}, {"valid", b.valid}, {"total", b.total}};
}

Critic Critic::exact(const WorldSpec& world) { return Critic(CriticKind::exact, &world, std::nullopt); }

Critic Critic::learned(FrozenModel model) { return Critic(CriticKind::learned, nullptr, std::move(model)); }

std::vector<double> Critic::token_logprobs(const EditQuery& query, std::span<const TokenId> mid) const {
  if (mid.empty()) return {};
  if (kind_ == CriticKind::learned) {
    const auto& m = model_->params();
    const bool in_vocab =
        std::all_of(mid.begin(), mid.end(), [&m](TokenId t) { return t >= 0 && t < m.config().vocab_size; });
    if (!in_vocab) return std::vector<double>(mid.size(), kNegInf);
    return eval_logprobs(m, query.critic_input(), mid);
  }
  TokenSeq seq = query.s_pre;
  seq.insert(seq.end(), mid.begin(), mid.end());
  return conditional_logprobs(*world_, query.target_text, seq, query.s_pre.size());
}

double self_consistency_reward(const Critic& critic, const EditQuery& query, std::span<const TokenId> mid) {
  if (mid.empty()) return 0.0;
  double sum = 0.0;
  for (double lp : critic.token_logprobs(query, mid)) {
    if (is_neg_inf(lp)) return kNegInf;
    sum += lp;
  }
  return sum / static_cast<double>(mid.size());
}

Intelligibility intelligibility_reward(const WorldSpec& world, std::span<const TokenId> spliced,
                                       std::span<const WordId> target_text) {
  Intelligibility out;
  const bool decodable = std::all_of(spliced.begin(), spliced.end(), [&world](TokenId t) { return world.valid_token(t); });
  if (decodable) out.hypothesis = asr_decode(world, spliced);
  out.wer = wer(target_text, out.hypothesis);
  out.r_wer = 1.0 - out.wer;
  return out;
}

double length_deviation(int len_gen, int len_gt) {
  const double denom = len_gt > 0 ? static_cast<double>(len_gt) : 1.0;
  return std::abs(static_cast<double>(len_gen - len_gt)) / denom;
}

bool validity(double wer, int len_gen, int len_gt, const RewardConfig& config) {
  if (!(wer <= config.tau_wer)) return false;
  if (len_gt == 0) return len_gen == 0;
  return length_deviation(len_gen, len_gt) <= config.tau_len;
}

double total_reward(const RewardBreakdown& b, const RewardConfig& config) {
  return b.valid ? config.r_base + b.r_sc + b.r_wer : 0.0;
}

RewardBreakdown score_rollout(const WorldSpec& world, const Critic& critic, const EditQuery& query,
                              std::span<const TokenId> mid, const RewardConfig& config) {
  RewardBreakdown b;
  b.len_gen = static_cast<int>(mid.size());
  b.len_gt = query.gt_mid_len();
  b.len_dev = length_deviation(b.len_gen, b.len_gt);
  b.r_sc = self_consistency_reward(critic, query, mid);
  const auto intel = intelligibility_reward(world, splice(query, mid), query.target_text);
  b.wer = intel.wer;
  b.r_wer = intel.r_wer;
  b.valid = validity(b.wer, b.len_gen, b.len_gt, config) && std::isfinite(b.r_sc);
  b.total = total_reward(b, config);
  return b;
}

}  // namespace psmedit
