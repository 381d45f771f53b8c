#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "psmedit/psm_editing.hpp"
#include "psmedit/sequence_model.hpp"
#include "psmedit/token_domain.hpp"

namespace psmedit {

enum class CriticKind { exact, learned };

struct RewardConfig {
  double tau_wer = 0.2;
  double tau_len = 0.2;
  double r_base = 1.0;
  CriticKind critic_kind = CriticKind::exact;

  void validate() const;
};

nlohmann::json to_json(const RewardConfig& c);

struct RewardBreakdown {
  double r_sc = 0.0;
  double r_wer = 0.0;
  double wer = 0.0;
  int len_gen = 0;
  int len_gt = 0;
  double len_dev = 0.0;
  bool valid = false;
  double total = 0.0;
};

nlohmann::json to_json(const RewardBreakdown& b);

/// Frozen generative scorer of middles given text and prefix. Either the
/// exact world likelihood or a learned sequence model.
class Critic {
 public:
  static Critic exact(const WorldSpec& world);
  static Critic learned(FrozenModel model);

  CriticKind kind() const { return kind_; }

  /// log p(mid_t | T, S_pre, mid_<t) for each t.
  std::vector<double> token_logprobs(const EditQuery& query, std::span<const TokenId> mid) const;

 private:
  Critic(CriticKind kind, const WorldSpec* world, std::optional<FrozenModel> model)
      : kind_(kind), world_(world), model_(std::move(model)) {}
  CriticKind kind_;
  const WorldSpec* world_;
  std::optional<FrozenModel> model_;
};

/// Mean per-token critic log-prob of the middle. 0 for an empty middle,
/// kNegInf when the middle is impossible.
double self_consistency_reward(const Critic& critic, const EditQuery& query, std::span<const TokenId> mid);

struct Intelligibility {
  double r_wer = 0.0;
  double wer = 0.0;
  Text hypothesis;
};

/// Decodes the spliced utterance and scores it against the target text.
/// Sequences carrying non-semantic ids decode to the empty text.
Intelligibility intelligibility_reward(const WorldSpec& world, std::span<const TokenId> spliced,
                                       std::span<const WordId> target_text);

/// |len_gen - len_gt| / len_gt, with len_gt = 0 measured against 1 so any
/// generated token counts as full deviation.
double length_deviation(int len_gen, int len_gt);

bool validity(double wer, int len_gen, int len_gt, const RewardConfig& config);

/// r_base + r_sc + r_wer when valid, else 0.
double total_reward(const RewardBreakdown& b, const RewardConfig& config);

/// Full breakdown for one sampled middle.
RewardBreakdown score_rollout(const WorldSpec& world, const Critic& critic, const EditQuery& query,
                              std::span<const TokenId> mid, const RewardConfig& config);

}  // namespace psmedit
