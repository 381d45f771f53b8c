#include <gtest/gtest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "psmedit/rewards.hpp"

namespace psmedit {
namespace {

using fixtures::delta_world;
using fixtures::tiny_model;

WorldSpec noiseless_delta_world(std::uint64_t seed) {
  WorldConfig c;
  c.duration_probs = {1.0, 0.0, 0.0};
  c.noise_rate = 0.0;
  return build_world(c, seed);
}

EditQuery identity_query(const WorldSpec& w, const Text& text, int j) {
  const auto sp = SpecialTokens::for_world(w);
  Rng rng(1);
  const auto r = render(w, text, rng);
  const Utterance utt{text, r.tokens, r.alignment};
  return apply_edit_spec(w, sp, utt, EditSpec{EditKind::substitution, j, j + 1, {text[static_cast<std::size_t>(j)]}}, rng);
}

TEST(SelfConsistency, UniformLearnedCritic) {
  const auto critic = Critic::learned(freeze(ModelParams::initialize(tiny_model(68, 32))));
  EditQuery q;
  q.critic_prompt = {1, 2, 3};
  q.mid_bos = 4;
  EXPECT_NEAR(self_consistency_reward(critic, q, TokenSeq{5, 6, 7}), -std::log(68.0), 1e-9);
  EXPECT_NEAR(self_consistency_reward(critic, q, TokenSeq{0}), -std::log(68.0), 1e-9);
  EXPECT_EQ(self_consistency_reward(critic, q, TokenSeq{}), 0.0);
  EXPECT_TRUE(is_neg_inf(self_consistency_reward(critic, q, TokenSeq{5, 68})));
}

TEST(SelfConsistency, ExactCriticGroundTruthIsCertain) {
  const auto w = noiseless_delta_world(3);
  const auto q = identity_query(w, {4, 9, 17, 2}, 2);
  const auto critic = Critic::exact(w);
  for (double lp : critic.token_logprobs(q, q.reference_mid)) EXPECT_EQ(lp, 0.0);
  EXPECT_EQ(self_consistency_reward(critic, q, q.reference_mid), 0.0);
}

TEST(SelfConsistency, ImpossibleContinuationInvalidatesSample) {
  const auto w = noiseless_delta_world(3);
  const auto q = identity_query(w, {4, 9, 17, 2}, 2);
  const auto critic = Critic::exact(w);
  // a token no word starts with after the prefix: the reference's second
  // token in first position
  TokenSeq bad = q.reference_mid;
  std::swap(bad[0], bad[1]);
  EXPECT_TRUE(is_neg_inf(self_consistency_reward(critic, q, bad)));
  const auto b = score_rollout(w, critic, q, bad, RewardConfig{});
  EXPECT_FALSE(b.valid);
  EXPECT_EQ(b.total, 0.0);
}

TEST(SelfConsistency, MonotoneInPerTokenLogprobs) {
  const auto critic = Critic::learned(freeze(ModelParams::initialize(tiny_model(8, 16, 4, 1.5))));
  EditQuery q;
  q.critic_prompt = {1, 2};
  q.mid_bos = 3;
  Rng rng(7);
  int compared = 0;
  for (int i = 0; i < 2000; ++i) {
    TokenSeq a, b;
    for (int k = 0; k < 3; ++k) {
      a.push_back(static_cast<TokenId>(uniform_int(rng, 0, 7)));
      b.push_back(static_cast<TokenId>(uniform_int(rng, 0, 7)));
    }
    const auto la = critic.token_logprobs(q, a);
    const auto lb = critic.token_logprobs(q, b);
    bool dominates = true;
    for (std::size_t k = 0; k < 3; ++k) dominates = dominates && la[k] > lb[k];
    if (!dominates) continue;
    ++compared;
    EXPECT_GT(self_consistency_reward(critic, q, a), self_consistency_reward(critic, q, b));
  }
  EXPECT_GT(compared, 20);
}

// E_{s~pi}[r_sc(s) * |s|] = -(H(pi) + KL(pi || q)) where q(s) is the critic's
// chain probability of the middle tokens.
TEST(SelfConsistency, ExpectedRewardIsNegativeCrossEntropy) {
  const TokenId eos = 5;
  const auto policy = ModelParams::initialize(tiny_model(6, 16, 21, 1.0));
  const auto critic_model = freeze(ModelParams::initialize(tiny_model(6, 16, 22, 1.0)));
  const auto critic = Critic::learned(critic_model);
  EditQuery q;
  q.q = {0, 1, 2};
  q.critic_prompt = {0, 1};
  q.mid_bos = 3;
  const auto prompt = q.policy_input();

  const auto completions = oracle::enumerate_completions(policy, prompt, eos, 4);
  double total_p = 0.0, expected = 0.0, entropy = 0.0, kl = 0.0;
  for (const auto& c : completions) {
    total_p += c.prob;
    const double log_q = oracle::chain_logprob(critic_model, q.critic_input(), c.tokens);
    expected += c.prob * self_consistency_reward(critic, q, c.tokens) * static_cast<double>(c.tokens.size());
    entropy -= c.prob * std::log(c.prob);
    kl += c.prob * (std::log(c.prob) - log_q);
  }
  ASSERT_NEAR(total_p, 1.0, 1e-12);
  EXPECT_NEAR(expected, -(entropy + kl), 1e-9);

  SamplingConfig sc;
  sc.max_new_tokens = 4;
  const int n = 20000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    sc.seed = derive_seed(99, static_cast<std::uint64_t>(i));
    const auto s = sample(policy, prompt, sc, eos);
    const double x = self_consistency_reward(critic, q, s.tokens) * static_cast<double>(s.tokens.size());
    sum += x;
    sum_sq += x * x;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum_sq / n - mean * mean) / n);
  EXPECT_LE(std::abs(mean - expected), 3.0 * se);
}

TEST(Intelligibility, Examples) {
  const auto w = noiseless_delta_world(5);
  Rng rng(2);
  const Text text{3, 8, 21, 30};
  const auto full = render(w, text, rng).tokens;
  const auto perfect = intelligibility_reward(w, full, text);
  EXPECT_EQ(perfect.wer, 0.0);
  EXPECT_EQ(perfect.r_wer, 1.0);

  const auto missing = render(w, Text{3, 8, 30}, rng).tokens;
  const auto one_off = intelligibility_reward(w, missing, text);
  EXPECT_EQ(one_off.wer, oracle::recursive_edit_distance(text, Text{3, 8, 30}) / 4.0);
  EXPECT_DOUBLE_EQ(one_off.wer, 0.25);
  EXPECT_DOUBLE_EQ(one_off.r_wer, 0.75);

  Text tripled;
  for (int k = 0; k < 4; ++k) tripled.insert(tripled.end(), {3, 8, 21});
  const auto long_out = intelligibility_reward(w, render(w, tripled, rng).tokens, Text{3, 8, 21, 30});
  EXPECT_GT(long_out.wer, 1.0);
  EXPECT_LT(long_out.r_wer, 0.0);
}

TEST(Intelligibility, NonSemanticIdsDecodeToNothing) {
  const auto w = noiseless_delta_world(5);
  const auto sp = SpecialTokens::for_world(w);
  Rng rng(2);
  auto tokens = render(w, Text{3, 8}, rng).tokens;
  tokens.push_back(sp.eos);
  const auto r = intelligibility_reward(w, tokens, Text{3, 8});
  EXPECT_TRUE(r.hypothesis.empty());
  EXPECT_EQ(r.wer, 1.0);
}

TEST(Validity, Examples) {
  const RewardConfig c;
  EXPECT_FALSE(validity(0.25, 10, 10, c));
  EXPECT_FALSE(validity(0.0, 65, 50, c));
  EXPECT_TRUE(validity(0.0, 50, 50, c));
  EXPECT_TRUE(validity(0.2, 60, 50, c));
  EXPECT_TRUE(validity(0.0, 0, 0, c));
  EXPECT_FALSE(validity(0.0, 1, 0, c));
  EXPECT_DOUBLE_EQ(length_deviation(65, 50), 0.3);
  EXPECT_EQ(length_deviation(3, 0), 3.0);
}

TEST(TotalReward, Examples) {
  const RewardConfig c;
  RewardBreakdown b;
  b.valid = true;
  b.r_sc = -0.5;
  b.r_wer = 0.9;
  EXPECT_DOUBLE_EQ(total_reward(b, c), 1.4);
  b.r_sc = 0.0;
  b.r_wer = 1.0;
  EXPECT_EQ(total_reward(b, c), c.r_base + 1.0);
  b.valid = false;
  EXPECT_EQ(total_reward(b, c), 0.0);
}

TEST(TotalReward, GateOverRandomBreakdowns) {
  Rng rng(31);
  const RewardConfig c;
  for (int i = 0; i < 10000; ++i) {
    RewardBreakdown b;
    b.wer = uniform_unit(rng) * 0.5;
    b.r_wer = 1.0 - b.wer;
    b.len_gt = static_cast<int>(uniform_int(rng, 0, 40));
    b.len_gen = static_cast<int>(uniform_int(rng, 0, 50));
    b.len_dev = length_deviation(b.len_gen, b.len_gt);
    b.r_sc = -3.0 * uniform_unit(rng);
    b.valid = validity(b.wer, b.len_gen, b.len_gt, c);
    b.total = total_reward(b, c);
    const double dev =
        b.len_gt == 0 ? (b.len_gen == 0 ? 0.0 : 1.0) : std::abs(b.len_gen - b.len_gt) / static_cast<double>(b.len_gt);
    const bool expect_valid = b.wer <= 0.2 && dev <= 0.2;
    ASSERT_EQ(b.valid, expect_valid);
    if (expect_valid) {
      ASSERT_EQ(b.total, c.r_base + b.r_sc + b.r_wer);
    } else {
      ASSERT_EQ(b.total, 0.0);
    }
  }
}

TEST(ScoreRollout, GroundTruthMiddleIsValid) {
  const auto w = noiseless_delta_world(3);
  const auto q = identity_query(w, {4, 9, 17, 2}, 1);
  const auto b = score_rollout(w, Critic::exact(w), q, q.reference_mid, RewardConfig{});
  EXPECT_TRUE(b.valid);
  EXPECT_EQ(b.wer, 0.0);
  EXPECT_EQ(b.len_dev, 0.0);
  EXPECT_EQ(b.r_sc, 0.0);
  EXPECT_EQ(b.total, 2.0);
  EXPECT_EQ(to_json(b).at("total"), 2.0);
}

TEST(ScoreRollout, SpecialIdInMiddleIsInvalid) {
  const auto w = noiseless_delta_world(3);
  const auto sp = SpecialTokens::for_world(w);
  const auto q = identity_query(w, {4, 9, 17, 2}, 1);
  TokenSeq mid = q.reference_mid;
  mid.push_back(sp.mid_bos);
  const auto b = score_rollout(w, Critic::exact(w), q, mid, RewardConfig{});
  EXPECT_FALSE(b.valid);
  EXPECT_EQ(b.total, 0.0);
  EXPECT_TRUE(to_json(b).at("r_sc").is_null());
}

TEST(ScoreRollout, EmptyMiddleForDeletion) {
  const auto w = noiseless_delta_world(3);
  const auto sp = SpecialTokens::for_world(w);
  Rng rng(4);
  const Text text{4, 9, 17, 2};
  const auto r = render(w, text, rng);
  const Utterance utt{text, r.tokens, r.alignment};
  const auto q = apply_edit_spec(w, sp, utt, EditSpec{EditKind::deletion, 1, 2, {}}, rng);
  const auto b = score_rollout(w, Critic::exact(w), q, TokenSeq{}, RewardConfig{});
  EXPECT_TRUE(b.valid);
  EXPECT_EQ(b.r_sc, 0.0);
  EXPECT_EQ(b.total, 2.0);
}

TEST(RewardConfig, Validation) {
  RewardConfig c;
  c.tau_wer = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RewardConfig{};
  c.r_base = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace psmedit
