#include <gtest/gtest.h>

#include <algorithm>

#include <nlohmann/json.hpp>

#include "psmedit/config.hpp"

namespace psmedit {
namespace {

std::vector<std::string> errors_of(std::string_view text) {
  try {
    validate_config(text);
  } catch (const ConfigErrors& e) {
    return e.errors;
  }
  return {};
}

bool mentions(const std::vector<std::string>& errors, const std::string& needle) {
  return std::any_of(errors.begin(), errors.end(), [&](const std::string& e) { return e.find(needle) != std::string::npos; });
}

TEST(ValidateConfig, EmptyTextGivesDefaults) {
  for (std::string_view text : {"", "  \n\t", "{}"}) {
    const auto c = validate_config(text);
    EXPECT_EQ(c.grpo.group_size, 8);
    EXPECT_DOUBLE_EQ(c.grpo.kl_beta, 0.01);
    EXPECT_DOUBLE_EQ(c.grpo.learning_rate, 1e-6);
    EXPECT_EQ(c.grpo.steps, 400);
    EXPECT_EQ(c.grpo.grad_accum, 10);
    EXPECT_EQ(c.grpo.batch_queries, 4);
    EXPECT_DOUBLE_EQ(c.rewards.tau_wer, 0.2);
    EXPECT_DOUBLE_EQ(c.rewards.tau_len, 0.2);
    EXPECT_DOUBLE_EQ(c.sft.learning_rate, 1e-5);
    EXPECT_EQ(c.sft.epochs, 10);
    EXPECT_EQ(c.sft.optimizer, "sgd");
    EXPECT_EQ(c.grpo.optimizer, "sgd");
    EXPECT_EQ(c.world.word_vocab_size, 50);
    EXPECT_EQ(c.world.sem_vocab_size, 64);
    EXPECT_EQ(c.corpus.train, 20000);
    EXPECT_EQ(c.eval.buckets, kDefaultBuckets);
  }
}

TEST(ValidateConfig, OverridesApply) {
  const auto c = validate_config(R"({"seed": 42, "grpo": {"group_size": 4, "sampling": {"temperature": 0.8}},
                                     "rewards": {"tau_wer": 0.1}, "paths": {"work_dir": "out"}})");
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.grpo.group_size, 4);
  EXPECT_DOUBLE_EQ(c.grpo.sampling.temperature, 0.8);
  EXPECT_DOUBLE_EQ(c.rewards.tau_wer, 0.1);
  EXPECT_EQ(c.work_dir, "out");
  // the GRPO stream is derived from the run seed
  EXPECT_EQ(c.grpo.seed, validate_config(R"({"seed": 42})").grpo.seed);
  EXPECT_NE(c.grpo.seed, validate_config(R"({"seed": 43})").grpo.seed);
}

TEST(ValidateConfig, UnknownKeyIsNamed) {
  const auto e = errors_of(R"({"grpo": {"groupsize": 8}})");
  ASSERT_EQ(e.size(), 1u);
  EXPECT_TRUE(mentions(e, "grpo.groupsize"));
  EXPECT_TRUE(mentions(errors_of(R"({"bogus": 1})"), "bogus"));
}

TEST(ValidateConfig, RangeError) {
  const auto e = errors_of(R"({"rewards": {"tau_wer": -1}})");
  ASSERT_EQ(e.size(), 1u);
  EXPECT_TRUE(mentions(e, "rewards.tau_wer"));
}

TEST(ValidateConfig, WorldBoundsMatchWorldBuilder) {
  for (const char* text : {R"({"world": {"max_pron_len": 1, "min_pron_len": 1}})", R"({"world": {"max_pron_len": 7}})",
                           R"({"world": {"min_pron_len": 4, "max_pron_len": 3}})"}) {
    const auto e = errors_of(text);
    ASSERT_EQ(e.size(), 1u) << text;
    EXPECT_TRUE(mentions(e, "world.max_pron_len")) << text;
  }
  // anything validate_config accepts, the world builder accepts too
  EXPECT_NO_THROW(validate_config(R"({"world": {"min_pron_len": 2, "max_pron_len": 2}})").world.validate());
}

TEST(ValidateConfig, ErrorsAreExhaustive) {
  const auto e = errors_of(R"({"rewards": {"tau_wer": -1, "tau_len": "x"}, "grpo": {"group_size": 1},
                               "world": {"noise_rate": 0.5}, "nope": true})");
  EXPECT_EQ(e.size(), 5u);
  EXPECT_TRUE(mentions(e, "rewards.tau_wer"));
  EXPECT_TRUE(mentions(e, "rewards.tau_len"));
  EXPECT_TRUE(mentions(e, "grpo.group_size"));
  EXPECT_TRUE(mentions(e, "world.noise_rate"));
  EXPECT_TRUE(mentions(e, "nope"));
}

TEST(ValidateConfig, MalformedTextIsAConfigError) {
  EXPECT_THROW(validate_config("{"), ConfigError);
  EXPECT_THROW(validate_config("[1, 2]"), ConfigError);
}

TEST(ValidateConfig, SnapshotRoundTrips) {
  const auto c = validate_config(R"({"seed": 9, "sft": {"learning_rate": 0.001, "max_steps": 50}})");
  const auto again = validate_config(to_json(c).dump());
  EXPECT_EQ(to_json(again).dump(), to_json(c).dump());
  // canonical snapshot: keys sorted, so identical configs serialize identically
  EXPECT_EQ(to_json(validate_config("")).dump(), to_json(validate_config("{}")).dump());
}

TEST(ModelConfig, FromBackbone) {
  BackboneConfig b;
  b.n_layers = 3;
  const auto m = model_config(b, 120, LayoutMarkers{64, 66, 67, 68}, 5);
  EXPECT_EQ(m.vocab_size, 120);
  EXPECT_EQ(m.n_layers, 3);
  EXPECT_EQ(m.context_window, 256);
  EXPECT_EQ(m.seed, 5u);
  EXPECT_NO_THROW(m.validate());
}

}  // namespace
}  // namespace psmedit
