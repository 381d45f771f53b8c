#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "psmedit/eval_harness.hpp"
#include "psmedit/grpo.hpp"
#include "psmedit/rewards.hpp"
#include "psmedit/sequence_model.hpp"
#include "psmedit/token_domain.hpp"

namespace psmedit {

struct CorpusSizes {
  int train = 20000;
  int dev = 500;
  int eval = 2000;
  CorpusConfig shape;
};

/// Backbone hyperparameters; vocabulary and layout come from the world.
struct BackboneConfig {
  int context_window = 256;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  double init_scale = 0.02;
  double output_init_scale = 0.0;
};

struct SftSchedule {
  double learning_rate = 1e-5;
  int epochs = 10;
  int batch_size = 16;
  /// Hard cap on optimizer steps; 0 means epochs alone decide.
  int max_steps = 0;
  std::string optimizer = "sgd";
  double clip_norm = 1.0;
  /// Largest middle as a fraction of the utterance's words.
  double max_fraction = 0.3;
  /// Dev NLL is logged every this many steps.
  int eval_every = 200;

  OptimizerConfig optimizer_config() const;
};

struct CriticTraining {
  BackboneConfig model;
  SftSchedule schedule;
};

struct PoolConfig {
  int size = 4000;
  QueryMix mix;
};

struct EvalConfig {
  int n_per_kind = 100;
  std::vector<int> buckets = kDefaultBuckets;
  int n_per_bucket = 60;
  SamplingConfig sampling{1.0, std::numeric_limits<int>::max(), 64, 0};
};

struct RunConfig {
  std::uint64_t seed = 0;
  /// Worker threads for rollouts and evaluation; 0 means one per core.
  int workers = 0;
  WorldConfig world;
  CorpusSizes corpus;
  BackboneConfig policy;
  CriticTraining critic;
  SftSchedule sft;
  GrpoConfig grpo;
  PoolConfig pool;
  RewardConfig rewards;
  EvalConfig eval;
  std::string work_dir = "work";
};

/// Every schema violation found in one pass.
struct ConfigErrors : ConfigError {
  explicit ConfigErrors(std::vector<std::string> errors);
  std::vector<std::string> errors;
};

/// Parses and validates JSON config text. Empty or whitespace-only text
/// gives all defaults. Unknown keys, wrong types and out-of-range values
/// are all collected before throwing ConfigErrors.
RunConfig validate_config(std::string_view text);

/// Canonical JSON of the fully-populated config.
nlohmann::json to_json(const RunConfig& c);

ModelConfig model_config(const BackboneConfig& b, int vocab_size, const LayoutMarkers& markers, std::uint64_t seed);

}  // namespace psmedit
