#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <new>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psmedit/common.hpp"

namespace psmedit {

/// Separator ids the model uses to derive segment and position ids from a
/// token stream. Without markers every token sits in segment 0 at its
/// absolute index.
struct LayoutMarkers {
  TokenId text_bos = -1;
  TokenId pre_sep = -1;
  TokenId suf_sep = -1;
  TokenId mid_bos = -1;
  bool operator==(const LayoutMarkers&) const = default;
};

inline constexpr int kNumSegments = 4;

/// Streaming segment/position assignment. Segment 0 holds the text block,
/// 1 the prefix, 2 the suffix and 3 the middle. Prefix and middle share one
/// timeline so the first middle token is positioned right after the prefix.
class LayoutCursor {
 public:
  LayoutCursor(std::optional<LayoutMarkers> markers, int context_window)
      : markers_(markers), max_pos_(context_window - 1) {}

  struct Slot {
    int segment;
    int position;
  };
  Slot next(TokenId token);

 private:
  std::optional<LayoutMarkers> markers_;
  int max_pos_;
  int index_ = 0;
  int segment_ = 0;
  int text_pos_ = 0;
  int timeline_ = 0;
  int suffix_pos_ = 0;
};

struct ModelConfig {
  int vocab_size = 0;
  int context_window = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  std::uint64_t seed = 0;
  double init_scale = 0.02;
  /// Std-dev of the output projection at init. Zero gives exactly uniform
  /// next-token distributions.
  double output_init_scale = 0.0;
  std::optional<LayoutMarkers> markers;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Over-aligned storage so vectorized kernels see the same alignment on
/// every allocation, which keeps floating-point results reproducible.
template <class T, std::size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;
  template <class U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{Align})); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{Align}); }
  template <class U>
  bool operator==(const AlignedAllocator<U, Align>&) const noexcept {
    return true;
  }
};

using ParamVector = std::vector<double, AlignedAllocator<double>>;

/// Flat parameter vector plus config. `version` counts applied updates.
class ModelParams {
 public:
  static ModelParams initialize(const ModelConfig& config);
  ModelParams(ModelConfig config, std::vector<double> values, std::uint64_t version);

  const ModelConfig& config() const { return config_; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  std::size_t size() const { return values_.size(); }
  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }

  bool all_finite() const;
  bool operator==(const ModelParams&) const = default;

 private:
  ModelConfig config_;
  ParamVector values_;
  std::uint64_t version_ = 0;
};

/// Immutable shared snapshot; copies are cheap and later updates to the
/// source model never reach it.
class FrozenModel {
 public:
  explicit FrozenModel(std::shared_ptr<const ModelParams> p) : p_(std::move(p)) {}
  const ModelParams& params() const { return *p_; }
  operator const ModelParams&() const { return *p_; }  // NOLINT(google-explicit-constructor)

 private:
  std::shared_ptr<const ModelParams> p_;
};

FrozenModel freeze(const ModelParams& params);

/// log pi(target_t | prompt, target_<t) for every t. Throws CapacityError
/// when |prompt| + |target| exceeds the context window.
std::vector<double> eval_logprobs(const ModelParams& params, std::span<const TokenId> prompt,
                                  std::span<const TokenId> target);

/// Full next-token distribution after `context`.
std::vector<double> next_token_probs(const ModelParams& params, std::span<const TokenId> context);

/// Receives the target log-probs and writes dL/dlogprob for each.
using LogprobWeights = std::function<void(std::span<const double> logprobs, std::span<double> weights)>;

/// Forward and backward pass for L = sum_t w_t * logprob_t, with w chosen by
/// `weights` after the forward pass. Adds dL/dparams into `grad` and returns
/// the log-probs.
std::vector<double> accumulate_logprob_gradient(const ModelParams& params, std::span<const TokenId> prompt,
                                                std::span<const TokenId> target, const LogprobWeights& weights,
                                                std::span<double> grad);

struct SamplingConfig {
  double temperature = 1.0;
  int top_k = std::numeric_limits<int>::max();
  int max_new_tokens = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SamplingConfig& c);
SamplingConfig sampling_config_from_json(const nlohmann::json& j);

struct Sample {
  /// Generated tokens, EOS stripped.
  TokenSeq tokens;
  /// Untempered model log-probs of every emitted action, EOS included.
  std::vector<double> logprobs;
  bool eos_emitted = false;

  /// tokens plus the terminating EOS when one was emitted.
  TokenSeq actions(TokenId eos) const;
};

/// Ancestral sampling with temperature and top-k. Stops at `eos`, at
/// max_new_tokens, or when the context window is full.
Sample sample(const ModelParams& params, std::span<const TokenId> prompt, const SamplingConfig& config,
              std::optional<TokenId> eos);

/// Several independent continuations of one prompt, candidate i drawn with
/// rng seed `seeds[i]`. Shares the prompt computation.
std::vector<Sample> sample_many(const ModelParams& params, std::span<const TokenId> prompt,
                                const SamplingConfig& config, std::span<const std::uint64_t> seeds,
                                std::optional<TokenId> eos);

struct OptimizerConfig {
  std::string kind = "sgd";  // "sgd" | "adam"
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;

  void validate() const;
};

nlohmann::json to_json(const OptimizerConfig& c);
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j);

class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::size_t num_params);

  /// Applies one update from `grad` (dLoss/dparams). Returns the pre-clip
  /// gradient norm.
  double step(ModelParams& params, std::span<const double> grad);

  const OptimizerConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  std::uint64_t steps() const { return t_; }

  // state access for checkpointing
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }
  void restore(std::vector<double> m, std::vector<double> v, std::uint64_t t);

 private:
  OptimizerConfig config_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

struct SftExample {
  TokenSeq prompt;
  /// Supervised continuation; ends with EOS.
  TokenSeq target;
};

struct SftStepResult {
  double mean_nll = 0.0;  // before the update
  std::size_t tokens = 0;
  double grad_norm = 0.0;
};

/// One gradient step on the token-mean NLL of the batch targets.
SftStepResult sft_update(ModelParams& params, std::span<const SftExample> batch, Optimizer& optimizer,
                         std::uint64_t batch_id = 0);
/// Plain SGD variant.
SftStepResult sft_update(ModelParams& params, std::span<const SftExample> batch, double learning_rate,
                         std::uint64_t batch_id = 0);

/// Token-mean NLL without updating.
double mean_nll(const ModelParams& params, std::span<const SftExample> batch);

// Checkpoint container. Binary: magic, format version, JSON header, raw
// little-endian doubles, trailing SHA-256 of everything before it.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  std::optional<Optimizer> optimizer;
  nlohmann::json meta;
};

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const Optimizer* optimizer,
                     const nlohmann::json& meta = nlohmann::json::object());
/// Throws FormatError on bad magic, version or checksum.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace psmedit
