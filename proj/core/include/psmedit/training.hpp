#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "psmedit/config.hpp"
#include "psmedit/psm_editing.hpp"
#include "psmedit/sequence_model.hpp"

namespace psmedit {

/// Builds one supervised example from an utterance, or nullopt to skip it.
using ExampleMaker = std::function<std::optional<SftExample>(const Utterance&, Rng&)>;

/// Infilling examples: PSM prompt plus MID_BOS, target S_mid + EOS.
ExampleMaker infill_examples(const SpecialTokens& sp, double max_fraction);

/// Continuation examples for a learned critic: text and prefix plus MID_BOS,
/// target everything after the prefix + EOS.
ExampleMaker continuation_examples(const SpecialTokens& sp, double max_fraction);

/// Deterministic example set, one draw per utterance, dropping examples that
/// do not fit `context_window`.
std::vector<SftExample> make_examples(std::span<const Utterance> corpus, const ExampleMaker& maker,
                                      std::uint64_t seed, int context_window);

struct SftProgress {
  std::uint64_t step = 0;
  int epoch = 0;
  double train_nll = 0.0;
  /// Set on evaluation steps only.
  std::optional<double> dev_nll;
  double grad_norm = 0.0;
};

struct SftSummary {
  std::uint64_t steps = 0;
  std::size_t skipped = 0;
  double final_dev_nll = 0.0;
};

/// Mini-batch training over fresh examples each epoch. Dev NLL is measured
/// every eval_every steps and after the last step.
SftSummary run_supervised(ModelParams& params, Optimizer& optimizer, std::span<const Utterance> corpus,
                          const ExampleMaker& maker, std::span<const SftExample> dev, const SftSchedule& schedule,
                          std::uint64_t seed, const std::function<void(const SftProgress&)>& on_progress = {});

}  // namespace psmedit
