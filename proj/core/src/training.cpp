#include "psmedit/training.hpp"

#include <numeric>

namespace psmedit {

namespace {

bool fits(const SftExample& ex, int context_window) {
  return ex.prompt.size() + ex.target.size() <= static_cast<std::size_t>(context_window);
}

}  // namespace

ExampleMaker infill_examples(const SpecialTokens& sp, double max_fraction) {
  return [sp, max_fraction](const Utterance& utt, Rng& rng) -> std::optional<SftExample> {
    auto ex = make_training_example(sp, utt, rng, max_fraction);
    if (!ex) return std::nullopt;
    return make_sft_example(*ex);
  };
}

ExampleMaker continuation_examples(const SpecialTokens& sp, double max_fraction) {
  return [sp, max_fraction](const Utterance& utt, Rng& rng) -> std::optional<SftExample> {
    auto ex = make_training_example(sp, utt, rng, max_fraction);
    if (!ex) return std::nullopt;
    TokenSeq target = ex->query.reference_mid;
    target.insert(target.end(), ex->query.s_suf.begin(), ex->query.s_suf.end());
    target.push_back(sp.eos);
    return SftExample{ex->query.critic_input(), std::move(target)};
  };
}

std::vector<SftExample> make_examples(std::span<const Utterance> corpus, const ExampleMaker& maker,
                                      std::uint64_t seed, int context_window) {
  std::vector<SftExample> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    auto ex = maker(corpus[i], rng);
    if (ex && fits(*ex, context_window)) out.push_back(std::move(*ex));
  }
  return out;
}

SftSummary run_supervised(ModelParams& params, Optimizer& optimizer, std::span<const Utterance> corpus,
                          const ExampleMaker& maker, std::span<const SftExample> dev, const SftSchedule& schedule,
                          std::uint64_t seed, const std::function<void(const SftProgress&)>& on_progress) {
  SftSummary summary;
  const int ctx = params.config().context_window;
  auto report = [&](SftProgress p, bool eval) {
    if (eval && !dev.empty()) {
      p.dev_nll = mean_nll(params, dev);
      summary.final_dev_nll = *p.dev_nll;
    }
    if (on_progress) on_progress(p);
  };
  std::vector<std::size_t> order(corpus.size());
  std::vector<SftExample> batch;
  SftProgress last;
  bool done = false;
  for (int epoch = 0; epoch < schedule.epochs && !done; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(seed, 0x73687566ULL, epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(shuffle, 0, static_cast<std::int64_t>(i) - 1))]);
    }
    for (std::size_t k = 0; k < order.size() && !done; ++k) {
      Rng rng(derive_seed(seed, epoch, order[k]));
      auto ex = maker(corpus[order[k]], rng);
      if (!ex || !fits(*ex, ctx)) {
        ++summary.skipped;
        continue;
      }
      batch.push_back(std::move(*ex));
      if (static_cast<int>(batch.size()) < schedule.batch_size) continue;
      const auto res = sft_update(params, batch, optimizer, summary.steps);
      batch.clear();
      ++summary.steps;
      last = {summary.steps, epoch, res.mean_nll, std::nullopt, res.grad_norm};
      done = schedule.max_steps > 0 && summary.steps >= static_cast<std::uint64_t>(schedule.max_steps);
      const bool eval = summary.steps % static_cast<std::uint64_t>(schedule.eval_every) == 0;
      if (eval) {
        report(last, true);
      } else if (on_progress) {
        on_progress(last);
      }
    }
  }
  if (summary.steps == 0 || summary.steps % static_cast<std::uint64_t>(schedule.eval_every) != 0) report(last, true);
  return summary;
}

}  // namespace psmedit
