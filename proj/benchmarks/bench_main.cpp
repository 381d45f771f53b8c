#include <benchmark/benchmark.h>

#include "psmedit/psm_editing.hpp"
#include "psmedit/rewards.hpp"
#include "psmedit/sequence_model.hpp"
#include "psmedit/token_domain.hpp"

namespace {

using namespace psmedit;

const WorldSpec& desk_world() {
  static const WorldSpec w = build_world(WorldConfig{}, 7);
  return w;
}

Utterance utterance(int words) {
  Rng rng(3);
  CorpusConfig cc;
  cc.min_words = cc.max_words = words;
  return generate_corpus(desk_world(), 1, cc, rng).front();
}

void BM_ExactLoglik(benchmark::State& state) {
  const auto u = utterance(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(exact_loglik(desk_world(), u.text, u.tokens));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(u.tokens.size()));
}
BENCHMARK(BM_ExactLoglik)->Arg(4)->Arg(10)->Arg(16);

void BM_AsrDecode(benchmark::State& state) {
  const auto u = utterance(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(asr_decode(desk_world(), u.tokens));
}
BENCHMARK(BM_AsrDecode)->Arg(4)->Arg(10)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_ForceAlign(benchmark::State& state) {
  const auto u = utterance(10);
  for (auto _ : state) benchmark::DoNotOptimize(force_align(desk_world(), u.text, u.tokens));
}
BENCHMARK(BM_ForceAlign);

struct ModelFixture {
  SpecialTokens sp = SpecialTokens::for_world(desk_world());
  ModelParams params;
  SftExample example;

  explicit ModelFixture(int layers)
      : params(ModelParams::initialize([&] {
          ModelConfig c;
          c.vocab_size = sp.vocab_size();
          c.context_window = 256;
          c.n_layers = layers;
          c.markers = sp.markers();
          c.output_init_scale = 0.02;
          return c;
        }())) {
    Rng rng(5);
    auto ex = make_training_example(sp, utterance(10), rng);
    example = make_sft_example(*ex);
  }
};

void BM_EvalLogprobs(benchmark::State& state) {
  ModelFixture f(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(eval_logprobs(f.params, f.example.prompt, f.example.target));
}
BENCHMARK(BM_EvalLogprobs)->Arg(2)->Arg(3)->Unit(benchmark::kMicrosecond);

void BM_SftUpdate(benchmark::State& state) {
  ModelFixture f(static_cast<int>(state.range(0)));
  std::vector<SftExample> batch(1, f.example);
  for (auto _ : state) benchmark::DoNotOptimize(sft_update(f.params, batch, 0.0));
}
BENCHMARK(BM_SftUpdate)->Arg(2)->Arg(3)->Unit(benchmark::kMicrosecond);

void BM_Sample(benchmark::State& state) {
  ModelFixture f(2);
  SamplingConfig sc;
  sc.max_new_tokens = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample(f.params, f.example.prompt, sc, std::nullopt));
    ++sc.seed;
  }
}
BENCHMARK(BM_Sample)->Arg(8)->Arg(32)->Unit(benchmark::kMicrosecond);

void BM_ScoreRollout(benchmark::State& state) {
  const auto& w = desk_world();
  const auto sp = SpecialTokens::for_world(w);
  Rng rng(9);
  const auto ex = *make_training_example(sp, utterance(10), rng);
  const auto critic = Critic::exact(w);
  const RewardConfig rc;
  for (auto _ : state) benchmark::DoNotOptimize(score_rollout(w, critic, ex.query, ex.query.reference_mid, rc));
}
BENCHMARK(BM_ScoreRollout)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
