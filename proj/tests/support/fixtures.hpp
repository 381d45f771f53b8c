#pragma once

#include <vector>

#include "psmedit/psm_editing.hpp"
#include "psmedit/sequence_model.hpp"
#include "psmedit/token_domain.hpp"

namespace psmedit::fixtures {

/// World with an explicit lexicon.
inline WorldSpec world_with(std::vector<TokenSeq> lexicon, int sem_vocab, std::array<double, kMaxRepeat> durations,
                            double noise) {
  WorldConfig c;
  c.word_vocab_size = static_cast<int>(lexicon.size());
  c.sem_vocab_size = sem_vocab;
  c.duration_probs = durations;
  c.noise_rate = noise;
  c.min_pron_len = 1;
  return WorldSpec(c, std::move(lexicon), 0);
}

/// Noiseless, every token rendered exactly once.
inline WorldSpec delta_world(std::vector<TokenSeq> lexicon, int sem_vocab = 16) {
  return world_with(std::move(lexicon), sem_vocab, {1.0, 0.0, 0.0}, 0.0);
}

inline const WorldSpec& desk_world() {
  static const WorldSpec w = build_world(WorldConfig{}, 7);
  return w;
}

inline ModelConfig tiny_model(int vocab, int context, std::uint64_t seed = 1, double output_scale = 0.0) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.context_window = context;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 16;
  c.seed = seed;
  c.init_scale = 0.3;
  c.output_init_scale = output_scale;
  return c;
}

}  // namespace psmedit::fixtures
