#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "psmedit/common.hpp"

namespace psmedit {

/// Repeat counts a single base token can be rendered with.
inline constexpr int kMaxRepeat = 3;

struct WorldConfig {
  int word_vocab_size = 50;
  int sem_vocab_size = 64;
  int min_pron_len = 2;
  int max_pron_len = 6;
  /// Probabilities of repeating a base token 1, 2 or 3 times.
  std::array<double, kMaxRepeat> duration_probs{0.6, 0.3, 0.1};
  double noise_rate = 0.02;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
};

/// Half-open token interval [start, end).
struct Span {
  int start = 0;
  int end = 0;
  int size() const { return end - start; }
  bool operator==(const Span&) const = default;
};

struct Alignment {
  std::vector<Span> word_spans;
  bool operator==(const Alignment&) const = default;

  /// True when the spans are contiguous, sorted and cover [0, length).
  bool tiles(int length) const;
};

/// The synthetic speech world. Immutable after construction; every oracle
/// below is a pure function of it.
class WorldSpec {
 public:
  /// Validates every invariant (non-empty in-range pronunciations, injective
  /// lexicon, normalized duration distribution, noise in [0, 0.05]).
  WorldSpec(WorldConfig config, std::vector<TokenSeq> lexicon, std::uint64_t seed);

  const WorldConfig& config() const { return config_; }
  int word_vocab_size() const { return config_.word_vocab_size; }
  int sem_vocab_size() const { return config_.sem_vocab_size; }
  double noise_rate() const { return config_.noise_rate; }
  const std::array<double, kMaxRepeat>& duration_probs() const { return config_.duration_probs; }
  std::uint64_t seed() const { return seed_; }

  const std::vector<TokenSeq>& lexicon() const { return lexicon_; }
  const TokenSeq& pronunciation(WordId w) const;
  bool valid_word(WordId w) const { return w >= 0 && w < config_.word_vocab_size; }
  bool valid_token(TokenId t) const { return t >= 0 && t < config_.sem_vocab_size; }

  /// P(emit x | intended y).
  double emission(TokenId x, TokenId intended) const {
    if (!valid_token(x)) return 0.0;
    return (x == intended ? 1.0 - config_.noise_rate : 0.0) + uniform_noise_;
  }
  /// P(another repetition | r repetitions emitted so far).
  double repeat_hazard(int r) const { return hazard_[static_cast<std::size_t>(r - 1)]; }
  int max_repeat() const { return max_repeat_; }

  bool operator==(const WorldSpec& o) const {
    return seed_ == o.seed_ && lexicon_ == o.lexicon_ &&
           config_.duration_probs == o.config_.duration_probs &&
           config_.noise_rate == o.config_.noise_rate &&
           config_.word_vocab_size == o.config_.word_vocab_size &&
           config_.sem_vocab_size == o.config_.sem_vocab_size;
  }

 private:
  WorldConfig config_;
  std::vector<TokenSeq> lexicon_;
  std::uint64_t seed_;
  double uniform_noise_;
  std::array<double, kMaxRepeat> hazard_{};
  int max_repeat_ = 1;
};

/// Samples a prefix-free lexicon in which no word starts with a phone any
/// word ends with, so a noiseless rendering parses back to exactly one text.
/// Deterministic in seed.
WorldSpec build_world(const WorldConfig& config, std::uint64_t seed);

struct Rendering {
  TokenSeq tokens;
  Alignment alignment;
};

/// Renders text: each base token repeated k ~ duration_probs times, each
/// emission replaced by a uniform random token with probability noise_rate.
Rendering render(const WorldSpec& world, std::span<const WordId> text, Rng& rng);

/// Same as render but with emissions forced clean.
Rendering render_noiseless(const WorldSpec& world, std::span<const WordId> text, Rng& rng);

/// log P(tokens | text) for a complete rendering.
double exact_loglik(const WorldSpec& world, std::span<const WordId> text,
                    std::span<const TokenId> tokens);

/// log P(rendering of text starts with tokens).
double prefix_loglik(const WorldSpec& world, std::span<const WordId> text,
                     std::span<const TokenId> tokens);

/// Per-token chain log P(tokens[t] | text, tokens[0..t)) for t >= from.
/// Once a token is impossible the remaining entries are all kNegInf.
std::vector<double> conditional_logprobs(const WorldSpec& world, std::span<const WordId> text,
                                         std::span<const TokenId> tokens, std::size_t from);

struct AsrOptions {
  /// Number of distinct lattice hypotheses rescored with exact_loglik.
  int nbest = 4;
};

/// Maximum-likelihood word sequence. Empty tokens, or tokens no text can
/// produce, decode to the empty text. Throws DomainError on ids outside
/// the semantic range.
Text asr_decode(const WorldSpec& world, std::span<const TokenId> tokens, AsrOptions options = {});

/// Word-level Levenshtein distance.
std::size_t edit_distance(std::span<const WordId> a, std::span<const WordId> b);

/// edit_distance / |ref|. Throws DomainError for an empty reference.
double wer(std::span<const WordId> ref, std::span<const WordId> hyp);

/// Viterbi word spans. Throws AlignmentError when tokens have zero
/// probability under text.
Alignment force_align(const WorldSpec& world, std::span<const WordId> text,
                      std::span<const TokenId> tokens);

/// One corpus record.
struct Utterance {
  Text text;
  TokenSeq tokens;
  Alignment alignment;
  bool operator==(const Utterance&) const = default;
};

struct CorpusConfig {
  int min_words = 4;
  int max_words = 16;
  /// Draw words without replacement inside an utterance.
  bool distinct_words = true;
};

std::vector<Utterance> generate_corpus(const WorldSpec& world, std::size_t count,
                                       const CorpusConfig& config, Rng& rng);

// Serialization. The world file is a JSON document with
// {"format": "psmedit-world", "version": 1, ...}; see docs/formats.md.

inline constexpr int kWorldFormatVersion = 1;

nlohmann::json world_to_json(const WorldSpec& world);
WorldSpec world_from_json(const nlohmann::json& j);
void save_world(const WorldSpec& world, const std::filesystem::path& path);
WorldSpec load_world(const std::filesystem::path& path);

nlohmann::json utterance_to_json(const Utterance& u);
Utterance utterance_from_json(const nlohmann::json& j);
void save_corpus(const std::vector<Utterance>& corpus, const std::filesystem::path& path);
std::vector<Utterance> load_corpus(const std::filesystem::path& path);

}  // namespace psmedit
