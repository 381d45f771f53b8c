#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "fixtures.hpp"
#include "psmedit/token_domain.hpp"

namespace psmedit {
namespace {

using fixtures::delta_world;
using fixtures::desk_world;
using fixtures::world_with;

Text random_text(const WorldSpec& w, int len, Rng& rng) {
  Text t;
  for (int i = 0; i < len; ++i) t.push_back(static_cast<WordId>(uniform_int(rng, 0, w.word_vocab_size() - 1)));
  return t;
}

TEST(BuildWorld, DeskWorldHasInjectiveInRangeLexicon) {
  const auto w = build_world(WorldConfig{}, 7);
  ASSERT_EQ(w.lexicon().size(), 50u);
  std::set<TokenSeq> distinct(w.lexicon().begin(), w.lexicon().end());
  EXPECT_EQ(distinct.size(), 50u);
  for (const auto& p : w.lexicon()) {
    EXPECT_GE(p.size(), 2u);
    EXPECT_LE(p.size(), 6u);
    for (TokenId t : p) EXPECT_TRUE(w.valid_token(t));
  }
}

TEST(BuildWorld, LexiconIsPrefixFreeWithDisjointBoundaryPhones) {
  for (std::uint64_t seed : {1u, 7u, 99u}) {
    const auto w = build_world(WorldConfig{}, seed);
    std::set<TokenId> firsts, lasts;
    for (const auto& p : w.lexicon()) {
      firsts.insert(p.front());
      lasts.insert(p.back());
      for (std::size_t k = 1; k < p.size(); ++k) EXPECT_NE(p[k], p[k - 1]);
      for (const auto& q : w.lexicon()) {
        if (&p == &q) continue;
        EXPECT_FALSE(q.size() >= p.size() && std::equal(p.begin(), p.end(), q.begin()));
      }
    }
    for (TokenId t : firsts) EXPECT_EQ(lasts.count(t), 0u);
  }
}

TEST(BuildWorld, SmallestValidWorld) {
  WorldConfig c;
  c.word_vocab_size = 2;
  c.sem_vocab_size = 8;
  const auto w = build_world(c, 0);
  EXPECT_EQ(w.lexicon().size(), 2u);
  EXPECT_NE(w.lexicon()[0], w.lexicon()[1]);
}

TEST(BuildWorld, DeterministicInSeed) {
  EXPECT_EQ(build_world(WorldConfig{}, 7), build_world(WorldConfig{}, 7));
  EXPECT_FALSE(build_world(WorldConfig{}, 7) == build_world(WorldConfig{}, 8));
}

TEST(BuildWorld, RejectsBadConfigNamingField) {
  WorldConfig c;
  c.word_vocab_size = 1;
  try {
    build_world(c, 0);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("word_vocab_size"), std::string::npos);
  }
  c = WorldConfig{};
  c.sem_vocab_size = 7;
  EXPECT_THROW(build_world(c, 0), ConfigError);
  c = WorldConfig{};
  c.duration_probs = {0.5, 0.3, 0.1};
  EXPECT_THROW(build_world(c, 0), ConfigError);
  c = WorldConfig{};
  c.noise_rate = 0.06;
  EXPECT_THROW(build_world(c, 0), ConfigError);
}

TEST(WorldSpec, RejectsNonInjectiveLexicon) {
  EXPECT_THROW(delta_world({{1, 2}, {1, 2}}), ConfigError);
  EXPECT_THROW(delta_world({{1, 2}, {}}), ConfigError);
  EXPECT_THROW(delta_world({{1, 20}}), ConfigError);
}

TEST(Render, DegenerateDistributions) {
  Rng rng(1);
  const auto once = delta_world({{3, 9}});
  const Text w{0};
  auto r = render(once, w, rng);
  EXPECT_EQ(r.tokens, (TokenSeq{3, 9}));
  EXPECT_EQ(r.alignment.word_spans, (std::vector<Span>{{0, 2}}));
  const auto twice = world_with({{3, 9}}, 16, {0.0, 1.0, 0.0}, 0.0);
  EXPECT_EQ(render(twice, w, rng).tokens, (TokenSeq{3, 3, 9, 9}));
}

TEST(Render, SpansTileOnRandomDraws) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const auto text = random_text(desk_world(), 5, rng);
    const auto r = render(desk_world(), text, rng);
    ASSERT_EQ(r.alignment.word_spans.size(), 5u);
    // tiling oracle: contiguous from 0, ends at length, each span non-empty
    int cursor = 0;
    for (const auto& s : r.alignment.word_spans) {
      ASSERT_EQ(s.start, cursor);
      ASSERT_GT(s.end, s.start);
      cursor = s.end;
    }
    ASSERT_EQ(cursor, static_cast<int>(r.tokens.size()));
    ASSERT_TRUE(r.alignment.tiles(static_cast<int>(r.tokens.size())));
  }
}

TEST(Render, RejectsInvalidInput) {
  Rng rng(1);
  const Text bad{99};
  EXPECT_THROW(render(desk_world(), bad, rng), DomainError);
  EXPECT_THROW(render(desk_world(), Text{}, rng), DomainError);
}

TEST(ExactLoglik, CertainAndImpossibleOutcomes) {
  const auto w = delta_world({{3, 9}});
  const Text t{0};
  const TokenSeq ok{3, 9};
  const TokenSeq bad{3, 8};
  EXPECT_EQ(exact_loglik(w, t, ok), 0.0);
  EXPECT_TRUE(is_neg_inf(exact_loglik(w, t, bad)));
  EXPECT_TRUE(is_neg_inf(exact_loglik(w, t, TokenSeq{3})));
}

TEST(ExactLoglik, MatchesEnumerationOnSingleWordMicroWorld) {
  const auto w = world_with({{0, 1}}, 3, {0.6, 0.4, 0.0}, 0.03);
  const Text t{0};
  for (const auto& seq : oracle::all_sequences(3, 5)) {
    const double expected = oracle::enumerate_likelihood(w, t, seq);
    const double got = std::exp(exact_loglik(w, t, seq));
    ASSERT_NEAR(got, expected, 1e-9);
  }
}

struct MicroCase {
  std::vector<TokenSeq> lexicon;
  Text text;
  std::array<double, kMaxRepeat> durations;
  double noise;
};

std::vector<MicroCase> micro_cases() {
  return {
      {{{0, 1, 2}, {1}}, {0, 1}, {0.5, 0.3, 0.2}, 0.05},
      {{{0, 1}, {2, 0}}, {1, 0}, {0.7, 0.2, 0.1}, 0.0},
      {{{2}, {0, 1}}, {0, 1}, {0.2, 0.8, 0.0}, 0.02},
      {{{0, 2, 1}}, {0}, {0.1, 0.1, 0.8}, 0.05},
      {{{1, 0}, {0, 1, 2}}, {0}, {1.0, 0.0, 0.0}, 0.01},
  };
}

TEST(ExactLoglik, ForwardEqualsEnumerationOnMicroWorlds) {
  for (const auto& mc : micro_cases()) {
    const auto w = world_with(mc.lexicon, 3, mc.durations, mc.noise);
    for (const auto& seq : oracle::all_sequences(3, 8)) {
      const double expected = oracle::enumerate_likelihood(w, mc.text, seq);
      const double ll = exact_loglik(w, mc.text, seq);
      if (expected == 0.0) {
        ASSERT_TRUE(is_neg_inf(ll));
      } else {
        ASSERT_NEAR(std::exp(ll), expected, 1e-9);
      }
    }
  }
}

TEST(ExactLoglik, NormalizesOverAllSequences) {
  for (const auto& mc : micro_cases()) {
    const auto w = world_with(mc.lexicon, 3, mc.durations, mc.noise);
    std::size_t phones = 0;
    for (WordId x : mc.text) phones += w.pronunciation(x).size();
    double total = 0.0;
    for (const auto& seq : oracle::all_sequences(3, static_cast<int>(phones) * kMaxRepeat)) {
      const double ll = exact_loglik(w, mc.text, seq);
      if (!is_neg_inf(ll)) total += std::exp(ll);
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(PrefixLoglik, MatchesEnumeration) {
  for (const auto& mc : micro_cases()) {
    const auto w = world_with(mc.lexicon, 3, mc.durations, mc.noise);
    for (const auto& seq : oracle::all_sequences(3, 5)) {
      const double expected = oracle::enumerate_prefix_probability(w, mc.text, seq);
      const double ll = prefix_loglik(w, mc.text, seq);
      if (expected == 0.0) {
        ASSERT_TRUE(is_neg_inf(ll));
      } else {
        ASSERT_NEAR(std::exp(ll), expected, 1e-9);
      }
    }
  }
}

TEST(ConditionalLogprobs, ChainOfPrefixRatios) {
  const auto& w = desk_world();
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const auto text = random_text(w, 4, rng);
    const auto r = render(w, text, rng);
    const std::size_t from = r.tokens.size() / 2;
    const auto cond = conditional_logprobs(w, text, r.tokens, from);
    ASSERT_EQ(cond.size(), r.tokens.size() - from);
    double sum = 0.0;
    for (double c : cond) sum += c;
    const double full = prefix_loglik(w, text, r.tokens);
    const double head = prefix_loglik(w, text, std::span<const TokenId>(r.tokens).first(from));
    EXPECT_NEAR(sum, full - head, 1e-9);
  }
}

TEST(AsrDecode, NoiselessRoundTrip) {
  WorldConfig c;
  c.noise_rate = 0.0;
  const auto w = build_world(c, 7);
  Rng rng(21);
  for (int i = 0; i < 1000; ++i) {
    const auto text = random_text(w, static_cast<int>(uniform_int(rng, 1, 12)), rng);
    const auto r = render(w, text, rng);
    ASSERT_EQ(asr_decode(w, r.tokens), text) << "utterance " << i;
  }
}

TEST(AsrDecode, EmptyTokensGiveEmptyText) { EXPECT_TRUE(asr_decode(desk_world(), TokenSeq{}).empty()); }

TEST(AsrDecode, RejectsOutOfRangeTokens) {
  EXPECT_THROW(asr_decode(desk_world(), TokenSeq{1, 64}), DomainError);
}

TEST(AsrDecode, TiesPreferLexicographicallySmallest) {
  // [1,2] is both word 0 and words 1,2
  const auto w = delta_world({{1, 2}, {1}, {2}});
  EXPECT_EQ(asr_decode(w, TokenSeq{1, 2}), (Text{0}));
}

TEST(AsrDecode, BeatsRandomLexiconBaselineOnNoisyRenderings) {
  const auto& w = desk_world();
  const auto other = build_world(WorldConfig{}, 12345);
  Rng rng(31);
  double ours = 0.0, baseline = 0.0;
  for (int i = 0; i < 500; ++i) {
    const auto text = random_text(w, 6, rng);
    const auto r = render(w, text, rng);
    ours += wer(text, asr_decode(w, r.tokens));
    baseline += wer(text, asr_decode(other, r.tokens));
  }
  ours /= 500;
  baseline /= 500;
  EXPECT_LT(ours, baseline);
  EXPECT_LT(ours, 0.05);
  EXPECT_GT(baseline, 0.5);
}

TEST(Wer, Examples) {
  EXPECT_EQ(wer(Text{1, 2, 3}, Text{1, 2, 3}), 0.0);
  EXPECT_DOUBLE_EQ(wer(Text{1, 2, 3, 4}, Text{1, 9, 3}), 0.5);
  EXPECT_DOUBLE_EQ(wer(Text{1}, Text{2, 3, 4}), 3.0);
  EXPECT_THROW(wer(Text{}, Text{1}), DomainError);
}

TEST(Wer, MatchesRecursiveEditScriptsOnRandomPairs) {
  Rng rng(41);
  for (int i = 0; i < 10000; ++i) {
    Text a, b;
    const auto la = uniform_int(rng, 1, 4), lb = uniform_int(rng, 0, 4);
    for (int k = 0; k < la; ++k) a.push_back(static_cast<WordId>(uniform_int(rng, 0, 2)));
    for (int k = 0; k < lb; ++k) b.push_back(static_cast<WordId>(uniform_int(rng, 0, 2)));
    const auto d = oracle::recursive_edit_distance(a, b);
    ASSERT_EQ(edit_distance(a, b), d);
    ASSERT_DOUBLE_EQ(wer(a, b), static_cast<double>(d) / static_cast<double>(a.size()));
    ASSERT_EQ(wer(a, a), 0.0);
  }
}

TEST(ForceAlign, UniqueParse) {
  const auto w = delta_world({{3, 9}, {4}});
  const auto a = force_align(w, Text{0, 1}, TokenSeq{3, 9, 4});
  EXPECT_EQ(a.word_spans, (std::vector<Span>{{0, 2}, {2, 3}}));
}

TEST(ForceAlign, InfeasibleTokensThrow) {
  const auto w = delta_world({{3, 9}, {4}});
  EXPECT_THROW(force_align(w, Text{0, 1}, TokenSeq{3, 9, 5}), AlignmentError);
}

TEST(ForceAlign, RecoversRenderingSpansWhenNoiseless) {
  WorldConfig c;
  c.noise_rate = 0.0;
  const auto w = build_world(c, 7);
  Rng rng(51);
  for (int i = 0; i < 1000; ++i) {
    const auto text = random_text(w, static_cast<int>(uniform_int(rng, 1, 8)), rng);
    const auto r = render(w, text, rng);
    ASSERT_EQ(force_align(w, text, r.tokens), r.alignment) << "utterance " << i;
  }
}

TEST(ForceAlign, SpansConcatenateToSequence) {
  const auto& w = desk_world();
  Rng rng(61);
  for (int i = 0; i < 200; ++i) {
    const auto text = random_text(w, 6, rng);
    const auto r = render(w, text, rng);
    const auto a = force_align(w, text, r.tokens);
    TokenSeq joined;
    for (const auto& s : a.word_spans) joined.insert(joined.end(), r.tokens.begin() + s.start, r.tokens.begin() + s.end);
    ASSERT_EQ(joined, r.tokens);
  }
}

TEST(Corpus, DistinctWordsAndSerializationRoundTrip) {
  Rng rng(71);
  const auto corpus = generate_corpus(desk_world(), 50, CorpusConfig{}, rng);
  ASSERT_EQ(corpus.size(), 50u);
  for (const auto& u : corpus) {
    std::set<WordId> ws(u.text.begin(), u.text.end());
    EXPECT_EQ(ws.size(), u.text.size());
    EXPECT_GE(u.text.size(), 4u);
    EXPECT_LE(u.text.size(), 16u);
    EXPECT_TRUE(u.alignment.tiles(static_cast<int>(u.tokens.size())));
  }
  const auto dir = std::filesystem::temp_directory_path() / "psmedit_corpus_test";
  std::filesystem::create_directories(dir);
  save_corpus(corpus, dir / "c.jsonl");
  EXPECT_EQ(load_corpus(dir / "c.jsonl"), corpus);
  save_world(desk_world(), dir / "w.json");
  EXPECT_EQ(load_world(dir / "w.json"), desk_world());
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace psmedit
