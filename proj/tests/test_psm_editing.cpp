#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "psmedit/psm_editing.hpp"
#include "psmedit/training.hpp"

namespace psmedit {
namespace {

using fixtures::delta_world;
using fixtures::desk_world;

Utterance utterance_of(const WorldSpec& w, Text text, std::uint64_t seed = 1) {
  Rng rng(seed);
  auto r = render(w, text, rng);
  return {std::move(text), std::move(r.tokens), std::move(r.alignment)};
}

TokenSeq slice(const TokenSeq& s, int a, int b) { return TokenSeq(s.begin() + a, s.begin() + b); }

TEST(SpecialTokens, DisjointRanges) {
  const auto sp = SpecialTokens::for_world(desk_world());
  const std::set<TokenId> ids{sp.text_bos, sp.text_eos, sp.pre_sep, sp.suf_sep, sp.mid_bos, sp.eos};
  EXPECT_EQ(ids.size(), 6u);
  for (TokenId t : ids) {
    EXPECT_TRUE(sp.is_special(t));
    EXPECT_FALSE(sp.is_semantic(t));
    EXPECT_FALSE(sp.is_text(t));
  }
  EXPECT_EQ(sp.encode_word(0), sp.text_offset);
  EXPECT_EQ(sp.vocab_size(), 64 + 6 + 50);
  EXPECT_THROW(sp.encode_word(50), DomainError);
}

TEST(TrainingExample, ThreeWordSlicing) {
  const auto w = delta_world({{1, 2}, {3}, {4, 5, 6}});
  const auto sp = SpecialTokens::for_world(w);
  const auto utt = utterance_of(w, {0, 1, 2});
  // a 3-word utterance at 30% allows exactly one word in the middle
  bool saw_middle_word = false;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto ex = make_training_example(sp, utt, rng);
    ASSERT_TRUE(ex.has_value());
    ASSERT_EQ(ex->word_region.size(), 1);
    if (ex->word_region.start != 1) continue;
    saw_middle_word = true;
    EXPECT_EQ(ex->query.s_pre, (TokenSeq{1, 2}));
    EXPECT_EQ(ex->query.reference_mid, (TokenSeq{3}));
    EXPECT_EQ(ex->query.s_suf, (TokenSeq{4, 5, 6}));
    EXPECT_EQ(ex->target, (TokenSeq{3, sp.eos}));
  }
  EXPECT_TRUE(saw_middle_word);
}

TEST(TrainingExample, TooShortUtteranceIsSkipped) {
  const auto w = delta_world({{1, 2}, {3}});
  const auto sp = SpecialTokens::for_world(w);
  Rng rng(1);
  EXPECT_FALSE(make_training_example(sp, utterance_of(w, {0, 1}), rng).has_value());
}

TEST(TrainingExample, PartitionAndLayoutInvariants) {
  const auto& w = desk_world();
  const auto sp = SpecialTokens::for_world(w);
  Rng rng(3);
  const auto corpus = generate_corpus(w, 500, CorpusConfig{}, rng);
  for (const auto& utt : corpus) {
    const auto ex = make_training_example(sp, utt, rng);
    ASSERT_TRUE(ex.has_value());
    const auto& q = ex->query;
    TokenSeq joined = q.s_pre;
    joined.insert(joined.end(), q.reference_mid.begin(), q.reference_mid.end());
    joined.insert(joined.end(), q.s_suf.begin(), q.s_suf.end());
    ASSERT_EQ(joined, utt.tokens);
    ASSERT_EQ(q.target_text, utt.text);

    // layout scan: specials only at their slots, text block all text ids,
    // both audio blocks all semantic ids
    const std::size_t n = utt.text.size();
    ASSERT_EQ(q.q.size(), n + 4 + q.s_pre.size() + q.s_suf.size());
    EXPECT_EQ(q.q[0], sp.text_bos);
    for (std::size_t i = 1; i <= n; ++i) EXPECT_TRUE(sp.is_text(q.q[i]));
    EXPECT_EQ(q.q[n + 1], sp.text_eos);
    EXPECT_EQ(q.q[n + 2], sp.pre_sep);
    const std::size_t suf_sep = n + 3 + q.s_pre.size();
    EXPECT_EQ(q.q[suf_sep], sp.suf_sep);
    for (std::size_t i = n + 3; i < q.q.size(); ++i) {
      if (i != suf_sep) EXPECT_TRUE(sp.is_semantic(q.q[i]));
    }
    // critic prompt is q without the suffix block
    EXPECT_EQ(q.critic_prompt, slice(q.q, 0, static_cast<int>(suf_sep)));
    EXPECT_EQ(q.policy_input().back(), sp.mid_bos);
    EXPECT_EQ(q.critic_input().back(), sp.mid_bos);
  }
}

TEST(TrainingExample, MiddleLengthSupport) {
  const auto& w = desk_world();
  const auto sp = SpecialTokens::for_world(w);
  Rng rng(5);
  const auto corpus = generate_corpus(w, 1000, CorpusConfig{}, rng);
  std::map<int, int> word_counts;
  for (int i = 0; i < 10000; ++i) {
    const auto& utt = corpus[static_cast<std::size_t>(i) % corpus.size()];
    const auto ex = make_training_example(sp, utt, rng);
    ASSERT_TRUE(ex.has_value());
    const int n = static_cast<int>(utt.text.size());
    const int k = ex->word_region.size();
    const int k_max = static_cast<int>(std::ceil(0.3 * n));
    ASSERT_GE(k, 1);
    ASSERT_LE(k, k_max);
    ++word_counts[k];
    std::vector<int> spans;
    for (const auto& s : utt.alignment.word_spans) spans.push_back(s.size());
    std::sort(spans.begin(), spans.end());
    int longest = 0;
    for (int j = 0; j < k_max; ++j) longest += spans[spans.size() - 1 - static_cast<std::size_t>(j)];
    const int mid = ex->query.gt_mid_len();
    ASSERT_GE(mid, spans.front());
    ASSERT_LE(mid, longest);
  }
  // 16-word utterances allow up to 5 words
  EXPECT_EQ(word_counts.rbegin()->first, 5);
  EXPECT_GT(word_counts[1], word_counts[5]);
}

TEST(ApplyEditSpec, DeletionDropsWord) {
  const auto w = delta_world({{1, 2}, {3}, {4, 5, 6}, {7}});
  const auto sp = SpecialTokens::for_world(w);
  const auto utt = utterance_of(w, {0, 1, 2, 3});
  Rng rng(1);
  const auto q = apply_edit_spec(w, sp, utt, EditSpec{EditKind::deletion, 2, 3, {}}, rng);
  EXPECT_EQ(q.target_text, (Text{0, 1, 3}));
  EXPECT_EQ(q.s_pre, (TokenSeq{1, 2, 3}));
  EXPECT_EQ(q.s_suf, (TokenSeq{7}));
  EXPECT_EQ(q.gt_mid_len(), 0);
}

TEST(ApplyEditSpec, IdentitySubstitutionKeepsText) {
  const auto& w = desk_world();
  const auto sp = SpecialTokens::for_world(w);
  Rng rng(9);
  const auto corpus = generate_corpus(w, 100, CorpusConfig{}, rng);
  for (const auto& utt : corpus) {
    const int j = static_cast<int>(uniform_int(rng, 0, static_cast<std::int64_t>(utt.text.size()) - 1));
    const auto q = apply_edit_spec(w, sp, utt, EditSpec{EditKind::substitution, j, j + 1, {utt.text[j]}}, rng);
    EXPECT_EQ(q.target_text, utt.text);
    const auto& span = utt.alignment.word_spans[static_cast<std::size_t>(j)];
    EXPECT_EQ(q.s_pre, slice(utt.tokens, 0, span.start));
    EXPECT_EQ(q.s_suf, slice(utt.tokens, span.end, static_cast<int>(utt.tokens.size())));
    // the reference is a clean rendering of the word: collapsing runs gives
    // its pronunciation
    TokenSeq collapsed;
    for (TokenId t : q.reference_mid) {
      if (collapsed.empty() || collapsed.back() != t) collapsed.push_back(t);
    }
    EXPECT_EQ(collapsed, w.pronunciation(utt.text[j]));
    EXPECT_FALSE(is_neg_inf(exact_loglik(w, Text{utt.text[j]}, q.reference_mid)));
  }
}

TEST(ApplyEditSpec, InsertionBoundaryConvention) {
  const auto w = delta_world({{1, 2}, {3}, {4, 5, 6}, {7}});
  const auto sp = SpecialTokens::for_world(w);
  const auto utt = utterance_of(w, {0, 1, 2});
  Rng rng(1);
  const auto q = apply_edit_spec(w, sp, utt, EditSpec{EditKind::insertion, 2, 2, {3}}, rng);
  EXPECT_EQ(q.target_text, (Text{0, 1, 3, 2}));
  EXPECT_EQ(q.s_pre, (TokenSeq{1, 2, 3}));
  EXPECT_EQ(q.s_suf, (TokenSeq{4, 5, 6}));
  EXPECT_EQ(q.reference_mid, (TokenSeq{7}));
}

TEST(ApplyEditSpec, InvalidRegionsThrow) {
  const auto w = delta_world({{1, 2}, {3}, {4, 5, 6}, {7}});
  const auto sp = SpecialTokens::for_world(w);
  const auto utt = utterance_of(w, {0, 1, 2});
  Rng rng(1);
  EXPECT_THROW(apply_edit_spec(w, sp, utt, EditSpec{EditKind::deletion, 2, 4, {}}, rng), DomainError);
  EXPECT_THROW(apply_edit_spec(w, sp, utt, EditSpec{EditKind::insertion, 1, 2, {3}}, rng), DomainError);
  EXPECT_THROW(apply_edit_spec(w, sp, utt, EditSpec{EditKind::insertion, 1, 1, {}}, rng), DomainError);
  EXPECT_THROW(apply_edit_spec(w, sp, utt, EditSpec{EditKind::deletion, 1, 2, {3}}, rng), DomainError);
  EXPECT_THROW(apply_edit_spec(w, sp, utt, EditSpec{EditKind::substitution, 1, 1, {3}}, rng), DomainError);
  EXPECT_THROW(apply_edit_spec(w, sp, utt, EditSpec{EditKind::substitution, 0, 1, {9}}, rng), DomainError);
}

TEST(RandomEditSpec, ReplacementsAreFreshAndSizesInRange) {
  const auto& w = desk_world();
  Rng rng(13);
  const auto corpus = generate_corpus(w, 200, CorpusConfig{}, rng);
  for (const auto kind : {EditKind::insertion, EditKind::deletion, EditKind::substitution}) {
    const auto sizes = default_edit_sizes(kind);
    for (const auto& utt : corpus) {
      const auto e = random_edit_spec(w, utt, kind, rng);
      ASSERT_TRUE(e.has_value());
      EXPECT_NO_THROW(e->validate(static_cast<int>(utt.text.size())));
      const int k = kind == EditKind::insertion ? static_cast<int>(e->replacement.size()) : e->region_end - e->region_start;
      EXPECT_GE(k, sizes.min_words);
      EXPECT_LE(k, sizes.max_words);
      for (WordId x : e->replacement) EXPECT_EQ(std::count(utt.text.begin(), utt.text.end(), x), 0);
    }
  }
}

TEST(Splice, Examples) {
  EditQuery q;
  q.s_pre = {1, 2};
  q.s_suf = {5};
  EXPECT_EQ(splice(q, TokenSeq{3, 4}), (TokenSeq{1, 2, 3, 4, 5}));
  EXPECT_EQ(splice(q, TokenSeq{}), (TokenSeq{1, 2, 5}));
}

TEST(Splice, GroundTruthRestoresIdentityEdit) {
  const auto w = delta_world({{1, 2}, {3}, {4, 5, 6}, {7}});
  const auto sp = SpecialTokens::for_world(w);
  const auto utt = utterance_of(w, {3, 0, 2});
  Rng rng(1);
  const auto q = apply_edit_spec(w, sp, utt, EditSpec{EditKind::substitution, 1, 2, {0}}, rng);
  EXPECT_EQ(splice(q, q.reference_mid), utt.tokens);
  const auto s = splice(q, TokenSeq{9, 9, 9});
  EXPECT_EQ(s.size(), q.s_pre.size() + 3 + q.s_suf.size());
}

TEST(Infill, DeterministicAndCapped) {
  const auto& w = desk_world();
  const auto sp = SpecialTokens::for_world(w);
  ModelConfig base = fixtures::tiny_model(0, 256, 3, 1.0);
  const auto policy = ModelParams::initialize(policy_model_config(sp, base));
  Rng rng(17);
  const auto utt = generate_corpus(w, 1, CorpusConfig{}, rng)[0];
  const auto ex = make_training_example(sp, utt, rng);
  SamplingConfig sc;
  sc.top_k = 1;
  sc.max_new_tokens = 7;
  const auto a = infill(policy, sp, ex->query, sc);
  EXPECT_EQ(a, infill(policy, sp, ex->query, sc));
  EXPECT_LE(a.size(), 7u);
  sc.top_k = std::numeric_limits<int>::max();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    sc.seed = seed;
    EXPECT_LE(infill(policy, sp, ex->query, sc).size(), 7u);
  }
}

TEST(Infill, ContextOverflowThrows) {
  const auto& w = desk_world();
  const auto sp = SpecialTokens::for_world(w);
  const auto policy = ModelParams::initialize(policy_model_config(sp, fixtures::tiny_model(0, 16)));
  Rng rng(17);
  const auto utt = generate_corpus(w, 1, CorpusConfig{}, rng)[0];
  const auto ex = make_training_example(sp, utt, rng);
  EXPECT_THROW(infill(policy, sp, ex->query, SamplingConfig{}), CapacityError);
}

TEST(Infill, MicroWorldSftReproducesIdentityMiddles) {
  WorldConfig wc;
  wc.word_vocab_size = 6;
  wc.sem_vocab_size = 12;
  wc.max_pron_len = 3;
  wc.duration_probs = {1.0, 0.0, 0.0};
  wc.noise_rate = 0.0;
  const auto w = build_world(wc, 3);
  const auto sp = SpecialTokens::for_world(w);
  CorpusConfig cc;
  cc.min_words = 3;
  cc.max_words = 5;
  Rng rng(23);
  const auto corpus = generate_corpus(w, 2000, cc, rng);
  ModelConfig base;
  base.context_window = 48;
  base.d_model = 32;
  base.n_heads = 4;
  base.d_ff = 64;
  base.seed = 5;
  auto policy = ModelParams::initialize(policy_model_config(sp, base));
  SftSchedule sched;
  sched.learning_rate = 3e-3;
  sched.batch_size = 8;
  sched.epochs = 20;
  sched.max_steps = 5000;
  sched.eval_every = 5000;
  sched.optimizer = "adam";
  Optimizer opt(sched.optimizer_config(), policy.size());
  run_supervised(policy, opt, corpus, infill_examples(sp, 0.3), {}, sched, 7);

  SamplingConfig greedy;
  greedy.top_k = 1;
  greedy.max_new_tokens = 8;
  int exact = 0;
  const int n = 50;
  for (int i = 0; i < n; ++i) {
    const auto& utt = corpus[static_cast<std::size_t>(i)];
    const int j = static_cast<int>(uniform_int(rng, 0, static_cast<std::int64_t>(utt.text.size()) - 1));
    const auto q = apply_edit_spec(w, sp, utt, EditSpec{EditKind::substitution, j, j + 1, {utt.text[j]}}, rng);
    exact += infill(policy, sp, q, greedy) == q.reference_mid ? 1 : 0;
  }
  EXPECT_EQ(exact, n);
}

TEST(Serialization, EditSpecAndQueryRoundTrip) {
  const auto& w = desk_world();
  const auto sp = SpecialTokens::for_world(w);
  Rng rng(29);
  const auto utt = generate_corpus(w, 1, CorpusConfig{}, rng)[0];
  const auto e = random_edit_spec(w, utt, EditKind::insertion, rng).value();
  EXPECT_EQ(edit_spec_from_json(to_json(e)), e);
  const auto q = apply_edit_spec(w, sp, utt, e, rng);
  EXPECT_EQ(edit_query_from_json(to_json(q)), q);
  auto broken = to_json(q);
  broken["critic_prompt"].push_back(1);
  EXPECT_THROW(edit_query_from_json(broken), FormatError);
  EXPECT_EQ(edit_kind_from_string("deletion"), EditKind::deletion);
  EXPECT_THROW(edit_kind_from_string("swap"), FormatError);
}

}  // namespace
}  // namespace psmedit
