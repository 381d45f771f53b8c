#include "psmedit/psm_editing.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace psmedit {

namespace {

int boundary(const Utterance& utt, int word) {
  const auto& spans = utt.alignment.word_spans;
  if (word >= static_cast<int>(spans.size())) return static_cast<int>(utt.tokens.size());
  return spans[static_cast<std::size_t>(word)].start;
}

TokenSeq slice(const TokenSeq& s, int from, int to) {
  return TokenSeq(s.begin() + from, s.begin() + to);
}

/// k distinct words absent from `used`, or nullopt when too few exist.
std::optional<Text> fresh_words(const WorldSpec& world, const Text& used, int k, Rng& rng) {
  std::unordered_set<WordId> taken(used.begin(), used.end());
  Text pool;
  for (WordId w = 0; w < world.word_vocab_size(); ++w) {
    if (!taken.contains(w)) pool.push_back(w);
  }
  if (static_cast<int>(pool.size()) < k) return std::nullopt;
  for (int i = 0; i < k; ++i) {
    const auto j = uniform_int(rng, i, static_cast<std::int64_t>(pool.size()) - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(k));
  return pool;
}

}  // namespace

SpecialTokens SpecialTokens::for_world(const WorldSpec& world) {
  const TokenId v = world.sem_vocab_size();
  SpecialTokens sp;
  sp.text_bos = v;
  sp.text_eos = v + 1;
  sp.pre_sep = v + 2;
  sp.suf_sep = v + 3;
  sp.mid_bos = v + 4;
  sp.eos = v + 5;
  sp.text_offset = v + 6;
  sp.sem_vocab_size = v;
  sp.word_vocab_size = world.word_vocab_size();
  return sp;
}

TokenId SpecialTokens::encode_word(WordId w) const {
  if (w < 0 || w >= word_vocab_size) throw DomainError("encode_word: word id " + std::to_string(w) + " out of range");
  return text_offset + w;
}

TokenSeq encode_text(const SpecialTokens& sp, std::span<const WordId> text) {
  TokenSeq out;
  out.reserve(text.size() + 2);
  out.push_back(sp.text_bos);
  for (WordId w : text) out.push_back(sp.encode_word(w));
  out.push_back(sp.text_eos);
  return out;
}

ModelConfig policy_model_config(const SpecialTokens& sp, ModelConfig base) {
  base.vocab_size = sp.vocab_size();
  base.markers = sp.markers();
  return base;
}

std::string_view to_string(EditKind kind) {
  switch (kind) {
    case EditKind::insertion: return "insertion";
    case EditKind::deletion: return "deletion";
    case EditKind::substitution: return "substitution";
  }
  return "?";
}

EditKind edit_kind_from_string(std::string_view s) {
  if (s == "insertion") return EditKind::insertion;
  if (s == "deletion") return EditKind::deletion;
  if (s == "substitution") return EditKind::substitution;
  throw FormatError("unknown edit kind '" + std::string(s) + "'");
}

void EditSpec::validate(int num_words) const {
  if (region_start < 0 || region_end < region_start || region_end > num_words) {
    throw DomainError("edit region [" + std::to_string(region_start) + ", " + std::to_string(region_end) +
                      ") outside text of " + std::to_string(num_words) + " words");
  }
  switch (kind) {
    case EditKind::insertion:
      if (region_start != region_end) throw DomainError("insertion must have an empty region");
      if (replacement.empty()) throw DomainError("insertion needs replacement words");
      break;
    case EditKind::deletion:
      if (region_start == region_end) throw DomainError("deletion needs a non-empty region");
      if (!replacement.empty()) throw DomainError("deletion must not carry replacement words");
      break;
    case EditKind::substitution:
      if (region_start == region_end || replacement.empty()) {
        throw DomainError("substitution needs a non-empty region and replacement");
      }
      break;
  }
}

TokenSeq EditQuery::policy_input() const {
  TokenSeq out = q;
  out.push_back(mid_bos);
  return out;
}

TokenSeq EditQuery::critic_input() const {
  TokenSeq out = critic_prompt;
  out.push_back(mid_bos);
  return out;
}

EditQuery build_query(const SpecialTokens& sp, Text target_text, TokenSeq s_pre, TokenSeq s_suf,
                      TokenSeq reference_mid) {
  EditQuery eq;
  eq.critic_prompt = encode_text(sp, target_text);
  eq.critic_prompt.push_back(sp.pre_sep);
  eq.critic_prompt.insert(eq.critic_prompt.end(), s_pre.begin(), s_pre.end());
  eq.q = eq.critic_prompt;
  eq.q.push_back(sp.suf_sep);
  eq.q.insert(eq.q.end(), s_suf.begin(), s_suf.end());
  eq.s_pre = std::move(s_pre);
  eq.s_suf = std::move(s_suf);
  eq.target_text = std::move(target_text);
  eq.reference_mid = std::move(reference_mid);
  eq.mid_bos = sp.mid_bos;
  return eq;
}

std::optional<TrainingExample> make_training_example(const SpecialTokens& sp, const Utterance& utt, Rng& rng,
                                                     double max_fraction) {
  const int n = static_cast<int>(utt.text.size());
  if (n < 3) return std::nullopt;
  const int k_max = std::max(1, static_cast<int>(std::ceil(max_fraction * n)));
  const int k = static_cast<int>(uniform_int(rng, 1, k_max));
  const int start = static_cast<int>(uniform_int(rng, 0, n - k));
  const int a = boundary(utt, start);
  const int b = boundary(utt, start + k);
  TrainingExample ex{build_query(sp, utt.text, slice(utt.tokens, 0, a),
                                 slice(utt.tokens, b, static_cast<int>(utt.tokens.size())), slice(utt.tokens, a, b)),
                     {}, Span{start, start + k}};
  ex.target = ex.query.reference_mid;
  ex.target.push_back(sp.eos);
  return ex;
}

SftExample make_sft_example(const TrainingExample& ex) { return SftExample{ex.query.policy_input(), ex.target}; }

EditQuery apply_edit_spec(const WorldSpec& world, const SpecialTokens& sp, const Utterance& utt,
                          const EditSpec& edit, Rng& rng) {
  const int n = static_cast<int>(utt.text.size());
  edit.validate(n);
  if (!utt.alignment.tiles(static_cast<int>(utt.tokens.size())) || utt.alignment.word_spans.size() != utt.text.size()) {
    throw DomainError("apply_edit_spec: utterance alignment does not tile its tokens");
  }
  Text target(utt.text.begin(), utt.text.begin() + edit.region_start);
  target.insert(target.end(), edit.replacement.begin(), edit.replacement.end());
  target.insert(target.end(), utt.text.begin() + edit.region_end, utt.text.end());
  if (target.empty()) throw DomainError("apply_edit_spec: edit leaves an empty text");
  TokenSeq mid;
  if (!edit.replacement.empty()) mid = render_noiseless(world, edit.replacement, rng).tokens;
  return build_query(sp, std::move(target), slice(utt.tokens, 0, boundary(utt, edit.region_start)),
                     slice(utt.tokens, boundary(utt, edit.region_end), static_cast<int>(utt.tokens.size())),
                     std::move(mid));
}

EditSizeRange default_edit_sizes(EditKind kind) {
  switch (kind) {
    case EditKind::insertion: return {1, 3};
    case EditKind::deletion: return {1, 2};
    case EditKind::substitution: return {1, 3};
  }
  return {1, 1};
}

std::optional<EditSpec> random_edit_spec(const WorldSpec& world, const Utterance& utt, EditKind kind, Rng& rng) {
  return random_edit_spec(world, utt, kind, default_edit_sizes(kind), rng);
}

std::optional<EditSpec> random_edit_spec(const WorldSpec& world, const Utterance& utt, EditKind kind,
                                         EditSizeRange sizes, Rng& rng) {
  const int n = static_cast<int>(utt.text.size());
  int hi = sizes.max_words;
  if (kind == EditKind::deletion) hi = std::min(hi, n - 1);
  if (kind == EditKind::substitution) hi = std::min(hi, n);
  if (n < 1 || hi < sizes.min_words) return std::nullopt;
  const int k = static_cast<int>(uniform_int(rng, sizes.min_words, hi));
  EditSpec e;
  e.kind = kind;
  if (kind == EditKind::insertion) {
    e.region_start = e.region_end = static_cast<int>(uniform_int(rng, 0, n));
  } else {
    e.region_start = static_cast<int>(uniform_int(rng, 0, n - k));
    e.region_end = e.region_start + k;
  }
  if (kind != EditKind::deletion) {
    auto words = fresh_words(world, utt.text, k, rng);
    if (!words) return std::nullopt;
    e.replacement = std::move(*words);
  }
  return e;
}

TokenSeq infill(const ModelParams& policy, const SpecialTokens& sp, const EditQuery& query,
                const SamplingConfig& config) {
  return sample(policy, query.policy_input(), config, sp.eos).tokens;
}

TokenSeq splice(const EditQuery& query, std::span<const TokenId> mid) {
  TokenSeq out;
  out.reserve(query.s_pre.size() + mid.size() + query.s_suf.size());
  out.insert(out.end(), query.s_pre.begin(), query.s_pre.end());
  out.insert(out.end(), mid.begin(), mid.end());
  out.insert(out.end(), query.s_suf.begin(), query.s_suf.end());
  return out;
}

nlohmann::json to_json(const EditSpec& e) {
  return {{"kind", to_string(e.kind)}, {"region", {e.region_start, e.region_end}}, {"replacement", e.replacement}};
}

EditSpec edit_spec_from_json(const nlohmann::json& j) {
  EditSpec e;
  e.kind = edit_kind_from_string(j.at("kind").get<std::string>());
  e.region_start = j.at("region").at(0).get<int>();
  e.region_end = j.at("region").at(1).get<int>();
  e.replacement = j.at("replacement").get<Text>();
  return e;
}

nlohmann::json to_json(const EditQuery& q) {
  return {{"q", q.q},
          {"critic_prompt", q.critic_prompt},
          {"s_pre", q.s_pre},
          {"s_suf", q.s_suf},
          {"target_text", q.target_text},
          {"reference_mid", q.reference_mid},
          {"mid_bos", q.mid_bos}};
}

EditQuery edit_query_from_json(const nlohmann::json& j) {
  EditQuery q;
  q.q = j.at("q").get<TokenSeq>();
  q.critic_prompt = j.at("critic_prompt").get<TokenSeq>();
  q.s_pre = j.at("s_pre").get<TokenSeq>();
  q.s_suf = j.at("s_suf").get<TokenSeq>();
  q.target_text = j.at("target_text").get<Text>();
  q.reference_mid = j.at("reference_mid").get<TokenSeq>();
  q.mid_bos = j.at("mid_bos").get<TokenId>();
  const bool prefix_ok = q.critic_prompt.size() + 1 + q.s_suf.size() == q.q.size() &&
                         std::equal(q.critic_prompt.begin(), q.critic_prompt.end(), q.q.begin()) &&
                         std::equal(q.s_suf.begin(), q.s_suf.end(), q.q.end() - static_cast<std::ptrdiff_t>(q.s_suf.size()));
  if (!prefix_ok) throw FormatError("query: q is not consistent with critic_prompt and s_suf");
  return q;
}

}  // namespace psmedit
