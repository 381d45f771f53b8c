#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

#include "psmedit/common.hpp"
#include "psmedit/sequence_model.hpp"
#include "psmedit/token_domain.hpp"

namespace psmedit {

/// Id map for the combined vocabulary: semantic tokens [0, V), six
/// specials, then encoded words from text_offset.
struct SpecialTokens {
  TokenId text_bos = 0;
  TokenId text_eos = 0;
  TokenId pre_sep = 0;
  TokenId suf_sep = 0;
  TokenId mid_bos = 0;
  TokenId eos = 0;
  TokenId text_offset = 0;
  int sem_vocab_size = 0;
  int word_vocab_size = 0;

  static SpecialTokens for_world(const WorldSpec& world);

  int vocab_size() const { return text_offset + word_vocab_size; }
  bool is_semantic(TokenId t) const { return t >= 0 && t < sem_vocab_size; }
  bool is_text(TokenId t) const { return t >= text_offset && t < vocab_size(); }
  bool is_special(TokenId t) const { return t >= sem_vocab_size && t < text_offset; }
  TokenId encode_word(WordId w) const;
  LayoutMarkers markers() const { return {text_bos, pre_sep, suf_sep, mid_bos}; }
  bool operator==(const SpecialTokens&) const = default;
};

/// TEXT_BOS Enc(T) TEXT_EOS.
TokenSeq encode_text(const SpecialTokens& sp, std::span<const WordId> text);

/// Policy-side model config sized for this vocabulary and layout.
ModelConfig policy_model_config(const SpecialTokens& sp, ModelConfig base);

enum class EditKind { insertion, deletion, substitution };

std::string_view to_string(EditKind kind);
EditKind edit_kind_from_string(std::string_view s);

struct EditSpec {
  EditKind kind = EditKind::substitution;
  /// Half-open word interval in the original text. Empty for insertion,
  /// where start is the insertion point.
  int region_start = 0;
  int region_end = 0;
  Text replacement;

  /// Throws DomainError when the edit does not fit a text of `num_words`.
  void validate(int num_words) const;
  bool operator==(const EditSpec&) const = default;
};

struct EditQuery {
  /// TEXT_BOS Enc(T) TEXT_EOS PRE_SEP S_pre SUF_SEP S_suf
  TokenSeq q;
  /// TEXT_BOS Enc(T) TEXT_EOS PRE_SEP S_pre
  TokenSeq critic_prompt;
  TokenSeq s_pre;
  TokenSeq s_suf;
  Text target_text;
  /// Reference middle; its length is L_gt.
  TokenSeq reference_mid;
  TokenId mid_bos = 0;

  int gt_mid_len() const { return static_cast<int>(reference_mid.size()); }
  /// q followed by MID_BOS.
  TokenSeq policy_input() const;
  /// critic_prompt followed by MID_BOS.
  TokenSeq critic_input() const;
  bool operator==(const EditQuery&) const = default;
};

EditQuery build_query(const SpecialTokens& sp, Text target_text, TokenSeq s_pre, TokenSeq s_suf,
                      TokenSeq reference_mid);

struct TrainingExample {
  EditQuery query;
  /// S_mid followed by EOS.
  TokenSeq target;
  Span word_region;
};

/// Random word-aligned middle of 1..ceil(max_fraction * words) words.
/// Returns nullopt for utterances with fewer than 3 words.
std::optional<TrainingExample> make_training_example(const SpecialTokens& sp, const Utterance& utt, Rng& rng,
                                                     double max_fraction = 0.3);

SftExample make_sft_example(const TrainingExample& ex);

/// Builds the query for an edit of `utt`. The reference middle is a fresh
/// noiseless rendering of the replacement words drawn with `rng`.
EditQuery apply_edit_spec(const WorldSpec& world, const SpecialTokens& sp, const Utterance& utt,
                          const EditSpec& edit, Rng& rng);

struct EditSizeRange {
  int min_words = 1;
  int max_words = 1;
};

/// Default region sizes: insertion 1-3 words, deletion 1-2, substitution
/// 1-3.
EditSizeRange default_edit_sizes(EditKind kind);

/// Random edit of the given kind. Replacement words are drawn without
/// replacement from words absent in the utterance. Returns nullopt when the
/// utterance cannot host the edit.
std::optional<EditSpec> random_edit_spec(const WorldSpec& world, const Utterance& utt, EditKind kind, Rng& rng);
std::optional<EditSpec> random_edit_spec(const WorldSpec& world, const Utterance& utt, EditKind kind,
                                         EditSizeRange sizes, Rng& rng);

/// Samples a middle for the query. EOS is stripped.
TokenSeq infill(const ModelParams& policy, const SpecialTokens& sp, const EditQuery& query,
                const SamplingConfig& config);

/// s_pre ‖ mid ‖ s_suf.
TokenSeq splice(const EditQuery& query, std::span<const TokenId> mid);

nlohmann::json to_json(const EditSpec& e);
EditSpec edit_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EditQuery& q);
EditQuery edit_query_from_json(const nlohmann::json& j);

}  // namespace psmedit
