#pragma once

// Brute-force reference implementations. Deliberately naive and independent
// of the library code paths they check.

#include <functional>
#include <span>
#include <vector>

#include "psmedit/sequence_model.hpp"
#include "psmedit/token_domain.hpp"

namespace psmedit::oracle {

/// P(tokens | text) by enumerating every per-phone repeat assignment.
double enumerate_likelihood(const WorldSpec& world, std::span<const WordId> text, std::span<const TokenId> tokens);

/// P(rendering of text starts with tokens) by the same enumeration.
double enumerate_prefix_probability(const WorldSpec& world, std::span<const WordId> text,
                                    std::span<const TokenId> tokens);

/// Every sequence over [0, vocab) of length 0..max_len.
std::vector<TokenSeq> all_sequences(int vocab, int max_len);

/// Exponential-time edit distance by recursion over edit scripts.
std::size_t recursive_edit_distance(std::span<const WordId> a, std::span<const WordId> b);

/// All completions a policy can produce with at most max_len tokens, with
/// their exact probabilities: EOS-terminated strings shorter than max_len,
/// plus length-max_len strings cut by the token budget.
struct Completion {
  TokenSeq tokens;  // EOS stripped
  double prob;
};
std::vector<Completion> enumerate_completions(const ModelParams& model, std::span<const TokenId> prompt, TokenId eos,
                                              int max_len);

/// log prod_t q(tokens_t | prompt, tokens_<t) from next-token distributions.
double chain_logprob(const ModelParams& model, std::span<const TokenId> prompt, std::span<const TokenId> tokens);

/// Central finite difference of f along every coordinate of params.
std::vector<double> finite_difference(ModelParams& params, const std::function<double(const ModelParams&)>& f,
                                      double h);

/// ||a - b|| / max(||a||, ||b||, tiny).
double relative_error(std::span<const double> a, std::span<const double> b);

}  // namespace psmedit::oracle
