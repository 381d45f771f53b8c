#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "psmedit/psm_editing.hpp"
#include "psmedit/rewards.hpp"
#include "psmedit/sequence_model.hpp"
#include "psmedit/token_domain.hpp"

namespace psmedit {

struct BenchmarkCase {
  std::string id;
  Utterance source;
  EditSpec edit;
  EditQuery query;
  /// Sweep cases only: requested bucket and the masked token count.
  int mask_len_bucket = 0;
  int mask_len = 0;

  int gt_mid_len() const { return query.gt_mid_len(); }
  /// Aggregation key: the edit kind, or "mask_<bucket>" for sweep cases.
  std::string group() const;
};

/// n_per_kind insertion, deletion and substitution cases. Throws BuildError
/// when the corpus cannot supply enough cases.
std::vector<BenchmarkCase> build_edit_benchmark(const WorldSpec& world, const SpecialTokens& sp,
                                                std::span<const Utterance> corpus, int n_per_kind, Rng& rng);

/// Mask lengths in tokens; 25 tokens stand for one second of speech.
inline const std::vector<int> kDefaultBuckets{12, 25, 37, 50, 62};

/// Identity substitutions whose region is the shortest run of whole words
/// starting at a random word that covers at least `bucket` tokens. Needs
/// two context words outside the region.
std::vector<BenchmarkCase> build_duration_sweep(const WorldSpec& world, const SpecialTokens& sp,
                                                std::span<const Utterance> corpus, std::span<const int> buckets,
                                                int n_per_bucket, Rng& rng);

nlohmann::json to_json(const BenchmarkCase& c);
BenchmarkCase benchmark_case_from_json(const nlohmann::json& j);
void save_cases(const std::vector<BenchmarkCase>& cases, const std::filesystem::path& path);
std::vector<BenchmarkCase> load_cases(const std::filesystem::path& path);

struct CaseResult {
  std::string model;
  std::string case_id;
  std::string group;
  TokenSeq middle;
  double wer = 0.0;
  /// Summed critic log-prob of the middle; kNegInf when infeasible.
  double critic_ll = 0.0;
  int len_gen = 0;
  int len_gt = 0;
  double len_dev = 0.0;
  bool valid = false;
  /// Set when the case failed; such cases are excluded from every mean.
  std::string error;

  bool feasible() const { return error.empty() && !is_neg_inf(critic_ll); }
};

nlohmann::json to_json(const CaseResult& r);
CaseResult case_result_from_json(const nlohmann::json& j);

struct MetricsRow {
  std::string model;
  std::string kind;
  int n = 0;
  double wer_mean = 0.0;
  double critic_ll_mean = 0.0;
  double len_dev_mean = 0.0;
  double valid_frac = 0.0;
  int infeasible_n = 0;
};

struct EvalOptions {
  SamplingConfig sampling;
  RewardConfig rewards;
  /// 0 means one per hardware core.
  int workers = 0;
};

/// Infills every case, splices, decodes and scores. Case i samples with
/// seed derive_seed(sampling.seed, i) so models compared on one case list
/// see paired randomness. Failures are recorded per case.
std::vector<CaseResult> evaluate(const std::string& model_tag, const ModelParams& policy, const Critic& critic,
                                 const WorldSpec& world, const SpecialTokens& sp,
                                 std::span<const BenchmarkCase> cases, const EvalOptions& options);

/// Scores a fixed middle for one case, as evaluate does.
CaseResult score_case(const std::string& model_tag, const BenchmarkCase& c, std::span<const TokenId> mid,
                      const Critic& critic, const WorldSpec& world, const RewardConfig& rewards);

/// One row per (model, group) in first-seen order plus an "all" row per model.
std::vector<MetricsRow> aggregate(std::span<const CaseResult> results);

inline constexpr const char* kReportHeader = "model,kind,n,wer_mean,critic_ll_mean,len_dev_mean,valid_frac,infeasible_n";

enum class ReportFormat { csv, json };
ReportFormat report_format_from_string(const std::string& s);

std::string render_report(std::span<const MetricsRow> rows, ReportFormat format);
/// Throws DomainError for empty rows.
void write_report(std::span<const MetricsRow> rows, const std::filesystem::path& path, ReportFormat format);

struct SignTest {
  int wins = 0;
  int losses = 0;
  int ties = 0;
  /// One-sided P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
  double p_value = 1.0;
};

/// Paired comparison of a against b; wins count a > b.
SignTest sign_test(std::span<const double> a, std::span<const double> b);

}  // namespace psmedit
