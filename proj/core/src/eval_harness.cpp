#include "psmedit/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>

#include "psmedit/io.hpp"
#include "psmedit/parallel.hpp"

namespace psmedit {

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

std::string case_id(std::string_view prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05zu", i);
  return std::string(prefix) + "-" + buf;
}

std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return buf;
}

nlohmann::json finite_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); }

}  // namespace

std::string BenchmarkCase::group() const {
  if (mask_len_bucket > 0) return "mask_" + std::to_string(mask_len_bucket);
  return std::string(to_string(edit.kind));
}

std::vector<BenchmarkCase> build_edit_benchmark(const WorldSpec& world, const SpecialTokens& sp,
                                                std::span<const Utterance> corpus, int n_per_kind, Rng& rng) {
  if (corpus.empty()) throw BuildError("edit benchmark: empty corpus");
  if (n_per_kind < 0) throw ConfigError("edit benchmark: n_per_kind must be >= 0");
  std::vector<BenchmarkCase> cases;
  for (EditKind kind : {EditKind::insertion, EditKind::deletion, EditKind::substitution}) {
    int built = 0;
    for (std::size_t ui : shuffled_indices(corpus.size(), rng)) {
      if (built == n_per_kind) break;
      const auto& utt = corpus[ui];
      auto spec = random_edit_spec(world, utt, kind, rng);
      if (!spec) continue;
      BenchmarkCase c;
      c.id = case_id(to_string(kind), static_cast<std::size_t>(built));
      c.source = utt;
      c.query = apply_edit_spec(world, sp, utt, *spec, rng);
      c.edit = std::move(*spec);
      cases.push_back(std::move(c));
      ++built;
    }
    if (built < n_per_kind) {
      throw BuildError("edit benchmark: built " + std::to_string(built) + " of " + std::to_string(n_per_kind) + " " +
                       std::string(to_string(kind)) + " cases from " + std::to_string(corpus.size()) + " utterances");
    }
  }
  return cases;
}

std::vector<BenchmarkCase> build_duration_sweep(const WorldSpec& world, const SpecialTokens& sp,
                                                std::span<const Utterance> corpus, std::span<const int> buckets,
                                                int n_per_bucket, Rng& rng) {
  if (corpus.empty()) throw BuildError("duration sweep: empty corpus");
  std::vector<BenchmarkCase> cases;
  for (int bucket : buckets) {
    if (bucket < 1) throw ConfigError("duration sweep: buckets must be >= 1");
    int built = 0;
    for (std::size_t ui : shuffled_indices(corpus.size(), rng)) {
      if (built == n_per_bucket) break;
      const auto& utt = corpus[ui];
      const auto& spans = utt.alignment.word_spans;
      const int n = static_cast<int>(spans.size());
      // (start, end) of the minimal covering run from each start word
      std::vector<std::pair<int, int>> options;
      for (int s = 0; s < n; ++s) {
        int e = s;
        while (e < n && spans[static_cast<std::size_t>(e)].end - spans[static_cast<std::size_t>(s)].start < bucket) ++e;
        if (e == n) break;
        if (n - (e + 1 - s) >= 2) options.emplace_back(s, e + 1);
      }
      if (options.empty()) continue;
      const auto [s, e] = options[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(options.size()) - 1))];
      EditSpec spec;
      spec.kind = EditKind::substitution;
      spec.region_start = s;
      spec.region_end = e;
      spec.replacement.assign(utt.text.begin() + s, utt.text.begin() + e);
      BenchmarkCase c;
      c.id = case_id("mask" + std::to_string(bucket), static_cast<std::size_t>(built));
      c.source = utt;
      c.query = apply_edit_spec(world, sp, utt, spec, rng);
      c.edit = std::move(spec);
      c.mask_len_bucket = bucket;
      c.mask_len = spans[static_cast<std::size_t>(e - 1)].end - spans[static_cast<std::size_t>(s)].start;
      cases.push_back(std::move(c));
      ++built;
    }
    if (built < n_per_bucket) {
      throw BuildError("duration sweep: built " + std::to_string(built) + " of " + std::to_string(n_per_bucket) +
                       " cases for bucket " + std::to_string(bucket) + " from " + std::to_string(corpus.size()) +
                       " utterances");
    }
  }
  return cases;
}

nlohmann::json to_json(const BenchmarkCase& c) {
  return {{"id", c.id},
          {"source", utterance_to_json(c.source)},
          {"edit", to_json(c.edit)},
          {"query", to_json(c.query)},
          {"gt_mid_len", c.gt_mid_len()},
          {"mask_len_bucket", c.mask_len_bucket},
          {"mask_len", c.mask_len}};
}

BenchmarkCase benchmark_case_from_json(const nlohmann::json& j) {
  BenchmarkCase c;
  c.id = j.at("id").get<std::string>();
  c.source = utterance_from_json(j.at("source"));
  c.edit = edit_spec_from_json(j.at("edit"));
  c.query = edit_query_from_json(j.at("query"));
  c.mask_len_bucket = j.at("mask_len_bucket").get<int>();
  c.mask_len = j.at("mask_len").get<int>();
  if (j.at("gt_mid_len").get<int>() != c.gt_mid_len()) throw FormatError("case " + c.id + ": gt_mid_len mismatch");
  c.edit.validate(static_cast<int>(c.source.text.size()));
  return c;
}

void save_cases(const std::vector<BenchmarkCase>& cases, const std::filesystem::path& path) {
  std::vector<nlohmann::json> records;
  records.reserve(cases.size());
  for (const auto& c : cases) records.push_back(to_json(c));
  io::write_jsonl(path, records);
}

std::vector<BenchmarkCase> load_cases(const std::filesystem::path& path) {
  std::vector<BenchmarkCase> out;
  std::size_t line = 0;
  for (const auto& j : io::read_jsonl(path)) {
    ++line;
    try {
      out.push_back(benchmark_case_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": record " + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

nlohmann::json to_json(const CaseResult& r) {
  return {{"model", r.model},     {"case_id", r.case_id}, {"group", r.group},     {"middle", r.middle},
          {"wer", r.wer},         {"critic_ll", finite_or_null(r.critic_ll)},   {"len_gen", r.len_gen},
          {"len_gt", r.len_gt},   {"len_dev", r.len_dev}, {"valid", r.valid},     {"error", r.error}};
}

CaseResult case_result_from_json(const nlohmann::json& j) {
  CaseResult r;
  r.model = j.at("model").get<std::string>();
  r.case_id = j.at("case_id").get<std::string>();
  r.group = j.at("group").get<std::string>();
  r.middle = j.at("middle").get<TokenSeq>();
  r.wer = j.at("wer").get<double>();
  r.critic_ll = j.at("critic_ll").is_null() ? kNegInf : j.at("critic_ll").get<double>();
  r.len_gen = j.at("len_gen").get<int>();
  r.len_gt = j.at("len_gt").get<int>();
  r.len_dev = j.at("len_dev").get<double>();
  r.valid = j.at("valid").get<bool>();
  r.error = j.at("error").get<std::string>();
  return r;
}

CaseResult score_case(const std::string& model_tag, const BenchmarkCase& c, std::span<const TokenId> mid,
                      const Critic& critic, const WorldSpec& world, const RewardConfig& rewards) {
  CaseResult r;
  r.model = model_tag;
  r.case_id = c.id;
  r.group = c.group();
  r.middle.assign(mid.begin(), mid.end());
  r.critic_ll = 0.0;
  for (double lp : critic.token_logprobs(c.query, mid)) {
    if (is_neg_inf(lp)) {
      r.critic_ll = kNegInf;
      break;
    }
    r.critic_ll += lp;
  }
  const auto intel = intelligibility_reward(world, splice(c.query, mid), c.query.target_text);
  r.wer = intel.wer;
  r.len_gen = static_cast<int>(mid.size());
  r.len_gt = c.gt_mid_len();
  r.len_dev = length_deviation(r.len_gen, r.len_gt);
  r.valid = validity(r.wer, r.len_gen, r.len_gt, rewards) && !is_neg_inf(r.critic_ll);
  return r;
}

std::vector<CaseResult> evaluate(const std::string& model_tag, const ModelParams& policy, const Critic& critic,
                                 const WorldSpec& world, const SpecialTokens& sp,
                                 std::span<const BenchmarkCase> cases, const EvalOptions& options) {
  if (cases.empty()) throw DomainError("evaluate: no cases");
  options.sampling.validate();
  std::vector<CaseResult> out(cases.size());
  parallel_for(cases.size(), options.workers > 0 ? options.workers : default_workers(), [&](std::size_t i) {
    const auto& c = cases[i];
    try {
      SamplingConfig sc = options.sampling;
      sc.seed = derive_seed(options.sampling.seed, i);
      const auto mid = infill(policy, sp, c.query, sc);
      out[i] = score_case(model_tag, c, mid, critic, world, options.rewards);
    } catch (const std::exception& e) {
      CaseResult r;
      r.model = model_tag;
      r.case_id = c.id;
      r.group = c.group();
      r.critic_ll = kNegInf;
      r.error = e.what();
      out[i] = std::move(r);
    }
  });
  return out;
}

std::vector<MetricsRow> aggregate(std::span<const CaseResult> results) {
  struct Acc {
    int n = 0, ok = 0, feasible = 0, infeasible = 0, valid = 0;
    double wer = 0, ll = 0, dev = 0;
  };
  std::vector<std::string> models;
  std::map<std::string, std::vector<std::string>> groups;
  std::map<std::pair<std::string, std::string>, Acc> acc;
  for (const auto& r : results) {
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    auto& gs = groups[r.model];
    if (std::find(gs.begin(), gs.end(), r.group) == gs.end()) gs.push_back(r.group);
    for (const std::string& g : {r.group, std::string("all")}) {
      auto& a = acc[{r.model, g}];
      ++a.n;
      if (!r.error.empty()) {
        ++a.infeasible;
        continue;
      }
      ++a.ok;
      a.wer += r.wer;
      a.dev += r.len_dev;
      if (r.valid) ++a.valid;
      if (r.feasible()) {
        ++a.feasible;
        a.ll += r.critic_ll;
      } else {
        ++a.infeasible;
      }
    }
  }
  std::vector<MetricsRow> rows;
  const double nan = std::nan("");
  for (const auto& m : models) {
    auto gs = groups[m];
    gs.push_back("all");
    for (const auto& g : gs) {
      const auto& a = acc[{m, g}];
      MetricsRow row;
      row.model = m;
      row.kind = g;
      row.n = a.n;
      row.wer_mean = a.ok > 0 ? a.wer / a.ok : nan;
      row.len_dev_mean = a.ok > 0 ? a.dev / a.ok : nan;
      row.valid_frac = a.n > 0 ? static_cast<double>(a.valid) / a.n : nan;
      row.critic_ll_mean = a.feasible > 0 ? a.ll / a.feasible : nan;
      row.infeasible_n = a.infeasible;
      rows.push_back(row);
    }
  }
  return rows;
}

ReportFormat report_format_from_string(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  throw ConfigError("report: unknown format '" + s + "' (expected csv or json)");
}

std::string render_report(std::span<const MetricsRow> rows, ReportFormat format) {
  if (rows.empty()) throw DomainError("report: no rows");
  if (format == ReportFormat::csv) {
    std::string out = std::string(kReportHeader) + "\n";
    for (const auto& r : rows) {
      out += r.model + "," + r.kind + "," + std::to_string(r.n) + "," + fmt(r.wer_mean) + "," + fmt(r.critic_ll_mean) +
             "," + fmt(r.len_dev_mean) + "," + fmt(r.valid_frac) + "," + std::to_string(r.infeasible_n) + "\n";
    }
    return out;
  }
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = nlohmann::json::object();
    j["model"] = r.model;
    j["kind"] = r.kind;
    j["n"] = r.n;
    j["wer_mean"] = finite_or_null(r.wer_mean);
    j["critic_ll_mean"] = finite_or_null(r.critic_ll_mean);
    j["len_dev_mean"] = finite_or_null(r.len_dev_mean);
    j["valid_frac"] = finite_or_null(r.valid_frac);
    j["infeasible_n"] = r.infeasible_n;
    arr.push_back(std::move(j));
  }
  nlohmann::json doc = {{"columns", nlohmann::json::array({"model", "kind", "n", "wer_mean", "critic_ll_mean",
                                                            "len_dev_mean", "valid_frac", "infeasible_n"})},
                        {"rows", std::move(arr)}};
  return doc.dump(2) + "\n";
}

void write_report(std::span<const MetricsRow> rows, const std::filesystem::path& path, ReportFormat format) {
  io::write_file_atomic(path, render_report(rows, format));
}

SignTest sign_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("sign_test: unpaired inputs");
  SignTest t;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > b[i]) {
      ++t.wins;
    } else if (a[i] < b[i]) {
      ++t.losses;
    } else {
      ++t.ties;
    }
  }
  const int n = t.wins + t.losses;
  if (n == 0) return t;
  // upper tail summed in log space
  double p = 0.0;
  for (int k = t.wins; k <= n; ++k) {
    const double lc = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
    p += std::exp(lc - n * std::log(2.0));
  }
  t.p_value = std::min(1.0, p);
  return t;
}

}  // namespace psmedit
