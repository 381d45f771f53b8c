#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "psmedit/config.hpp"
#include "psmedit/eval_harness.hpp"
#include "psmedit/grpo.hpp"
#include "psmedit/io.hpp"
#include "psmedit/psm_editing.hpp"
#include "psmedit/training.hpp"

namespace psmedit::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Stage streams hang off the run seed.
constexpr std::uint64_t kWorldStream = 0x776f726c64;
constexpr std::uint64_t kCorpusStream = 0x636f72707573;
constexpr std::uint64_t kCasesStream = 0x6361736573;
constexpr std::uint64_t kCriticStream = 0x637269746963;
constexpr std::uint64_t kSftStream = 0x736674;
constexpr std::uint64_t kPoolStream = 0x706f6f6c;

constexpr const char* kIncomplete = "INCOMPLETE";

struct Loaded {
  RunConfig config;
  /// Snapshot taken before environment overrides, so manifests do not
  /// depend on where the run happened.
  json snapshot;
  fs::path work_dir;
};

Loaded load_config(const std::string& path) {
  Loaded l;
  l.config = validate_config(path.empty() ? std::string() : io::read_file(path));
  l.snapshot = to_json(l.config);
  l.work_dir = l.config.work_dir;
  if (const char* w = std::getenv("PSMEDIT_WORK_DIR"); w != nullptr && *w != '\0') l.work_dir = w;
  return l;
}

fs::path or_default(const std::string& flag, const fs::path& fallback) { return flag.empty() ? fallback : fs::path(flag); }

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

/// Provenance record written next to each output.
class Manifest {
 public:
  Manifest(std::string command, const Loaded& l) {
    j_ = {{"format", "psmedit-manifest"},
          {"version", 1},
          {"tool_version", PSMEDIT_VERSION},
          {"command", std::move(command)},
          {"seed", l.config.seed},
          {"config", l.snapshot},
          {"inputs", json::array()},
          {"outputs", json::array()}};
  }
  void input(const std::string& role, const fs::path& p) {
    j_["inputs"].push_back({{"role", role}, {"file", p.filename().string()}, {"sha256", io::sha256_file(p)}});
  }
  void output(const fs::path& p) {
    j_["outputs"].push_back({{"file", p.filename().string()}, {"sha256", io::sha256_file(p)}});
  }
  void set(const std::string& key, json value) { j_[key] = std::move(value); }
  void write(const fs::path& p) const { io::write_file_atomic(p, j_.dump(2) + "\n"); }

 private:
  json j_;
};

fs::path manifest_for(const fs::path& file) { return fs::path(file.string() + ".manifest.json"); }

/// Marks a directory output as in progress until the guard is released.
class IncompleteMarker {
 public:
  explicit IncompleteMarker(fs::path dir) : path_(std::move(dir) / kIncomplete) {
    fs::create_directories(path_.parent_path());
    io::write_file_atomic(path_, "");
  }
  void done() { fs::remove(path_); }

 private:
  fs::path path_;
};

std::string fmt(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

// ---- commands ----

struct GenWorldArgs {
  std::string config, out;
};

int gen_world(const GenWorldArgs& a, std::ostream& out) {
  const auto l = load_config(a.config);
  const auto path = or_default(a.out, l.work_dir / "world.json");
  ensure_parent(path);
  const auto world = build_world(l.config.world, derive_seed(l.config.seed, kWorldStream));
  save_world(world, path);
  Manifest m("gen-world", l);
  m.output(path);
  m.write(manifest_for(path));
  out << "world: " << world.lexicon().size() << " words over " << world.sem_vocab_size() << " semantic tokens -> "
      << path.string() << "\n";
  return kExitOk;
}

struct GenCorpusArgs {
  std::string config, world, out_dir, edit_cases, sweep_cases;
};

int gen_corpus(const GenCorpusArgs& a, std::ostream& out) {
  const auto l = load_config(a.config);
  const auto& c = l.config;
  const auto world_path = or_default(a.world, l.work_dir / "world.json");
  const auto dir = or_default(a.out_dir, l.work_dir / "corpus");
  const auto world = load_world(world_path);
  const auto sp = SpecialTokens::for_world(world);

  IncompleteMarker marker(dir);
  Manifest m("gen-corpus", l);
  m.input("world", world_path);

  const std::pair<const char*, int> splits[] = {{"train", c.corpus.train}, {"dev", c.corpus.dev}, {"eval", c.corpus.eval}};
  std::vector<Utterance> eval_split;
  for (std::uint64_t i = 0; i < 3; ++i) {
    Rng rng(derive_seed(c.seed, kCorpusStream, i));
    auto utts = generate_corpus(world, static_cast<std::size_t>(splits[i].second), c.corpus.shape, rng);
    const auto path = dir / (std::string(splits[i].first) + ".jsonl");
    save_corpus(utts, path);
    m.output(path);
    out << splits[i].first << ": " << utts.size() << " utterances\n";
    if (i == 2) eval_split = std::move(utts);
  }

  Rng edit_rng(derive_seed(c.seed, kCasesStream, 0));
  const auto edits = build_edit_benchmark(world, sp, eval_split, c.eval.n_per_kind, edit_rng);
  const auto edit_path = or_default(a.edit_cases, dir / "edit_cases.jsonl");
  ensure_parent(edit_path);
  save_cases(edits, edit_path);
  m.output(edit_path);

  Rng sweep_rng(derive_seed(c.seed, kCasesStream, 1));
  const auto sweep = build_duration_sweep(world, sp, eval_split, c.eval.buckets, c.eval.n_per_bucket, sweep_rng);
  const auto sweep_path = or_default(a.sweep_cases, dir / "sweep_cases.jsonl");
  ensure_parent(sweep_path);
  save_cases(sweep, sweep_path);
  m.output(sweep_path);

  m.write(dir / "manifest.json");
  marker.done();
  out << "cases: " << edits.size() << " edit, " << sweep.size() << " sweep\n";
  return kExitOk;
}

struct TrainArgs {
  std::string config, world, corpus_dir, out;
};

/// Shared by the critic and SFT stages: they differ in backbone, schedule
/// and example maker.
int supervised_stage(const TrainArgs& a, bool critic, std::ostream& out) {
  const auto l = load_config(a.config);
  const auto& c = l.config;
  const auto world_path = or_default(a.world, l.work_dir / "world.json");
  const auto dir = or_default(a.corpus_dir, l.work_dir / "corpus");
  const auto path = or_default(a.out, l.work_dir / (critic ? "critic.ckpt" : "sft.ckpt"));
  const auto world = load_world(world_path);
  const auto sp = SpecialTokens::for_world(world);
  const auto train_corpus = load_corpus(dir / "train.jsonl");
  const auto dev_corpus = load_corpus(dir / "dev.jsonl");

  const std::uint64_t stream = critic ? kCriticStream : kSftStream;
  const auto& backbone = critic ? c.critic.model : c.policy;
  const auto& schedule = critic ? c.critic.schedule : c.sft;
  auto params = ModelParams::initialize(model_config(backbone, sp.vocab_size(), sp.markers(), derive_seed(c.seed, stream, 0)));
  Optimizer opt(schedule.optimizer_config(), params.size());
  const auto maker = critic ? continuation_examples(sp, schedule.max_fraction) : infill_examples(sp, schedule.max_fraction);
  const auto dev = make_examples(dev_corpus, maker, derive_seed(c.seed, stream, 1), backbone.context_window);

  std::vector<json> log;
  const auto summary = run_supervised(params, opt, train_corpus, maker, dev, schedule, derive_seed(c.seed, stream, 2),
                                      [&](const SftProgress& p) {
                                        json r = {{"step", p.step}, {"epoch", p.epoch}, {"train_nll", p.train_nll},
                                                  {"grad_norm", p.grad_norm}};
                                        if (p.dev_nll) {
                                          r["dev_nll"] = *p.dev_nll;
                                          out << "step " << p.step << " epoch " << p.epoch << " train_nll "
                                              << fmt(p.train_nll) << " dev_nll " << fmt(*p.dev_nll) << "\n"
                                              << std::flush;
                                        }
                                        log.push_back(std::move(r));
                                      });

  ensure_parent(path);
  const json meta = {{"role", critic ? "critic" : "policy"},
                     {"stage", critic ? "critic" : "sft"},
                     {"steps", summary.steps},
                     {"final_dev_nll", summary.final_dev_nll}};
  save_checkpoint(path, params, nullptr, meta);
  const fs::path log_path(path.string() + ".log.jsonl");
  io::write_jsonl(log_path, log);

  Manifest m(critic ? "train-critic" : "sft", l);
  m.input("world", world_path);
  m.input("train", dir / "train.jsonl");
  m.input("dev", dir / "dev.jsonl");
  m.output(path);
  m.output(log_path);
  m.set("summary", {{"steps", summary.steps}, {"skipped", summary.skipped}, {"final_dev_nll", summary.final_dev_nll}});
  m.write(manifest_for(path));
  out << (critic ? "critic" : "sft") << ": " << summary.steps << " steps, dev_nll " << fmt(summary.final_dev_nll)
      << " -> " << path.string() << "\n";
  return kExitOk;
}

Checkpoint load_model_for(const fs::path& path, const SpecialTokens& sp, const char* what) {
  auto ck = load_checkpoint(path);
  if (ck.params.config().vocab_size != sp.vocab_size())
    throw ConfigError(std::string(what) + " " + path.filename().string() + " has vocabulary " +
                      std::to_string(ck.params.config().vocab_size) + ", world needs " +
                      std::to_string(sp.vocab_size()));
  return ck;
}

Critic make_critic(const RunConfig& c, const WorldSpec& world, const SpecialTokens& sp, const std::string& critic_path,
                   Manifest& m) {
  if (c.rewards.critic_kind == CriticKind::exact) return Critic::exact(world);
  if (critic_path.empty()) throw UsageError("--critic is required when rewards.critic_kind is \"learned\"");
  auto ck = load_model_for(critic_path, sp, "critic");
  m.input("critic", critic_path);
  return Critic::learned(freeze(ck.params));
}

struct GrpoArgs {
  std::string config, world, corpus_dir, init, critic, out_dir, resume;
};

std::string step_name(std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06llu.ckpt", static_cast<unsigned long long>(step));
  return buf;
}

int grpo_train(const GrpoArgs& a, std::ostream& out) {
  const auto l = load_config(a.config);
  const auto& c = l.config;
  const auto world_path = or_default(a.world, l.work_dir / "world.json");
  const auto corpus_dir = or_default(a.corpus_dir, l.work_dir / "corpus");
  const auto init_path = or_default(a.init, l.work_dir / "sft.ckpt");
  const auto dir = or_default(a.out_dir, l.work_dir / "grpo");
  const auto world = load_world(world_path);
  const auto sp = SpecialTokens::for_world(world);
  const auto train_corpus = load_corpus(corpus_dir / "train.jsonl");

  Manifest m("grpo-train", l);
  m.input("world", world_path);
  m.input("train", corpus_dir / "train.jsonl");
  m.input("init", init_path);
  const auto critic = make_critic(c, world, sp, a.critic, m);

  const auto init = load_model_for(init_path, sp, "initial policy");
  const ModelParams reference = init.params;
  ModelParams policy = init.params;
  Optimizer opt(c.grpo.optimizer_config(), policy.size());
  std::uint64_t start = 0;
  if (!a.resume.empty()) {
    auto ck = load_model_for(a.resume, sp, "resume checkpoint");
    if (!(ck.params.config() == reference.config()))
      throw ConfigError("resume checkpoint " + fs::path(a.resume).filename().string() +
                        " does not match the initial policy's model config");
    if (!ck.optimizer || !ck.meta.contains("step"))
      throw FormatError("resume checkpoint " + fs::path(a.resume).filename().string() + " is not a GRPO checkpoint");
    start = ck.meta.at("step").get<std::uint64_t>();
    policy = std::move(ck.params);
    opt = std::move(*ck.optimizer);
    m.input("resume", a.resume);
  }

  Rng pool_rng(derive_seed(c.seed, kPoolStream));
  const auto pool =
      build_query_pool(world, sp, train_corpus, static_cast<std::size_t>(c.pool.size), c.pool.mix, pool_rng);

  IncompleteMarker marker(dir);
  const auto metrics_path = dir / "metrics.jsonl";
  const auto rollouts_path = dir / "rollouts.jsonl";
  // On resume, keep only the history the checkpoint has seen.
  auto keep_before = [&](const fs::path& p) {
    std::vector<json> kept;
    if (start > 0 && fs::exists(p))
      for (auto& r : io::read_jsonl(p))
        if (r.at("step").get<std::uint64_t>() < start) kept.push_back(std::move(r));
    io::write_jsonl(p, kept);
  };
  keep_before(metrics_path);
  keep_before(rollouts_path);
  io::JsonlAppender metrics_log(metrics_path, false);
  io::JsonlAppender rollout_log(rollouts_path, false);

  TrainCallbacks cb;
  cb.on_step = [&](const StepMetrics& s) {
    metrics_log.append(to_json(s));
    out << "step " << s.step << " reward " << fmt(s.mean_reward) << " valid " << fmt(s.valid_fraction, 3) << " r_sc "
        << fmt(s.mean_r_sc) << " wer " << fmt(s.mean_wer, 3) << " kl " << fmt(s.kl_estimate, 5) << "\n"
        << std::flush;
  };
  cb.on_rollout = [&](const RolloutRecord& r) { rollout_log.append(to_json(r)); };
  cb.on_checkpoint = [&](std::uint64_t step, const ModelParams& p, const Optimizer& o) {
    save_checkpoint(dir / step_name(step), p, &o, {{"role", "policy"}, {"stage", "grpo"}, {"step", step}});
  };
  const auto history = train(policy, opt, reference, world, sp, critic, pool, c.grpo, c.rewards, start, cb);

  const auto final_path = dir / "policy.ckpt";
  save_checkpoint(final_path, policy, &opt,
                  {{"role", "policy"}, {"stage", "grpo"}, {"step", static_cast<std::uint64_t>(c.grpo.steps)}});
  m.output(final_path);
  m.output(metrics_path);
  m.output(rollouts_path);
  m.set("start_step", start);
  m.write(dir / "manifest.json");
  marker.done();
  out << "grpo: steps " << start << ".." << c.grpo.steps << " -> " << final_path.string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string config, world, cases, critic, out, report, format = "csv";
  std::vector<std::string> policies;
};

int eval(const EvalArgs& a, std::ostream& out) {
  const auto l = load_config(a.config);
  const auto& c = l.config;
  const auto world_path = or_default(a.world, l.work_dir / "world.json");
  const auto cases_path = or_default(a.cases, l.work_dir / "corpus" / "edit_cases.jsonl");
  const auto results_path = or_default(a.out, l.work_dir / "eval" / "results.jsonl");
  const auto format = report_format_from_string(a.format);
  const auto report_path = or_default(
      a.report, results_path.parent_path() / (format == ReportFormat::csv ? "report.csv" : "report.json"));
  if (a.policies.empty()) throw UsageError("at least one --policy TAG=PATH is required");

  std::vector<std::pair<std::string, fs::path>> policies;
  for (const auto& p : a.policies) {
    const auto eq = p.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == p.size())
      throw UsageError("--policy expects TAG=PATH, got \"" + p + "\"");
    const auto tag = p.substr(0, eq);
    for (const auto& [t, _] : policies)
      if (t == tag) throw UsageError("duplicate policy tag \"" + tag + "\"");
    policies.emplace_back(tag, p.substr(eq + 1));
  }

  const auto world = load_world(world_path);
  const auto sp = SpecialTokens::for_world(world);
  const auto cases = load_cases(cases_path);
  Manifest m("eval", l);
  m.input("world", world_path);
  m.input("cases", cases_path);
  const auto critic = make_critic(c, world, sp, a.critic, m);

  EvalOptions opts;
  opts.sampling = c.eval.sampling;
  opts.rewards = c.rewards;
  opts.workers = c.workers;
  std::vector<CaseResult> results;
  for (const auto& [tag, path] : policies) {
    const auto ck = load_model_for(path, sp, "policy");
    m.input("policy:" + tag, path);
    out << "evaluating " << tag << " on " << cases.size() << " cases\n" << std::flush;
    auto r = evaluate(tag, ck.params, critic, world, sp, cases, opts);
    results.insert(results.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
  }

  ensure_parent(results_path);
  std::vector<json> lines;
  lines.reserve(results.size());
  for (const auto& r : results) lines.push_back(to_json(r));
  io::write_jsonl(results_path, lines);
  const auto rows = aggregate(results);
  ensure_parent(report_path);
  write_report(rows, report_path, format);
  m.output(results_path);
  m.output(report_path);
  m.write(manifest_for(results_path));
  out << render_report(rows, ReportFormat::csv);
  return kExitOk;
}

struct ReportArgs {
  std::string results, out, format = "csv", baseline;
};

int report(const ReportArgs& a, std::ostream& out) {
  const auto format = report_format_from_string(a.format);
  std::vector<CaseResult> results;
  for (const auto& j : io::read_jsonl(a.results)) results.push_back(case_result_from_json(j));
  const auto rows = aggregate(results);
  if (a.out.empty()) {
    out << render_report(rows, format);
  } else {
    ensure_parent(a.out);
    write_report(rows, a.out, format);
  }
  if (a.baseline.empty()) return kExitOk;

  // Paired sign test on critic log-likelihood over cases both models solved.
  std::map<std::string, std::map<std::string, double>> by_model;
  std::vector<std::string> order;
  for (const auto& r : results) {
    if (std::find(order.begin(), order.end(), r.model) == order.end()) order.push_back(r.model);
    auto& lls = by_model[r.model];
    if (r.feasible()) lls[r.case_id] = r.critic_ll;
  }
  if (!by_model.count(a.baseline)) throw UsageError("baseline \"" + a.baseline + "\" is not in the results");
  const auto& base = by_model[a.baseline];
  for (const auto& model : order) {
    if (model == a.baseline) continue;
    std::vector<double> x, y;
    for (const auto& [id, ll] : by_model[model])
      if (auto it = base.find(id); it != base.end()) {
        x.push_back(ll);
        y.push_back(it->second);
      }
    const auto t = sign_test(x, y);
    out << "sign test critic_ll " << model << " vs " << a.baseline << ": wins " << t.wins << " losses " << t.losses
        << " ties " << t.ties << " p " << t.p_value << "\n";
  }
  return kExitOk;
}

std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

std::string config_message(const ConfigError& e) {
  if (const auto* all = dynamic_cast<const ConfigErrors*>(&e)) {
    std::string joined;
    for (const auto& m : all->errors) joined += (joined.empty() ? "" : "; ") + m;
    return joined;
  }
  return e.what();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Semantic-token editing toolkit: synthetic worlds, infilling, GRPO and evaluation", "psmedit");
  app.require_subcommand(1);
  app.set_version_flag("--version", PSMEDIT_VERSION);

  GenWorldArgs gw;
  auto* c_world = app.add_subcommand("gen-world", "Sample a synthetic world");
  c_world->add_option("--config", gw.config, "JSON config (defaults if omitted)");
  c_world->add_option("--out", gw.out, "World file [work_dir/world.json]");

  GenCorpusArgs gc;
  auto* c_corpus = app.add_subcommand("gen-corpus", "Render train/dev/eval splits and benchmark cases");
  c_corpus->add_option("--config", gc.config, "JSON config");
  c_corpus->add_option("--world", gc.world, "World file [work_dir/world.json]");
  c_corpus->add_option("--out-dir", gc.out_dir, "Output directory [work_dir/corpus]");
  c_corpus->add_option("--edit-cases", gc.edit_cases, "Edit benchmark file [out_dir/edit_cases.jsonl]");
  c_corpus->add_option("--sweep-cases", gc.sweep_cases, "Duration sweep file [out_dir/sweep_cases.jsonl]");

  TrainArgs tc, sft;
  auto* c_critic = app.add_subcommand("train-critic", "Train a learned continuation critic");
  auto* c_sft = app.add_subcommand("sft", "Supervised infilling training of the policy");
  for (auto [cmd, a, def] : {std::tuple{c_critic, &tc, "critic.ckpt"}, std::tuple{c_sft, &sft, "sft.ckpt"}}) {
    cmd->add_option("--config", a->config, "JSON config");
    cmd->add_option("--world", a->world, "World file [work_dir/world.json]");
    cmd->add_option("--corpus-dir", a->corpus_dir, "Corpus directory [work_dir/corpus]");
    cmd->add_option("--out", a->out, std::string("Checkpoint [work_dir/") + def + "]");
  }

  GrpoArgs gr;
  auto* c_grpo = app.add_subcommand("grpo-train", "Reinforce the policy with group-relative rewards");
  c_grpo->add_option("--config", gr.config, "JSON config");
  c_grpo->add_option("--world", gr.world, "World file [work_dir/world.json]");
  c_grpo->add_option("--corpus-dir", gr.corpus_dir, "Corpus directory [work_dir/corpus]");
  c_grpo->add_option("--init", gr.init, "Starting policy, also the KL reference [work_dir/sft.ckpt]");
  c_grpo->add_option("--critic", gr.critic, "Learned critic checkpoint (learned critic_kind only)");
  c_grpo->add_option("--out-dir", gr.out_dir, "Output directory [work_dir/grpo]");
  c_grpo->add_option("--resume", gr.resume, "Continue from a step_XXXXXX.ckpt");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Infill and score benchmark cases for one or more policies");
  c_eval->add_option("--config", ev.config, "JSON config");
  c_eval->add_option("--world", ev.world, "World file [work_dir/world.json]");
  c_eval->add_option("--cases", ev.cases, "Case file [work_dir/corpus/edit_cases.jsonl]");
  c_eval->add_option("--policy", ev.policies, "TAG=CHECKPOINT, repeatable");
  c_eval->add_option("--critic", ev.critic, "Learned critic checkpoint (learned critic_kind only)");
  c_eval->add_option("--out", ev.out, "Per-case results [work_dir/eval/results.jsonl]");
  c_eval->add_option("--report", ev.report, "Aggregate report [next to results]");
  c_eval->add_option("--format", ev.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

  ReportArgs rp;
  auto* c_report = app.add_subcommand("report", "Aggregate per-case results");
  c_report->add_option("--results", rp.results, "Per-case results jsonl")->required();
  c_report->add_option("--out", rp.out, "Report file (stdout if omitted)");
  c_report->add_option("--format", rp.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  c_report->add_option("--baseline", rp.baseline, "Model tag to sign-test the others against");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << PSMEDIT_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << one_line(e.what()) << " (run with --help)\n";
    return kExitUsage;
  }

  try {
    if (*c_world) return gen_world(gw, out);
    if (*c_corpus) return gen_corpus(gc, out);
    if (*c_critic) return supervised_stage(tc, true, out);
    if (*c_sft) return supervised_stage(sft, false, out);
    if (*c_grpo) return grpo_train(gr, out);
    if (*c_eval) return eval(ev, out);
    if (*c_report) return report(rp, out);
  } catch (const UsageError& e) {
    err << "error: usage: " << one_line(e.what()) << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: config: " << one_line(config_message(e)) << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace psmedit::cli
