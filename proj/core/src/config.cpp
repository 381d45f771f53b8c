#include "psmedit/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

namespace psmedit {

namespace {

using nlohmann::json;

std::string join_errors(const std::vector<std::string>& errors) {
  std::string out = "invalid config: ";
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (i > 0) out += "; ";
    out += errors[i];
  }
  return out;
}

/// Walks one JSON object, collecting every problem instead of stopping.
class Section {
 public:
  Section(const json* obj, std::string path, std::vector<std::string>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {}

  /// Child section; missing children read as empty.
  Section child(const std::string& key) {
    seen_.insert(key);
    const json* sub = nullptr;
    if (obj_ != nullptr && obj_->contains(key)) {
      sub = &(*obj_)[key];
      if (!sub->is_object()) {
        fail(key, "must be an object");
        sub = nullptr;
      }
    }
    return Section(sub, qualified(key), errors_);
  }

  void read(const std::string& key, int& out) {
    if (const json* v = take(key)) {
      if (v->is_number_integer() && v->get<std::int64_t>() >= std::numeric_limits<int>::min() &&
          v->get<std::int64_t>() <= std::numeric_limits<int>::max()) {
        out = v->get<int>();
      } else {
        fail(key, "must be an integer");
      }
    }
  }
  void read(const std::string& key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
        out = v->get<std::uint64_t>();
      } else {
        fail(key, "must be a non-negative integer");
      }
    }
  }
  void read(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      if (v->is_number()) {
        out = v->get<double>();
      } else {
        fail(key, "must be a number");
      }
    }
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = take(key)) {
      if (v->is_boolean()) {
        out = v->get<bool>();
      } else {
        fail(key, "must be a boolean");
      }
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      if (v->is_string()) {
        out = v->get<std::string>();
      } else {
        fail(key, "must be a string");
      }
    }
  }
  template <typename T, std::size_t N>
  void read(const std::string& key, std::array<T, N>& out) {
    if (const json* v = take(key)) {
      if (v->is_array() && v->size() == N && std::all_of(v->begin(), v->end(), [](const json& e) { return e.is_number(); })) {
        for (std::size_t i = 0; i < N; ++i) out[i] = (*v)[i].get<T>();
      } else {
        fail(key, "must be an array of " + std::to_string(N) + " numbers");
      }
    }
  }
  void read(const std::string& key, std::vector<int>& out) {
    if (const json* v = take(key)) {
      if (v->is_array() && std::all_of(v->begin(), v->end(), [](const json& e) { return e.is_number_integer(); })) {
        out = v->get<std::vector<int>>();
      } else {
        fail(key, "must be an array of integers");
      }
    }
  }

  void require(bool ok, const std::string& key, const std::string& what) {
    if (!ok) fail(key, what);
  }

  /// Reports keys never consumed.
  void finish() {
    if (obj_ == nullptr) return;
    for (const auto& [k, v] : obj_->items()) {
      if (!seen_.contains(k)) errors_.push_back(qualified(k) + ": unknown key");
    }
  }

 private:
  const json* take(const std::string& key) {
    seen_.insert(key);
    if (obj_ == nullptr || !obj_->contains(key)) return nullptr;
    return &(*obj_)[key];
  }
  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  void fail(const std::string& key, const std::string& what) { errors_.push_back(qualified(key) + ": " + what); }

  const json* obj_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

void read_sampling(Section s, SamplingConfig& c) {
  s.read("temperature", c.temperature);
  s.read("top_k", c.top_k);
  s.read("max_new_tokens", c.max_new_tokens);
  s.read("seed", c.seed);
  s.require(c.temperature > 0.0, "temperature", "must be > 0");
  s.require(c.top_k >= 1, "top_k", "must be >= 1");
  s.require(c.max_new_tokens >= 1, "max_new_tokens", "must be >= 1");
  s.finish();
}

void read_backbone(Section s, BackboneConfig& c) {
  s.read("context_window", c.context_window);
  s.read("d_model", c.d_model);
  s.read("n_layers", c.n_layers);
  s.read("n_heads", c.n_heads);
  s.read("d_ff", c.d_ff);
  s.read("init_scale", c.init_scale);
  s.read("output_init_scale", c.output_init_scale);
  s.require(c.context_window >= 8, "context_window", "must be >= 8");
  s.require(c.d_model >= 1, "d_model", "must be >= 1");
  s.require(c.n_layers >= 0, "n_layers", "must be >= 0");
  s.require(c.n_heads >= 1 && c.d_model % std::max(1, c.n_heads) == 0, "n_heads", "must be >= 1 and divide d_model");
  s.require(c.d_ff >= 1, "d_ff", "must be >= 1");
  s.require(c.init_scale >= 0.0, "init_scale", "must be >= 0");
  s.require(c.output_init_scale >= 0.0, "output_init_scale", "must be >= 0");
  s.finish();
}

void read_schedule(Section s, SftSchedule& c) {
  s.read("learning_rate", c.learning_rate);
  s.read("epochs", c.epochs);
  s.read("batch_size", c.batch_size);
  s.read("max_steps", c.max_steps);
  s.read("optimizer", c.optimizer);
  s.read("clip_norm", c.clip_norm);
  s.read("max_fraction", c.max_fraction);
  s.read("eval_every", c.eval_every);
  s.require(c.learning_rate >= 0.0, "learning_rate", "must be >= 0");
  s.require(c.epochs >= 0, "epochs", "must be >= 0");
  s.require(c.batch_size >= 1, "batch_size", "must be >= 1");
  s.require(c.max_steps >= 0, "max_steps", "must be >= 0");
  s.require(c.optimizer == "sgd" || c.optimizer == "adam", "optimizer", "must be \"sgd\" or \"adam\"");
  s.require(c.clip_norm >= 0.0, "clip_norm", "must be >= 0");
  s.require(c.max_fraction > 0.0 && c.max_fraction <= 1.0, "max_fraction", "must lie in (0, 1]");
  s.require(c.eval_every >= 1, "eval_every", "must be >= 1");
  s.finish();
}

json backbone_json(const BackboneConfig& b) {
  return {{"context_window", b.context_window}, {"d_model", b.d_model}, {"n_layers", b.n_layers},
          {"n_heads", b.n_heads},               {"d_ff", b.d_ff},       {"init_scale", b.init_scale},
          {"output_init_scale", b.output_init_scale}};
}

json schedule_json(const SftSchedule& s) {
  return {{"learning_rate", s.learning_rate}, {"epochs", s.epochs},       {"batch_size", s.batch_size},
          {"max_steps", s.max_steps},         {"optimizer", s.optimizer}, {"clip_norm", s.clip_norm},
          {"max_fraction", s.max_fraction},   {"eval_every", s.eval_every}};
}

}  // namespace

ConfigErrors::ConfigErrors(std::vector<std::string> errs) : ConfigError(join_errors(errs)), errors(std::move(errs)) {}

OptimizerConfig SftSchedule::optimizer_config() const {
  OptimizerConfig oc;
  oc.kind = optimizer;
  oc.learning_rate = learning_rate;
  oc.clip_norm = clip_norm;
  return oc;
}

RunConfig validate_config(std::string_view text) {
  RunConfig c;
  const bool blank = std::all_of(text.begin(), text.end(), [](char ch) { return std::isspace(static_cast<unsigned char>(ch)); });
  if (blank) return c;
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigErrors({std::string("parse error: ") + e.what()});
  }
  if (!root.is_object()) throw ConfigErrors({"top level must be an object"});

  std::vector<std::string> errors;
  Section top(&root, "", errors);
  top.read("seed", c.seed);
  top.read("workers", c.workers);
  top.require(c.workers >= 0, "workers", "must be >= 0");

  {
    auto s = top.child("world");
    auto& w = c.world;
    s.read("word_vocab_size", w.word_vocab_size);
    s.read("sem_vocab_size", w.sem_vocab_size);
    s.read("min_pron_len", w.min_pron_len);
    s.read("max_pron_len", w.max_pron_len);
    s.read("duration_probs", w.duration_probs);
    s.read("noise_rate", w.noise_rate);
    s.require(w.word_vocab_size >= 2, "word_vocab_size", "must be >= 2");
    s.require(w.sem_vocab_size >= 8, "sem_vocab_size", "must be >= 8");
    s.require(w.min_pron_len >= 1, "min_pron_len", "must be >= 1");
    s.require(w.max_pron_len >= w.min_pron_len && w.max_pron_len >= 2 && w.max_pron_len <= 6, "max_pron_len",
              "must be in [max(2, min_pron_len), 6]");
    double sum = 0.0;
    bool nonneg = true;
    for (double p : w.duration_probs) {
      sum += p;
      nonneg = nonneg && p >= 0.0;
    }
    s.require(nonneg && std::abs(sum - 1.0) <= 1e-12, "duration_probs", "must be non-negative and sum to 1");
    s.require(w.noise_rate >= 0.0 && w.noise_rate <= 0.05, "noise_rate", "must lie in [0, 0.05]");
    s.finish();
  }
  {
    auto s = top.child("corpus");
    auto& k = c.corpus;
    s.read("train", k.train);
    s.read("dev", k.dev);
    s.read("eval", k.eval);
    s.read("min_words", k.shape.min_words);
    s.read("max_words", k.shape.max_words);
    s.read("distinct_words", k.shape.distinct_words);
    s.require(k.train >= 1, "train", "must be >= 1");
    s.require(k.dev >= 0, "dev", "must be >= 0");
    s.require(k.eval >= 0, "eval", "must be >= 0");
    s.require(k.shape.min_words >= 1, "min_words", "must be >= 1");
    s.require(k.shape.max_words >= k.shape.min_words, "max_words", "must be >= min_words");
    s.require(!k.shape.distinct_words || k.shape.max_words <= c.world.word_vocab_size, "max_words",
              "must not exceed world.word_vocab_size when distinct_words is set");
    s.finish();
  }
  read_backbone(top.child("policy"), c.policy);
  {
    auto s = top.child("critic");
    read_backbone(s.child("model"), c.critic.model);
    read_schedule(s.child("schedule"), c.critic.schedule);
    s.finish();
  }
  read_schedule(top.child("sft"), c.sft);
  {
    auto s = top.child("grpo");
    auto& g = c.grpo;
    s.read("group_size", g.group_size);
    s.read("kl_beta", g.kl_beta);
    s.read("clip_epsilon", g.clip_epsilon);
    s.read("learning_rate", g.learning_rate);
    s.read("steps", g.steps);
    s.read("grad_accum", g.grad_accum);
    s.read("batch_queries", g.batch_queries);
    s.read("advantage_epsilon", g.advantage_epsilon);
    s.read("inner_epochs", g.inner_epochs);
    s.read("optimizer", g.optimizer);
    s.read("clip_norm", g.clip_norm);
    s.read("checkpoint_every", g.checkpoint_every);
    read_sampling(s.child("sampling"), g.sampling);
    s.require(g.group_size >= 2, "group_size", "must be >= 2");
    s.require(g.kl_beta >= 0.0, "kl_beta", "must be >= 0");
    s.require(g.clip_epsilon >= 0.0, "clip_epsilon", "must be >= 0");
    s.require(g.learning_rate >= 0.0, "learning_rate", "must be >= 0");
    s.require(g.steps >= 0, "steps", "must be >= 0");
    s.require(g.grad_accum >= 1, "grad_accum", "must be >= 1");
    s.require(g.batch_queries >= 1, "batch_queries", "must be >= 1");
    s.require(g.advantage_epsilon >= 0.0, "advantage_epsilon", "must be >= 0");
    s.require(g.inner_epochs >= 1, "inner_epochs", "must be >= 1");
    s.require(g.optimizer == "sgd" || g.optimizer == "adam", "optimizer", "must be \"sgd\" or \"adam\"");
    s.require(g.clip_norm >= 0.0, "clip_norm", "must be >= 0");
    s.require(g.checkpoint_every >= 1, "checkpoint_every", "must be >= 1");
    s.finish();
  }
  {
    auto s = top.child("pool");
    s.read("size", c.pool.size);
    s.require(c.pool.size >= 1, "size", "must be >= 1");
    auto m = s.child("mix");
    auto& x = c.pool.mix;
    m.read("infill", x.infill);
    m.read("insertion", x.insertion);
    m.read("deletion", x.deletion);
    m.read("substitution", x.substitution);
    const bool nonneg = x.infill >= 0 && x.insertion >= 0 && x.deletion >= 0 && x.substitution >= 0;
    m.require(nonneg && x.infill + x.insertion + x.deletion + x.substitution > 0.0, "weights",
              "must be non-negative with a positive sum");
    m.finish();
    s.finish();
  }
  {
    auto s = top.child("rewards");
    auto& r = c.rewards;
    s.read("tau_wer", r.tau_wer);
    s.read("tau_len", r.tau_len);
    s.read("r_base", r.r_base);
    std::string kind = r.critic_kind == CriticKind::exact ? "exact" : "learned";
    s.read("critic_kind", kind);
    s.require(r.tau_wer >= 0.0, "tau_wer", "must be >= 0");
    s.require(r.tau_len >= 0.0, "tau_len", "must be >= 0");
    s.require(r.r_base >= 0.0, "r_base", "must be >= 0");
    s.require(kind == "exact" || kind == "learned", "critic_kind", "must be \"exact\" or \"learned\"");
    r.critic_kind = kind == "learned" ? CriticKind::learned : CriticKind::exact;
    s.finish();
  }
  {
    auto s = top.child("eval");
    auto& e = c.eval;
    s.read("n_per_kind", e.n_per_kind);
    s.read("buckets", e.buckets);
    s.read("n_per_bucket", e.n_per_bucket);
    read_sampling(s.child("sampling"), e.sampling);
    s.require(e.n_per_kind >= 1, "n_per_kind", "must be >= 1");
    s.require(!e.buckets.empty() && std::all_of(e.buckets.begin(), e.buckets.end(), [](int b) { return b >= 1; }),
              "buckets", "must be a non-empty list of positive token counts");
    s.require(e.n_per_bucket >= 1, "n_per_bucket", "must be >= 1");
    s.finish();
  }
  {
    auto s = top.child("paths");
    s.read("work_dir", c.work_dir);
    s.require(!c.work_dir.empty(), "work_dir", "must not be empty");
    s.finish();
  }
  top.finish();
  if (!errors.empty()) throw ConfigErrors(std::move(errors));
  c.grpo.seed = derive_seed(c.seed, 0x6772706fULL);
  c.grpo.workers = c.workers;
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  auto sampling = [](const SamplingConfig& s) { return to_json(s); };
  const auto& g = c.grpo;
  return {
      {"seed", c.seed},
      {"workers", c.workers},
      {"world",
       {{"word_vocab_size", c.world.word_vocab_size},
        {"sem_vocab_size", c.world.sem_vocab_size},
        {"min_pron_len", c.world.min_pron_len},
        {"max_pron_len", c.world.max_pron_len},
        {"duration_probs", c.world.duration_probs},
        {"noise_rate", c.world.noise_rate}}},
      {"corpus",
       {{"train", c.corpus.train},
        {"dev", c.corpus.dev},
        {"eval", c.corpus.eval},
        {"min_words", c.corpus.shape.min_words},
        {"max_words", c.corpus.shape.max_words},
        {"distinct_words", c.corpus.shape.distinct_words}}},
      {"policy", backbone_json(c.policy)},
      {"critic", {{"model", backbone_json(c.critic.model)}, {"schedule", schedule_json(c.critic.schedule)}}},
      {"sft", schedule_json(c.sft)},
      {"grpo",
       {{"group_size", g.group_size},
        {"kl_beta", g.kl_beta},
        {"clip_epsilon", g.clip_epsilon},
        {"learning_rate", g.learning_rate},
        {"steps", g.steps},
        {"grad_accum", g.grad_accum},
        {"batch_queries", g.batch_queries},
        {"advantage_epsilon", g.advantage_epsilon},
        {"inner_epochs", g.inner_epochs},
        {"optimizer", g.optimizer},
        {"clip_norm", g.clip_norm},
        {"checkpoint_every", g.checkpoint_every},
        {"sampling", sampling(g.sampling)}}},
      {"pool",
       {{"size", c.pool.size},
        {"mix",
         {{"infill", c.pool.mix.infill},
          {"insertion", c.pool.mix.insertion},
          {"deletion", c.pool.mix.deletion},
          {"substitution", c.pool.mix.substitution}}}}},
      {"rewards",
       {{"tau_wer", c.rewards.tau_wer},
        {"tau_len", c.rewards.tau_len},
        {"r_base", c.rewards.r_base},
        {"critic_kind", c.rewards.critic_kind == CriticKind::exact ? "exact" : "learned"}}},
      {"eval",
       {{"n_per_kind", c.eval.n_per_kind},
        {"buckets", c.eval.buckets},
        {"n_per_bucket", c.eval.n_per_bucket},
        {"sampling", sampling(c.eval.sampling)}}},
      {"paths", {{"work_dir", c.work_dir}}}};
}

ModelConfig model_config(const BackboneConfig& b, int vocab_size, const LayoutMarkers& markers, std::uint64_t seed) {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.context_window = b.context_window;
  m.d_model = b.d_model;
  m.n_layers = b.n_layers;
  m.n_heads = b.n_heads;
  m.d_ff = b.d_ff;
  m.seed = seed;
  m.init_scale = b.init_scale;
  m.output_init_scale = b.output_init_scale;
  m.markers = markers;
  return m;
}

}  // namespace psmedit
