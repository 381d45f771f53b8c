#include "psmedit/token_domain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "psmedit/io.hpp"

namespace psmedit {

namespace {

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError("world config: " + field + " " + what);
}

/// Text flattened into its base-token sequence.
struct PhoneChain {
  std::vector<TokenId> phones;
  std::vector<int> word_of_phone;
};

PhoneChain flatten(const WorldSpec& world, std::span<const WordId> text) {
  PhoneChain chain;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!world.valid_word(text[i])) {
      throw DomainError("word id " + std::to_string(text[i]) + " outside lexicon");
    }
    for (TokenId p : world.pronunciation(text[i])) {
      chain.phones.push_back(p);
      chain.word_of_phone.push_back(static_cast<int>(i));
    }
  }
  return chain;
}

int draw_repeat(const WorldSpec& world, Rng& rng) {
  const double u = uniform_unit(rng);
  double acc = 0.0;
  const auto& probs = world.duration_probs();
  for (int k = 0; k < kMaxRepeat; ++k) {
    acc += probs[static_cast<std::size_t>(k)];
    if (u < acc) return k + 1;
  }
  return world.max_repeat();
}

Rendering render_impl(const WorldSpec& world, std::span<const WordId> text, Rng& rng,
                      double noise) {
  if (text.empty()) throw DomainError("render: empty text");
  Rendering out;
  for (WordId w : text) {
    if (!world.valid_word(w)) throw DomainError("render: word id " + std::to_string(w) + " outside lexicon");
    const int start = static_cast<int>(out.tokens.size());
    for (TokenId p : world.pronunciation(w)) {
      const int k = draw_repeat(world, rng);
      for (int rep = 0; rep < k; ++rep) {
        if (noise > 0.0 && uniform_unit(rng) < noise) {
          out.tokens.push_back(static_cast<TokenId>(uniform_int(rng, 0, world.sem_vocab_size() - 1)));
        } else {
          out.tokens.push_back(p);
        }
      }
    }
    out.alignment.word_spans.push_back({start, static_cast<int>(out.tokens.size())});
  }
  return out;
}

/// Scaled forward pass over (phone, repeat) states. Returns the per-token
/// log normalizers and, optionally, the log probability of terminating right
/// after the last token.
struct ForwardResult {
  std::vector<double> log_norm;
  double log_terminal = kNegInf;
};

ForwardResult forward_pass(const WorldSpec& world, const PhoneChain& chain,
                           std::span<const TokenId> tokens, bool want_terminal) {
  ForwardResult res;
  res.log_norm.assign(tokens.size(), kNegInf);
  const std::size_t n_phones = chain.phones.size();
  if (tokens.empty()) {
    res.log_terminal = n_phones == 0 ? 0.0 : kNegInf;
    return res;
  }
  if (n_phones == 0) return res;

  const int rmax = world.max_repeat();
  std::vector<double> alpha(n_phones * kMaxRepeat, 0.0);
  std::vector<double> next(n_phones * kMaxRepeat, 0.0);
  auto at = [](std::size_t u, int r) { return u * kMaxRepeat + static_cast<std::size_t>(r - 1); };

  alpha[at(0, 1)] = world.emission(tokens[0], chain.phones[0]);
  std::size_t lo = 0, hi = 0;  // inclusive phone band holding mass
  double c = alpha[at(0, 1)];
  if (c <= 0.0) return res;
  alpha[at(0, 1)] = 1.0;
  res.log_norm[0] = std::log(c);

  for (std::size_t t = 1; t < tokens.size(); ++t) {
    const std::size_t nhi = std::min(hi + 1, n_phones - 1);
    std::fill(next.begin() + static_cast<std::ptrdiff_t>(at(lo, 1)),
              next.begin() + static_cast<std::ptrdiff_t>(at(nhi, 1) + kMaxRepeat), 0.0);
    for (std::size_t u = lo; u <= hi; ++u) {
      for (int r = 1; r <= rmax; ++r) {
        const double a = alpha[at(u, r)];
        if (a == 0.0) continue;
        const double h = world.repeat_hazard(r);
        if (h > 0.0) next[at(u, r + 1)] += a * h;
        if (u + 1 < n_phones) next[at(u + 1, 1)] += a * (1.0 - h);
      }
    }
    c = 0.0;
    const TokenId x = tokens[t];
    std::size_t new_lo = nhi + 1, new_hi = lo;
    for (std::size_t u = lo; u <= nhi; ++u) {
      const double e = world.emission(x, chain.phones[u]);
      bool any = false;
      for (int r = 1; r <= rmax; ++r) {
        double& v = next[at(u, r)];
        v *= e;
        if (v > 0.0) {
          c += v;
          any = true;
        }
      }
      if (any) {
        new_lo = std::min(new_lo, u);
        new_hi = std::max(new_hi, u);
      }
    }
    if (c <= 0.0) return res;  // remaining entries stay kNegInf
    for (std::size_t u = new_lo; u <= new_hi; ++u) {
      for (int r = 1; r <= rmax; ++r) next[at(u, r)] /= c;
    }
    // clear the old band before swapping so stale mass never leaks
    std::fill(alpha.begin() + static_cast<std::ptrdiff_t>(at(lo, 1)),
              alpha.begin() + static_cast<std::ptrdiff_t>(at(hi, 1) + kMaxRepeat), 0.0);
    std::swap(alpha, next);
    lo = new_lo;
    hi = new_hi;
    res.log_norm[t] = std::log(c);
  }

  if (want_terminal && hi == n_phones - 1) {
    double term = 0.0;
    for (int r = 1; r <= rmax; ++r) term += alpha[at(n_phones - 1, r)] * (1.0 - world.repeat_hazard(r));
    if (term > 0.0) {
      res.log_terminal = std::log(term);
      for (double l : res.log_norm) res.log_terminal += l;
    }
  }
  return res;
}

/// Probability that `tokens[s..e)` is a complete rendering of one word, for
/// every feasible e. Indexed by segment length.
void word_segment_probs(const WorldSpec& world, const TokenSeq& pron, std::span<const TokenId> tokens,
                        std::size_t s, std::vector<double>& out) {
  const std::size_t len = pron.size();
  const int rmax = world.max_repeat();
  const std::size_t max_seg = std::min(len * static_cast<std::size_t>(rmax), tokens.size() - s);
  out.assign(max_seg + 1, 0.0);
  if (max_seg < len) return;
  std::array<double, 6 * kMaxRepeat + kMaxRepeat> alpha{};
  std::array<double, 6 * kMaxRepeat + kMaxRepeat> next{};
  std::vector<double> dyn_alpha, dyn_next;
  double* a = alpha.data();
  double* b = next.data();
  if (len * kMaxRepeat > alpha.size()) {
    dyn_alpha.assign(len * kMaxRepeat, 0.0);
    dyn_next.assign(len * kMaxRepeat, 0.0);
    a = dyn_alpha.data();
    b = dyn_next.data();
  }
  const std::size_t width = len * kMaxRepeat;
  std::fill(a, a + width, 0.0);
  a[0] = world.emission(tokens[s], pron[0]);
  for (std::size_t k = 1; k <= max_seg; ++k) {
    if (k >= len) {
      double term = 0.0;
      for (int r = 1; r <= rmax; ++r) {
        term += a[(len - 1) * kMaxRepeat + static_cast<std::size_t>(r - 1)] * (1.0 - world.repeat_hazard(r));
      }
      out[k] = term;
    }
    if (k == max_seg) break;
    std::fill(b, b + width, 0.0);
    bool any = false;
    for (std::size_t j = 0; j < len; ++j) {
      for (int r = 1; r <= rmax; ++r) {
        const double v = a[j * kMaxRepeat + static_cast<std::size_t>(r - 1)];
        if (v == 0.0) continue;
        const double h = world.repeat_hazard(r);
        if (h > 0.0) b[j * kMaxRepeat + static_cast<std::size_t>(r)] += v * h;
        if (j + 1 < len) b[(j + 1) * kMaxRepeat] += v * (1.0 - h);
      }
    }
    const TokenId x = tokens[s + k];
    for (std::size_t j = 0; j < len; ++j) {
      const double e = world.emission(x, pron[j]);
      for (int r = 0; r < rmax; ++r) {
        double& v = b[j * kMaxRepeat + static_cast<std::size_t>(r)];
        v *= e;
        any = any || v > 0.0;
      }
    }
    std::swap(a, b);
    if (!any) break;
  }
}

struct Hypothesis {
  double score;
  Text text;
};

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.text < b.text;
}

void offer(std::vector<Hypothesis>& beam, std::size_t capacity, double score, const Text& prefix,
           WordId w) {
  if (beam.size() == capacity) {
    const auto& worst = beam.back();
    if (score < worst.score) return;
  }
  Text text = prefix;
  text.push_back(w);
  for (auto& h : beam) {
    if (h.text == text) {
      if (score > h.score) {
        h.score = score;
        std::sort(beam.begin(), beam.end(), better);
      }
      return;
    }
  }
  Hypothesis cand{score, std::move(text)};
  auto pos = std::lower_bound(beam.begin(), beam.end(), cand, better);
  beam.insert(pos, std::move(cand));
  if (beam.size() > capacity) beam.pop_back();
}

}  // namespace

void WorldConfig::validate() const {
  require(word_vocab_size >= 2, "word_vocab_size", "must be >= 2");
  require(sem_vocab_size >= 8, "sem_vocab_size", "must be >= 8");
  require(min_pron_len >= 1 && min_pron_len <= max_pron_len, "min_pron_len", "must be in [1, max_pron_len]");
  require(max_pron_len >= 2 && max_pron_len <= 6, "max_pron_len", "must be in [2, 6]");
  double sum = 0.0;
  for (double p : duration_probs) {
    require(p >= 0.0 && p <= 1.0, "duration_probs", "entries must lie in [0, 1]");
    sum += p;
  }
  require(std::abs(sum - 1.0) <= 1e-12, "duration_probs", "must sum to 1");
  require(noise_rate >= 0.0 && noise_rate <= 0.05, "noise_rate", "must lie in [0, 0.05]");
}

bool Alignment::tiles(int length) const {
  int pos = 0;
  for (const auto& s : word_spans) {
    if (s.start != pos || s.end < s.start) return false;
    pos = s.end;
  }
  return pos == length;
}

WorldSpec::WorldSpec(WorldConfig config, std::vector<TokenSeq> lexicon, std::uint64_t seed)
    : config_(std::move(config)), lexicon_(std::move(lexicon)), seed_(seed) {
  if (config_.word_vocab_size < 1) throw ConfigError("world: word_vocab_size must be >= 1");
  if (config_.sem_vocab_size < 1) throw ConfigError("world: sem_vocab_size must be >= 1");
  if (static_cast<int>(lexicon_.size()) != config_.word_vocab_size) {
    throw ConfigError("world: lexicon size does not match word_vocab_size");
  }
  double sum = 0.0;
  for (double p : config_.duration_probs) {
    if (!(p >= 0.0)) throw ConfigError("world: negative duration probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("world: duration_probs must sum to 1");
  if (!(config_.noise_rate >= 0.0 && config_.noise_rate <= 0.05)) {
    throw ConfigError("world: noise_rate must lie in [0, 0.05]");
  }
  std::set<TokenSeq> seen;
  for (std::size_t w = 0; w < lexicon_.size(); ++w) {
    const auto& pron = lexicon_[w];
    if (pron.empty()) throw ConfigError("world: empty pronunciation for word " + std::to_string(w));
    for (TokenId t : pron) {
      if (t < 0 || t >= config_.sem_vocab_size) {
        throw ConfigError("world: pronunciation token out of range for word " + std::to_string(w));
      }
    }
    if (!seen.insert(pron).second) {
      throw ConfigError("world: lexicon is not injective (word " + std::to_string(w) + ")");
    }
  }
  uniform_noise_ = config_.noise_rate / static_cast<double>(config_.sem_vocab_size);
  double survive = 1.0;  // P(K >= r)
  for (int r = 1; r <= kMaxRepeat; ++r) {
    const double p = config_.duration_probs[static_cast<std::size_t>(r - 1)];
    if (p > 0.0) max_repeat_ = r;
    const double beyond = survive - p;  // P(K > r)
    hazard_[static_cast<std::size_t>(r - 1)] = survive > 0.0 ? std::max(0.0, beyond) / survive : 0.0;
    survive = std::max(0.0, beyond);
  }
  hazard_[kMaxRepeat - 1] = 0.0;
  for (int r = max_repeat_; r <= kMaxRepeat; ++r) hazard_[static_cast<std::size_t>(r - 1)] = 0.0;
}

const TokenSeq& WorldSpec::pronunciation(WordId w) const {
  if (!valid_word(w)) throw DomainError("word id " + std::to_string(w) + " outside lexicon");
  return lexicon_[static_cast<std::size_t>(w)];
}

WorldSpec build_world(const WorldConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  std::set<TokenSeq> seen;
  std::set<TokenId> firsts, lasts;
  std::vector<TokenSeq> lexicon;
  lexicon.reserve(static_cast<std::size_t>(config.word_vocab_size));
  constexpr int kMaxAttempts = 100000;
  for (int w = 0; w < config.word_vocab_size; ++w) {
    int attempts = 0;
    for (;;) {
      if (++attempts > kMaxAttempts) {
        throw ConfigError("world config: word_vocab_size too large for the pronunciation space");
      }
      const auto len = uniform_int(rng, config.min_pron_len, config.max_pron_len);
      TokenSeq pron;
      pron.reserve(static_cast<std::size_t>(len));
      for (std::int64_t j = 0; j < len; ++j) {
        TokenId t;
        do {
          t = static_cast<TokenId>(uniform_int(rng, 0, config.sem_vocab_size - 1));
        } while (!pron.empty() && t == pron.back());
        pron.push_back(t);
      }
      if (pron.front() == pron.back() || lasts.count(pron.front()) || firsts.count(pron.back())) continue;
      // prefix-free: no neighbour in sorted order may be a prefix of the other
      const auto next = seen.lower_bound(pron);
      if (next != seen.end() && std::equal(pron.begin(), pron.end(), next->begin(), next->begin() + std::min(pron.size(), next->size()))) continue;
      if (next != seen.begin()) {
        const auto& prev = *std::prev(next);
        if (prev.size() <= pron.size() && std::equal(prev.begin(), prev.end(), pron.begin())) continue;
      }
      firsts.insert(pron.front());
      lasts.insert(pron.back());
      seen.insert(pron);
      lexicon.push_back(std::move(pron));
      break;
    }
  }
  return WorldSpec(config, std::move(lexicon), seed);
}

Rendering render(const WorldSpec& world, std::span<const WordId> text, Rng& rng) {
  return render_impl(world, text, rng, world.noise_rate());
}

Rendering render_noiseless(const WorldSpec& world, std::span<const WordId> text, Rng& rng) {
  return render_impl(world, text, rng, 0.0);
}

double exact_loglik(const WorldSpec& world, std::span<const WordId> text, std::span<const TokenId> tokens) {
  const auto chain = flatten(world, text);
  return forward_pass(world, chain, tokens, true).log_terminal;
}

double prefix_loglik(const WorldSpec& world, std::span<const WordId> text, std::span<const TokenId> tokens) {
  const auto chain = flatten(world, text);
  const auto res = forward_pass(world, chain, tokens, false);
  double total = 0.0;
  for (double l : res.log_norm) total += l;
  return total;
}

std::vector<double> conditional_logprobs(const WorldSpec& world, std::span<const WordId> text,
                                         std::span<const TokenId> tokens, std::size_t from) {
  if (from > tokens.size()) throw DomainError("conditional_logprobs: start beyond sequence");
  const auto chain = flatten(world, text);
  const auto res = forward_pass(world, chain, tokens, false);
  if (from > 0 && is_neg_inf(res.log_norm[from - 1])) {
    // conditioning event itself has probability zero
    return std::vector<double>(tokens.size() - from, kNegInf);
  }
  return {res.log_norm.begin() + static_cast<std::ptrdiff_t>(from), res.log_norm.end()};
}

Text asr_decode(const WorldSpec& world, std::span<const TokenId> tokens, AsrOptions options) {
  if (tokens.empty()) return {};
  for (TokenId t : tokens) {
    if (!world.valid_token(t)) throw DomainError("asr_decode: token " + std::to_string(t) + " outside semantic range");
  }
  const std::size_t n = tokens.size();
  const auto capacity = static_cast<std::size_t>(std::max(1, options.nbest));
  std::vector<std::vector<Hypothesis>> beams(n + 1);
  beams[0].push_back({0.0, {}});
  std::vector<double> seg;
  for (std::size_t s = 0; s < n; ++s) {
    if (beams[s].empty()) continue;
    for (WordId w = 0; w < world.word_vocab_size(); ++w) {
      word_segment_probs(world, world.pronunciation(w), tokens, s, seg);
      for (std::size_t k = 1; k < seg.size(); ++k) {
        if (seg[k] <= 0.0) continue;
        const double lp = std::log(seg[k]);
        for (const auto& h : beams[s]) offer(beams[s + k], capacity, h.score + lp, h.text, w);
      }
    }
  }
  const auto& finals = beams[n];
  if (finals.empty()) return {};
  const Text* best = nullptr;
  double best_ll = kNegInf;
  for (const auto& h : finals) {
    const double ll = exact_loglik(world, h.text, tokens);
    if (best == nullptr || ll > best_ll || (ll == best_ll && h.text < *best)) {
      best = &h.text;
      best_ll = ll;
    }
  }
  return *best;
}

std::size_t edit_distance(std::span<const WordId> a, std::span<const WordId> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double wer(std::span<const WordId> ref, std::span<const WordId> hyp) {
  if (ref.empty()) throw DomainError("wer: empty reference");
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

Alignment force_align(const WorldSpec& world, std::span<const WordId> text, std::span<const TokenId> tokens) {
  const auto chain = flatten(world, text);
  if (text.empty() && tokens.empty()) return {};
  if (text.empty() || tokens.empty()) throw AlignmentError("force_align: empty text or tokens");
  const std::size_t n = tokens.size();
  const std::size_t n_phones = chain.phones.size();
  const int rmax = world.max_repeat();
  const std::size_t width = n_phones * kMaxRepeat;
  auto at = [](std::size_t u, int r) { return u * kMaxRepeat + static_cast<std::size_t>(r - 1); };

  std::vector<double> delta(width, kNegInf), next(width, kNegInf);
  std::vector<std::int32_t> back(n * width, -1);
  auto log_of = [](double p) { return p > 0.0 ? std::log(p) : kNegInf; };

  delta[at(0, 1)] = log_of(world.emission(tokens[0], chain.phones[0]));
  for (std::size_t t = 1; t < n; ++t) {
    std::fill(next.begin(), next.end(), kNegInf);
    auto* bp = back.data() + t * width;
    for (std::size_t u = 0; u < n_phones; ++u) {
      const double le = log_of(world.emission(tokens[t], chain.phones[u]));
      if (is_neg_inf(le)) continue;
      // repeat predecessor
      for (int r = 2; r <= rmax; ++r) {
        const double prev = delta[at(u, r - 1)];
        const double h = world.repeat_hazard(r - 1);
        if (is_neg_inf(prev) || h <= 0.0) continue;
        next[at(u, r)] = prev + std::log(h) + le;
        bp[at(u, r)] = static_cast<std::int32_t>(at(u, r - 1));
      }
      // advance predecessor
      if (u > 0) {
        double best = kNegInf;
        std::int32_t arg = -1;
        for (int r = 1; r <= rmax; ++r) {
          const double prev = delta[at(u - 1, r)];
          const double h = world.repeat_hazard(r);
          if (is_neg_inf(prev) || h >= 1.0) continue;
          const double v = prev + std::log1p(-h);
          if (v > best) {
            best = v;
            arg = static_cast<std::int32_t>(at(u - 1, r));
          }
        }
        if (arg >= 0) {
          next[at(u, 1)] = best + le;
          bp[at(u, 1)] = arg;
        }
      }
    }
    std::swap(delta, next);
  }
  double best = kNegInf;
  std::int32_t state = -1;
  for (int r = 1; r <= rmax; ++r) {
    const double h = world.repeat_hazard(r);
    const double v = delta[at(n_phones - 1, r)] + (h < 1.0 ? std::log1p(-h) : kNegInf);
    if (!is_neg_inf(v) && v > best) {
      best = v;
      state = static_cast<std::int32_t>(at(n_phones - 1, r));
    }
  }
  if (state < 0) throw AlignmentError("force_align: tokens have zero probability under text");

  std::vector<int> phone_at(n);
  for (std::size_t t = n; t-- > 0;) {
    phone_at[t] = state / kMaxRepeat;
    if (t > 0) state = back[t * width + static_cast<std::size_t>(state)];
  }
  Alignment al;
  al.word_spans.assign(text.size(), {0, 0});
  int current = -1;
  for (std::size_t t = 0; t < n; ++t) {
    const int w = chain.word_of_phone[static_cast<std::size_t>(phone_at[t])];
    if (w != current) {
      if (current >= 0) al.word_spans[static_cast<std::size_t>(current)].end = static_cast<int>(t);
      al.word_spans[static_cast<std::size_t>(w)].start = static_cast<int>(t);
      current = w;
    }
  }
  al.word_spans[static_cast<std::size_t>(current)].end = static_cast<int>(n);
  return al;
}

std::vector<Utterance> generate_corpus(const WorldSpec& world, std::size_t count,
                                       const CorpusConfig& config, Rng& rng) {
  if (config.min_words < 1 || config.min_words > config.max_words) {
    throw ConfigError("corpus: min_words must be in [1, max_words]");
  }
  if (config.distinct_words && config.max_words > world.word_vocab_size()) {
    throw ConfigError("corpus: max_words exceeds word_vocab_size with distinct_words");
  }
  std::vector<Utterance> out;
  out.reserve(count);
  std::vector<WordId> pool(static_cast<std::size_t>(world.word_vocab_size()));
  for (std::size_t i = 0; i < count; ++i) {
    const auto n = static_cast<std::size_t>(uniform_int(rng, config.min_words, config.max_words));
    Text text;
    text.reserve(n);
    if (config.distinct_words) {
      std::iota(pool.begin(), pool.end(), 0);
      for (std::size_t k = 0; k < n; ++k) {
        const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(k),
                                                            static_cast<std::int64_t>(pool.size()) - 1));
        std::swap(pool[k], pool[j]);
        text.push_back(pool[k]);
      }
    } else {
      for (std::size_t k = 0; k < n; ++k) {
        text.push_back(static_cast<WordId>(uniform_int(rng, 0, world.word_vocab_size() - 1)));
      }
    }
    auto r = render(world, text, rng);
    out.push_back({std::move(text), std::move(r.tokens), std::move(r.alignment)});
  }
  return out;
}

nlohmann::json world_to_json(const WorldSpec& world) {
  const auto& c = world.config();
  return {
      {"format", "psmedit-world"},
      {"version", kWorldFormatVersion},
      {"seed", world.seed()},
      {"config",
       {{"word_vocab_size", c.word_vocab_size},
        {"sem_vocab_size", c.sem_vocab_size},
        {"min_pron_len", c.min_pron_len},
        {"max_pron_len", c.max_pron_len},
        {"duration_probs", c.duration_probs},
        {"noise_rate", c.noise_rate}}},
      {"lexicon", world.lexicon()},
  };
}

WorldSpec world_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "psmedit-world") throw FormatError("world: wrong format tag");
    if (j.at("version").get<int>() != kWorldFormatVersion) throw FormatError("world: unsupported version");
    const auto& c = j.at("config");
    WorldConfig cfg;
    cfg.word_vocab_size = c.at("word_vocab_size").get<int>();
    cfg.sem_vocab_size = c.at("sem_vocab_size").get<int>();
    cfg.min_pron_len = c.at("min_pron_len").get<int>();
    cfg.max_pron_len = c.at("max_pron_len").get<int>();
    cfg.duration_probs = c.at("duration_probs").get<std::array<double, kMaxRepeat>>();
    cfg.noise_rate = c.at("noise_rate").get<double>();
    return WorldSpec(cfg, j.at("lexicon").get<std::vector<TokenSeq>>(), j.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("world: ") + e.what());
  }
}

void save_world(const WorldSpec& world, const std::filesystem::path& path) {
  io::write_file_atomic(path, world_to_json(world).dump(2) + "\n");
}

WorldSpec load_world(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return world_from_json(j);
}

nlohmann::json utterance_to_json(const Utterance& u) {
  nlohmann::json spans = nlohmann::json::array();
  for (const auto& s : u.alignment.word_spans) spans.push_back({s.start, s.end});
  return {{"text", u.text}, {"tokens", u.tokens}, {"spans", spans}};
}

Utterance utterance_from_json(const nlohmann::json& j) {
  try {
    Utterance u;
    u.text = j.at("text").get<Text>();
    u.tokens = j.at("tokens").get<TokenSeq>();
    for (const auto& s : j.at("spans")) u.alignment.word_spans.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
    if (u.alignment.word_spans.size() != u.text.size() ||
        !u.alignment.tiles(static_cast<int>(u.tokens.size()))) {
      throw FormatError("utterance: spans do not tile the token sequence");
    }
    return u;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("utterance: ") + e.what());
  }
}

void save_corpus(const std::vector<Utterance>& corpus, const std::filesystem::path& path) {
  std::vector<nlohmann::json> records;
  records.reserve(corpus.size());
  for (const auto& u : corpus) records.push_back(utterance_to_json(u));
  io::write_jsonl(path, records);
}

std::vector<Utterance> load_corpus(const std::filesystem::path& path) {
  std::vector<Utterance> out;
  for (const auto& j : io::read_jsonl(path)) out.push_back(utterance_from_json(j));
  return out;
}

}  // namespace psmedit
