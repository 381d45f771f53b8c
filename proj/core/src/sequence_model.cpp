#include "psmedit/sequence_model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include "psmedit/io.hpp"

namespace psmedit {

namespace {

using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using CMap = Eigen::Map<const RMat>;
using MMap = Eigen::Map<RMat>;
using CRowMap = Eigen::Map<const RowVec>;
using MRowMap = Eigen::Map<RowVec>;

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

struct LayerOffsets {
  std::size_t ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

struct ParamLayout {
  std::size_t tok, pos, seg;
  std::vector<LayerOffsets> layers;
  std::size_t lnf_g, lnf_b, wout, bout, total;
};

ParamLayout layout_of(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto f = static_cast<std::size_t>(c.d_ff);
  const auto v = static_cast<std::size_t>(c.vocab_size);
  std::size_t off = 0;
  auto take = [&off](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  ParamLayout p{};
  p.tok = take(v * d);
  p.pos = take(static_cast<std::size_t>(c.context_window) * d);
  p.seg = take(kNumSegments * d);
  for (int l = 0; l < c.n_layers; ++l) {
    LayerOffsets lo{};
    lo.ln1_g = take(d);
    lo.ln1_b = take(d);
    lo.wqkv = take(d * 3 * d);
    lo.bqkv = take(3 * d);
    lo.wo = take(d * d);
    lo.bo = take(d);
    lo.ln2_g = take(d);
    lo.ln2_b = take(d);
    lo.w1 = take(d * f);
    lo.b1 = take(f);
    lo.w2 = take(f * d);
    lo.b2 = take(d);
    p.layers.push_back(lo);
  }
  p.lnf_g = take(d);
  p.lnf_b = take(d);
  p.wout = take(d * v);
  p.bout = take(v);
  p.total = off;
  return p;
}

double gelu(double a) { return 0.5 * a * (1.0 + std::tanh(kGeluC * (a + kGeluA * a * a * a))); }

double gelu_grad(double a) {
  const double t = std::tanh(kGeluC * (a + kGeluA * a * a * a));
  return 0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * a * a);
}

double normal(Rng& rng) {
  // Box-Muller on our own uniform stream, stable across standard libraries
  double u1 = uniform_unit(rng);
  while (u1 <= 0.0) u1 = uniform_unit(rng);
  const double u2 = uniform_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// Read-only tensor views over a parameter vector.
class Weights {
 public:
  Weights(const ModelParams& params) : c_(params.config()), p_(layout_of(c_)), base_(params.values().data()) {}
  const ModelConfig& cfg() const { return c_; }
  const ParamLayout& layout() const { return p_; }
  CMap mat(std::size_t off, int rows, int cols) const { return CMap(base_ + off, rows, cols); }
  CRowMap vec(std::size_t off, int n) const { return CRowMap(base_ + off, n); }

 private:
  const ModelConfig& c_;
  ParamLayout p_;
  const double* base_;
};

/// Mutable views into a gradient buffer with the same layout.
class GradViews {
 public:
  GradViews(const ParamLayout& p, std::span<double> g) : p_(p), base_(g.data()) {}
  MMap mat(std::size_t off, int rows, int cols) const { return MMap(base_ + off, rows, cols); }
  MRowMap vec(std::size_t off, int n) const { return MRowMap(base_ + off, n); }

 private:
  const ParamLayout& p_;
  double* base_;
};

struct LnCache {
  RMat xhat;
  Eigen::VectorXd rstd;
};

RMat layer_norm(const RMat& x, const CRowMap& g, const CRowMap& b, LnCache& cache) {
  const auto n = x.rows();
  const auto d = static_cast<double>(x.cols());
  cache.xhat.resize(n, x.cols());
  cache.rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).sum() / d;
    const auto centered = (x.row(i).array() - mean).matrix();
    const double var = centered.squaredNorm() / d;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    cache.rstd(i) = rstd;
    cache.xhat.row(i) = centered * rstd;
  }
  RMat y = (cache.xhat.array().rowwise() * g.array()).rowwise() + b.array();
  return y;
}

RMat layer_norm_backward(const RMat& dy, const LnCache& cache, const CRowMap& g, MRowMap dg, MRowMap db) {
  dg += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  db += dy.colwise().sum();
  const RMat dxhat = dy.array().rowwise() * g.array();
  const auto d = static_cast<double>(dy.cols());
  RMat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_d = dxhat.row(i).sum() / d;
    const double mean_dx = dxhat.row(i).dot(cache.xhat.row(i)) / d;
    dx.row(i) = cache.rstd(i) * (dxhat.row(i).array() - mean_d - cache.xhat.row(i).array() * mean_dx).matrix();
  }
  return dx;
}

struct LayerCache {
  LnCache ln1;
  RMat h1;
  RMat qkv;
  std::vector<RMat> probs;
  RMat attn;
  LnCache ln2;
  RMat h2;
  RMat pre;
  RMat act;
};

struct Tape {
  std::vector<TokenId> tokens;
  std::vector<int> seg, pos;
  std::vector<LayerCache> layers;
  LnCache lnf;
  RMat hf;
  // output rows
  int first_row = 0;
  std::vector<TokenId> targets;
  RMat probs_out;
  std::vector<double> logprobs;
};

void check_tokens(const ModelConfig& c, std::span<const TokenId> tokens) {
  for (TokenId t : tokens) {
    if (t < 0 || t >= c.vocab_size) {
      throw DomainError("token id " + std::to_string(t) + " outside model vocabulary");
    }
  }
}

/// Runs the trunk over `tokens`, filling layer caches and the final hidden
/// states.
void forward_trunk(const Weights& w, std::span<const TokenId> tokens, Tape& tape) {
  const auto& c = w.cfg();
  const auto& L = w.layout();
  const int n = static_cast<int>(tokens.size());
  const int d = c.d_model;
  const int h = c.n_heads;
  const int dh = d / h;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  tape.tokens.assign(tokens.begin(), tokens.end());
  tape.seg.resize(static_cast<std::size_t>(n));
  tape.pos.resize(static_cast<std::size_t>(n));
  LayoutCursor cursor(c.markers, c.context_window);
  RMat x(n, d);
  const auto tok = w.mat(L.tok, c.vocab_size, d);
  const auto pos = w.mat(L.pos, c.context_window, d);
  const auto seg = w.mat(L.seg, kNumSegments, d);
  for (int i = 0; i < n; ++i) {
    const auto slot = cursor.next(tokens[static_cast<std::size_t>(i)]);
    tape.seg[static_cast<std::size_t>(i)] = slot.segment;
    tape.pos[static_cast<std::size_t>(i)] = slot.position;
    x.row(i) = tok.row(tokens[static_cast<std::size_t>(i)]) + pos.row(slot.position) + seg.row(slot.segment);
  }

  tape.layers.resize(static_cast<std::size_t>(c.n_layers));
  for (int l = 0; l < c.n_layers; ++l) {
    const auto& lo = L.layers[static_cast<std::size_t>(l)];
    auto& lc = tape.layers[static_cast<std::size_t>(l)];
    lc.h1 = layer_norm(x, w.vec(lo.ln1_g, d), w.vec(lo.ln1_b, d), lc.ln1);
    lc.qkv = (lc.h1 * w.mat(lo.wqkv, d, 3 * d)).rowwise() + w.vec(lo.bqkv, 3 * d);
    lc.attn.resize(n, d);
    lc.probs.resize(static_cast<std::size_t>(h));
    for (int hd = 0; hd < h; ++hd) {
      const auto q = lc.qkv.middleCols(hd * dh, dh);
      const auto k = lc.qkv.middleCols(d + hd * dh, dh);
      const auto v = lc.qkv.middleCols(2 * d + hd * dh, dh);
      RMat s = (q * k.transpose()) * scale;
      for (int i = 0; i < n; ++i) {
        const double mx = s.row(i).head(i + 1).maxCoeff();
        double z = 0.0;
        for (int j = 0; j <= i; ++j) {
          const double e = std::exp(s(i, j) - mx);
          s(i, j) = e;
          z += e;
        }
        s.row(i).head(i + 1) /= z;
        s.row(i).tail(n - i - 1).setZero();
      }
      lc.attn.middleCols(hd * dh, dh) = s * v;
      lc.probs[static_cast<std::size_t>(hd)] = std::move(s);
    }
    x += (lc.attn * w.mat(lo.wo, d, d)).rowwise() + w.vec(lo.bo, d);
    lc.h2 = layer_norm(x, w.vec(lo.ln2_g, d), w.vec(lo.ln2_b, d), lc.ln2);
    lc.pre = (lc.h2 * w.mat(lo.w1, d, c.d_ff)).rowwise() + w.vec(lo.b1, c.d_ff);
    lc.act = lc.pre.unaryExpr(&gelu);
    x += (lc.act * w.mat(lo.w2, c.d_ff, d)).rowwise() + w.vec(lo.b2, d);
  }
  tape.hf = layer_norm(x, w.vec(L.lnf_g, d), w.vec(L.lnf_b, d), tape.lnf);
}

/// Full forward for prompt + target[:-1], scoring each target token.
Tape forward(const Weights& w, std::span<const TokenId> prompt, std::span<const TokenId> target) {
  const auto& c = w.cfg();
  check_tokens(c, prompt);
  check_tokens(c, target);
  if (prompt.size() + target.size() > static_cast<std::size_t>(c.context_window)) {
    throw CapacityError("sequence of " + std::to_string(prompt.size() + target.size()) +
                        " tokens exceeds context window " + std::to_string(c.context_window));
  }
  Tape tape;
  if (target.empty()) return tape;
  if (prompt.empty()) throw DomainError("eval_logprobs: empty prompt");

  std::vector<TokenId> input(prompt.begin(), prompt.end());
  input.insert(input.end(), target.begin(), target.end() - 1);
  forward_trunk(w, input, tape);

  const auto& L = w.layout();
  const int m = static_cast<int>(target.size());
  tape.first_row = static_cast<int>(prompt.size()) - 1;
  tape.targets.assign(target.begin(), target.end());
  RMat logits = (tape.hf.middleRows(tape.first_row, m) * w.mat(L.wout, c.d_model, c.vocab_size)).rowwise() +
                w.vec(L.bout, c.vocab_size);
  tape.probs_out.resize(m, c.vocab_size);
  tape.logprobs.resize(static_cast<std::size_t>(m));
  for (int t = 0; t < m; ++t) {
    const double mx = logits.row(t).maxCoeff();
    const double lse = mx + std::log((logits.row(t).array() - mx).exp().sum());
    tape.probs_out.row(t) = (logits.row(t).array() - lse).exp().matrix();
    tape.logprobs[static_cast<std::size_t>(t)] = logits(t, target[static_cast<std::size_t>(t)]) - lse;
  }
  return tape;
}

void backward(const Weights& w, const Tape& tape, std::span<const double> dlogp, std::span<double> grad_out) {
  const auto& c = w.cfg();
  const auto& L = w.layout();
  // caller buffers have arbitrary alignment; accumulate in aligned scratch.
  // Reused per thread: a fresh parameter-sized aligned block per call fragments the heap.
  thread_local ParamVector scratch;
  scratch.assign(grad_out.size(), 0.0);
  GradViews g(L, scratch);
  const int n = static_cast<int>(tape.tokens.size());
  const int d = c.d_model;
  const int h = c.n_heads;
  const int dh = d / h;
  const int m = static_cast<int>(tape.targets.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // output head
  RMat dz = tape.probs_out;
  for (int t = 0; t < m; ++t) {
    const double wt = dlogp[static_cast<std::size_t>(t)];
    dz.row(t) *= -wt;
    dz(t, tape.targets[static_cast<std::size_t>(t)]) += wt;
  }
  g.mat(L.wout, d, c.vocab_size).noalias() += tape.hf.middleRows(tape.first_row, m).transpose() * dz;
  g.vec(L.bout, c.vocab_size) += dz.colwise().sum();
  RMat dhf = RMat::Zero(n, d);
  dhf.middleRows(tape.first_row, m).noalias() = dz * w.mat(L.wout, d, c.vocab_size).transpose();
  RMat dx = layer_norm_backward(dhf, tape.lnf, w.vec(L.lnf_g, d), g.vec(L.lnf_g, d), g.vec(L.lnf_b, d));

  for (int l = c.n_layers - 1; l >= 0; --l) {
    const auto& lo = L.layers[static_cast<std::size_t>(l)];
    const auto& lc = tape.layers[static_cast<std::size_t>(l)];
    // feed-forward
    g.mat(lo.w2, c.d_ff, d).noalias() += lc.act.transpose() * dx;
    g.vec(lo.b2, d) += dx.colwise().sum();
    RMat dpre = dx * w.mat(lo.w2, c.d_ff, d).transpose();
    dpre.array() *= lc.pre.unaryExpr(&gelu_grad).array();
    g.mat(lo.w1, d, c.d_ff).noalias() += lc.h2.transpose() * dpre;
    g.vec(lo.b1, c.d_ff) += dpre.colwise().sum();
    const RMat dh2 = dpre * w.mat(lo.w1, d, c.d_ff).transpose();
    dx += layer_norm_backward(dh2, lc.ln2, w.vec(lo.ln2_g, d), g.vec(lo.ln2_g, d), g.vec(lo.ln2_b, d));

    // attention
    g.mat(lo.wo, d, d).noalias() += lc.attn.transpose() * dx;
    g.vec(lo.bo, d) += dx.colwise().sum();
    const RMat dattn = dx * w.mat(lo.wo, d, d).transpose();
    RMat dqkv(n, 3 * d);
    for (int hd = 0; hd < h; ++hd) {
      const auto& p = lc.probs[static_cast<std::size_t>(hd)];
      const auto q = lc.qkv.middleCols(hd * dh, dh);
      const auto k = lc.qkv.middleCols(d + hd * dh, dh);
      const auto v = lc.qkv.middleCols(2 * d + hd * dh, dh);
      const auto dout = dattn.middleCols(hd * dh, dh);
      dqkv.middleCols(2 * d + hd * dh, dh).noalias() = p.transpose() * dout;
      RMat dp = dout * v.transpose();
      const Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
      RMat ds = p.array() * (dp.array().colwise() - rowdot.array());
      ds *= scale;
      dqkv.middleCols(hd * dh, dh).noalias() = ds * k;
      dqkv.middleCols(d + hd * dh, dh).noalias() = ds.transpose() * q;
    }
    g.mat(lo.wqkv, d, 3 * d).noalias() += lc.h1.transpose() * dqkv;
    g.vec(lo.bqkv, 3 * d) += dqkv.colwise().sum();
    const RMat dh1 = dqkv * w.mat(lo.wqkv, d, 3 * d).transpose();
    dx += layer_norm_backward(dh1, lc.ln1, w.vec(lo.ln1_g, d), g.vec(lo.ln1_g, d), g.vec(lo.ln1_b, d));
  }

  auto gtok = g.mat(L.tok, c.vocab_size, d);
  auto gpos = g.mat(L.pos, c.context_window, d);
  auto gseg = g.mat(L.seg, kNumSegments, d);
  for (int i = 0; i < n; ++i) {
    const auto si = static_cast<std::size_t>(i);
    gtok.row(tape.tokens[si]) += dx.row(i);
    gpos.row(tape.pos[si]) += dx.row(i);
    gseg.row(tape.seg[si]) += dx.row(i);
  }
  for (std::size_t i = 0; i < grad_out.size(); ++i) grad_out[i] += scratch[i];
}

/// KV cache for incremental decoding.
struct DecodeState {
  std::vector<RMat> keys, values;  // per layer, capacity rows
  int length = 0;
  LayoutCursor cursor;
  RowVec logits;
};

DecodeState prefill(const Weights& w, std::span<const TokenId> prompt) {
  const auto& c = w.cfg();
  const auto& L = w.layout();
  check_tokens(c, prompt);
  if (prompt.empty()) throw DomainError("sample: empty prompt");
  if (prompt.size() >= static_cast<std::size_t>(c.context_window)) {
    throw CapacityError("prompt of " + std::to_string(prompt.size()) + " tokens leaves no room in context window " +
                        std::to_string(c.context_window));
  }
  Tape tape;
  forward_trunk(w, prompt, tape);
  const int d = c.d_model;
  const int n = static_cast<int>(prompt.size());
  DecodeState st{{}, {}, n, LayoutCursor(c.markers, c.context_window), RowVec()};
  for (TokenId t : prompt) st.cursor.next(t);
  for (const auto& lc : tape.layers) {
    RMat k(c.context_window, d), v(c.context_window, d);
    k.topRows(n) = lc.qkv.middleCols(d, d);
    v.topRows(n) = lc.qkv.middleCols(2 * d, d);
    st.keys.push_back(std::move(k));
    st.values.push_back(std::move(v));
  }
  st.logits = tape.hf.row(n - 1) * w.mat(L.wout, d, c.vocab_size) + w.vec(L.bout, c.vocab_size);
  return st;
}

RowVec ln_row(const RowVec& x, const CRowMap& g, const CRowMap& b) {
  const double dd = static_cast<double>(x.size());
  const double mean = x.sum() / dd;
  const RowVec centered = (x.array() - mean).matrix();
  const double rstd = 1.0 / std::sqrt(centered.squaredNorm() / dd + kLnEps);
  return ((centered * rstd).array() * g.array() + b.array()).matrix();
}

void decode_step(const Weights& w, DecodeState& st, TokenId token) {
  const auto& c = w.cfg();
  const auto& L = w.layout();
  const int d = c.d_model;
  const int h = c.n_heads;
  const int dh = d / h;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto slot = st.cursor.next(token);
  RowVec x = w.mat(L.tok, c.vocab_size, d).row(token) + w.mat(L.pos, c.context_window, d).row(slot.position) +
             w.mat(L.seg, kNumSegments, d).row(slot.segment);
  const int i = st.length;
  for (int l = 0; l < c.n_layers; ++l) {
    const auto& lo = L.layers[static_cast<std::size_t>(l)];
    const RowVec h1 = ln_row(x, w.vec(lo.ln1_g, d), w.vec(lo.ln1_b, d));
    const RowVec qkv = h1 * w.mat(lo.wqkv, d, 3 * d) + w.vec(lo.bqkv, 3 * d);
    auto& K = st.keys[static_cast<std::size_t>(l)];
    auto& V = st.values[static_cast<std::size_t>(l)];
    K.row(i) = qkv.segment(d, d);
    V.row(i) = qkv.segment(2 * d, d);
    RowVec attn(d);
    for (int hd = 0; hd < h; ++hd) {
      const auto q = qkv.segment(hd * dh, dh);
      Eigen::VectorXd s = (K.block(0, hd * dh, i + 1, dh) * q.transpose()) * scale;
      const double mx = s.maxCoeff();
      s = (s.array() - mx).exp();
      s /= s.sum();
      attn.segment(hd * dh, dh) = s.transpose() * V.block(0, hd * dh, i + 1, dh);
    }
    x += attn * w.mat(lo.wo, d, d) + w.vec(lo.bo, d);
    const RowVec h2 = ln_row(x, w.vec(lo.ln2_g, d), w.vec(lo.ln2_b, d));
    const RowVec act = (h2 * w.mat(lo.w1, d, c.d_ff) + w.vec(lo.b1, c.d_ff)).unaryExpr(&gelu);
    x += act * w.mat(lo.w2, c.d_ff, d) + w.vec(lo.b2, d);
  }
  const RowVec hf = ln_row(x, w.vec(L.lnf_g, d), w.vec(L.lnf_b, d));
  st.logits = hf * w.mat(L.wout, d, c.vocab_size) + w.vec(L.bout, c.vocab_size);
  ++st.length;
}

TokenId choose(const RowVec& logits, const SamplingConfig& cfg, Rng& rng) {
  const int v = static_cast<int>(logits.size());
  const int k = std::min(cfg.top_k, v);
  std::vector<int> idx(static_cast<std::size_t>(v));
  std::iota(idx.begin(), idx.end(), 0);
  auto by_logit = [&logits](int a, int b) { return logits(a) != logits(b) ? logits(a) > logits(b) : a < b; };
  if (k < v) {
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), by_logit);
    idx.resize(static_cast<std::size_t>(k));
  }
  if (k == 1) return idx[0];
  double mx = -std::numeric_limits<double>::infinity();
  for (int i : idx) mx = std::max(mx, logits(i));
  std::vector<double> w(idx.size());
  double z = 0.0;
  for (std::size_t j = 0; j < idx.size(); ++j) {
    w[j] = std::exp((logits(idx[j]) - mx) / cfg.temperature);
    z += w[j];
  }
  const double u = uniform_unit(rng) * z;
  double acc = 0.0;
  for (std::size_t j = 0; j < idx.size(); ++j) {
    acc += w[j];
    if (u < acc) return idx[j];
  }
  return idx.back();
}

double log_softmax_at(const RowVec& logits, int i) {
  const double mx = logits.maxCoeff();
  return logits(i) - mx - std::log((logits.array() - mx).exp().sum());
}

Sample continue_sampling(const Weights& w, DecodeState st, const SamplingConfig& cfg, std::uint64_t seed,
                         std::optional<TokenId> eos) {
  Rng rng(seed);
  Sample out;
  const int limit = std::min(cfg.max_new_tokens, w.cfg().context_window - st.length);
  for (int step = 0; step < limit; ++step) {
    const TokenId tok = choose(st.logits, cfg, rng);
    out.logprobs.push_back(log_softmax_at(st.logits, tok));
    if (eos && tok == *eos) {
      out.eos_emitted = true;
      break;
    }
    out.tokens.push_back(tok);
    if (step + 1 < limit) decode_step(w, st, tok);
  }
  return out;
}

template <typename T>
void put(std::string& buf, const T& v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(const std::string& buf, std::size_t& off) {
  if (off + sizeof(T) > buf.size()) throw FormatError("checkpoint: truncated");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

constexpr char kMagic[8] = {'P', 'S', 'M', 'C', 'K', 'P', 'T', '\0'};

}  // namespace

LayoutCursor::Slot LayoutCursor::next(TokenId token) {
  Slot slot{0, 0};
  if (!markers_) {
    slot.position = index_;
  } else {
    const auto& m = *markers_;
    if (token == m.text_bos) {
      segment_ = 0;
      text_pos_ = 0;
    } else if (token == m.pre_sep) {
      segment_ = 1;
      timeline_ = 0;
    } else if (token == m.suf_sep) {
      segment_ = 2;
      suffix_pos_ = 0;
    } else if (token == m.mid_bos) {
      segment_ = 3;
    }
    slot.segment = segment_;
    switch (segment_) {
      case 0: slot.position = text_pos_++; break;
      case 2: slot.position = suffix_pos_++; break;
      default: slot.position = timeline_++; break;
    }
  }
  ++index_;
  slot.position = std::min(slot.position, max_pos_);
  return slot;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  if (context_window < 2) fail("context_window must be >= 2");
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) fail("d_model must be a positive multiple of n_heads");
  if (n_layers < 0) fail("n_layers must be >= 0");
  if (d_ff < 1) fail("d_ff must be >= 1");
  if (!(init_scale >= 0.0) || !(output_init_scale >= 0.0)) fail("init scales must be >= 0");
  if (markers) {
    for (TokenId t : {markers->text_bos, markers->pre_sep, markers->suf_sep, markers->mid_bos}) {
      if (t < 0 || t >= vocab_size) fail("layout marker outside vocabulary");
    }
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j = {{"vocab_size", c.vocab_size},
                      {"context_window", c.context_window},
                      {"d_model", c.d_model},
                      {"n_layers", c.n_layers},
                      {"n_heads", c.n_heads},
                      {"d_ff", c.d_ff},
                      {"seed", c.seed},
                      {"init_scale", c.init_scale},
                      {"output_init_scale", c.output_init_scale}};
  if (c.markers) {
    j["markers"] = {{"text_bos", c.markers->text_bos},
                    {"pre_sep", c.markers->pre_sep},
                    {"suf_sep", c.markers->suf_sep},
                    {"mid_bos", c.markers->mid_bos}};
  } else {
    j["markers"] = nullptr;
  }
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.context_window = j.at("context_window").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.init_scale = j.at("init_scale").get<double>();
  c.output_init_scale = j.at("output_init_scale").get<double>();
  if (!j.at("markers").is_null()) {
    const auto& m = j.at("markers");
    c.markers = LayoutMarkers{m.at("text_bos").get<TokenId>(), m.at("pre_sep").get<TokenId>(),
                              m.at("suf_sep").get<TokenId>(), m.at("mid_bos").get<TokenId>()};
  }
  return c;
}

ModelParams ModelParams::initialize(const ModelConfig& config) {
  config.validate();
  const auto L = layout_of(config);
  std::vector<double> v(L.total, 0.0);
  Rng rng(derive_seed(config.seed, 0x6d6f64656cULL));
  auto fill_normal = [&](std::size_t off, std::size_t n, double sd) {
    for (std::size_t i = 0; i < n; ++i) v[off + i] = sd * normal(rng);
  };
  auto fill_const = [&](std::size_t off, std::size_t n, double val) {
    std::fill(v.begin() + static_cast<std::ptrdiff_t>(off), v.begin() + static_cast<std::ptrdiff_t>(off + n), val);
  };
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto f = static_cast<std::size_t>(config.d_ff);
  const auto V = static_cast<std::size_t>(config.vocab_size);
  fill_normal(L.tok, V * d, config.init_scale);
  fill_normal(L.pos, static_cast<std::size_t>(config.context_window) * d, config.init_scale);
  fill_normal(L.seg, kNumSegments * d, config.init_scale);
  for (const auto& lo : L.layers) {
    fill_const(lo.ln1_g, d, 1.0);
    fill_normal(lo.wqkv, d * 3 * d, config.init_scale);
    fill_normal(lo.wo, d * d, config.init_scale);
    fill_const(lo.ln2_g, d, 1.0);
    fill_normal(lo.w1, d * f, config.init_scale);
    fill_normal(lo.w2, f * d, config.init_scale);
  }
  fill_const(L.lnf_g, d, 1.0);
  if (config.output_init_scale > 0.0) fill_normal(L.wout, d * V, config.output_init_scale);
  return ModelParams(config, std::move(v), 0);
}

ModelParams::ModelParams(ModelConfig config, std::vector<double> values, std::uint64_t version)
    : config_(std::move(config)), values_(values.begin(), values.end()), version_(version) {
  config_.validate();
  if (values_.size() != layout_of(config_).total) {
    throw FormatError("parameter count does not match model config");
  }
}

bool ModelParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
}

FrozenModel freeze(const ModelParams& params) { return FrozenModel(std::make_shared<const ModelParams>(params)); }

std::vector<double> eval_logprobs(const ModelParams& params, std::span<const TokenId> prompt,
                                  std::span<const TokenId> target) {
  const Weights w(params);
  return forward(w, prompt, target).logprobs;
}

std::vector<double> next_token_probs(const ModelParams& params, std::span<const TokenId> context) {
  const Weights w(params);
  const auto st = prefill(w, context);
  const double mx = st.logits.maxCoeff();
  const RowVec e = (st.logits.array() - mx).exp().matrix();
  const double z = e.sum();
  std::vector<double> out(static_cast<std::size_t>(e.size()));
  for (Eigen::Index i = 0; i < e.size(); ++i) out[static_cast<std::size_t>(i)] = e(i) / z;
  return out;
}

std::vector<double> accumulate_logprob_gradient(const ModelParams& params, std::span<const TokenId> prompt,
                                                std::span<const TokenId> target, const LogprobWeights& weights,
                                                std::span<double> grad) {
  if (grad.size() != params.size()) throw DomainError("gradient buffer size mismatch");
  const Weights w(params);
  Tape tape = forward(w, prompt, target);
  if (target.empty()) return {};
  std::vector<double> dl(tape.logprobs.size(), 0.0);
  weights(tape.logprobs, dl);
  backward(w, tape, dl, grad);
  return std::move(tape.logprobs);
}

void SamplingConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("sampling: temperature must be > 0");
  if (top_k < 1) throw ConfigError("sampling: top_k must be >= 1");
  if (max_new_tokens < 1) throw ConfigError("sampling: max_new_tokens must be >= 1");
}

nlohmann::json to_json(const SamplingConfig& c) {
  return {{"temperature", c.temperature}, {"top_k", c.top_k}, {"max_new_tokens", c.max_new_tokens}, {"seed", c.seed}};
}

SamplingConfig sampling_config_from_json(const nlohmann::json& j) {
  SamplingConfig c;
  c.temperature = j.value("temperature", c.temperature);
  c.top_k = j.value("top_k", c.top_k);
  c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

TokenSeq Sample::actions(TokenId eos) const {
  TokenSeq a = tokens;
  if (eos_emitted) a.push_back(eos);
  return a;
}

Sample sample(const ModelParams& params, std::span<const TokenId> prompt, const SamplingConfig& config,
              std::optional<TokenId> eos) {
  config.validate();
  const Weights w(params);
  return continue_sampling(w, prefill(w, prompt), config, config.seed, eos);
}

std::vector<Sample> sample_many(const ModelParams& params, std::span<const TokenId> prompt,
                                const SamplingConfig& config, std::span<const std::uint64_t> seeds,
                                std::optional<TokenId> eos) {
  config.validate();
  const Weights w(params);
  const auto st = prefill(w, prompt);
  std::vector<Sample> out;
  out.reserve(seeds.size());
  for (std::uint64_t s : seeds) out.push_back(continue_sampling(w, st, config, s, eos));
  return out;
}

void OptimizerConfig::validate() const {
  if (kind != "sgd" && kind != "adam") throw ConfigError("optimizer: kind must be \"sgd\" or \"adam\"");
  if (!(learning_rate >= 0.0)) throw ConfigError("optimizer: learning_rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("optimizer: betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be > 0");
  if (!(clip_norm >= 0.0)) throw ConfigError("optimizer: clip_norm must be >= 0");
}

nlohmann::json to_json(const OptimizerConfig& c) {
  return {{"kind", c.kind},   {"learning_rate", c.learning_rate}, {"beta1", c.beta1},
          {"beta2", c.beta2}, {"epsilon", c.epsilon},             {"clip_norm", c.clip_norm}};
}

OptimizerConfig optimizer_config_from_json(const nlohmann::json& j) {
  OptimizerConfig c;
  c.kind = j.value("kind", c.kind);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.validate();
  return c;
}

Optimizer::Optimizer(OptimizerConfig config, std::size_t num_params) : config_(std::move(config)) {
  config_.validate();
  if (config_.kind == "adam") {
    m_.assign(num_params, 0.0);
    v_.assign(num_params, 0.0);
  }
}

double Optimizer::step(ModelParams& params, std::span<const double> grad) {
  if (grad.size() != params.size()) throw DomainError("optimizer: gradient size mismatch");
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw TrainingError("optimizer: non-finite gradient");
  const double scale = (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;
  auto p = params.values();
  const double lr = config_.learning_rate;
  ++t_;
  if (config_.kind == "sgd") {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * (scale * grad[i]);
  } else {
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = scale * grad[i];
      m_[i] = b1 * m_[i] + (1.0 - b1) * g;
      v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
      p[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + config_.epsilon);
    }
  }
  params.bump_version();
  if (!params.all_finite()) throw TrainingError("optimizer: parameters became non-finite");
  return norm;
}

void Optimizer::restore(std::vector<double> m, std::vector<double> v, std::uint64_t t) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw FormatError("optimizer state size mismatch");
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

SftStepResult sft_update(ModelParams& params, std::span<const SftExample> batch, Optimizer& optimizer,
                         std::uint64_t batch_id) {
  if (batch.empty()) throw DomainError("sft_update: empty batch");
  std::size_t total = 0;
  for (const auto& ex : batch) total += ex.target.size();
  if (total == 0) throw DomainError("sft_update: batch has no target tokens");
  const double wt = -1.0 / static_cast<double>(total);
  std::vector<double> grad(params.size(), 0.0);
  double nll = 0.0;
  for (const auto& ex : batch) {
    const auto lp = accumulate_logprob_gradient(
        params, ex.prompt, ex.target, [wt](std::span<const double>, std::span<double> w) { std::fill(w.begin(), w.end(), wt); },
        grad);
    for (double l : lp) nll -= l;
  }
  SftStepResult res;
  res.mean_nll = nll / static_cast<double>(total);
  res.tokens = total;
  if (!std::isfinite(res.mean_nll)) {
    throw TrainingError("sft_update: non-finite loss in batch " + std::to_string(batch_id));
  }
  res.grad_norm = optimizer.step(params, grad);
  return res;
}

SftStepResult sft_update(ModelParams& params, std::span<const SftExample> batch, double learning_rate,
                         std::uint64_t batch_id) {
  OptimizerConfig oc;
  oc.kind = "sgd";
  oc.learning_rate = learning_rate;
  Optimizer opt(oc, params.size());
  return sft_update(params, batch, opt, batch_id);
}

double mean_nll(const ModelParams& params, std::span<const SftExample> batch) {
  double nll = 0.0;
  std::size_t total = 0;
  for (const auto& ex : batch) {
    for (double l : eval_logprobs(params, ex.prompt, ex.target)) nll -= l;
    total += ex.target.size();
  }
  return total == 0 ? 0.0 : nll / static_cast<double>(total);
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const Optimizer* optimizer,
                     const nlohmann::json& meta) {
  static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
  nlohmann::json header = {{"model", to_json(params.config())},
                           {"version", params.version()},
                           {"num_params", params.size()},
                           {"meta", meta}};
  if (optimizer != nullptr) {
    header["optimizer"] = {{"config", to_json(optimizer->config())},
                           {"steps", optimizer->steps()},
                           {"has_moments", !optimizer->first_moment().empty()}};
  } else {
    header["optimizer"] = nullptr;
  }
  const std::string hs = header.dump();
  std::string buf;
  buf.append(kMagic, sizeof(kMagic));
  put(buf, kCheckpointVersion);
  put(buf, static_cast<std::uint64_t>(hs.size()));
  buf += hs;
  auto put_doubles = [&buf](std::span<const double> v) {
    buf.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  };
  put_doubles(params.values());
  if (optimizer != nullptr && !optimizer->first_moment().empty()) {
    put_doubles(optimizer->first_moment());
    put_doubles(optimizer->second_moment());
  }
  const std::string digest = io::sha256_hex(buf);
  buf += digest;
  io::write_file_atomic(path, buf);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string buf = io::read_file(path);
  constexpr std::size_t kDigest = 64;
  if (buf.size() < sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t) + kDigest ||
      std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("checkpoint: bad magic in " + path.string());
  }
  std::size_t off = sizeof(kMagic);
  const auto version = get<std::uint32_t>(buf, off);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::string_view body(buf.data(), buf.size() - kDigest);
  if (io::sha256_hex(body) != std::string_view(buf).substr(buf.size() - kDigest)) {
    throw FormatError("checkpoint: checksum mismatch in " + path.string());
  }
  const auto hlen = get<std::uint64_t>(buf, off);
  if (off + hlen > body.size()) throw FormatError("checkpoint: truncated header");
  const auto header = nlohmann::json::parse(buf.substr(off, hlen));
  off += hlen;
  const auto n = header.at("num_params").get<std::size_t>();
  auto read_doubles = [&](std::size_t count) {
    if (off + count * sizeof(double) > body.size()) throw FormatError("checkpoint: truncated payload");
    std::vector<double> v(count);
    std::memcpy(v.data(), buf.data() + off, count * sizeof(double));
    off += count * sizeof(double);
    return v;
  };
  ModelParams params(model_config_from_json(header.at("model")), read_doubles(n),
                     header.at("version").get<std::uint64_t>());
  std::optional<Optimizer> opt;
  if (!header.at("optimizer").is_null()) {
    const auto& oj = header.at("optimizer");
    opt.emplace(optimizer_config_from_json(oj.at("config")), n);
    std::vector<double> m, v;
    if (oj.at("has_moments").get<bool>()) {
      m = read_doubles(n);
      v = read_doubles(n);
    }
    opt->restore(std::move(m), std::move(v), oj.at("steps").get<std::uint64_t>());
  }
  if (off != body.size()) throw FormatError("checkpoint: trailing bytes");
  return Checkpoint{std::move(params), std::move(opt), header.at("meta")};
}

}  // namespace psmedit
