#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "samsa/checkpoint.hpp"
#include "samsa/counters.hpp"
#include "samsa/gumbel.hpp"
#include "samsa/ops.hpp"
#include "samsa/sampler.hpp"
#include "samsa/tensor.hpp"

namespace samsa {

enum class ScoreInput { raw, normed };

struct AttentionConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t k = 32;
  std::size_t d_ffn = 128;
  SampleMode mode = SampleMode::hard;
  Locality locality = Locality::truncated;
  double tau = 1.0;
  double p_dropout = 0.0;
  double p_droppath = 0.0;
  bool training = false;
  // Noise toggles only take effect while training.
  bool score_noise = true;
  bool pair_noise = true;
  ScoreInput score_input = ScoreInput::raw;

  std::size_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
      throw std::invalid_argument("attention config: d_model=" + std::to_string(d_model) +
                                  " is not divisible by n_heads=" + std::to_string(n_heads));
    if (k == 0) throw std::invalid_argument("attention config: k must be >= 1");
    if (d_ffn == 0) throw std::invalid_argument("attention config: d_FFN must be >= 1");
    if (p_dropout < 0.0 || p_dropout >= 1.0 || p_droppath < 0.0 || p_droppath >= 1.0)
      throw std::invalid_argument("attention config: dropout probabilities must lie in [0, 1)");
    (void)Temperature{tau};
  }

  SamplerOptions sampler_options() const {
    return {mode, locality, Temperature{tau}, training && pair_noise};
  }
};

template <class Real>
struct LayerParams {
  Tensor<Real> wq, bq;
  Tensor<Real> wkv, bkv;
  Tensor<Real> score_w1, score_b1, score_w2, score_b2;
  Tensor<Real> p_supp, z_supp;
  Tensor<Real> norm1, norm2;
  Tensor<Real> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor<Real> wo, bo;

  static LayerParams init(const AttentionConfig& cfg, std::mt19937_64& gen) {
    cfg.validate();
    const std::size_t d = cfg.d_model, h = cfg.n_heads, k = cfg.k, f = cfg.d_ffn;
    LayerParams p;
    p.wq = uniform(d, d, gen);
    p.bq = Tensor<Real>::zeros({1, d}, true);
    p.wkv = uniform(d, 2 * d, gen);
    p.bkv = Tensor<Real>::zeros({1, 2 * d}, true);
    p.score_w1 = uniform(d, d, gen);
    p.score_b1 = Tensor<Real>::zeros({1, d}, true);
    p.score_w2 = uniform(d, h, gen);
    p.score_b2 = Tensor<Real>::zeros({1, h}, true);
    p.p_supp = uniform(2 * k, 2 * d, gen, d);
    p.z_supp = Tensor<Real>::zeros({2 * k, h}, true);
    p.norm1 = Tensor<Real>::full({d}, Real(1), true);
    p.norm2 = Tensor<Real>::full({d}, Real(1), true);
    p.ffn_w1 = uniform(d, f, gen);
    p.ffn_b1 = Tensor<Real>::zeros({1, f}, true);
    p.ffn_w2 = uniform(f, d, gen);
    p.ffn_b2 = Tensor<Real>::zeros({1, d}, true);
    p.wo = uniform(d, d, gen);
    p.bo = Tensor<Real>::zeros({1, d}, true);
    return p;
  }

  std::vector<NamedTensor<Real>> named(const std::string& prefix) const {
    return {{prefix + "wq", wq},         {prefix + "bq", bq},
            {prefix + "wkv", wkv},       {prefix + "bkv", bkv},
            {prefix + "score_w1", score_w1}, {prefix + "score_b1", score_b1},
            {prefix + "score_w2", score_w2}, {prefix + "score_b2", score_b2},
            {prefix + "p_supp", p_supp}, {prefix + "z_supp", z_supp},
            {prefix + "norm1", norm1},   {prefix + "norm2", norm2},
            {prefix + "ffn_w1", ffn_w1}, {prefix + "ffn_b1", ffn_b1},
            {prefix + "ffn_w2", ffn_w2}, {prefix + "ffn_b2", ffn_b2},
            {prefix + "wo", wo},         {prefix + "bo", bo}};
  }

  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)), matching the usual linear-layer default.
  static Tensor<Real> uniform(std::size_t rows, std::size_t cols, std::mt19937_64& gen,
                              std::size_t fan_in = 0) {
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in ? fan_in : rows));
    std::uniform_real_distribution<double> dist(-a, a);
    std::vector<Real> v(rows * cols);
    for (auto& x : v) x = static_cast<Real>(dist(gen));
    return Tensor<Real>::matrix(rows, cols, std::move(v), true);
  }
};

// Which candidate rows each head attended to; filled on request.
struct LayerTrace {
  std::vector<HeadSample> heads;
  std::size_t candidates = 0;
};

// softmax(Q K^T / sqrt(d_h)) V
template <class Real>
Tensor<Real> scaled_dot_attention(const Tensor<Real>& q, const Tensor<Real>& k,
                                  const Tensor<Real>& v) {
  if (k.rows() == 0) throw ShapeError("scaled_dot_attention: no keys");
  if (k.rows() != v.rows()) throw shape_mismatch("scaled_dot_attention", k.shape(), v.shape());
  if (q.cols() != k.cols()) throw shape_mismatch("scaled_dot_attention", q.shape(), k.shape());
  op_counters().attention_scores += q.rows() * k.rows();
  const Real s = Real(1) / std::sqrt(static_cast<Real>(q.cols()));
  return matmul(softmax_lastdim(scale(matmul_nt(q, k), s)), v);
}

// Stochastic depth: the whole branch is dropped with probability p.
template <class Real>
Tensor<Real> drop_path(const Tensor<Real>& x, double p, GumbelRng& rng) {
  if (p <= 0.0) return x;
  const bool keep = rng.uniform() >= p;
  return scale(x, keep ? static_cast<Real>(1.0 / (1.0 - p)) : Real(0));
}

namespace detail {

template <class Real>
Tensor<Real> residual_branch(const Tensor<Real>& x, const Tensor<Real>& branch,
                             const Tensor<Real>& alpha, const AttentionConfig& cfg,
                             GumbelRng* rng) {
  Tensor<Real> b = branch;
  if (cfg.training && cfg.p_droppath > 0.0) b = drop_path(b, cfg.p_droppath, *rng);
  return add(x, scalar_mul(alpha, b));
}

template <class Real>
Tensor<Real> ffn_block(const Tensor<Real>& x, const LayerParams<Real>& p,
                       const Tensor<Real>& alpha, const AttentionConfig& cfg, GumbelRng* rng) {
  const auto xh = rms_norm(x, p.norm2);
  auto hidden = gelu(linear(xh, p.ffn_w1, p.ffn_b1));
  if (cfg.training && cfg.p_dropout > 0.0)
    hidden = dropout(hidden, static_cast<Real>(cfg.p_dropout), rng->engine());
  return residual_branch(x, linear(hidden, p.ffn_w2, p.ffn_b2), alpha, cfg, rng);
}

// Per-head attention of q against key/value rows. Head t reads keys from
// columns [t*d_h, (t+1)*d_h) and values from [d + t*d_h, d + (t+1)*d_h) of
// its own block of `kv_rows` rows starting at row t*rows_per_head (or of the
// whole matrix when rows_per_head == 0).
template <class Real>
Tensor<Real> multi_head_attend(const Tensor<Real>& q, const Tensor<Real>& kv,
                               std::size_t rows_per_head, const AttentionConfig& cfg) {
  const std::size_t d = cfg.d_model, dh = cfg.head_dim();
  std::vector<Tensor<Real>> heads;
  heads.reserve(cfg.n_heads);
  for (std::size_t t = 0; t < cfg.n_heads; ++t) {
    const std::size_t r0 = rows_per_head ? t * rows_per_head : 0;
    const std::size_t r1 = rows_per_head ? r0 + rows_per_head : kv.rows();
    const auto qt = slice_cols(q, t * dh, (t + 1) * dh);
    const auto kt = slice(kv, r0, r1, t * dh, (t + 1) * dh);
    const auto vt = slice(kv, r0, r1, d + t * dh, d + (t + 1) * dh);
    heads.push_back(scaled_dot_attention(qt, kt, vt));
  }
  return heads.size() == 1 ? heads.front() : concat_cols(heads);
}

template <class Real>
void require_layer_input(const Tensor<Real>& x, const AttentionConfig& cfg, GumbelRng* rng) {
  require_rank2("layer", x);
  if (x.rows() == 0) throw ShapeError("layer: no input tokens");
  if (x.cols() != cfg.d_model) throw shape_mismatch("layer", x.shape(), {x.rows(), cfg.d_model});
  if (cfg.training && !rng)
    throw std::invalid_argument("layer: training mode needs a random stream");
}

}  // namespace detail

// Importance scores: a two-layer perceptron producing one logit per head.
template <class Real>
Tensor<Real> importance_scores(const Tensor<Real>& x, const LayerParams<Real>& p) {
  return linear(gelu(linear(x, p.score_w1, p.score_b1)), p.score_w2, p.score_b2);
}

// One sampling transformer layer:
//   Xn = RMSNorm(X); Q, P = projections of Xn; Z = scores(X) (+ Gumbel while
//   training); P, Z += support rows; per-head sample k rows of P; attend;
//   X += alpha * attn; X += alpha * FFN(RMSNorm(X)).
template <class Real>
Tensor<Real> samsa_layer_forward(const Tensor<Real>& x, const LayerParams<Real>& p,
                                 const Tensor<Real>& alpha, const AttentionConfig& cfg,
                                 GumbelRng* rng = nullptr, LayerTrace* trace = nullptr) {
  detail::require_layer_input(x, cfg, rng);
  const auto xh = rms_norm(x, p.norm1);
  const auto q = linear(xh, p.wq, p.bq);
  const auto kv = linear(xh, p.wkv, p.bkv);

  auto z = importance_scores(cfg.score_input == ScoreInput::raw ? x : xh, p);
  if (cfg.training && cfg.score_noise) z = add(z, gumbel_noise<Real>(*rng, z.shape()));
  const auto candidates = concat_rows<Real>({kv, p.p_supp});
  const auto scores = concat_rows<Real>({z, p.z_supp});

  auto sampled = multi_head_sample(scores, candidates, cfg.k, cfg.sampler_options(), rng);
  if (trace) {
    trace->heads = sampled.heads;
    trace->candidates = candidates.rows();
  }
  auto attn = linear(detail::multi_head_attend(q, sampled.rows, cfg.k, cfg), p.wo, p.bo);
  if (cfg.training && cfg.p_dropout > 0.0)
    attn = dropout(attn, static_cast<Real>(cfg.p_dropout), rng->engine());
  const auto x1 = detail::residual_branch(x, attn, alpha, cfg, rng);
  return detail::ffn_block(x1, p, alpha, cfg, rng);
}

// Same block with every head attending to all n projected key/value rows.
template <class Real>
Tensor<Real> full_attention_layer_forward(const Tensor<Real>& x, const LayerParams<Real>& p,
                                          const Tensor<Real>& alpha, const AttentionConfig& cfg,
                                          GumbelRng* rng = nullptr) {
  detail::require_layer_input(x, cfg, rng);
  const auto xh = rms_norm(x, p.norm1);
  const auto q = linear(xh, p.wq, p.bq);
  const auto kv = linear(xh, p.wkv, p.bkv);
  auto attn = linear(detail::multi_head_attend(q, kv, 0, cfg), p.wo, p.bo);
  if (cfg.training && cfg.p_dropout > 0.0)
    attn = dropout(attn, static_cast<Real>(cfg.p_dropout), rng->engine());
  const auto x1 = detail::residual_branch(x, attn, alpha, cfg, rng);
  return detail::ffn_block(x1, p, alpha, cfg, rng);
}

}  // namespace samsa
