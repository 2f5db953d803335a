#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "samsa/counters.hpp"
#include "samsa/gumbel.hpp"
#include "samsa/kernels.hpp"
#include "samsa/ops.hpp"
#include "samsa/tensor.hpp"

namespace samsa {

enum class SampleMode { hard, soft };
enum class Locality { full, truncated };

struct SamplerOptions {
  SampleMode mode = SampleMode::hard;
  Locality locality = Locality::truncated;
  Temperature tau{1.0};
  // Fresh Gumbel noise inside each pairwise sigmoid (training only).
  bool pair_noise = false;
};

class SamplerError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

// Descending by score, lower index first on ties.
template <class Real>
auto score_order(std::span<const Real> z) {
  return [z](std::size_t a, std::size_t b) {
    return z[a] > z[b] || (z[a] == z[b] && a < b);
  };
}

// The `count` highest-ranked indices of z, in rank order. Partial selection
// followed by a sort of the prefix: O(n + count log count).
template <class Real>
std::vector<std::size_t> ranked_prefix(std::span<const Real> z, std::size_t count) {
  std::vector<std::size_t> idx(z.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto cmp = score_order(z);
  if (count < idx.size()) {
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(), cmp);
    idx.resize(count);
  }
  std::sort(idx.begin(), idx.end(), cmp);
  op_counters().selection_work += z.size();
  return idx;
}

}  // namespace detail

// Indices of the k largest scores, descending, ties broken by lower index.
template <class Real>
std::vector<std::size_t> arg_topk(std::span<const Real> z, std::size_t k) {
  if (k == 0 || k > z.size()) {
    throw SamplerError("arg_topk: k=" + std::to_string(k) + " outside [1, " +
                       std::to_string(z.size()) + "]");
  }
  return detail::ranked_prefix(z, k);
}

template <class Real>
std::vector<std::size_t> arg_topk(const Tensor<Real>& z, std::size_t k) {
  return arg_topk(z.data(), k);
}

// One head's selection: top set i, locality set j, and the Gumbel noise used
// inside the pairwise relaxations (empty when noise is off).
template <class Real>
struct HeadSelection {
  std::vector<std::size_t> i;
  std::vector<std::size_t> j;
  std::vector<Real> pair_noise;  // k x |j|, row-major
};

template <class Real>
struct SampleResult {
  std::vector<std::size_t> i;
  std::vector<std::size_t> j;
  std::vector<Real> p;  // k x |j| forward relaxation values
  Tensor<Real> rows;    // k x c
};

namespace detail {

inline std::size_t locality_size(std::size_t n, std::size_t k, Locality loc) {
  return loc == Locality::truncated ? k : n - k;
}

inline void check_candidates(std::string_view op, std::size_t n, std::size_t k, Locality loc) {
  const bool ok = k >= 1 && (loc == Locality::truncated ? n >= 2 * k : n > k);
  if (!ok) {
    throw SamplerError(std::string(op) + ": k=" + std::to_string(k) + " exceeds the " +
                       std::to_string(n) + " available candidates (" +
                       (loc == Locality::truncated ? "truncated locality needs n >= 2k"
                                                   : "full locality needs n > k") +
                       ")");
  }
}

template <class Real>
HeadSelection<Real> select_head(std::span<const Real> z, std::size_t k,
                                const SamplerOptions& opt, GumbelRng* rng) {
  const std::size_t nj = locality_size(z.size(), k, opt.locality);
  auto ranked = ranked_prefix(z, k + nj);
  HeadSelection<Real> sel;
  sel.i.assign(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k));
  sel.j.assign(ranked.begin() + static_cast<std::ptrdiff_t>(k), ranked.end());
  if (opt.pair_noise) {
    if (!rng) throw SamplerError("sampler: pair noise requested without a random stream");
    sel.pair_noise.resize(k * nj);
    for (auto& g : sel.pair_noise) g = static_cast<Real>(rng->gumbel());
  }
  return sel;
}

// Soft relaxation p[m,v] = sigma((z_i - z_j + g) / tau).
template <class Real>
std::vector<Real> soft_pairs(const HeadSelection<Real>& sel, std::span<const Real> z, Real inv_tau) {
  const std::size_t k = sel.i.size(), nj = sel.j.size();
  std::vector<Real> p(k * nj);
  for (std::size_t m = 0; m < k; ++m)
    for (std::size_t v = 0; v < nj; ++v) {
      Real t = z[sel.i[m]] - z[sel.j[v]];
      if (!sel.pair_noise.empty()) t += sel.pair_noise[m * nj + v];
      p[m * nj + v] = vmath::sigmoid(t * inv_tau);
    }
  return p;
}

// rows[m] = sum_v (X[i_m] p[m,v] + X[j_v] (1 - p[m,v])) / |j|, or X[i_m]
// exactly in hard mode. Returns the forward p.
template <class Real>
std::vector<Real> blend_forward(const HeadSelection<Real>& sel, std::span<const Real> z,
                                const Real* x, std::size_t c, SampleMode mode, Real inv_tau,
                                Real* out) {
  const std::size_t k = sel.i.size(), nj = sel.j.size();
  if (mode == SampleMode::hard) {
    for (std::size_t m = 0; m < k; ++m) std::copy_n(x + sel.i[m] * c, c, out + m * c);
    return std::vector<Real>(k * nj, Real(1));
  }
  auto p = soft_pairs(sel, z, inv_tau);
  op_counters().pair_forward += k * nj;
  const Real inv_nj = Real(1) / static_cast<Real>(nj);
  for (std::size_t m = 0; m < k; ++m) {
    Real* o = out + m * c;
    std::fill_n(o, c, Real(0));
    Real keep = 0;
    for (std::size_t v = 0; v < nj; ++v) keep += p[m * nj + v];
    kernels::axpy(keep * inv_nj, x + sel.i[m] * c, o, c);
    for (std::size_t v = 0; v < nj; ++v)
      kernels::axpy((Real(1) - p[m * nj + v]) * inv_nj, x + sel.j[v] * c, o, c);
  }
  return p;
}

// Gradient of the soft blend, used by both modes. `dz` is strided so a head can
// write into one column of a score matrix.
template <class Real>
void blend_backward(const HeadSelection<Real>& sel, std::span<const Real> z, const Real* x,
                    std::size_t c, Real inv_tau, const Real* grad_rows, Real* dz,
                    std::size_t dz_stride, Real* dx) {
  const std::size_t k = sel.i.size(), nj = sel.j.size();
  const auto p = soft_pairs(sel, z, inv_tau);
  op_counters().pair_backward += k * nj;
  const Real inv_nj = Real(1) / static_cast<Real>(nj);
  for (std::size_t m = 0; m < k; ++m) {
    const Real* gm = grad_rows + m * c;
    const Real* xi = x + sel.i[m] * c;
    const Real gi = kernels::dot(gm, xi, c);
    Real keep = 0;
    for (std::size_t v = 0; v < nj; ++v) {
      const Real pmv = p[m * nj + v];
      keep += pmv;
      const Real* xj = x + sel.j[v] * c;
      if (dz) {
        const Real dp = (gi - kernels::dot(gm, xj, c)) * inv_nj;
        const Real dt = dp * pmv * (Real(1) - pmv) * inv_tau;
        dz[sel.i[m] * dz_stride] += dt;
        dz[sel.j[v] * dz_stride] -= dt;
      }
      if (dx) kernels::axpy((Real(1) - pmv) * inv_nj, gm, dx + sel.j[v] * c, c);
    }
    if (dx) kernels::axpy(keep * inv_nj, gm, dx + sel.i[m] * c, c);
  }
}

template <class Real>
std::vector<Real> column(const Tensor<Real>& z, std::size_t t) {
  const std::size_t n = z.rows(), h = z.cols();
  std::vector<Real> col(n);
  for (std::size_t r = 0; r < n; ++r) col[r] = z.data()[r * h + t];
  return col;
}

}  // namespace detail

// Differentiable top-k sampling without replacement. Hard mode emits the exact
// top-k rows and back-propagates the soft blend's Jacobian (straight-through);
// soft mode emits the blend itself. `z` holds n scores (shape [n] or [n,1]).
template <class Real>
SampleResult<Real> sample_without_replacement(const Tensor<Real>& z, const Tensor<Real>& x,
                                              std::size_t k, const SamplerOptions& opt,
                                              GumbelRng* rng = nullptr) {
  detail::require_rank2("sample_without_replacement", x);
  if (z.size() != x.rows()) throw shape_mismatch("sample_without_replacement", z.shape(), x.shape());
  const std::size_t n = x.rows(), c = x.cols();
  detail::check_candidates("sample_without_replacement", n, k, opt.locality);
  const Real inv_tau = static_cast<Real>(1.0 / opt.tau.value());

  auto sel = detail::select_head<Real>(z.data(), k, opt, rng);
  std::vector<Real> out(k * c);
  auto p = detail::blend_forward<Real>(sel, z.data(), x.data().data(), c, opt.mode, inv_tau, out.data());

  SampleResult<Real> result{sel.i, sel.j, std::move(p), {}};
  result.rows = make_op<Real>(
      "sample_without_replacement", {k, c}, std::move(out), {z, x},
      [sel = std::move(sel), c, inv_tau](Node<Real>& self) {
        const auto& zin = self.inputs[0]->value;
        detail::blend_backward<Real>(sel, zin, self.inputs[1]->value.data(), c, inv_tau,
                                     self.grad.data(), self.inputs[0]->grad_target(), 1,
                                     self.inputs[1]->grad_target());
      });
  return result;
}

struct HeadSample {
  std::vector<std::size_t> i;
  std::vector<std::size_t> j;
};

template <class Real>
struct MultiHeadSampleResult {
  std::vector<HeadSample> heads;
  Tensor<Real> rows;  // (h*k) x c, head t occupies rows [t*k, (t+1)*k)
};

// Independent per-column sampling of a shared candidate matrix. Heads draw
// their pair noise in head order; results do not depend on anything else.
template <class Real>
MultiHeadSampleResult<Real> multi_head_sample(const Tensor<Real>& scores,
                                              const Tensor<Real>& candidates, std::size_t k,
                                              const SamplerOptions& opt,
                                              GumbelRng* rng = nullptr) {
  detail::require_rank2("multi_head_sample", scores);
  detail::require_rank2("multi_head_sample", candidates);
  if (scores.rows() != candidates.rows())
    throw shape_mismatch("multi_head_sample", scores.shape(), candidates.shape());
  const std::size_t n = candidates.rows(), c = candidates.cols(), h = scores.cols();
  detail::check_candidates("multi_head_sample", n, k, opt.locality);
  const Real inv_tau = static_cast<Real>(1.0 / opt.tau.value());

  std::vector<HeadSelection<Real>> sels;
  std::vector<Real> out(h * k * c);
  MultiHeadSampleResult<Real> result;
  for (std::size_t t = 0; t < h; ++t) {
    const auto col = detail::column(scores, t);
    sels.push_back(detail::select_head<Real>(col, k, opt, rng));
    detail::blend_forward<Real>(sels.back(), col, candidates.data().data(), c, opt.mode, inv_tau,
                                out.data() + t * k * c);
    result.heads.push_back({sels.back().i, sels.back().j});
  }
  result.rows = make_op<Real>(
      "multi_head_sample", {h * k, c}, std::move(out), {scores, candidates},
      [sels = std::move(sels), h, k, c, inv_tau](Node<Real>& self) {
        Tensor<Real> zin(self.inputs[0]);
        Real* dz = self.inputs[0]->grad_target();
        Real* dx = self.inputs[1]->grad_target();
        for (std::size_t t = 0; t < h; ++t) {
          const auto col = detail::column(zin, t);
          detail::blend_backward<Real>(sels[t], col, self.inputs[1]->value.data(), c, inv_tau,
                                       self.grad.data() + t * k * c, dz ? dz + t : nullptr, h, dx);
        }
      });
  return result;
}

// k independent straight-through Gumbel-Softmax draws over z; duplicates allowed.
template <class Real>
Tensor<Real> sample_with_replacement(const Tensor<Real>& z, const Tensor<Real>& x, std::size_t k,
                                     Temperature tau, GumbelRng& rng, bool noisy) {
  detail::require_rank2("sample_with_replacement", x);
  if (z.size() != x.rows()) throw shape_mismatch("sample_with_replacement", z.shape(), x.shape());
  if (k == 0) throw SamplerError("sample_with_replacement: k must be positive");
  const std::vector<std::size_t> zeros(k, 0);
  const auto logits = gather_rows(z.reshape({1, z.size()}), zeros);
  return matmul(st_gumbel_softmax(logits, tau, rng, noisy), x);
}

template <class Real>
struct SetSample {
  std::vector<std::size_t> set;  // ascending
  Tensor<Real> rows;
};

inline double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t t = 1; t <= k; ++t) r = r * static_cast<double>(n - k + t) / static_cast<double>(t);
  return r;
}

// Enumerates every k-subset and returns the one with the largest score sum
// (first in lexicographic order on ties). Oracle only: no gradient.
template <class Real>
SetSample<Real> brute_force_set_sample(std::span<const Real> z, const Tensor<Real>& x,
                                       std::size_t k, double budget = 1e6) {
  const std::size_t n = z.size();
  if (k == 0 || k > n) throw SamplerError("brute_force_set_sample: k outside [1, n]");
  if (binomial(n, k) > budget)
    throw SamplerError("brute_force_set_sample: C(" + std::to_string(n) + "," +
                       std::to_string(k) + ") exceeds the enumeration budget");
  if (x.defined() && x.rows() != n) throw shape_mismatch("brute_force_set_sample", {n}, x.shape());
  std::vector<std::size_t> comb(k);
  std::iota(comb.begin(), comb.end(), std::size_t{0});
  std::vector<std::size_t> best = comb;
  Real best_score = -std::numeric_limits<Real>::infinity();
  while (true) {
    Real s = 0;
    for (auto idx : comb) s += z[idx];
    if (s > best_score) {
      best_score = s;
      best = comb;
    }
    std::size_t pos = k;
    while (pos > 0 && comb[pos - 1] == n - k + pos - 1) --pos;
    if (pos == 0) break;
    ++comb[pos - 1];
    for (std::size_t t = pos; t < k; ++t) comb[t] = comb[t - 1] + 1;
  }
  SetSample<Real> out{best, {}};
  if (x.defined()) {
    NoGradGuard guard;
    out.rows = gather_rows(x, best);
  }
  return out;
}

}  // namespace samsa
