#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "samsa/kernels.hpp"
#include "samsa/tensor.hpp"
#include "samsa/vmath.hpp"

namespace samsa {

namespace detail {

template <class Real>
void require_rank2(std::string_view op, const Tensor<Real>& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " +
                     shape_str(t.shape()));
  }
}

// True when b broadcasts over the leading extent of a (b is a single row).
template <class Real>
bool row_broadcast(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() == b.shape()) return false;
  if (a.rank() == 2 && b.size() == a.cols() &&
      (b.rank() == 1 || (b.rank() == 2 && b.rows() == 1))) {
    return true;
  }
  throw shape_mismatch("broadcast", a.shape(), b.shape());
}

template <class Real, class F, class DF>
Tensor<Real> unary(std::string_view name, const Tensor<Real>& x, F f, DF df) {
  std::vector<Real> out(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_op<Real>(name, x.shape(), std::move(out), {x},
                       [df](Node<Real>& self) {
                         Real* g = self.inputs[0]->grad_target();
                         if (!g) return;
                         const auto& xin = self.inputs[0]->value;
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           g[i] += self.grad[i] * df(xin[i], self.value[i]);
                       });
}

}  // namespace detail

// Elementwise a + sign*b with b optionally broadcast across rows of a.
template <class Real>
Tensor<Real> add_scaled(std::string_view name, const Tensor<Real>& a,
                        const Tensor<Real>& b, Real sign) {
  const bool bc = detail::row_broadcast(a, b);
  std::vector<Real> out(a.data().begin(), a.data().end());
  const Real* bv = b.data().data();
  const std::size_t m = bc ? b.size() : out.size();
  for (std::size_t r0 = 0; r0 < out.size(); r0 += m)
    kernels::axpy(sign, bv, out.data() + r0, m);
  return make_op<Real>(name, a.shape(), std::move(out), {a, b},
                       [sign, m](Node<Real>& self) {
                         if (Real* ga = self.inputs[0]->grad_target())
                           kernels::axpy(Real(1), self.grad.data(), ga, self.grad.size());
                         if (Real* gb = self.inputs[1]->grad_target())
                           for (std::size_t r0 = 0; r0 < self.grad.size(); r0 += m)
                             kernels::axpy(sign, self.grad.data() + r0, gb, m);
                       });
}

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  return add_scaled<Real>("add", a, b, Real(1));
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  return add_scaled<Real>("sub", a, b, Real(-1));
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  const bool bc = detail::row_broadcast(a, b);
  const auto av = a.data();
  const Real* bv = b.data().data();
  const std::size_t m = bc ? b.size() : av.size();
  std::vector<Real> out(av.size());
  for (std::size_t r0 = 0; r0 < out.size(); r0 += m)
    for (std::size_t j = 0; j < m; ++j) out[r0 + j] = av[r0 + j] * bv[j];
  return make_op<Real>("mul", a.shape(), std::move(out), {a, b},
                       [m](Node<Real>& self) {
                         const Real* x = self.inputs[0]->value.data();
                         const Real* y = self.inputs[1]->value.data();
                         const Real* g = self.grad.data();
                         const std::size_t total = self.grad.size();
                         if (Real* ga = self.inputs[0]->grad_target())
                           for (std::size_t r0 = 0; r0 < total; r0 += m)
                             for (std::size_t j = 0; j < m; ++j) ga[r0 + j] += g[r0 + j] * y[j];
                         if (Real* gb = self.inputs[1]->grad_target())
                           for (std::size_t r0 = 0; r0 < total; r0 += m)
                             for (std::size_t j = 0; j < m; ++j) gb[j] += g[r0 + j] * x[r0 + j];
                       });
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& x, Real c) {
  return detail::unary<Real>(
      "scale", x, [c](Real v) { return v * c; },
      [c](Real, Real) { return c; });
}

// s * x where s holds a single (possibly learnable) value.
template <class Real>
Tensor<Real> scalar_mul(const Tensor<Real>& s, const Tensor<Real>& x) {
  if (s.size() != 1) throw shape_mismatch("scalar_mul", s.shape(), {1});
  const Real sv = s[0];
  std::vector<Real> out(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sv * xv[i];
  return make_op<Real>("scalar_mul", x.shape(), std::move(out), {s, x},
                       [](Node<Real>& self) {
                         const Real sv = self.inputs[0]->value[0];
                         const auto& xv = self.inputs[1]->value;
                         if (Real* gs = self.inputs[0]->grad_target()) {
                           Real acc = 0;
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             acc += self.grad[i] * xv[i];
                           gs[0] += acc;
                         }
                         if (Real* gx = self.inputs[1]->grad_target())
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             gx[i] += self.grad[i] * sv;
                       });
}

template <class Real>
Tensor<Real> square(const Tensor<Real>& x) {
  return detail::unary<Real>(
      "square", x, [](Real v) { return v * v; },
      [](Real v, Real) { return Real(2) * v; });
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  return detail::unary<Real>(
      "sigmoid", x, [](Real v) { return vmath::sigmoid(v); },
      [](Real, Real y) { return y * (Real(1) - y); });
}

template <class Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
  constexpr Real inv_sqrt2pi = std::numbers::inv_sqrtpi_v<Real> / std::numbers::sqrt2_v<Real>;
  return detail::unary<Real>(
      "gelu", x, [](Real v) { return v * vmath::normal_cdf(v); },
      [](Real v, Real) {
        return vmath::normal_cdf(v) + v * inv_sqrt2pi * vmath::exp(Real(-0.5) * v * v);
      });
}

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_rank2("matmul", a);
  detail::require_rank2("matmul", b);
  if (a.cols() != b.rows()) throw shape_mismatch("matmul", a.shape(), b.shape());
  const std::size_t n = a.rows(), p = a.cols(), m = b.cols();
  std::vector<Real> out(n * m, Real(0));
  kernels::gemm_nn_acc(a.data().data(), b.data().data(), out.data(), n, p, m);
  return make_op<Real>(
      "matmul", {n, m}, std::move(out), {a, b}, [n, p, m](Node<Real>& self) {
        const Real* av = self.inputs[0]->value.data();
        const Real* bv = self.inputs[1]->value.data();
        if (Real* ga = self.inputs[0]->grad_target())
          kernels::gemm_nt_acc(self.grad.data(), bv, ga, n, m, p);
        if (Real* gb = self.inputs[1]->grad_target())
          kernels::gemm_tn_acc(av, self.grad.data(), gb, n, p, m);
      });
}

// a * b^T
template <class Real>
Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_rank2("matmul_nt", a);
  detail::require_rank2("matmul_nt", b);
  if (a.cols() != b.cols())
    throw shape_mismatch("matmul_nt", a.shape(), b.shape());
  const std::size_t n = a.rows(), p = a.cols(), m = b.rows();
  std::vector<Real> out(n * m, Real(0));
  kernels::gemm_nt_acc(a.data().data(), b.data().data(), out.data(), n, p, m);
  return make_op<Real>(
      "matmul_nt", {n, m}, std::move(out), {a, b}, [n, p, m](Node<Real>& self) {
        const Real* av = self.inputs[0]->value.data();
        const Real* bv = self.inputs[1]->value.data();
        if (Real* ga = self.inputs[0]->grad_target())
          kernels::gemm_nn_acc(self.grad.data(), bv, ga, n, m, p);
        if (Real* gb = self.inputs[1]->grad_target())
          kernels::gemm_tn_acc(self.grad.data(), av, gb, n, m, p);
      });
}

template <class Real>
Tensor<Real> softmax_lastdim(const Tensor<Real>& x) {
  if (x.rank() == 0 || x.size() == 0)
    throw ShapeError("softmax_lastdim: empty tensor");
  const std::size_t m = x.shape().back();
  const std::size_t rows = x.size() / m;
  std::vector<Real> out(x.size());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = xv.data() + r * m;
    Real* o = out.data() + r * m;
    const Real mx = kernels::max_value(in, m);
    for (std::size_t j = 0; j < m; ++j) o[j] = vmath::exp(in[j] - mx);
    const Real inv = Real(1) / kernels::sum(o, m);
    for (std::size_t j = 0; j < m; ++j) o[j] *= inv;
  }
  return make_op<Real>("softmax_lastdim", x.shape(), std::move(out), {x},
                       [rows, m](Node<Real>& self) {
                         Real* g = self.inputs[0]->grad_target();
                         if (!g) return;
                         for (std::size_t r = 0; r < rows; ++r) {
                           const Real* y = self.value.data() + r * m;
                           const Real* dy = self.grad.data() + r * m;
                           const Real s = kernels::dot(y, dy, m);
                           for (std::size_t j = 0; j < m; ++j)
                             g[r * m + j] += y[j] * (dy[j] - s);
                         }
                       });
}

template <class Real>
Tensor<Real> gather_rows(const Tensor<Real>& x,
                         std::span<const std::size_t> index) {
  detail::require_rank2("gather_rows", x);
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<Real> out(index.size() * m);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= n) {
      throw ShapeError("gather_rows: index " + std::to_string(index[r]) +
                       " out of range for shape " + shape_str(x.shape()));
    }
    std::copy_n(x.data().data() + index[r] * m, m, out.data() + r * m);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_op<Real>("gather_rows", {idx.size(), m}, std::move(out), {x},
                       [idx, m](Node<Real>& self) {
                         Real* g = self.inputs[0]->grad_target();
                         if (!g) return;
                         for (std::size_t r = 0; r < idx.size(); ++r)
                           for (std::size_t c = 0; c < m; ++c)
                             g[idx[r] * m + c] += self.grad[r * m + c];
                       });
}

template <class Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t m = parts.front().cols();
  std::size_t n = 0;
  for (const auto& p : parts) {
    detail::require_rank2("concat_rows", p);
    if (p.cols() != m)
      throw shape_mismatch("concat_rows", parts.front().shape(), p.shape());
    n += p.rows();
  }
  std::vector<Real> out;
  out.reserve(n * m);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_op<Real>("concat_rows", {n, m}, std::move(out), parts,
                       [](Node<Real>& self) {
                         std::size_t offset = 0;
                         for (auto& in : self.inputs) {
                           const std::size_t len = in->value.size();
                           if (Real* g = in->grad_target())
                             for (std::size_t i = 0; i < len; ++i)
                               g[i] += self.grad[offset + i];
                           offset += len;
                         }
                       });
}

template <class Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t m = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    detail::require_rank2("concat_cols", p);
    if (p.rows() != n)
      throw shape_mismatch("concat_cols", parts.front().shape(), p.shape());
    widths.push_back(p.cols());
    m += p.cols();
  }
  std::vector<Real> out(n * m);
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(p.data().data() + r * w, w, out.data() + r * m + c0);
    c0 += w;
  }
  return make_op<Real>("concat_cols", {n, m}, std::move(out), parts,
                       [widths, n, m](Node<Real>& self) {
                         std::size_t c0 = 0;
                         for (std::size_t k = 0; k < widths.size(); ++k) {
                           const std::size_t w = widths[k];
                           if (Real* g = self.inputs[k]->grad_target())
                             for (std::size_t r = 0; r < n; ++r)
                               for (std::size_t c = 0; c < w; ++c)
                                 g[r * w + c] += self.grad[r * m + c0 + c];
                           c0 += w;
                         }
                       });
}

// Rows [r0, r1) and columns [c0, c1) of a matrix.
template <class Real>
Tensor<Real> slice(const Tensor<Real>& x, std::size_t r0, std::size_t r1,
                   std::size_t c0, std::size_t c1) {
  detail::require_rank2("slice", x);
  if (r0 > r1 || r1 > x.rows() || c0 > c1 || c1 > x.cols()) {
    throw ShapeError("slice: range [" + std::to_string(r0) + "," +
                     std::to_string(r1) + ")x[" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") outside " + shape_str(x.shape()));
  }
  const std::size_t m = x.cols(), h = r1 - r0, w = c1 - c0;
  std::vector<Real> out(h * w);
  for (std::size_t r = 0; r < h; ++r)
    std::copy_n(x.data().data() + (r0 + r) * m + c0, w, out.data() + r * w);
  return make_op<Real>("slice", {h, w}, std::move(out), {x},
                       [=](Node<Real>& self) {
                         Real* g = self.inputs[0]->grad_target();
                         if (!g) return;
                         for (std::size_t r = 0; r < h; ++r)
                           for (std::size_t c = 0; c < w; ++c)
                             g[(r0 + r) * m + c0 + c] += self.grad[r * w + c];
                       });
}

template <class Real>
Tensor<Real> slice_cols(const Tensor<Real>& x, std::size_t c0, std::size_t c1) {
  return slice(x, 0, x.rows(), c0, c1);
}

template <class Real>
Tensor<Real> slice_rows(const Tensor<Real>& x, std::size_t r0, std::size_t r1) {
  return slice(x, r0, r1, 0, x.cols());
}

template <class Real>
Tensor<Real> reduce_sum(const Tensor<Real>& x) {
  Real s = 0;
  for (Real v : x.data()) s += v;
  return make_op<Real>("reduce_sum", {1}, {s}, {x}, [](Node<Real>& self) {
    Real* g = self.inputs[0]->grad_target();
    if (!g) return;
    for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i)
      g[i] += self.grad[0];
  });
}

template <class Real>
Tensor<Real> reduce_mean(const Tensor<Real>& x) {
  return scale(reduce_sum(x), Real(1) / static_cast<Real>(x.size()));
}

// Column means: n x m -> 1 x m.
template <class Real>
Tensor<Real> mean_rows(const Tensor<Real>& x) {
  detail::require_rank2("mean_rows", x);
  const std::size_t n = x.rows(), m = x.cols();
  if (n == 0) throw ShapeError("mean_rows: no rows");
  std::vector<Real> out(m, Real(0));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out[c] += x(r, c);
  const Real inv = Real(1) / static_cast<Real>(n);
  for (auto& v : out) v *= inv;
  return make_op<Real>("mean_rows", {1, m}, std::move(out), {x},
                       [n, m, inv](Node<Real>& self) {
                         Real* g = self.inputs[0]->grad_target();
                         if (!g) return;
                         for (std::size_t r = 0; r < n; ++r)
                           for (std::size_t c = 0; c < m; ++c)
                             g[r * m + c] += self.grad[c] * inv;
                       });
}

// Row-wise x / sqrt(mean(x^2) + eps) * gain.
template <class Real>
Tensor<Real> rms_norm(const Tensor<Real>& x, const Tensor<Real>& gain,
                      Real eps = Real(1e-6)) {
  detail::require_rank2("rms_norm", x);
  const std::size_t n = x.rows(), d = x.cols();
  if (gain.size() != d) throw shape_mismatch("rms_norm", x.shape(), gain.shape());
  std::vector<Real> out(n * d);
  std::vector<Real> inv_rms(n);
  const auto xv = x.data();
  const auto gv = gain.data();
  for (std::size_t r = 0; r < n; ++r) {
    const Real* row = xv.data() + r * d;
    const Real ms = kernels::dot(row, row, d) / static_cast<Real>(d);
    const Real ir = Real(1) / std::sqrt(ms + eps);
    inv_rms[r] = ir;
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = row[c] * ir * gv[c];
  }
  return make_op<Real>(
      "rms_norm", {n, d}, std::move(out), {x, gain},
      [n, d, inv_rms = std::move(inv_rms)](Node<Real>& self) {
        const auto& xin = self.inputs[0]->value;
        const auto& gin = self.inputs[1]->value;
        Real* gx = self.inputs[0]->grad_target();
        Real* gg = self.inputs[1]->grad_target();
        for (std::size_t r = 0; r < n; ++r) {
          const Real* row = xin.data() + r * d;
          const Real* dy = self.grad.data() + r * d;
          const Real ir = inv_rms[r];
          if (gg)
            for (std::size_t c = 0; c < d; ++c) gg[c] += dy[c] * row[c] * ir;
          if (gx) {
            Real s = 0;
            for (std::size_t c = 0; c < d; ++c) s += dy[c] * gin[c] * row[c];
            const Real k = ir * ir * ir * s / static_cast<Real>(d);
            for (std::size_t c = 0; c < d; ++c)
              gx[r * d + c] += ir * gin[c] * dy[c] - row[c] * k;
          }
        }
      });
}

// x W + b
template <class Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& w,
                    const Tensor<Real>& b) {
  return add(matmul(x, w), b);
}

// Inverted dropout with a Bernoulli keep mask drawn from `rng`.
template <class Real, class Rng>
Tensor<Real> dropout(const Tensor<Real>& x, Real p, Rng& rng) {
  if (p <= Real(0)) return x;
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  const Real s = Real(1) / (Real(1) - p);
  std::vector<Real> mask(x.size());
  for (auto& v : mask) v = keep(rng) ? s : Real(0);
  return mul(x, Tensor<Real>::from(x.shape(), std::move(mask)));
}

// Mean cross-entropy of row-wise logits against integer class labels.
template <class Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits,
                           std::span<const std::size_t> labels) {
  detail::require_rank2("cross_entropy", logits);
  const std::size_t b = logits.rows(), c = logits.cols();
  if (labels.size() != b)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(b) + " rows");
  std::vector<Real> prob(b * c);
  Real loss = 0;
  for (std::size_t r = 0; r < b; ++r) {
    if (labels[r] >= c) throw ShapeError("cross_entropy: label out of range");
    const Real* z = logits.data().data() + r * c;
    Real mx = z[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    Real sum = 0;
    for (std::size_t j = 0; j < c; ++j) sum += vmath::exp(z[j] - mx);
    const Real lse = mx + std::log(sum);
    for (std::size_t j = 0; j < c; ++j) prob[r * c + j] = vmath::exp(z[j] - lse);
    loss += lse - z[labels[r]];
  }
  loss /= static_cast<Real>(b);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return make_op<Real>("cross_entropy", {1}, {loss}, {logits},
                       [prob = std::move(prob), lab, b, c](Node<Real>& self) {
                         Real* g = self.inputs[0]->grad_target();
                         if (!g) return;
                         const Real s = self.grad[0] / static_cast<Real>(b);
                         for (std::size_t r = 0; r < b; ++r)
                           for (std::size_t j = 0; j < c; ++j)
                             g[r * c + j] +=
                                 s * (prob[r * c + j] - (j == lab[r] ? 1 : 0));
                       });
}

// Mean smooth-L1 (Huber, beta = 1) between predictions and constant targets.
template <class Real>
Tensor<Real> smooth_l1(const Tensor<Real>& pred, std::span<const std::type_identity_t<Real>> target) {
  if (pred.size() != target.size())
    throw ShapeError("smooth_l1: prediction/target size mismatch");
  Real loss = 0;
  std::vector<Real> dl(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Real d = pred[i] - target[i];
    if (std::abs(d) < Real(1)) {
      loss += Real(0.5) * d * d;
      dl[i] = d;
    } else {
      loss += std::abs(d) - Real(0.5);
      dl[i] = d > 0 ? Real(1) : Real(-1);
    }
  }
  const Real inv = Real(1) / static_cast<Real>(pred.size());
  return make_op<Real>("smooth_l1", {1}, {loss * inv}, {pred},
                       [dl = std::move(dl), inv](Node<Real>& self) {
                         Real* g = self.inputs[0]->grad_target();
                         if (!g) return;
                         for (std::size_t i = 0; i < dl.size(); ++i)
                           g[i] += self.grad[0] * inv * dl[i];
                       });
}

}  // namespace samsa
