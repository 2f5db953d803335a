#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <limits>
#include <vector>

// Dense row-major kernels. Every output row is computed by the same sequence
// of floating point operations regardless of its position, so permuting input
// rows permutes output rows bit-for-bit.
namespace samsa::kernels {

namespace detail {

template <class Real, std::size_t Lanes>
struct Vec {
  typedef Real type __attribute__((vector_size(Lanes * sizeof(Real))));
};

inline constexpr std::size_t kTileRows = 8;

// c[r, 0..NV*Lanes) += sum_q a[r, q] * b[q, 0..NV*Lanes), accumulated in q
// order. The per-element operation sequence does not depend on R or Lanes.
// a is addressed as a[r * lda + q * acs]; acs != 1 reads a transposed.
template <class Real, std::size_t Lanes, std::size_t NV, std::size_t R>
inline void tile(const Real* a, std::size_t lda, std::size_t acs, const Real* b, std::size_t ldb, Real* c,
                 std::size_t ldc, std::size_t p) {
  using V = typename Vec<Real, Lanes>::type;
  V acc[R][NV];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < NV; ++v)
      std::memcpy(&acc[r][v], c + r * ldc + v * Lanes, sizeof(V));
  for (std::size_t q = 0; q < p; ++q) {
    V bv[NV];
    for (std::size_t v = 0; v < NV; ++v) std::memcpy(&bv[v], b + q * ldb + v * Lanes, sizeof(V));
    for (std::size_t r = 0; r < R; ++r) {
      const Real s = a[r * lda + q * acs];
      for (std::size_t v = 0; v < NV; ++v) acc[r][v] += s * bv[v];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < NV; ++v)
      std::memcpy(c + r * ldc + v * Lanes, &acc[r][v], sizeof(V));
}

template <class Real, std::size_t R>
inline void column(const Real* a, std::size_t lda, std::size_t acs, const Real* b, std::size_t ldb, Real* c,
                   std::size_t ldc, std::size_t p) {
  Real acc[R];
  for (std::size_t r = 0; r < R; ++r) acc[r] = c[r * ldc];
  for (std::size_t q = 0; q < p; ++q)
    for (std::size_t r = 0; r < R; ++r) acc[r] = std::fma(a[r * lda + q * acs], b[q * ldb], acc[r]);
  for (std::size_t r = 0; r < R; ++r) c[r * ldc] = acc[r];
}

// All columns of an R-row strip: 64-byte vectors, then narrower
// vectors, then single columns.
template <class Real, std::size_t R>
inline void strip(const Real* a, std::size_t lda, std::size_t acs, const Real* b, Real* c,
                  std::size_t p, std::size_t m) {
  constexpr std::size_t L = 64 / sizeof(Real);
  std::size_t j = 0;
  for (; j + L <= m; j += L) tile<Real, L, 1, R>(a, lda, acs, b + j, m, c + j, m, p);
  if (j + L / 2 <= m) {
    tile<Real, L / 2, 1, R>(a, lda, acs, b + j, m, c + j, m, p);
    j += L / 2;
  }
  if (j + L / 4 <= m) {
    tile<Real, L / 4, 1, R>(a, lda, acs, b + j, m, c + j, m, p);
    j += L / 4;
  }
  for (; j < m; ++j) column<Real, R>(a, lda, acs, b + j, m, c + j, m, p);
}

}  // namespace detail

// out[n x m] += a[n x p] * b[p x m]
template <class Real>
void gemm_nn_acc(const Real* a, const Real* b, Real* out, std::size_t n, std::size_t p,
                 std::size_t m) {
  constexpr std::size_t R = detail::kTileRows;
  std::size_t i = 0;
  for (; i + R <= n; i += R) detail::strip<Real, R>(a + i * p, p, 1, b, out + i * m, p, m);
  for (; i < n; ++i) detail::strip<Real, 1>(a + i * p, p, 1, b, out + i * m, p, m);
}

template <class Real>
std::vector<Real> transpose(const Real* a, std::size_t rows, std::size_t cols) {
  constexpr std::size_t B = 16;
  std::vector<Real> t(rows * cols);
  for (std::size_t r0 = 0; r0 < rows; r0 += B)
    for (std::size_t c0 = 0; c0 < cols; c0 += B)
      for (std::size_t r = r0; r < std::min(rows, r0 + B); ++r)
        for (std::size_t c = c0; c < std::min(cols, c0 + B); ++c) t[c * rows + r] = a[r * cols + c];
  return t;
}

// out[p x m] += a[n x p]^T * g[n x m]
template <class Real>
void gemm_tn_acc(const Real* a, const Real* g, Real* out, std::size_t n, std::size_t p,
                 std::size_t m) {
  constexpr std::size_t R = detail::kTileRows;
  std::size_t i = 0;
  for (; i + R <= p; i += R) detail::strip<Real, R>(a + i, 1, p, g, out + i * m, n, m);
  for (; i < p; ++i) detail::strip<Real, 1>(a + i, 1, p, g, out + i * m, n, m);
}

// out[n x m] += a[n x p] * b[m x p]^T
template <class Real>
void gemm_nt_acc(const Real* a, const Real* b, Real* out, std::size_t n, std::size_t p,
                 std::size_t m) {
  const auto bt = transpose(b, m, p);
  gemm_nn_acc(a, bt.data(), out, n, p, m);
}

template <class Real>
Real dot(const Real* a, const Real* b, std::size_t n) {
  constexpr std::size_t L = 64 / sizeof(Real);
  using V = typename detail::Vec<Real, L>::type;
  Real s = 0;
  std::size_t i = 0;
  if (n >= L) {
    V acc{}, va, vb;
    for (; i + L <= n; i += L) {
      std::memcpy(&va, a + i, sizeof(V));
      std::memcpy(&vb, b + i, sizeof(V));
      acc += va * vb;
    }
    for (std::size_t l = 0; l < L; ++l) s += acc[l];
  }
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <class Real>
Real sum(const Real* a, std::size_t n) {
  constexpr std::size_t L = 64 / sizeof(Real);
  using V = typename detail::Vec<Real, L>::type;
  Real s = 0;
  std::size_t i = 0;
  if (n >= L) {
    V acc{}, va;
    for (; i + L <= n; i += L) {
      std::memcpy(&va, a + i, sizeof(V));
      acc += va;
    }
    for (std::size_t l = 0; l < L; ++l) s += acc[l];
  }
  for (; i < n; ++i) s += a[i];
  return s;
}

// Largest element; NaN if any element is NaN.
template <class Real>
Real max_value(const Real* a, std::size_t n) {
  constexpr std::size_t L = 64 / sizeof(Real);
  using V = typename detail::Vec<Real, L>::type;
  Real m = a[0];
  bool nan = false;
  std::size_t i = 0;
  if (n >= L) {
    V acc, va;
    std::memcpy(&acc, a, sizeof(V));
    auto bad = acc != acc;
    for (i = L; i + L <= n; i += L) {
      std::memcpy(&va, a + i, sizeof(V));
      bad |= va != va;
      acc = va > acc ? va : acc;
    }
    for (std::size_t l = 0; l < L; ++l) {
      nan |= bad[l] != 0;
      m = acc[l] > m ? acc[l] : m;
    }
  }
  for (; i < n; ++i) {
    nan |= a[i] != a[i];
    m = a[i] > m ? a[i] : m;
  }
  return nan ? std::numeric_limits<Real>::quiet_NaN() : m;
}

template <class Real>
void axpy(Real alpha, const Real* x, Real* __restrict y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace samsa::kernels
