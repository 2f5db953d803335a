#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "samsa/ops.hpp"
#include "samsa/tensor.hpp"
#include "samsa/vmath.hpp"

namespace samsa {

// Caller-owned random stream. Gumbel draws are counted; the underlying
// engine is also used for the other stochastic pieces (dropout, graph PE).
class GumbelRng {
 public:
  explicit GumbelRng(std::uint64_t seed = 0) : engine_(seed) {}

  // Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  static double gumbel_from_uniform(double u) { return -std::log(-std::log(u)); }

  double gumbel() {
    ++draws_;
    return gumbel_from_uniform(uniform());
  }

  double normal() { return normal_(engine_); }

  std::mt19937_64& engine() { return engine_; }
  std::uint64_t draws() const { return draws_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
  std::uint64_t draws_ = 0;
};

class Temperature {
 public:
  explicit Temperature(double tau = 1.0) : tau_(tau) {
    if (!(tau > 0.0) || !std::isfinite(tau))
      throw std::invalid_argument("temperature must be positive and finite, got " +
                                  std::to_string(tau));
  }
  double value() const { return tau_; }

 private:
  double tau_;
};

template <class Real>
Tensor<Real> gumbel_noise(GumbelRng& rng, const Shape& shape) {
  if (shape.empty() || numel(shape) == 0)
    throw ShapeError("gumbel_noise: empty shape " + shape_str(shape));
  std::vector<Real> g(numel(shape));
  for (auto& v : g) v = static_cast<Real>(rng.gumbel());
  return Tensor<Real>::from(shape, std::move(g));
}

namespace detail {

template <class Real>
void require_finite(std::string_view op, const Tensor<Real>& x) {
  for (Real v : x.data())
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(op) + ": non-finite logits");
}

template <class Real>
Tensor<Real> noise_or_zero(const Tensor<Real>& like, GumbelRng& rng, bool noisy) {
  return noisy ? gumbel_noise<Real>(rng, like.shape()) : Tensor<Real>::zeros(like.shape());
}

}  // namespace detail

// Row-wise softmax((logits + noise) / tau).
template <class Real>
Tensor<Real> gumbel_softmax(const Tensor<Real>& logits, const Tensor<Real>& noise,
                            Temperature tau) {
  detail::require_finite("gumbel_softmax", logits);
  return softmax_lastdim(scale(add(logits, noise), static_cast<Real>(1.0 / tau.value())));
}

template <class Real>
Tensor<Real> gumbel_softmax(const Tensor<Real>& logits, Temperature tau, GumbelRng& rng,
                            bool noisy) {
  return gumbel_softmax(logits, detail::noise_or_zero(logits, rng, noisy), tau);
}

// Forward: row-wise one-hot at argmax(logits + noise), lowest index on ties.
// Backward: Jacobian of the soft gumbel_softmax at the same point.
template <class Real>
Tensor<Real> st_gumbel_softmax(const Tensor<Real>& logits, const Tensor<Real>& noise,
                               Temperature tau) {
  detail::require_finite("st_gumbel_softmax", logits);
  if (logits.shape() != noise.shape())
    throw shape_mismatch("st_gumbel_softmax", logits.shape(), noise.shape());
  const std::size_t m = logits.shape().back();
  const std::size_t rows = logits.size() / m;
  const Real inv_tau = static_cast<Real>(1.0 / tau.value());
  std::vector<Real> perturbed(logits.size());
  for (std::size_t i = 0; i < perturbed.size(); ++i)
    perturbed[i] = logits[i] + noise[i];
  std::vector<Real> hard(logits.size(), Real(0));
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (perturbed[r * m + j] > perturbed[r * m + best]) best = j;
    hard[r * m + best] = Real(1);
  }
  return make_op<Real>(
      "st_gumbel_softmax", logits.shape(), std::move(hard), {logits},
      [perturbed = std::move(perturbed), rows, m, inv_tau](Node<Real>& self) {
        Real* g = self.inputs[0]->grad_target();
        if (!g) return;
        std::vector<Real> y(m);
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* z = perturbed.data() + r * m;
          Real mx = z[0];
          for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, z[j]);
          Real sum = 0;
          for (std::size_t j = 0; j < m; ++j) {
            y[j] = vmath::exp((z[j] - mx) * inv_tau);
            sum += y[j];
          }
          for (auto& v : y) v /= sum;
          const Real* dy = self.grad.data() + r * m;
          const Real s = kernels::dot(y.data(), dy, m);
          for (std::size_t j = 0; j < m; ++j) g[r * m + j] += y[j] * (dy[j] - s) * inv_tau;
        }
      });
}

template <class Real>
Tensor<Real> st_gumbel_softmax(const Tensor<Real>& logits, Temperature tau, GumbelRng& rng,
                               bool noisy) {
  return st_gumbel_softmax(logits, detail::noise_or_zero(logits, rng, noisy), tau);
}

// sigma((logits + noise) / tau); increases with the logit.
template <class Real>
Tensor<Real> gumbel_sigmoid(const Tensor<Real>& logits, const Tensor<Real>& noise,
                            Temperature tau) {
  detail::require_finite("gumbel_sigmoid", logits);
  return sigmoid(scale(add(logits, noise), static_cast<Real>(1.0 / tau.value())));
}

template <class Real>
Tensor<Real> gumbel_sigmoid(const Tensor<Real>& logits, Temperature tau, GumbelRng& rng,
                            bool noisy) {
  return gumbel_sigmoid(logits, detail::noise_or_zero(logits, rng, noisy), tau);
}

// Forward: 1 where logits + noise >= 0, else 0. Backward: gumbel_sigmoid's derivative.
template <class Real>
Tensor<Real> st_gumbel_sigmoid(const Tensor<Real>& logits, const Tensor<Real>& noise,
                               Temperature tau) {
  detail::require_finite("st_gumbel_sigmoid", logits);
  if (logits.shape() != noise.shape())
    throw shape_mismatch("st_gumbel_sigmoid", logits.shape(), noise.shape());
  const Real inv_tau = static_cast<Real>(1.0 / tau.value());
  std::vector<Real> hard(logits.size());
  std::vector<Real> slope(logits.size());
  for (std::size_t i = 0; i < hard.size(); ++i) {
    const Real t = logits[i] + noise[i];
    hard[i] = t >= Real(0) ? Real(1) : Real(0);
    const Real s = vmath::sigmoid(t * inv_tau);
    slope[i] = s * (Real(1) - s) * inv_tau;
  }
  return make_op<Real>("st_gumbel_sigmoid", logits.shape(), std::move(hard), {logits},
                       [slope = std::move(slope)](Node<Real>& self) {
                         Real* g = self.inputs[0]->grad_target();
                         if (!g) return;
                         for (std::size_t i = 0; i < slope.size(); ++i)
                           g[i] += self.grad[i] * slope[i];
                       });
}

template <class Real>
Tensor<Real> st_gumbel_sigmoid(const Tensor<Real>& logits, Temperature tau, GumbelRng& rng,
                               bool noisy) {
  return st_gumbel_sigmoid(logits, detail::noise_or_zero(logits, rng, noisy), tau);
}

}  // namespace samsa
