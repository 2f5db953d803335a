#pragma once

#include <cmath>
#include <cstddef>
#include <iostream>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "samsa/tensor.hpp"

namespace samsa {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 2.0;  // <= 0 disables clipping
};

template <class Real>
struct OptimizerState {
  AdamWConfig config;
  std::vector<std::vector<Real>> first_moment;
  std::vector<std::vector<Real>> second_moment;
  std::size_t step = 0;
  std::size_t skipped = 0;

  OptimizerState() = default;
  OptimizerState(AdamWConfig cfg, std::span<const Tensor<Real>> params)
      : config(cfg) {
    for (const auto& p : params) {
      first_moment.emplace_back(p.size(), Real(0));
      second_moment.emplace_back(p.size(), Real(0));
    }
  }
};

struct StepReport {
  bool applied = false;
  double grad_norm = 0.0;
  double clip_scale = 1.0;
};

// Global L2 norm over every parameter gradient (missing gradients count as 0).
template <class Real>
double global_grad_norm(std::span<const Tensor<Real>> params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (Real g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

// One AdamW update with global-norm clipping and decoupled weight decay.
// `lr` overrides state.config.lr so callers can drive a schedule.
template <class Real>
StepReport adamw_step(OptimizerState<Real>& state, std::span<Tensor<Real>> params,
                      double lr) {
  if (params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adamw_step: optimizer state tracks " +
                                std::to_string(state.first_moment.size()) +
                                " tensors, got " + std::to_string(params.size()));
  }
  StepReport report;
  report.grad_norm =
      global_grad_norm<Real>(std::span<const Tensor<Real>>(params.data(), params.size()));
  if (!std::isfinite(report.grad_norm)) {
    ++state.skipped;
    std::clog << "adamw: non-finite gradient norm, update " << state.step + 1
              << " skipped\n";
    return report;
  }
  const auto& cfg = state.config;
  if (cfg.clip_norm > 0.0 && report.grad_norm > cfg.clip_norm)
    report.clip_scale = cfg.clip_norm / report.grad_norm;

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (p.size() != state.first_moment[k].size()) {
      throw shape_mismatch("adamw_step", p.shape(),
                           {state.first_moment[k].size()});
    }
    auto value = p.mutable_data();
    const bool has = p.has_grad();
    auto grad = p.grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = has ? static_cast<double>(grad[i]) * report.clip_scale : 0.0;
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      const double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
      value[i] = static_cast<Real>(static_cast<double>(value[i]) * decay - lr * update);
    }
  }
  report.applied = true;
  return report;
}

// Linear warmup from 0 to peak_lr, then cosine decay to 0 at total_steps.
inline double cosine_warmup_lr(std::size_t step, std::size_t warmup_steps,
                               std::size_t total_steps, double peak_lr) {
  if (total_steps == 0) return peak_lr;
  step = std::min(step, total_steps);
  if (warmup_steps > 0 && step < warmup_steps) {
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (total_steps <= warmup_steps) return peak_lr;
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace samsa
