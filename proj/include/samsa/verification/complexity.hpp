#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "samsa/attention.hpp"
#include "samsa/counters.hpp"

namespace samsa::verify {

enum class LayerKind { samsa_hard, samsa_soft, full };

inline const char* layer_name(LayerKind k) {
  return k == LayerKind::samsa_hard ? "samsa-hard" : k == LayerKind::samsa_soft ? "samsa-soft" : "full";
}

struct ComplexityRow {
  std::size_t n = 0;
  std::vector<double> ms;  // one entry per repeat
  double median_ms = 0.0;
  std::uint64_t attention_scores = 0;
  std::uint64_t selection_work = 0;
};

struct ComplexityReport {
  LayerKind kind = LayerKind::samsa_hard;
  std::size_t k = 0;
  std::vector<ComplexityRow> rows;
  double exponent = 0.0;  // least-squares slope of log(median ms) on log(n)
};

inline nlohmann::json to_json(const ComplexityReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"n", row.n},
                    {"ms", row.ms},
                    {"median_ms", row.median_ms},
                    {"attention_scores", row.attention_scores},
                    {"selection_work", row.selection_work}});
  return {{"layer", layer_name(r.kind)}, {"k", r.k}, {"rows", rows}, {"exponent", r.exponent}};
}

inline double fit_exponent(const std::vector<double>& n, const std::vector<double>& t) {
  if (n.size() != t.size() || n.size() < 2) throw std::invalid_argument("fit_exponent: need >= 2 points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    mx += std::log(n[i]);
    my += std::log(t[i]);
  }
  mx /= static_cast<double>(n.size());
  my /= static_cast<double>(n.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    const double dx = std::log(n[i]) - mx;
    sxy += dx * (std::log(t[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Times one eval-mode layer forward per (n, repeat) and reports the median
// per n. Operation counts come from the first repeat.
template <class Real>
ComplexityReport complexity_probe(LayerKind kind, const std::vector<std::size_t>& grid,
                                  AttentionConfig cfg, std::size_t repeats = 3,
                                  std::uint64_t seed = 0) {
  cfg.training = false;
  cfg.mode = kind == LayerKind::samsa_soft ? SampleMode::soft : SampleMode::hard;
  cfg.validate();
  std::mt19937_64 gen(seed);
  const auto params = LayerParams<Real>::init(cfg, gen);
  const auto alpha = Tensor<Real>::scalar(Real(0.5));
  std::normal_distribution<double> nd;
  ComplexityReport report;
  report.kind = kind;
  report.k = cfg.k;
  NoGradGuard guard;
  for (std::size_t n : grid) {
    std::vector<Real> v(n * cfg.d_model);
    for (auto& x : v) x = static_cast<Real>(nd(gen));
    const auto x = Tensor<Real>::matrix(n, cfg.d_model, std::move(v));
    ComplexityRow row;
    row.n = n;
    for (std::size_t r = 0; r < repeats; ++r) {
      op_counters().reset();
      const auto t0 = std::chrono::steady_clock::now();
      const auto y = kind == LayerKind::full ? full_attention_layer_forward(x, params, alpha, cfg)
                                             : samsa_layer_forward(x, params, alpha, cfg);
      const auto t1 = std::chrono::steady_clock::now();
      row.ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      if (r == 0) {
        row.attention_scores = op_counters().attention_scores;
        row.selection_work = op_counters().selection_work;
      }
      (void)y;
    }
    row.median_ms = median(row.ms);
    report.rows.push_back(row);
  }
  std::vector<double> ns, ts;
  for (const auto& row : report.rows) {
    ns.push_back(static_cast<double>(row.n));
    ts.push_back(row.median_ms);
  }
  if (ns.size() >= 2) report.exponent = fit_exponent(ns, ts);
  return report;
}

}  // namespace samsa::verify
