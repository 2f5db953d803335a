#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "samsa/tensor.hpp"

namespace samsa::verify {

struct InputErrors {
  double max_abs = 0.0;
  double max_rel = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<InputErrors> inputs;
  std::size_t evaluations = 0;
  double tolerance = 0.0;
  double max_abs = 0.0;
  double max_rel = 0.0;
  bool pass = false;
  // ST-aware mode: the checked function's forward differs from the surrogate.
  bool forward_mismatch = false;
};

class NonDeterministicFunction : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

inline nlohmann::json to_json(const GradCheckReport& r) {
  nlohmann::json j;
  j["pass"] = r.pass;
  j["max_abs_err"] = r.max_abs;
  j["max_rel_err"] = r.max_rel;
  j["tolerance"] = r.tolerance;
  j["evaluations"] = r.evaluations;
  j["forward_mismatch"] = r.forward_mismatch;
  j["inputs"] = nlohmann::json::array();
  for (const auto& in : r.inputs)
    j["inputs"].push_back({{"max_abs_err", in.max_abs}, {"max_rel_err", in.max_rel},
                           {"checked", in.checked}});
  return j;
}

// Checks the reverse-mode gradient of `analytic` against central differences
// of `numeric`. Pass the same function twice for an ordinary check; pass the
// soft surrogate as `numeric` to check a straight-through operator.
inline GradCheckReport finite_diff_gradcheck_pair(const ScalarFn& analytic, const ScalarFn& numeric,
                                                  std::vector<Tensor<double>> inputs,
                                                  double h = 1e-5, double tol = 1e-4) {
  GradCheckReport report;
  report.tolerance = tol;

  double base = 0.0;
  {
    NoGradGuard guard;
    base = numeric(inputs).item();
    const double again = numeric(inputs).item();
    report.evaluations += 2;
    if (base != again && !(std::isnan(base) && std::isnan(again)))
      throw NonDeterministicFunction("gradcheck: two baseline evaluations differ");
    report.forward_mismatch = analytic(inputs).item() != base;
    ++report.evaluations;
  }

  for (auto& t : inputs) {
    t.zero_grad();
    t.set_requires_grad(true);
  }
  backward(analytic(inputs));
  ++report.evaluations;

  NoGradGuard guard;
  for (auto& t : inputs) {
    InputErrors err;
    auto values = t.mutable_data();
    const auto grad = t.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = numeric(inputs).item();
      values[i] = saved - h;
      const double down = numeric(inputs).item();
      values[i] = saved;
      report.evaluations += 2;
      const double num = (up - down) / (2.0 * h);
      const double ana = t.has_grad() ? grad[i] : 0.0;
      const double abs_err = std::abs(ana - num);
      err.max_abs = std::max(err.max_abs, abs_err);
      if (std::abs(ana) + std::abs(num) > 1e-8) {
        const double rel = abs_err / std::max({std::abs(ana), std::abs(num), 1e-8});
        err.max_rel = std::max(err.max_rel, rel);
        ++err.checked;
      }
    }
    report.max_abs = std::max(report.max_abs, err.max_abs);
    report.max_rel = std::max(report.max_rel, err.max_rel);
    report.inputs.push_back(err);
  }
  report.pass = report.max_rel < tol;
  return report;
}

inline GradCheckReport finite_diff_gradcheck(const ScalarFn& f, std::vector<Tensor<double>> inputs,
                                             double h = 1e-5, double tol = 1e-4) {
  return finite_diff_gradcheck_pair(f, f, std::move(inputs), h, tol);
}

}  // namespace samsa::verify
