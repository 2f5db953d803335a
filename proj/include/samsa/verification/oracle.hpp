#pragma once

#include <algorithm>
#include <cstddef>
#include <random>
#include <vector>

#include <json.hpp>

#include "samsa/sampler.hpp"

namespace samsa::verify {

struct OracleReport {
  std::size_t trials = 0;
  std::size_t agreed = 0;
  std::vector<nlohmann::json> mismatches;
  bool pass() const { return agreed == trials; }
};

inline nlohmann::json to_json(const OracleReport& r) {
  return {{"trials", r.trials}, {"agreed", r.agreed}, {"pass", r.pass()},
          {"mismatches", r.mismatches}};
}

// arg_topk against exhaustive enumeration of every k-subset on random
// continuous scores with n in [2, n_max] and k in [1, min(k_max, n)].
template <class Real = double>
OracleReport oracle_sweep(std::size_t n_max, std::size_t k_max, std::size_t trials,
                                 std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  OracleReport r;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = 2 + gen() % (n_max - 1);
    const std::size_t k = 1 + gen() % std::min(k_max, n);
    std::vector<Real> z(n);
    for (auto& v : z) v = static_cast<Real>(nd(gen));
    auto fast = arg_topk<Real>(std::span<const Real>(z), k);
    std::sort(fast.begin(), fast.end());
    const auto slow = brute_force_set_sample<Real>(std::span<const Real>(z), Tensor<Real>(), k);
    ++r.trials;
    if (fast == slow.set)
      ++r.agreed;
    else
      r.mismatches.push_back({{"n", n}, {"k", k}, {"z", z}, {"arg_topk", fast}, {"enumerated", slow.set}});
  }
  return r;
}

}  // namespace samsa::verify
