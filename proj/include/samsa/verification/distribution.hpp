#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "samsa/gumbel.hpp"
#include "samsa/sampler.hpp"

namespace samsa::verify {

struct DistributionReport {
  std::size_t draws = 0;
  std::vector<double> sampler_freq;     // first pick of the parallel sampler
  std::vector<double> expected;         // softmax(z)
  std::vector<double> reference_freq;   // first pick of the sequential reference
  std::vector<double> z_scores;         // (freq - p) / sqrt(p (1 - p) / draws)
  double max_abs_z = 0.0;
  double max_reference_gap = 0.0;
  bool within_3sigma = false;
  bool within_reference = false;
};

inline nlohmann::json to_json(const DistributionReport& r) {
  return {{"draws", r.draws},
          {"sampler_freq", r.sampler_freq},
          {"expected", r.expected},
          {"reference_freq", r.reference_freq},
          {"max_abs_z", r.max_abs_z},
          {"max_reference_gap", r.max_reference_gap},
          {"within_3sigma", r.within_3sigma},
          {"within_reference", r.within_reference}};
}

inline std::vector<double> softmax(const std::vector<double>& z) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z) mx = std::max(mx, v);
  std::vector<double> p(z.size());
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i] - mx);
  for (auto& v : p) v /= s;
  return p;
}

// Reference: k rounds, each the arg-max of freshly noised scores over the
// indices not yet taken.
inline std::vector<std::size_t> sequential_gumbel_topk(const std::vector<double>& z, std::size_t k,
                                                       GumbelRng& rng) {
  if (k == 0 || k > z.size()) throw std::invalid_argument("sequential_gumbel_topk: bad k");
  std::vector<bool> taken(z.size(), false);
  std::vector<std::size_t> out;
  for (std::size_t round = 0; round < k; ++round) {
    std::size_t best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (taken[i]) continue;
      const double v = z[i] + rng.gumbel();
      if (v > best_v) {
        best_v = v;
        best = i;
      }
    }
    taken[best] = true;
    out.push_back(best);
  }
  return out;
}

// Hard sampler on Gumbel-perturbed scores, as the layer runs it in training.
// Returns the selected indices in rank order.
inline std::vector<std::size_t> noisy_hard_sample(const std::vector<double>& z, std::size_t k,
                                                  GumbelRng& rng) {
  NoGradGuard guard;
  const std::size_t n = z.size();
  std::vector<double> noisy(z);
  for (auto& v : noisy) v += rng.gumbel();
  std::vector<double> eye(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  SamplerOptions opt;
  opt.mode = SampleMode::hard;
  opt.locality = 2 * k <= n ? Locality::truncated : Locality::full;
  const auto r = sample_without_replacement(Tensor<double>::from({n}, std::move(noisy)),
                                            Tensor<double>::matrix(n, n, std::move(eye)), k, opt);
  return r.i;
}

// First-pick frequencies of the parallel hard sampler against softmax(z)
// (3-sigma multinomial bounds) and against the sequential reference
// (absolute gap <= ref_tol).
inline DistributionReport distribution_probe(const std::vector<double>& z, std::size_t k,
                                             std::size_t draws, std::uint64_t seed,
                                             double ref_tol = 0.01) {
  if (draws < 10000) throw std::invalid_argument("distribution_probe: needs at least 1e4 draws");
  const std::size_t n = z.size();
  DistributionReport r;
  r.draws = draws;
  r.expected = softmax(z);
  r.sampler_freq.assign(n, 0.0);
  r.reference_freq.assign(n, 0.0);
  GumbelRng a(seed), b(seed ^ 0x5eed5eed5eedull);
  for (std::size_t d = 0; d < draws; ++d) {
    r.sampler_freq[noisy_hard_sample(z, k, a).front()] += 1.0;
    r.reference_freq[sequential_gumbel_topk(z, k, b).front()] += 1.0;
  }
  const double nd = static_cast<double>(draws);
  for (std::size_t i = 0; i < n; ++i) {
    r.sampler_freq[i] /= nd;
    r.reference_freq[i] /= nd;
    const double p = r.expected[i];
    const double sd = std::sqrt(p * (1 - p) / nd);
    const double zs = sd > 0 ? (r.sampler_freq[i] - p) / sd : 0.0;
    r.z_scores.push_back(zs);
    r.max_abs_z = std::max(r.max_abs_z, std::abs(zs));
    r.max_reference_gap = std::max(r.max_reference_gap, std::abs(r.sampler_freq[i] - r.reference_freq[i]));
  }
  r.within_3sigma = r.max_abs_z <= 3.0;
  r.within_reference = r.max_reference_gap <= ref_tol;
  return r;
}

}  // namespace samsa::verify
