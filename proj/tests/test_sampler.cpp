#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "samsa/sampler.hpp"
#include "samsa/verification/gradcheck.hpp"

namespace samsa {
namespace {

using T = Tensor<double>;

std::vector<std::size_t> topk(const std::vector<double>& z, std::size_t k) {
  return arg_topk<double>(std::span<const double>(z), k);
}

T random_matrix(std::size_t r, std::size_t c, std::mt19937_64& gen, bool grad = false) {
  std::normal_distribution<double> nd;
  std::vector<double> v(r * c);
  for (auto& x : v) x = nd(gen);
  return T::matrix(r, c, std::move(v), grad);
}

std::vector<double> distinct_scores(std::size_t n, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(-3, 3);
  std::vector<double> z(n);
  for (auto& v : z) v = u(gen);
  return z;
}

double sigma(double t) { return 1.0 / (1.0 + std::exp(-t)); }

SamplerOptions options(SampleMode mode, Locality loc, double tau = 1.0) {
  SamplerOptions o;
  o.mode = mode;
  o.locality = loc;
  o.tau = Temperature{tau};
  return o;
}

TEST(ArgTopk, Examples) {
  EXPECT_EQ(topk({0.1, 0.9, 0.5}, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(topk({4, 3, 2, 1}, 2), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(topk({1, 2, 2, 1}, 3), (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_THROW(topk({1, 2}, 3), SamplerError);
  EXPECT_THROW(topk({1, 2}, 0), SamplerError);
}

TEST(BruteForceSetSample, Examples) {
  const std::vector<double> z{4, 3, 2, 1};
  EXPECT_EQ(brute_force_set_sample<double>(z, T{}, 2).set, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(brute_force_set_sample<double>(z, T{}, 4).set, (std::vector<std::size_t>{0, 1, 2, 3}));
  std::vector<double> big(40, 1.0);
  EXPECT_THROW(brute_force_set_sample<double>(big, T{}, 20), SamplerError);
  const auto x = T::matrix(4, 1, {10, 20, 30, 40});
  EXPECT_EQ(brute_force_set_sample<double>(z, x, 2).rows.values(), (std::vector<double>{10, 20}));
}

TEST(ArgTopk, AgreesWithEnumerationOracle) {
  std::mt19937_64 gen(500);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + gen() % 12;
    const std::size_t k = 1 + gen() % std::min<std::size_t>(n, 6);
    const auto z = distinct_scores(n, gen);
    auto fast = topk(z, k);
    std::sort(fast.begin(), fast.end());
    ASSERT_EQ(fast, brute_force_set_sample<double>(z, T{}, k).set) << "trial " << trial;
  }
}

TEST(ArgTopk, TiedScoresPreferLowerIndexLikeOracle) {
  std::mt19937_64 gen(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + gen() % 9;
    const std::size_t k = 1 + gen() % (n - 1);
    std::vector<double> z(n);
    for (auto& v : z) v = static_cast<double>(gen() % 3);
    auto fast = topk(z, k);
    std::sort(fast.begin(), fast.end());
    ASSERT_EQ(fast, brute_force_set_sample<double>(z, T{}, k).set);
  }
}

TEST(SampleWithReplacement, Examples) {
  GumbelRng rng(1);
  const auto single = sample_with_replacement(T::from({1}, {0.3}), T::matrix(1, 2, {7, 8}), 4,
                                              Temperature{1.0}, rng, true);
  EXPECT_EQ(single.values(), (std::vector<double>{7, 8, 7, 8, 7, 8, 7, 8}));
  const auto x = T::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  const auto det = sample_with_replacement(T::from({3}, {5, 1, 1}), x, 3, Temperature{1.0}, rng, false);
  EXPECT_EQ(det.values(), (std::vector<double>{1, 2, 1, 2, 1, 2}));
}

TEST(SampleWithReplacement, FrequenciesMatchSoftmax) {
  const std::vector<double> z{0.5, -0.3, 1.2, 0.0};
  const auto x = T::matrix(4, 1, {0, 1, 2, 3});
  GumbelRng rng(77);
  NoGradGuard guard;
  std::vector<double> counts(4, 0.0);
  const std::size_t per_call = 1000, calls = 100;
  for (std::size_t c = 0; c < calls; ++c) {
    const auto rows = sample_with_replacement(T::from({4}, z), x, per_call, Temperature{1.0}, rng, true);
    for (double v : rows.data()) counts[static_cast<std::size_t>(v)] += 1.0;
  }
  double norm = 0;
  for (double v : z) norm += std::exp(v);
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_NEAR(counts[i] / static_cast<double>(per_call * calls), std::exp(z[i]) / norm, 0.01);
}

TEST(SampleWithoutReplacement, HardExample) {
  const auto x = T::matrix(3, 2, {0, 1, 10, 11, 20, 21});
  const auto r = sample_without_replacement(T::from({3}, {1, 5, 3}), x, 2,
                                            options(SampleMode::hard, Locality::full));
  EXPECT_EQ(r.i, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(r.j, (std::vector<std::size_t>{0}));
  EXPECT_EQ(r.p, (std::vector<double>{1, 1}));
  EXPECT_EQ(r.rows.values(), (std::vector<double>{10, 11, 20, 21}));
}

TEST(SampleWithoutReplacement, ColdSoftApproachesHard) {
  const auto x = T::matrix(4, 2, {0, 1, 10, 11, 20, 21, 30, 31});
  const auto r = sample_without_replacement(T::from({4}, {1, 5, 3, 0}), x, 2,
                                            options(SampleMode::soft, Locality::truncated, 1e-3));
  const std::vector<double> expected{10, 11, 20, 21};
  for (std::size_t q = 0; q < 4; ++q) EXPECT_NEAR(r.rows[q], expected[q], 1e-12);
  for (double p : r.p) EXPECT_NEAR(p, 1.0, 1e-12);
}

TEST(SampleWithoutReplacement, SoftFullLocalityExample) {
  const auto x = T::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const auto r = sample_without_replacement(T::from({3}, {2, 0, 0}), x, 1,
                                            options(SampleMode::soft, Locality::full));
  ASSERT_EQ(r.p.size(), 2u);
  EXPECT_NEAR(r.p[0], sigma(2.0), 1e-15);
  EXPECT_NEAR(r.p[1], sigma(2.0), 1e-15);
  EXPECT_NEAR(r.rows[0], sigma(2.0), 1e-15);
  EXPECT_NEAR(r.rows[1], (1 - sigma(2.0)) / 2, 1e-15);
  EXPECT_NEAR(r.rows[2], (1 - sigma(2.0)) / 2, 1e-15);
  EXPECT_NEAR(r.rows[0], 0.8808, 1e-4);
  EXPECT_NEAR(r.rows[1], 0.0596, 1e-4);
}

TEST(SampleWithoutReplacement, RejectsTooFewCandidates) {
  const auto x = T::matrix(5, 1, {1, 2, 3, 4, 5});
  const auto z = T::from({5}, {1, 2, 3, 4, 5});
  EXPECT_THROW(sample_without_replacement(z, x, 3, options(SampleMode::hard, Locality::truncated)),
               SamplerError);
  EXPECT_THROW(sample_without_replacement(z, x, 5, options(SampleMode::hard, Locality::full)),
               SamplerError);
  EXPECT_THROW(sample_without_replacement(T::from({4}, {1, 2, 3, 4}), x, 1,
                                          options(SampleMode::hard, Locality::full)),
               ShapeError);
  try {
    sample_without_replacement(z, x, 3, options(SampleMode::hard, Locality::truncated));
  } catch (const SamplerError& e) {
    EXPECT_NE(std::string(e.what()).find("k=3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("5"), std::string::npos);
  }
}

TEST(SampleWithoutReplacement, IndexSetsAreDistinctAndDisjoint) {
  std::mt19937_64 gen(21);
  GumbelRng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 4 + gen() % 30;
    const std::size_t k = 1 + gen() % (n / 2);
    auto opt = options(SampleMode::hard, trial % 2 ? Locality::full : Locality::truncated);
    opt.pair_noise = true;
    const auto x = random_matrix(n, 3, gen);
    const auto r = sample_without_replacement(T::from({n}, distinct_scores(n, gen)), x, k, opt, &rng);
    std::set<std::size_t> seen(r.i.begin(), r.i.end());
    ASSERT_EQ(seen.size(), k);
    for (auto v : r.j) ASSERT_TRUE(seen.insert(v).second);
    ASSERT_EQ(r.j.size(), opt.locality == Locality::full ? n - k : k);
  }
}

TEST(SampleWithoutReplacement, SoftRowsAreConvexCombinations) {
  std::mt19937_64 gen(8);
  GumbelRng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 4 + gen() % 12;
    const std::size_t k = 1 + gen() % (n / 2);
    std::vector<double> eye(n * n, 0.0);
    for (std::size_t r = 0; r < n; ++r) eye[r * n + r] = 1.0;
    auto opt = options(SampleMode::soft, trial % 2 ? Locality::full : Locality::truncated, 0.5);
    opt.pair_noise = true;
    const auto r = sample_without_replacement(T::from({n}, distinct_scores(n, gen)),
                                              T::matrix(n, n, eye), k, opt, &rng);
    for (std::size_t m = 0; m < k; ++m) {
      double total = 0;
      for (std::size_t c = 0; c < n; ++c) {
        EXPECT_GE(r.rows(m, c), 0.0);
        total += r.rows(m, c);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(SampleWithoutReplacement, HardRowsAreBitwiseGather) {
  std::mt19937_64 gen(10);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + gen() % 40;
    const std::size_t k = 1 + gen() % (n / 2);
    const auto z = distinct_scores(n, gen);
    const auto x = random_matrix(n, 5, gen);
    const auto r = sample_without_replacement(T::from({n}, z), x, k,
                                              options(SampleMode::hard, Locality::truncated));
    EXPECT_EQ(r.rows.values(), gather_rows(x, topk(z, k)).values());
  }
}

TEST(SampleWithoutReplacement, PermutationEquivariance) {
  std::mt19937_64 gen(12);
  for (auto mode : {SampleMode::hard, SampleMode::soft}) {
    for (auto loc : {Locality::truncated, Locality::full}) {
      for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 4 + gen() % 20;
        const std::size_t k = 1 + gen() % (n / 2);
        const auto z = distinct_scores(n, gen);
        const auto x = random_matrix(n, 4, gen);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), gen);
        std::vector<double> zp(n);
        for (std::size_t r = 0; r < n; ++r) zp[r] = z[perm[r]];
        const auto opt = options(mode, loc, 0.7);
        const auto a = sample_without_replacement(T::from({n}, z), x, k, opt);
        const auto b = sample_without_replacement(T::from({n}, zp), gather_rows(x, perm), k, opt);
        ASSERT_EQ(a.rows.values(), b.rows.values());
      }
    }
  }
}

struct SamplerGrads {
  std::vector<double> dz, dx;
};

SamplerGrads sampler_grads(SampleMode mode, Locality loc, const std::vector<double>& z,
                           const T& x_value, const T& weights, std::uint64_t noise_seed) {
  auto zt = T::from({z.size()}, z, true);
  auto x = T::matrix(x_value.rows(), x_value.cols(), x_value.values(), true);
  auto opt = options(mode, loc, 0.8);
  opt.pair_noise = true;
  GumbelRng rng(noise_seed);
  const auto r = sample_without_replacement(zt, x, 3, opt, &rng);
  backward(reduce_sum(mul(r.rows, weights)));
  return {zt.grad().empty() ? std::vector<double>{} : std::vector<double>(zt.grad().begin(), zt.grad().end()),
          std::vector<double>(x.grad().begin(), x.grad().end())};
}

TEST(SampleWithoutReplacement, HardBackwardEqualsSoftBackward) {
  std::mt19937_64 gen(13);
  for (auto loc : {Locality::truncated, Locality::full}) {
    const auto z = distinct_scores(9, gen);
    const auto x = random_matrix(9, 4, gen);
    const auto w = random_matrix(3, 4, gen);
    const auto hard = sampler_grads(SampleMode::hard, loc, z, x, w, 55);
    const auto soft = sampler_grads(SampleMode::soft, loc, z, x, w, 55);
    EXPECT_EQ(hard.dz, soft.dz);
    EXPECT_EQ(hard.dx, soft.dx);
  }
}

TEST(SampleWithoutReplacement, GradientSigns) {
  const std::vector<double> z{0.3, 2.0, -1.0, 1.1, 0.5, -0.4};
  std::vector<double> eye(36, 0.0);
  for (std::size_t r = 0; r < 6; ++r) eye[r * 6 + r] = 1.0;
  for (auto loc : {Locality::truncated, Locality::full}) {
    auto zt = T::from({6}, z, true);
    const auto r = sample_without_replacement(zt, T::matrix(6, 6, eye), 2,
                                              options(SampleMode::soft, loc));
    // Weight on selected rows only: gradient pushes selected scores up,
    // locality scores down.
    std::vector<double> w(12, 0.0);
    for (std::size_t m = 0; m < 2; ++m) w[m * 6 + r.i[m]] = 1.0;
    backward(reduce_sum(mul(r.rows, T::matrix(2, 6, w))));
    for (auto i : r.i) EXPECT_GT(zt.grad()[i], 0.0);
    for (auto j : r.j) EXPECT_LT(zt.grad()[j], 0.0);

    auto bumped = z;
    bumped[r.i[0]] += 1e-3;
    const auto r2 = sample_without_replacement(T::from({6}, bumped), T::matrix(6, 6, eye), 2,
                                               options(SampleMode::soft, loc));
    for (std::size_t v = 0; v < r.j.size(); ++v) EXPECT_GE(r2.p[v], r.p[v]);
  }
}

verify::GradCheckReport sampler_gradcheck(Locality loc, bool st, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const auto z = distinct_scores(10, gen);
  const auto x = random_matrix(10, 3, gen, true);
  const auto w = random_matrix(3, 3, gen);
  auto run = [=](SampleMode mode) {
    return [=](const std::vector<T>& in) {
      auto opt = options(mode, loc, 0.9);
      opt.pair_noise = true;
      GumbelRng rng(seed + 1);
      return reduce_sum(mul(sample_without_replacement(in[0], in[1], 3, opt, &rng).rows, w));
    };
  };
  return verify::finite_diff_gradcheck_pair(run(st ? SampleMode::hard : SampleMode::soft),
                                            run(SampleMode::soft), {T::from({10}, z, true), x});
}

TEST(SampleWithoutReplacement, SoftGradcheck) {
  for (auto loc : {Locality::truncated, Locality::full}) {
    const auto report = sampler_gradcheck(loc, false, 31);
    EXPECT_TRUE(report.pass) << report.max_rel;
  }
}

TEST(SampleWithoutReplacement, StraightThroughGradcheck) {
  for (auto loc : {Locality::truncated, Locality::full}) {
    const auto report = sampler_gradcheck(loc, true, 41);
    EXPECT_TRUE(report.pass) << report.max_rel;
    EXPECT_TRUE(report.forward_mismatch);
  }
}

TEST(SampleWithoutReplacement, TruncatedBackwardIsQuadraticInK) {
  std::mt19937_64 gen(14);
  for (std::size_t n : {64u, 512u, 4096u}) {
    const std::size_t k = 8;
    auto z = T::from({n}, distinct_scores(n, gen), true);
    auto x = random_matrix(n, 2, gen, true);
    op_counters().reset();
    const auto r = sample_without_replacement(z, x, k, options(SampleMode::hard, Locality::truncated));
    EXPECT_EQ(op_counters().selection_work, n);
    EXPECT_EQ(op_counters().pair_forward, 0u);
    backward(reduce_sum(r.rows));
    EXPECT_EQ(op_counters().pair_backward, k * k);
  }
}

TEST(MultiHeadSample, Examples) {
  const auto p = T::matrix(3, 2, {0, 1, 10, 11, 20, 21});
  const auto opt = options(SampleMode::hard, Locality::full);
  const auto r = multi_head_sample(T::matrix(3, 2, {5, 0, 1, 1, 0, 5}), p, 1, opt);
  EXPECT_EQ(r.heads[0].i, (std::vector<std::size_t>{0}));
  EXPECT_EQ(r.heads[1].i, (std::vector<std::size_t>{2}));
  EXPECT_EQ(r.rows.values(), (std::vector<double>{0, 1, 20, 21}));

  const auto same = multi_head_sample(T::matrix(3, 3, {1, 1, 1, 3, 3, 3, 2, 2, 2}), p, 1, opt);
  EXPECT_EQ(same.heads[0].i, same.heads[1].i);
  EXPECT_EQ(same.heads[1].i, same.heads[2].i);
  EXPECT_THROW(multi_head_sample(T::matrix(2, 1, {1, 2}), p, 1, opt), ShapeError);
}

TEST(MultiHeadSample, DisjointFavouredColumnsCoverHK) {
  const std::size_t h = 4, k = 3, n = 32;
  std::vector<double> z(n * h, 0.0);
  for (std::size_t t = 0; t < h; ++t)
    for (std::size_t m = 0; m < k; ++m) z[(t * k + m) * h + t] = 10.0 - static_cast<double>(m);
  std::mt19937_64 gen(1);
  const auto r = multi_head_sample(T::matrix(n, h, z), random_matrix(n, 2, gen), k,
                                   options(SampleMode::hard, Locality::truncated));
  std::set<std::size_t> all;
  for (const auto& head : r.heads) all.insert(head.i.begin(), head.i.end());
  EXPECT_EQ(all.size(), h * k);
}

TEST(MultiHeadSample, HeadsMatchSingleHeadSampling) {
  std::mt19937_64 gen(15);
  const std::size_t n = 20, h = 3, k = 4;
  const auto scores = random_matrix(n, h, gen);
  const auto cand = random_matrix(n, 6, gen);
  auto opt = options(SampleMode::soft, Locality::truncated, 0.6);
  opt.pair_noise = true;
  GumbelRng rng(100);
  const auto all = multi_head_sample(scores, cand, k, opt, &rng);
  GumbelRng replay(100);
  for (std::size_t t = 0; t < h; ++t) {
    const auto col = slice_cols(scores, t, t + 1);
    const auto one = sample_without_replacement(col, cand, k, opt, &replay);
    EXPECT_EQ(one.i, all.heads[t].i);
    const auto block = slice_rows(all.rows, t * k, (t + 1) * k);
    EXPECT_EQ(one.rows.values(), block.values());
  }
}

verify::GradCheckReport multi_head_gradcheck(bool st) {
  std::mt19937_64 gen(16);
  const auto scores = random_matrix(12, 2, gen, true);
  const auto cand = random_matrix(12, 3, gen, true);
  const auto w = random_matrix(6, 3, gen);
  auto run = [=](SampleMode mode) {
    return [=](const std::vector<T>& in) {
      auto opt = options(mode, Locality::truncated, 1.0);
      opt.pair_noise = true;
      GumbelRng rng(5);
      return reduce_sum(mul(multi_head_sample(in[0], in[1], 3, opt, &rng).rows, w));
    };
  };
  return verify::finite_diff_gradcheck_pair(run(st ? SampleMode::hard : SampleMode::soft),
                                            run(SampleMode::soft), {scores, cand});
}

TEST(MultiHeadSample, Gradcheck) {
  EXPECT_TRUE(multi_head_gradcheck(false).pass);
  EXPECT_TRUE(multi_head_gradcheck(true).pass);
}

// Every operator with a hand-written straight-through backward must appear
// here with a finite-difference check against its soft surrogate.
TEST(CustomGradientRegistry, EveryEntryHasAGradcheck) {
  GumbelRng noise_rng(3);
  const auto noise = gumbel_noise<double>(noise_rng, {2, 3});
  const auto w = T::matrix(2, 3, {1.0, -0.5, 2.0, 0.3, 0.7, -1.2});
  const std::map<std::string, std::function<verify::GradCheckReport()>> checks{
      {"st_gumbel_softmax",
       [&] {
         return verify::finite_diff_gradcheck_pair(
             [&](auto& in) { return reduce_sum(mul(st_gumbel_softmax(in[0], noise, Temperature{0.6}), w)); },
             [&](auto& in) { return reduce_sum(mul(gumbel_softmax(in[0], noise, Temperature{0.6}), w)); },
             {T::matrix(2, 3, {0.2, -0.1, 0.4, 1.0, 0.0, -0.3}, true)});
       }},
      {"st_gumbel_sigmoid",
       [&] {
         return verify::finite_diff_gradcheck_pair(
             [&](auto& in) { return reduce_sum(mul(st_gumbel_sigmoid(in[0], noise, Temperature{0.6}), w)); },
             [&](auto& in) { return reduce_sum(mul(gumbel_sigmoid(in[0], noise, Temperature{0.6}), w)); },
             {T::matrix(2, 3, {0.2, -0.1, 0.4, 1.0, 0.0, -0.3}, true)});
       }},
      {"sample_without_replacement", [] { return sampler_gradcheck(Locality::truncated, true, 61); }},
      {"multi_head_sample", [] { return multi_head_gradcheck(true); }},
  };
  for (auto name : kCustomGradientOps) {
    const auto it = checks.find(std::string(name));
    ASSERT_NE(it, checks.end()) << "no gradcheck registered for " << name;
    const auto report = it->second();
    EXPECT_TRUE(report.pass) << name << " max_rel=" << report.max_rel;
  }
}

}  // namespace
}  // namespace samsa
