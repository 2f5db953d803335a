#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "samsa/verification/verify.hpp"

namespace samsa {
namespace {

using T = Tensor<double>;

TEST(Gradcheck, PolynomialMatchesExactly) {
  const auto x = T::matrix(2, 3, {0.5, -1, 2, 3, -0.25, 1.5});
  const auto report = verify::finite_diff_gradcheck(
      [](const std::vector<T>& in) { return reduce_sum(square(in[0])); }, {x});
  EXPECT_TRUE(report.pass);
  EXPECT_LT(report.max_abs, 1e-9);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x.grad()[i], 2 * x[i], 1e-12);
}

TEST(Gradcheck, RejectsNonDeterministicFunction) {
  int calls = 0;
  EXPECT_THROW(verify::finite_diff_gradcheck(
                   [&](const std::vector<T>& in) { return scale(reduce_sum(in[0]), double(++calls)); },
                   {T::matrix(1, 2, {1, 2})}),
               verify::NonDeterministicFunction);
}

TEST(Gradcheck, StraightThroughModeChecksAgainstSurrogate) {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> nd;
  std::vector<double> zv(8), xv(8 * 3), wv(2 * 3);
  for (auto& v : zv) v = nd(gen);
  for (auto& v : xv) v = nd(gen);
  for (auto& v : wv) v = nd(gen);
  const auto w = T::matrix(2, 3, wv);
  auto run = [&](SampleMode mode) {
    return [&, mode](const std::vector<T>& in) {
      SamplerOptions opt;
      opt.mode = mode;
      return reduce_sum(mul(sample_without_replacement(in[0], in[1], 2, opt).rows, w));
    };
  };
  const auto report = verify::finite_diff_gradcheck_pair(
      run(SampleMode::hard), run(SampleMode::soft), {T::from({8}, zv), T::matrix(8, 3, xv)});
  EXPECT_TRUE(report.forward_mismatch);
  EXPECT_TRUE(report.pass) << report.max_rel;
  const auto j = verify::to_json(report);
  EXPECT_EQ(j["inputs"].size(), 2u);
}

TEST(Oracle, SweepAgreesEverywhere) {
  const auto r = verify::oracle_sweep(12, 6, 500, 7);
  EXPECT_EQ(r.trials, 500u);
  EXPECT_EQ(r.agreed, 500u);
  EXPECT_TRUE(r.mismatches.empty());
}

TEST(Distribution, SequentialReferenceDrawsDistinctIndices) {
  GumbelRng rng(2);
  const std::vector<double> z{0.1, 2, -1, 0.5, 0.0};
  for (int t = 0; t < 100; ++t) {
    const auto pick = verify::sequential_gumbel_topk(z, 5, rng);
    EXPECT_EQ(std::set<std::size_t>(pick.begin(), pick.end()).size(), 5u);
  }
}

TEST(Distribution, UniformScoresGiveUniformFrequencies) {
  const auto r = verify::distribution_probe(std::vector<double>(6, 0.3), 1, 20000, 3);
  EXPECT_TRUE(r.within_3sigma) << r.max_abs_z;
  for (double p : r.expected) EXPECT_NEAR(p, 1.0 / 6, 1e-15);
}

TEST(Distribution, LogTwoScoreIsPickedHalfTheTime) {
  const auto r = verify::distribution_probe({std::log(2.0), 0.0, 0.0}, 1, 100000, 4);
  EXPECT_NEAR(r.expected[0], 0.5, 1e-15);
  EXPECT_NEAR(r.sampler_freq[0], 0.5, 3 * std::sqrt(0.25 / 100000));
  EXPECT_TRUE(r.within_3sigma) << r.max_abs_z;
  EXPECT_TRUE(r.within_reference) << r.max_reference_gap;
}

TEST(Distribution, FirstPickMarginalsMatchReferenceForLargerK) {
  const std::vector<double> z{1.0, 0.2, -0.5, 0.7, 0.0, -1.2, 0.4, 0.9};
  const auto r = verify::distribution_probe(z, 3, 50000, 5);
  EXPECT_TRUE(r.within_reference) << r.max_reference_gap;
  EXPECT_TRUE(r.within_3sigma) << r.max_abs_z;
}

TEST(Distribution, RejectsTooFewDraws) {
  EXPECT_THROW(verify::distribution_probe({0.0, 1.0}, 1, 100, 1), std::invalid_argument);
}

TEST(Complexity, ExponentFitRecoversPowerLaw) {
  const std::vector<double> n{512, 1024, 2048, 4096};
  std::vector<double> lin, quad;
  for (double v : n) {
    lin.push_back(3 * v);
    quad.push_back(0.5 * v * v);
  }
  EXPECT_NEAR(verify::fit_exponent(n, lin), 1.0, 1e-12);
  EXPECT_NEAR(verify::fit_exponent(n, quad), 2.0, 1e-12);
  EXPECT_EQ(verify::median({3, 1, 2}), 2.0);
}

TEST(Complexity, AttentionScoreCountIsNTimesK) {
  AttentionConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 1;
  cfg.k = 128;
  cfg.d_ffn = 16;
  const auto r = verify::complexity_probe<float>(verify::LayerKind::samsa_hard, {1024}, cfg, 1);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].attention_scores, 1024u * 128u);
  EXPECT_GE(r.rows[0].selection_work, 1024u);
  const auto full = verify::complexity_probe<float>(verify::LayerKind::full, {256}, cfg, 3);
  EXPECT_EQ(full.rows[0].attention_scores, 256u * 256u);
  EXPECT_EQ(full.rows[0].ms.size(), 3u);
  EXPECT_EQ(verify::to_json(full)["layer"], "full");
}

}  // namespace
}  // namespace samsa
