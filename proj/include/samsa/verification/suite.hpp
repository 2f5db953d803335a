#pragma once

#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "samsa/graph_bridge.hpp"
#include "samsa/model.hpp"
#include "samsa/sampler.hpp"
#include "samsa/verification/gradcheck.hpp"

// Named gradcheck instances shared by the CLI and the acceptance run.
namespace samsa::verify {

struct GradcheckSize {
  std::size_t n = 16;
  std::size_t k = 4;
  std::uint64_t seed = 0;
};

namespace suite_detail {

using T = Tensor<double>;

inline T random_matrix(std::size_t r, std::size_t c, std::mt19937_64& gen, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(r * c);
  for (auto& x : v) x = u(gen);
  return T::matrix(r, c, std::move(v));
}

inline GradCheckReport sampler(const GradcheckSize& s, bool st) {
  if (s.k == 0 || s.k > s.n) throw std::invalid_argument("gradcheck: need 1 <= k <= n");
  std::mt19937_64 gen(s.seed + 31);
  const auto z = random_matrix(1, s.n, gen, -3, 3);
  const auto x = random_matrix(s.n, 3, gen);
  const auto w = random_matrix(s.k, 3, gen);
  const auto loc = 2 * s.k <= s.n ? Locality::truncated : Locality::full;
  auto run = [&, loc](SampleMode mode) {
    return [&, loc, mode](const std::vector<T>& in) {
      SamplerOptions opt;
      opt.mode = mode;
      opt.locality = loc;
      opt.tau = Temperature{0.9};
      opt.pair_noise = true;
      GumbelRng rng(s.seed + 1);
      return reduce_sum(mul(sample_without_replacement(in[0], in[1], s.k, opt, &rng).rows, w));
    };
  };
  return finite_diff_gradcheck_pair(run(st ? SampleMode::hard : SampleMode::soft), run(SampleMode::soft),
                                    {T::from({s.n}, z.values()), x});
}

inline GradCheckReport multi_head(const GradcheckSize& s, bool st) {
  if (s.k == 0 || s.k > s.n) throw std::invalid_argument("gradcheck: need 1 <= k <= n");
  std::mt19937_64 gen(s.seed + 47);
  const auto z = random_matrix(s.n, 2, gen, -3, 3);
  const auto x = random_matrix(s.n, 4, gen);
  const auto w = random_matrix(2 * s.k, 4, gen);
  auto run = [&](SampleMode mode) {
    return [&, mode](const std::vector<T>& in) {
      SamplerOptions opt;
      opt.mode = mode;
      opt.locality = Locality::full;
      GumbelRng rng(s.seed + 5);
      return reduce_sum(mul(multi_head_sample(in[0], in[1], s.k, opt, &rng).rows, w));
    };
  };
  return finite_diff_gradcheck_pair(run(st ? SampleMode::hard : SampleMode::soft), run(SampleMode::soft),
                                    {z, x});
}

inline GradCheckReport gumbel(const GradcheckSize& s, bool sigmoid) {
  GumbelRng noise_rng(s.seed + 3);
  const auto noise = gumbel_noise<double>(noise_rng, {2, 3});
  std::mt19937_64 gen(s.seed + 9);
  const auto w = random_matrix(2, 3, gen);
  const Temperature tau{0.6};
  return finite_diff_gradcheck_pair(
      [&](const std::vector<T>& in) {
        return reduce_sum(mul(sigmoid ? st_gumbel_sigmoid(in[0], noise, tau) : st_gumbel_softmax(in[0], noise, tau), w));
      },
      [&](const std::vector<T>& in) {
        return reduce_sum(mul(sigmoid ? gumbel_sigmoid(in[0], noise, tau) : gumbel_softmax(in[0], noise, tau), w));
      },
      {random_matrix(2, 3, gen)});
}

inline GradCheckReport graph_bridge(const GradcheckSize& s) {
  std::mt19937_64 gen(s.seed + 11);
  const std::size_t d = 6, nodes = 4, edges = 5;
  std::normal_distribution<double> nd;
  GraphInstance g;
  g.n_nodes = nodes;
  g.node_dim = 3;
  g.edge_dim = 2;
  for (std::size_t i = 0; i < nodes * 3; ++i) g.x.push_back(nd(gen));
  for (std::size_t e = 0; e < edges; ++e) {
    g.edges.emplace_back(gen() % nodes, gen() % nodes);
    for (int c = 0; c < 2; ++c) g.e.push_back(nd(gen));
  }
  const auto eps = random_matrix(nodes, d, gen, -2, 2);
  const auto w = random_matrix(nodes + edges, d, gen);
  auto prm = GraphBridgeParams<double>::init(3, 2, d, gen, 0.8);
  auto named = prm.named();
  return finite_diff_gradcheck(
      [&](const std::vector<T>& in) {
        GraphBridgeParams<double> q = prm;
        std::size_t at = 0;
        q.sigma = in[at++];
        for (auto* m : {&q.phi, &q.phi_v, &q.phi_e}) {
          m->w1 = in[at++];
          m->b1 = in[at++];
          m->w2 = in[at++];
          m->b2 = in[at++];
        }
        return reduce_sum(mul(graph_tokenize(g, q, eps).tokens, w));
      },
      tensors_of(named));
}

// Two-layer soft-SAMSA model, gradients w.r.t. every parameter and the input.
// The instance is fixed (model seed 6) so no selection boundary sits within
// the finite-difference step.
inline GradCheckReport model_soft() {
  ModelConfig mc;
  mc.attention.d_model = 8;
  mc.attention.n_heads = 2;
  mc.attention.k = 2;
  mc.attention.d_ffn = 16;
  mc.attention.mode = SampleMode::soft;
  mc.n_depth = 2;
  mc.in_dim = 4;
  mc.out_dim = 3;
  SequenceModel<double> model(mc, 6);
  std::mt19937_64 gen(15);
  model.stack().alpha().mutable_data()[0] = 0.7;
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& layer : model.stack().layers())
    for (auto& v : layer.z_supp.mutable_data()) v = u(gen);
  const auto tokens = random_matrix(5, 4, gen);
  const auto w = random_matrix(1, 3, gen);
  auto inputs = tensors_of(model.named_parameters());
  inputs.push_back(tokens);
  return finite_diff_gradcheck(
      [&](const std::vector<T>& in) { return reduce_sum(mul(model.forward(in.back()), w)); }, inputs);
}

}  // namespace suite_detail

inline const std::vector<std::string>& gradcheck_targets() {
  static const std::vector<std::string> names = {
      "sampler-soft",      "sampler-hard",      "multi-head-soft", "multi-head-hard",
      "st-gumbel-softmax", "st-gumbel-sigmoid", "graph-bridge",    "model-soft"};
  return names;
}

inline GradCheckReport run_gradcheck(const std::string& target, const GradcheckSize& s = {}) {
  using namespace suite_detail;
  if (target == "sampler-soft") return sampler(s, false);
  if (target == "sampler-hard") return sampler(s, true);
  if (target == "multi-head-soft") return multi_head(s, false);
  if (target == "multi-head-hard") return multi_head(s, true);
  if (target == "st-gumbel-softmax") return gumbel(s, false);
  if (target == "st-gumbel-sigmoid") return gumbel(s, true);
  if (target == "graph-bridge") return graph_bridge(s);
  if (target == "model-soft") return model_soft();
  throw std::invalid_argument("unknown gradcheck target '" + target + "'");
}

}  // namespace samsa::verify
