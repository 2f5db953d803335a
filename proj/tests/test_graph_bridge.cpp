#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "samsa/graph_bridge.hpp"
#include "samsa/verification/gradcheck.hpp"

namespace samsa {
namespace {

using T = Tensor<double>;

GraphInstance random_graph(std::size_t n, std::size_t m, std::size_t f, std::size_t ge,
                           std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  GraphInstance g;
  g.n_nodes = n;
  g.node_dim = f;
  g.edge_dim = ge;
  for (std::size_t i = 0; i < n * f; ++i) g.x.push_back(nd(gen));
  for (std::size_t k = 0; k < m; ++k) {
    g.edges.emplace_back(gen() % n, gen() % n);
    for (std::size_t c = 0; c < ge; ++c) g.e.push_back(nd(gen));
  }
  return g;
}

template <class Real>
Tensor<Real> random_eps(std::size_t n, std::size_t d, std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  std::vector<Real> v(n * d);
  for (auto& x : v) x = static_cast<Real>(nd(gen));
  return Tensor<Real>::matrix(n, d, std::move(v));
}

TEST(GraphFormat, ParsesExample) {
  std::istringstream in(
      "# triangle with one feature per node and edge\n"
      "3 2 1 1\n"
      "0.5\n"
      "1.5\n"
      "-2\n"
      "\n"
      "0 1 0.25\n"
      "1 2 -1\n"
      "target 2\n");
  const auto g = parse_graph(in);
  EXPECT_EQ(g.n_nodes, 3u);
  EXPECT_EQ(g.x, (std::vector<double>{0.5, 1.5, -2}));
  ASSERT_EQ(g.edges.size(), 2u);
  EXPECT_EQ(g.edges[1], (std::pair<std::size_t, std::size_t>{1, 2}));
  EXPECT_EQ(g.e, (std::vector<double>{0.25, -1}));
  ASSERT_TRUE(g.target.has_value());
  EXPECT_EQ(*g.target, 2.0);
}

TEST(GraphFormat, RoundTrips) {
  std::mt19937_64 gen(1);
  auto g = random_graph(5, 7, 3, 2, gen);
  g.target = 1.75;
  std::stringstream buf;
  write_graph(buf, g);
  const auto back = parse_graph(buf);
  EXPECT_EQ(back.x, g.x);
  EXPECT_EQ(back.e, g.e);
  EXPECT_EQ(back.edges, g.edges);
  EXPECT_EQ(back.target, g.target);
}

TEST(GraphFormat, RejectsMalformedInput) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_graph(in);
  };
  EXPECT_THROW(parse(""), GraphFormatError);
  EXPECT_THROW(parse("2 1 1 0\n1\n2\n0 2\n"), GraphFormatError);   // dangling
  EXPECT_THROW(parse("2 0 2 0\n1\n2 3\n"), GraphFormatError);      // short row
  EXPECT_THROW(parse("1 0 1 0\n1 9\n"), GraphFormatError);         // trailing value
  EXPECT_THROW(parse("1 0 1 0\n1\nlabel 3\n"), GraphFormatError);  // unknown line
  EXPECT_THROW(parse("2 1 0 0\n\n0 -1\n"), GraphFormatError);
}

TEST(GraphFormat, UndirectedExpansionAddsReverseEdges) {
  GraphInstance g;
  g.n_nodes = 3;
  g.edge_dim = 1;
  g.edges = {{0, 1}, {2, 2}, {1, 2}};
  g.e = {5, 6, 7};
  const auto u = expand_undirected(g);
  ASSERT_EQ(u.edges.size(), 5u);
  EXPECT_EQ(u.edges[3], (std::pair<std::size_t, std::size_t>{1, 0}));
  EXPECT_EQ(u.edges[4], (std::pair<std::size_t, std::size_t>{2, 1}));
  EXPECT_EQ(u.e, (std::vector<double>{5, 6, 7, 5, 7}));
}

TEST(NodeEncoding, DegenerateParametersGiveZero) {
  std::mt19937_64 gen(2);
  auto prm = GraphBridgeParams<double>::init(3, 0, 4, gen, 0.0);
  for (auto& v : prm.phi.w2.mutable_data()) v = 0;
  GumbelRng rng(1);
  const auto p = node_positional_encoding(random_eps<double>(6, 3, gen), prm.sigma, prm.phi, rng);
  for (double v : p.data()) EXPECT_EQ(v, 0.0);
}

TEST(NodeEncoding, ZeroScaleIsDeterministicFeatureMap) {
  std::mt19937_64 gen(3);
  const auto prm = GraphBridgeParams<double>::init(3, 0, 4, gen, 0.0);
  const auto x = random_eps<double>(6, 3, gen);
  GumbelRng a(1), b(2);
  const auto pa = node_positional_encoding(x, prm.sigma, prm.phi, a);
  const auto pb = node_positional_encoding(x, prm.sigma, prm.phi, b);
  EXPECT_EQ(pa.values(), pb.values());
  const auto phi = prm.phi(x);
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_NEAR(pa[i], phi[i], 0x1p-45);
}

TEST(NodeEncoding, NoiseVarianceMatchesSquaredScale) {
  std::mt19937_64 gen(4);
  auto prm = GraphBridgeParams<double>::init(2, 0, 4, gen);
  prm.sigma.mutable_data()[0] = 0.5;
  prm.sigma.mutable_data()[1] = 1.0;
  prm.sigma.mutable_data()[2] = 2.0;
  prm.sigma.mutable_data()[3] = -1.5;
  const std::size_t draws = 100000;
  const auto x = T::matrix(draws, 2, std::vector<double>(2 * draws, 0.3));
  GumbelRng rng(9);
  const auto p = node_positional_encoding(x, prm.sigma, prm.phi, rng);
  const auto phi = prm.phi(T::matrix(1, 2, {0.3, 0.3}));
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0, ss = 0;
    for (std::size_t r = 0; r < draws; ++r) {
      const double v = p(r, c) - phi(0, c);
      s += v;
      ss += v * v;
    }
    const double mean = s / draws;
    const double var = ss / draws - mean * mean;
    const double target = prm.sigma[c] * prm.sigma[c];
    EXPECT_NEAR(var / target, 1.0, 0.02) << "dim " << c;
  }
}

TEST(EdgeEncoding, SelfLoopIsZeroAndReverseIsNegated) {
  std::mt19937_64 gen(5);
  const auto p = random_eps<double>(4, 6, gen);
  const auto pe = edge_positional_encoding(p, {{2, 2}, {0, 3}, {3, 0}});
  for (std::size_t c = 0; c < 6; ++c) {
    EXPECT_EQ(pe(0, c), 0.0);
    EXPECT_EQ(pe(1, c), -pe(2, c));
  }
  EXPECT_THROW(edge_positional_encoding(p, {{0, 4}}), GraphFormatError);
}

template <class Real>
void check_telescoping(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const std::size_t n = 12, d = 8;
  auto prm = GraphBridgeParams<Real>::init(3, 0, d, gen, 1.3);
  GumbelRng rng(seed);
  const auto p = node_positional_encoding(random_eps<Real>(n, 3, gen), prm.sigma, prm.phi, rng);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> path(2 + gen() % 9);
    for (auto& v : path) v = gen() % n;
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t s = 0; s + 1 < path.size(); ++s) edges.emplace_back(path[s], path[s + 1]);
    edges.emplace_back(path.front(), path.back());
    const auto pe = edge_positional_encoding(p, edges);
    const std::size_t last = edges.size() - 1;
    for (std::size_t c = 0; c < d; ++c) {
      Real sum = 0;
      for (std::size_t s = 0; s < last; ++s) sum += pe(s, c);
      ASSERT_EQ(sum, pe(last, c)) << "trial " << trial << " column " << c;
    }
  }
}

TEST(EdgeEncoding, PathSumsTelescopeExactlyIn64Bit) { check_telescoping<double>(6); }
TEST(EdgeEncoding, PathSumsTelescopeExactlyIn32Bit) { check_telescoping<float>(7); }

TEST(GraphTokenize, CountsAndTypes) {
  std::mt19937_64 gen(8);
  const auto prm = GraphBridgeParams<double>::init(3, 2, 8, gen);
  GumbelRng rng(1);
  const auto g = random_graph(3, 2, 3, 2, gen);
  const auto b = graph_tokenize(g, prm, rng);
  EXPECT_EQ(b.tokens.shape(), (Shape{5, 8}));
  EXPECT_EQ(b.types, (std::vector<TokenType>{TokenType::node, TokenType::node, TokenType::node,
                                             TokenType::edge, TokenType::edge}));
  ASSERT_EQ(b.segments.size(), 1u);
  EXPECT_EQ(b.segments[0].end, 5u);

  auto lonely = g;
  lonely.edges.clear();
  lonely.e.clear();
  GumbelRng r1(3), r2(3);
  const auto nodes_only = graph_tokenize(lonely, prm, r1);
  EXPECT_EQ(nodes_only.tokens.rows(), 3u);
  EXPECT_EQ(nodes_only.tokens.values(),
            slice_rows(graph_tokenize(g, prm, r2).tokens, 0, 3).values());
}

TEST(GraphTokenize, RejectsDimensionMismatch) {
  std::mt19937_64 gen(9);
  const auto prm = GraphBridgeParams<double>::init(3, 2, 8, gen);
  GumbelRng rng(1);
  EXPECT_THROW(graph_tokenize(random_graph(3, 2, 4, 2, gen), prm, rng), ShapeError);
  EXPECT_THROW(graph_tokenize(random_graph(3, 2, 3, 1, gen), prm, rng), ShapeError);
}

TEST(GraphTokenize, NodeRelabelingPermutesTokens) {
  std::mt19937_64 gen(10);
  const std::size_t n = 7, d = 8;
  const auto prm = GraphBridgeParams<double>::init(3, 2, d, gen);
  const auto g = random_graph(n, 11, 3, 2, gen);
  const auto eps = random_eps<double>(n, d, gen);
  std::vector<std::size_t> perm(n);  // old node i becomes perm[i]
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), gen);

  auto h = g;
  std::vector<double> eps_perm(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(g.x.begin() + i * 3, 3, h.x.begin() + perm[i] * 3);
    std::copy_n(eps.data().begin() + i * d, d, eps_perm.begin() + perm[i] * d);
  }
  for (auto& [s, t] : h.edges) {
    s = perm[s];
    t = perm[t];
  }
  const auto a = graph_tokenize(g, prm, eps);
  const auto b = graph_tokenize(h, prm, T::matrix(n, d, eps_perm));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) ASSERT_EQ(b.tokens(perm[i], c), a.tokens(i, c));
  for (std::size_t k = 0; k < g.edges.size(); ++k)
    for (std::size_t c = 0; c < d; ++c) ASSERT_EQ(b.tokens(n + k, c), a.tokens(n + k, c));
}

TEST(GraphTokenize, GradcheckThroughEncodings) {
  std::mt19937_64 gen(11);
  const std::size_t d = 6;
  const auto g = random_graph(4, 5, 3, 2, gen);
  const auto eps = random_eps<double>(4, d, gen);
  const auto w = random_eps<double>(9, d, gen);
  auto prm = GraphBridgeParams<double>::init(3, 2, d, gen, 0.8);
  auto named = prm.named();
  auto inputs = tensors_of(named);
  const auto report = verify::finite_diff_gradcheck(
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
      inputs);
  EXPECT_TRUE(report.pass) << "max_rel=" << report.max_rel;
  EXPECT_LT(report.max_rel, 1e-4);
  bool sigma_grad = false;
  for (double v : inputs[0].grad()) sigma_grad |= v != 0.0;
  EXPECT_TRUE(sigma_grad);
}

TEST(GraphModel, EvalNoiseFollowsCallerSeed) {
  ModelConfig mc;
  mc.attention.d_model = 8;
  mc.attention.n_heads = 2;
  mc.attention.k = 3;
  mc.attention.d_ffn = 16;
  mc.out_dim = 1;
  std::mt19937_64 gen(12);
  const auto g = expand_undirected(random_graph(6, 7, 3, 1, gen));
  GraphModel<double> model(mc, 3, 1, 5);
  model.stack().alpha().mutable_data()[0] = 0.5;
  GumbelRng a(4), b(4), c(5);
  const auto ya = model.forward(g, a);
  EXPECT_EQ(ya.shape(), (Shape{1, 1}));
  EXPECT_EQ(ya.values(), model.forward(g, b).values());
  EXPECT_NE(ya.values(), model.forward(g, c).values());

  GraphModel<double> quiet(mc, 3, 1, 5, false);
  quiet.stack().alpha().mutable_data()[0] = 0.5;
  EXPECT_EQ(quiet.forward(g, a).values(), quiet.forward(g, c).values());
}

}  // namespace
}  // namespace samsa
