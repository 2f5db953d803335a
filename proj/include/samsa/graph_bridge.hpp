#pragma once

#include <cmath>
#include <cstddef>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "samsa/gumbel.hpp"
#include "samsa/model.hpp"
#include "samsa/ops.hpp"
#include "samsa/tensor.hpp"

// Graphs as token matrices: every node and every directed edge becomes one
// token. Node encodings are noisy (learnable scale) plus a feature MLP; edge
// encodings are differences of their endpoint encodings.
namespace samsa {

class GraphFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GraphInstance {
  std::size_t n_nodes = 0;
  std::size_t node_dim = 0;  // f
  std::size_t edge_dim = 0;  // g_e
  std::vector<double> x;     // n_nodes x node_dim
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<double> e;     // edges.size() x edge_dim
  std::optional<double> target;

  std::size_t n_edges() const { return edges.size(); }

  void validate() const {
    if (x.size() != n_nodes * node_dim)
      throw GraphFormatError("graph: node feature block has " + std::to_string(x.size()) +
                             " values, expected " + std::to_string(n_nodes * node_dim));
    if (e.size() != edges.size() * edge_dim)
      throw GraphFormatError("graph: edge feature block has " + std::to_string(e.size()) +
                             " values, expected " + std::to_string(edges.size() * edge_dim));
    for (std::size_t k = 0; k < edges.size(); ++k) {
      const auto [s, t] = edges[k];
      if (s >= n_nodes || t >= n_nodes)
        throw GraphFormatError("graph: edge " + std::to_string(k) + " (" + std::to_string(s) +
                               "," + std::to_string(t) + ") references a node outside [0," +
                               std::to_string(n_nodes) + ")");
    }
  }
};

// Appends the reverse of every edge that is not a self-loop, copying its
// features.
inline GraphInstance expand_undirected(const GraphInstance& g) {
  GraphInstance out = g;
  for (std::size_t k = 0; k < g.edges.size(); ++k) {
    const auto [s, t] = g.edges[k];
    if (s == t) continue;
    out.edges.emplace_back(t, s);
    out.e.insert(out.e.end(), g.e.begin() + static_cast<std::ptrdiff_t>(k * g.edge_dim),
                 g.e.begin() + static_cast<std::ptrdiff_t>((k + 1) * g.edge_dim));
  }
  return out;
}

// Text format, see docs/graph_format.md:
//   |V| |E| f g_e
//   |V| rows of f node features
//   |E| rows "src dst" followed by g_e edge features
//   optional "target <value>"
// Blank lines and lines starting with '#' are ignored.
inline GraphInstance parse_graph(std::istream& in) {
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    lines.push_back(line);
  }
  std::size_t at = 0;
  auto next_line = [&](const char* what) -> std::istringstream {
    if (at >= lines.size()) throw GraphFormatError(std::string("graph: missing ") + what);
    return std::istringstream(lines[at++]);
  };
  auto read_values = [](std::istringstream& row, std::size_t count, std::vector<double>& dst,
                        const std::string& where) {
    for (std::size_t c = 0; c < count; ++c) {
      double v;
      if (!(row >> v)) throw GraphFormatError("graph: " + where + " has too few values");
      dst.push_back(v);
    }
    std::string extra;
    if (row >> extra) throw GraphFormatError("graph: " + where + " has trailing data '" + extra + "'");
  };

  GraphInstance g;
  std::size_t n_edges = 0;
  {
    auto header = next_line("header");
    if (!(header >> g.n_nodes >> n_edges >> g.node_dim >> g.edge_dim))
      throw GraphFormatError("graph: header must be '|V| |E| f g_e'");
  }
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    auto row = next_line("node row");
    read_values(row, g.node_dim, g.x, "node row " + std::to_string(i));
  }
  for (std::size_t k = 0; k < n_edges; ++k) {
    auto row = next_line("edge row");
    long long s = -1, t = -1;
    if (!(row >> s >> t)) throw GraphFormatError("graph: edge row " + std::to_string(k) + " needs src dst");
    if (s < 0 || t < 0)
      throw GraphFormatError("graph: edge row " + std::to_string(k) + " has a negative endpoint");
    g.edges.emplace_back(static_cast<std::size_t>(s), static_cast<std::size_t>(t));
    read_values(row, g.edge_dim, g.e, "edge row " + std::to_string(k));
  }
  if (at < lines.size()) {
    std::istringstream row(lines[at++]);
    std::string key;
    double v;
    if (!(row >> key >> v) || key != "target")
      throw GraphFormatError("graph: unexpected line '" + lines[at - 1] + "'");
    g.target = v;
  }
  if (at < lines.size()) throw GraphFormatError("graph: unexpected line '" + lines[at] + "'");
  g.validate();
  return g;
}

inline void write_graph(std::ostream& out, const GraphInstance& g) {
  out << g.n_nodes << ' ' << g.edges.size() << ' ' << g.node_dim << ' ' << g.edge_dim << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    for (std::size_t c = 0; c < g.node_dim; ++c) out << (c ? " " : "") << g.x[i * g.node_dim + c];
    out << '\n';
  }
  for (std::size_t k = 0; k < g.edges.size(); ++k) {
    out << g.edges[k].first << ' ' << g.edges[k].second;
    for (std::size_t c = 0; c < g.edge_dim; ++c) out << ' ' << g.e[k * g.edge_dim + c];
    out << '\n';
  }
  if (g.target) out << "target " << *g.target << '\n';
}

template <class Real>
Tensor<Real> node_features(const GraphInstance& g) {
  std::vector<Real> v(g.x.begin(), g.x.end());
  return Tensor<Real>::matrix(g.n_nodes, g.node_dim, std::move(v));
}

template <class Real>
Tensor<Real> edge_features(const GraphInstance& g) {
  std::vector<Real> v(g.e.begin(), g.e.end());
  return Tensor<Real>::matrix(g.edges.size(), g.edge_dim, std::move(v));
}

// Two-layer perceptron with a GELU between the layers.
template <class Real>
struct Mlp {
  Tensor<Real> w1, b1, w2, b2;

  static Mlp init(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& gen) {
    Mlp m;
    m.w1 = LayerParams<Real>::uniform(in, hidden, gen);
    m.b1 = Tensor<Real>::zeros({1, hidden}, true);
    m.w2 = LayerParams<Real>::uniform(hidden, out, gen);
    m.b2 = Tensor<Real>::zeros({1, out}, true);
    return m;
  }

  std::size_t in_dim() const { return w1.rows(); }
  std::size_t out_dim() const { return w2.cols(); }

  Tensor<Real> operator()(const Tensor<Real>& x) const {
    if (x.cols() != in_dim()) throw shape_mismatch("mlp", x.shape(), w1.shape());
    return linear(gelu(linear(x, w1, b1)), w2, b2);
  }

  void append_named(const std::string& prefix, std::vector<NamedTensor<Real>>& out) const {
    out.push_back({prefix + "w1", w1});
    out.push_back({prefix + "b1", b1});
    out.push_back({prefix + "w2", w2});
    out.push_back({prefix + "b2", b2});
  }
};

// Node encodings are rounded to a fixed binary grid (2^-44 at 64-bit,
// 2^-16 at 32-bit). On the grid, differences and their sums along a path are
// exact while |p| stays below 2^8 (64-bit) or 2^7 (32-bit). The rounding
// passes gradients through unchanged.
template <class Real>
constexpr int pe_grid_bits() {
  return sizeof(Real) == 8 ? 44 : 16;
}

template <class Real>
Tensor<Real> snap_to_pe_grid(const Tensor<Real>& x) {
  const Real up = std::ldexp(Real(1), pe_grid_bits<Real>());
  const Real down = std::ldexp(Real(1), -pe_grid_bits<Real>());
  std::vector<Real> out(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::nearbyint(xv[i] * up) * down;
  return make_op<Real>("snap_to_pe_grid", x.shape(), std::move(out), {x}, [](Node<Real>& self) {
    if (Real* g = self.inputs[0]->grad_target())
      kernels::axpy(Real(1), self.grad.data(), g, self.grad.size());
  });
}

template <class Real>
Tensor<Real> standard_normal(std::size_t rows, std::size_t cols, GumbelRng& rng) {
  std::vector<Real> v(rows * cols);
  for (auto& x : v) x = static_cast<Real>(rng.normal());
  return Tensor<Real>::matrix(rows, cols, std::move(v));
}

// p_i = eps_i * sigma + phi(x_i) with caller-supplied eps (|V| x d). The
// stored sigma may be negative; the variance is sigma^2.
template <class Real>
Tensor<Real> node_positional_encoding(const Tensor<Real>& x, const Tensor<Real>& sigma,
                                      const Mlp<Real>& phi, const Tensor<Real>& eps) {
  const std::size_t d = phi.out_dim();
  if (sigma.size() != d) throw shape_mismatch("node_positional_encoding", sigma.shape(), {d});
  if (eps.rank() != 2 || eps.rows() != x.rows() || eps.cols() != d)
    throw shape_mismatch("node_positional_encoding", eps.shape(), {x.rows(), d});
  return snap_to_pe_grid(add(mul(eps, sigma), phi(x)));
}

// Fresh standard-normal eps drawn from `rng`.
template <class Real>
Tensor<Real> node_positional_encoding(const Tensor<Real>& x, const Tensor<Real>& sigma,
                                      const Mlp<Real>& phi, GumbelRng& rng) {
  return node_positional_encoding(x, sigma, phi,
                                  standard_normal<Real>(x.rows(), phi.out_dim(), rng));
}

// Row k is p[src_k] - p[dst_k].
template <class Real>
Tensor<Real> edge_positional_encoding(
    const Tensor<Real>& p, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  if (p.rank() != 2) throw ShapeError("edge_positional_encoding: expected a matrix");
  std::vector<std::size_t> src, dst;
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto [s, t] = edges[k];
    if (s >= p.rows() || t >= p.rows())
      throw GraphFormatError("edge_positional_encoding: edge " + std::to_string(k) + " (" +
                             std::to_string(s) + "," + std::to_string(t) +
                             ") is dangling for " + std::to_string(p.rows()) + " nodes");
    src.push_back(s);
    dst.push_back(t);
  }
  if (edges.empty()) return Tensor<Real>::zeros({0, p.cols()});
  return sub(gather_rows(p, src), gather_rows(p, dst));
}

enum class TokenType : unsigned char { node, edge };

struct GraphSegment {
  std::size_t begin = 0, end = 0;
};

// One graph's tokens (nodes first, then edges) with their types.
template <class Real>
struct GraphTokenBatch {
  Tensor<Real> tokens;
  std::vector<TokenType> types;
  std::vector<GraphSegment> segments;
  Tensor<Real> node_pe, edge_pe;
};

template <class Real>
struct GraphBridgeParams {
  Tensor<Real> sigma;  // 1 x d
  Mlp<Real> phi;       // f -> d
  Mlp<Real> phi_v;     // d + f -> d
  Mlp<Real> phi_e;     // d + g_e -> d

  static GraphBridgeParams init(std::size_t node_dim, std::size_t edge_dim, std::size_t d,
                                std::mt19937_64& gen, double sigma0 = 1.0) {
    GraphBridgeParams p;
    p.sigma = Tensor<Real>::full({1, d}, static_cast<Real>(sigma0), true);
    p.phi = Mlp<Real>::init(node_dim, d, d, gen);
    p.phi_v = Mlp<Real>::init(d + node_dim, d, d, gen);
    p.phi_e = Mlp<Real>::init(d + edge_dim, d, d, gen);
    return p;
  }

  std::size_t d_model() const { return sigma.size(); }
  std::size_t node_dim() const { return phi.in_dim(); }
  std::size_t edge_dim() const { return phi_e.in_dim() - d_model(); }

  std::vector<NamedTensor<Real>> named(const std::string& prefix = "bridge.") const {
    std::vector<NamedTensor<Real>> out{{prefix + "sigma", sigma}};
    phi.append_named(prefix + "phi.", out);
    phi_v.append_named(prefix + "phi_v.", out);
    phi_e.append_named(prefix + "phi_e.", out);
    return out;
  }
};

namespace detail {

template <class Real>
Tensor<Real> with_features(const Tensor<Real>& pe, const Tensor<Real>& features) {
  return features.cols() == 0 ? pe : concat_cols<Real>({pe, features});
}

}  // namespace detail

// Tokenizes with caller-supplied node noise eps (|V| x d).
template <class Real>
GraphTokenBatch<Real> graph_tokenize(const GraphInstance& g, const GraphBridgeParams<Real>& prm,
                                     const Tensor<Real>& eps) {
  g.validate();
  if (g.node_dim != prm.node_dim() || g.edge_dim != prm.edge_dim())
    throw ShapeError("graph_tokenize: graph has f=" + std::to_string(g.node_dim) +
                     " g_e=" + std::to_string(g.edge_dim) + ", encoder expects f=" +
                     std::to_string(prm.node_dim()) + " g_e=" + std::to_string(prm.edge_dim()));
  if (g.n_nodes == 0) throw ShapeError("graph_tokenize: graph has no nodes");
  GraphTokenBatch<Real> out;
  const auto x = node_features<Real>(g);
  out.node_pe = node_positional_encoding(x, prm.sigma, prm.phi, eps);
  auto nodes = prm.phi_v(detail::with_features(out.node_pe, x));
  out.types.assign(g.n_nodes, TokenType::node);
  if (g.edges.empty()) {
    out.edge_pe = Tensor<Real>::zeros({0, prm.d_model()});
    out.tokens = nodes;
  } else {
    out.edge_pe = edge_positional_encoding(out.node_pe, g.edges);
    auto edges = prm.phi_e(detail::with_features(out.edge_pe, edge_features<Real>(g)));
    out.types.insert(out.types.end(), g.edges.size(), TokenType::edge);
    out.tokens = concat_rows<Real>({nodes, edges});
  }
  out.segments.push_back({0, out.tokens.rows()});
  return out;
}

template <class Real>
GraphTokenBatch<Real> graph_tokenize(const GraphInstance& g, const GraphBridgeParams<Real>& prm,
                                     GumbelRng& rng) {
  return graph_tokenize(g, prm, standard_normal<Real>(g.n_nodes, prm.d_model(), rng));
}

// Graph-level regression or classification: bridge -> stack -> pooled head.
// Node noise is drawn in training and, by default, at evaluation too (the
// random encodings identify nodes); `pe_noise_at_eval = false` zeroes it.
template <class Real>
class GraphModel {
 public:
  GraphModel(const ModelConfig& cfg, std::size_t node_dim, std::size_t edge_dim,
             std::uint64_t seed, bool pe_noise_at_eval = true)
      : pe_noise_at_eval_(pe_noise_at_eval) {
    std::mt19937_64 gen(seed);
    bridge_ = GraphBridgeParams<Real>::init(node_dim, edge_dim, cfg.attention.d_model, gen);
    ModelConfig c = cfg;
    c.head = HeadKind::mean_pool;
    stack_ = TransformerStack<Real>(c, gen);
  }

  GraphTokenBatch<Real> tokenize(const GraphInstance& g, GumbelRng& rng) const {
    if (training() || pe_noise_at_eval_) return graph_tokenize(g, bridge_, rng);
    return graph_tokenize(g, bridge_, Tensor<Real>::zeros({g.n_nodes, bridge_.d_model()}));
  }

  // `rng` feeds the node noise and, in training, the sampler and dropout.
  Tensor<Real> forward(const GraphInstance& g, GumbelRng& rng,
                       std::vector<LayerTrace>* traces = nullptr) const {
    const auto batch = tokenize(g, rng);
    return stack_.head(stack_.forward_layers(batch.tokens, &rng, traces));
  }

  std::vector<NamedTensor<Real>> named_parameters() const {
    auto out = bridge_.named();
    auto rest = stack_.named_parameters();
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
  }

  void set_training(bool on) { stack_.config().attention.training = on; }
  bool training() const { return config().attention.training; }
  const ModelConfig& config() const { return stack_.config(); }
  GraphBridgeParams<Real>& bridge() { return bridge_; }
  const GraphBridgeParams<Real>& bridge() const { return bridge_; }
  TransformerStack<Real>& stack() { return stack_; }
  const TransformerStack<Real>& stack() const { return stack_; }

 private:
  GraphBridgeParams<Real> bridge_;
  TransformerStack<Real> stack_;
  bool pe_noise_at_eval_ = true;
};

}  // namespace samsa
