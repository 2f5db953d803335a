#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "samsa/graph_bridge.hpp"
#include "samsa/tensor.hpp"

// Desk-scale synthetic tasks. Every example is generated from its own seed
// derived from (task seed, split, index), so splits never share a stream.
namespace samsa::tasks {

enum class TaskKind { seq_select, seq_listops_lite, graph_degree, cloud_centroid };

inline const char* task_name(TaskKind k) {
  switch (k) {
    case TaskKind::seq_select: return "seq-select";
    case TaskKind::seq_listops_lite: return "seq-listops-lite";
    case TaskKind::graph_degree: return "graph-degree";
    case TaskKind::cloud_centroid: return "cloud-centroid";
  }
  return "?";
}

inline TaskKind parse_task(const std::string& s) {
  for (auto k : {TaskKind::seq_select, TaskKind::seq_listops_lite, TaskKind::graph_degree,
                 TaskKind::cloud_centroid})
    if (s == task_name(k)) return k;
  throw std::invalid_argument("unknown task '" + s +
                              "' (expected seq-select, seq-listops-lite, graph-degree or "
                              "cloud-centroid)");
}

struct TaskSpec {
  TaskKind kind = TaskKind::seq_select;
  std::size_t n = 256;     // tokens, max expression length, max nodes, or points
  std::size_t vocab = 16;  // seq-select classes
  std::size_t n_train = 16384;
  std::size_t n_val = 1000;
  std::size_t n_test = 1000;
  std::uint64_t seed = 0;
};

enum class Split : std::uint64_t { train = 1, val = 2, test = 3 };

struct Example {
  std::vector<std::int32_t> ids;  // token ids (sequence tasks)
  std::vector<double> values;     // score channel or point coordinates
  std::optional<GraphInstance> graph;
  std::size_t label = 0;
  double target = 0.0;
};

struct Dataset {
  TaskSpec spec;
  std::vector<Example> train, val, test;

  const std::vector<Example>& split(Split s) const {
    return s == Split::train ? train : s == Split::val ? val : test;
  }
};

// Feature and output widths the model needs for a task.
struct TaskShape {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  bool regression = false;
  bool graph = false;
  bool ordered = true;  // sequence positions carry meaning
  std::size_t node_dim = 0, edge_dim = 0;
};

// seq-listops-lite vocabulary.
enum ListOpsToken : std::int32_t { kMin = 10, kMax = 11, kMed = 12, kClose = 13, kPad = 14 };
inline constexpr std::size_t kListOpsVocab = 15;
inline constexpr std::size_t kListOpsDepth = 3;

inline TaskShape task_shape(const TaskSpec& spec) {
  switch (spec.kind) {
    case TaskKind::seq_select: return {spec.vocab + 1, spec.vocab, false, false, false, 0, 0};
    case TaskKind::seq_listops_lite: return {kListOpsVocab, 10, false, false, true, 0, 0};
    case TaskKind::graph_degree: return {0, 1, true, true, false, 1, 1};
    case TaskKind::cloud_centroid: return {3, 8, false, false, false, 0, 0};
  }
  return {};
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t example_seed(std::uint64_t seed, Split split, std::size_t index) {
  return splitmix64(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(split)) ^ index);
}

// --- seq-select ------------------------------------------------------------
// Every token carries a class id and a score. Distractor scores lie in
// [0, 0.6), one planted token scores in [0.8, 1); the label is the class of
// the highest-scoring token.
inline Example make_seq_select(std::size_t n, std::size_t vocab, std::mt19937_64& gen,
                               std::optional<std::size_t> planted = std::nullopt) {
  if (n == 0 || vocab == 0) throw std::invalid_argument("seq-select: n and vocab must be >= 1");
  std::uniform_int_distribution<std::int32_t> cls(0, static_cast<std::int32_t>(vocab) - 1);
  std::uniform_real_distribution<double> low(0.0, 0.6), high(0.8, 1.0);
  Example ex;
  ex.ids.resize(n);
  ex.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ex.ids[i] = cls(gen);
    ex.values[i] = low(gen);
  }
  const std::size_t at = planted ? *planted : std::uniform_int_distribution<std::size_t>(0, n - 1)(gen);
  if (at >= n) throw std::invalid_argument("seq-select: planted position out of range");
  ex.values[at] = high(gen);
  const auto best = std::max_element(ex.values.begin(), ex.values.end()) - ex.values.begin();
  ex.label = static_cast<std::size_t>(ex.ids[static_cast<std::size_t>(best)]);
  return ex;
}

// Random contiguous window of `len` tokens that still contains the maximum,
// so the label is unchanged.
inline Example crop_seq_select(const Example& ex, std::size_t len, std::mt19937_64& gen) {
  const std::size_t n = ex.values.size();
  if (len == 0 || len >= n) return ex;
  const auto best = static_cast<std::size_t>(
      std::max_element(ex.values.begin(), ex.values.end()) - ex.values.begin());
  const std::size_t lo = best + 1 >= len ? best + 1 - len : 0;
  const std::size_t hi = std::min(best, n - len);
  const std::size_t start = std::uniform_int_distribution<std::size_t>(lo, hi)(gen);
  Example out;
  out.ids.assign(ex.ids.begin() + start, ex.ids.begin() + start + len);
  out.values.assign(ex.values.begin() + start, ex.values.begin() + start + len);
  out.label = ex.label;
  return out;
}

// --- seq-listops-lite ------------------------------------------------------
// Prefix expressions such as  MAX 3 MIN 4 7 ] 1 ]  over digits 0-9 with
// MIN, MAX and MED (lower median); nesting depth <= 3.

inline std::int32_t listops_eval(const std::vector<std::int32_t>& tokens) {
  std::vector<std::vector<std::int32_t>> stack;
  std::vector<std::int32_t> ops;
  std::optional<std::int32_t> result;
  for (auto t : tokens) {
    if (t == kPad) break;
    if (t >= 0 && t <= 9) {
      if (stack.empty()) {
        if (result) throw std::invalid_argument("listops: more than one top-level value");
        result = t;
      } else {
        stack.back().push_back(t);
      }
    } else if (t == kMin || t == kMax || t == kMed) {
      ops.push_back(t);
      stack.emplace_back();
    } else if (t == kClose) {
      if (stack.empty() || stack.back().empty()) throw std::invalid_argument("listops: bad ']'");
      auto args = std::move(stack.back());
      stack.pop_back();
      const auto op = ops.back();
      ops.pop_back();
      std::sort(args.begin(), args.end());
      const std::int32_t v = op == kMin ? args.front() : op == kMax ? args.back() : args[(args.size() - 1) / 2];
      if (stack.empty()) {
        if (result) throw std::invalid_argument("listops: more than one top-level value");
        result = v;
      } else {
        stack.back().push_back(v);
      }
    } else {
      throw std::invalid_argument("listops: unknown token " + std::to_string(t));
    }
  }
  if (!stack.empty() || !result) throw std::invalid_argument("listops: unterminated expression");
  return *result;
}

namespace detail {

inline void listops_expr(std::size_t depth, std::mt19937_64& gen, std::vector<std::int32_t>& out) {
  std::uniform_int_distribution<std::int32_t> digit(0, 9), op(kMin, kMed);
  std::uniform_int_distribution<int> arity(2, 4);
  std::bernoulli_distribution nest(0.35);
  out.push_back(op(gen));
  const int a = arity(gen);
  for (int i = 0; i < a; ++i) {
    if (depth > 1 && nest(gen))
      listops_expr(depth - 1, gen, out);
    else
      out.push_back(digit(gen));
  }
  out.push_back(kClose);
}

}  // namespace detail

// Padded to length n with kPad.
inline Example make_listops(std::size_t n, std::mt19937_64& gen) {
  if (n < 4) throw std::invalid_argument("seq-listops-lite: n must be >= 4");
  std::vector<std::int32_t> tokens;
  do {
    tokens.clear();
    detail::listops_expr(kListOpsDepth, gen, tokens);
  } while (tokens.size() > n);
  Example ex;
  ex.label = static_cast<std::size_t>(listops_eval(tokens));
  tokens.resize(n, kPad);
  ex.ids = std::move(tokens);
  return ex;
}

// --- graph-degree ----------------------------------------------------------
// Random simple undirected graphs (expanded to both directions) on
// [n/2, n] nodes; the target is the mean node degree |E_directed| / |V|.
inline GraphInstance make_degree_graph(std::size_t n_max, std::mt19937_64& gen) {
  if (n_max < 2) throw std::invalid_argument("graph-degree: n must be >= 2");
  const std::size_t n = std::uniform_int_distribution<std::size_t>(std::max<std::size_t>(2, n_max / 2), n_max)(gen);
  const double p = std::uniform_real_distribution<double>(0.1, 0.6)(gen);
  std::bernoulli_distribution edge(p);
  GraphInstance g;
  g.n_nodes = n;
  g.node_dim = 1;
  g.edge_dim = 1;
  g.x.assign(n, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (edge(gen)) {
        g.edges.emplace_back(i, j);
        g.e.push_back(1.0);
      }
  g = expand_undirected(g);
  g.target = static_cast<double>(g.edges.size()) / static_cast<double>(n);
  return g;
}

inline GraphInstance cycle_graph(std::size_t n) {
  GraphInstance g;
  g.n_nodes = n;
  g.node_dim = 1;
  g.edge_dim = 1;
  g.x.assign(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    g.edges.emplace_back(i, (i + 1) % n);
    g.e.push_back(1.0);
  }
  g = expand_undirected(g);
  g.target = static_cast<double>(g.edges.size()) / static_cast<double>(n);
  return g;
}

// --- cloud-centroid --------------------------------------------------------
// Background points uniform in [-1, 1]^3; a quarter of the points form a
// tight cluster around a centre inside one octant. The label is that octant
// (bit 0: x > 0, bit 1: y > 0, bit 2: z > 0).
inline std::size_t octant_of(double x, double y, double z) {
  return (x > 0 ? 1u : 0u) | (y > 0 ? 2u : 0u) | (z > 0 ? 4u : 0u);
}

inline Example make_cloud(std::size_t n, std::mt19937_64& gen) {
  if (n < 4) throw std::invalid_argument("cloud-centroid: n must be >= 4");
  std::uniform_real_distribution<double> box(-1.0, 1.0), mag(0.3, 0.7);
  std::normal_distribution<double> jitter(0.0, 0.08);
  const std::size_t octant = std::uniform_int_distribution<std::size_t>(0, 7)(gen);
  double centre[3];
  for (int a = 0; a < 3; ++a) centre[a] = ((octant >> a) & 1u ? 1.0 : -1.0) * mag(gen);
  const std::size_t cluster = n / 4;
  Example ex;
  ex.values.resize(3 * n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), gen);
  for (std::size_t r = 0; r < n; ++r) {
    double* pt = ex.values.data() + 3 * order[r];
    for (int a = 0; a < 3; ++a) pt[a] = r < cluster ? centre[a] + jitter(gen) : box(gen);
  }
  ex.label = octant;
  return ex;
}

inline Example make_example(const TaskSpec& spec, std::mt19937_64& gen) {
  switch (spec.kind) {
    case TaskKind::seq_select: return make_seq_select(spec.n, spec.vocab, gen);
    case TaskKind::seq_listops_lite: return make_listops(spec.n, gen);
    case TaskKind::graph_degree: {
      Example ex;
      ex.graph = make_degree_graph(spec.n, gen);
      ex.target = *ex.graph->target;
      return ex;
    }
    case TaskKind::cloud_centroid: return make_cloud(spec.n, gen);
  }
  throw std::invalid_argument("unknown task kind");
}

inline std::vector<Example> generate_split(const TaskSpec& spec, Split split, std::size_t count) {
  std::vector<Example> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::mt19937_64 gen(example_seed(spec.seed, split, i));
    out.push_back(make_example(spec, gen));
  }
  return out;
}

inline Dataset generate_task(const TaskSpec& spec) {
  Dataset ds;
  ds.spec = spec;
  ds.train = generate_split(spec, Split::train, spec.n_train);
  ds.val = generate_split(spec, Split::val, spec.n_val);
  ds.test = generate_split(spec, Split::test, spec.n_test);
  return ds;
}

// Token features of a sequence or cloud example (graphs are tokenized by
// the graph bridge instead).
template <class Real>
Tensor<Real> features(const TaskSpec& spec, const Example& ex) {
  const auto shape = task_shape(spec);
  switch (spec.kind) {
    case TaskKind::seq_select:
    case TaskKind::seq_listops_lite: {
      const std::size_t n = ex.ids.size(), w = shape.in_dim;
      std::vector<Real> v(n * w, Real(0));
      for (std::size_t i = 0; i < n; ++i) {
        v[i * w + static_cast<std::size_t>(ex.ids[i])] = Real(1);
        if (spec.kind == TaskKind::seq_select) v[i * w + w - 1] = static_cast<Real>(ex.values[i]);
      }
      return Tensor<Real>::matrix(n, w, std::move(v));
    }
    case TaskKind::cloud_centroid: {
      std::vector<Real> v(ex.values.begin(), ex.values.end());
      return Tensor<Real>::matrix(ex.values.size() / 3, 3, std::move(v));
    }
    case TaskKind::graph_degree: break;
  }
  throw std::invalid_argument("features: graph examples have no flat features");
}

// MAE on `eval` of predicting the mean training target for every example.
inline double constant_baseline_mae(const std::vector<Example>& train,
                                    const std::vector<Example>& eval) {
  if (train.empty() || eval.empty()) throw std::invalid_argument("baseline: empty split");
  double mean = 0;
  for (const auto& e : train) mean += e.target;
  mean /= static_cast<double>(train.size());
  double mae = 0;
  for (const auto& e : eval) mae += std::abs(e.target - mean);
  return mae / static_cast<double>(eval.size());
}

// --- caching ---------------------------------------------------------------

inline nlohmann::json spec_to_json(const TaskSpec& s) {
  return {{"kind", task_name(s.kind)}, {"n", s.n},          {"vocab", s.vocab},
          {"n_train", s.n_train},      {"n_val", s.n_val},  {"n_test", s.n_test},
          {"seed", s.seed}};
}

// FNV-1a over the canonical JSON of every field except the seed.
inline std::uint64_t spec_hash(const TaskSpec& s) {
  auto j = spec_to_json(s);
  j.erase("seed");
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::filesystem::path cache_path(const std::filesystem::path& dir, const TaskSpec& s) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(spec_hash(s)));
  return dir / (std::string(task_name(s.kind)) + "-" + buf + "-" + std::to_string(s.seed) + ".json");
}

inline nlohmann::json example_to_json(const Example& ex) {
  nlohmann::json j{{"label", ex.label}, {"target", ex.target}};
  if (!ex.ids.empty()) j["ids"] = ex.ids;
  if (!ex.values.empty()) j["values"] = ex.values;
  if (ex.graph) {
    const auto& g = *ex.graph;
    j["graph"] = {{"n_nodes", g.n_nodes}, {"node_dim", g.node_dim}, {"edge_dim", g.edge_dim},
                  {"x", g.x},             {"edges", g.edges},       {"e", g.e}};
    if (g.target) j["graph"]["target"] = *g.target;
  }
  return j;
}

inline Example example_from_json(const nlohmann::json& j) {
  Example ex;
  ex.label = j.at("label");
  ex.target = j.at("target");
  if (j.contains("ids")) ex.ids = j["ids"].get<std::vector<std::int32_t>>();
  if (j.contains("values")) ex.values = j["values"].get<std::vector<double>>();
  if (j.contains("graph")) {
    const auto& gj = j["graph"];
    GraphInstance g;
    g.n_nodes = gj.at("n_nodes");
    g.node_dim = gj.at("node_dim");
    g.edge_dim = gj.at("edge_dim");
    g.x = gj.at("x").get<std::vector<double>>();
    g.edges = gj.at("edges").get<std::vector<std::pair<std::size_t, std::size_t>>>();
    g.e = gj.at("e").get<std::vector<double>>();
    if (gj.contains("target")) g.target = gj["target"].get<double>();
    g.validate();
    ex.graph = std::move(g);
  }
  return ex;
}

// Loads the dataset from `dir` when a cache entry for (spec, seed) exists,
// otherwise generates and stores it. An empty `dir` disables caching.
inline Dataset load_or_generate(const TaskSpec& spec, const std::filesystem::path& dir) {
  if (dir.empty()) return generate_task(spec);
  const auto path = cache_path(dir, spec);
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    const auto j = nlohmann::json::parse(in);
    if (j.at("spec") == spec_to_json(spec)) {
      Dataset ds;
      ds.spec = spec;
      for (const auto& e : j.at("train")) ds.train.push_back(example_from_json(e));
      for (const auto& e : j.at("val")) ds.val.push_back(example_from_json(e));
      for (const auto& e : j.at("test")) ds.test.push_back(example_from_json(e));
      return ds;
    }
  }
  auto ds = generate_task(spec);
  std::filesystem::create_directories(dir);
  nlohmann::json j{{"spec", spec_to_json(spec)}};
  for (auto [name, part] : {std::pair{"train", &ds.train}, {"val", &ds.val}, {"test", &ds.test}}) {
    j[name] = nlohmann::json::array();
    for (const auto& e : *part) j[name].push_back(example_to_json(e));
  }
  std::ofstream(path) << j.dump();
  return ds;
}

}  // namespace samsa::tasks
