#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace samsa {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline ShapeError shape_mismatch(std::string_view op, const Shape& a,
                                 const Shape& b) {
  return ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) +
                    " vs " + shape_str(b));
}

// Operators whose backward deliberately differs from the derivative of their
// forward. Each one must have a gradcheck entry in the test suite.
inline constexpr std::array<std::string_view, 4> kCustomGradientOps = {
    "st_gumbel_softmax", "st_gumbel_sigmoid", "sample_without_replacement",
    "multi_head_sample"};

inline bool is_registered_custom_gradient(std::string_view name) {
  return std::find(kCustomGradientOps.begin(), kCustomGradientOps.end(),
                   name) != kCustomGradientOps.end();
}

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class Real>
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  // Zero-initialised gradient buffer of this node, or nullptr when the node
  // does not participate in differentiation.
  Real* grad_target() {
    if (!requires_grad) return nullptr;
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
    return grad.data();
  }
};

template <class Real>
class Tensor {
 public:
  using value_type = Real;
  using NodePtr = std::shared_ptr<Node<Real>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<Real> v(numel(shape), Real(0));
    return from(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor full(Shape shape, Real fill, bool requires_grad = false) {
    std::vector<Real> v(numel(shape), fill);
    return from(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<Real> values,
                     bool requires_grad = false) {
    if (numel(shape) != values.size()) {
      throw ShapeError("Tensor: " + std::to_string(values.size()) +
                       " values do not fill shape " + shape_str(shape));
    }
    auto node = std::make_shared<Node<Real>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<Real> values, bool requires_grad = false) {
    return from({rows, cols}, std::move(values), requires_grad);
  }

  static Tensor scalar(Real v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const NodePtr& node() const { return node_; }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  // Row/column view of a rank-2 tensor; rank-1 tensors read as a single row.
  std::size_t rows() const { return rank() == 1 ? 1 : dim(0); }
  std::size_t cols() const { return rank() == 1 ? dim(0) : dim(1); }

  std::span<const Real> data() const { return node_->value; }
  std::span<Real> mutable_data() { return node_->value; }
  const std::vector<Real>& values() const { return node_->value; }

  Real item() const {
    if (size() != 1) {
      throw ShapeError("item: tensor of shape " + shape_str(shape()) +
                       " is not a scalar");
    }
    return node_->value[0];
  }

  Real operator()(std::size_t r, std::size_t c) const {
    return node_->value[r * cols() + c];
  }
  Real& operator()(std::size_t r, std::size_t c) {
    return node_->value[r * cols() + c];
  }
  Real operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  std::string_view op() const { return node_->op; }

  // Leaf copy of the current value, cut from the graph.
  Tensor detach() const { return from(shape(), node_->value, false); }

  // Same storage reinterpreted under a new shape; gradient flows through.
  Tensor reshape(Shape new_shape) const;

 private:
  NodePtr node_;
};

// Builds an operator node. The output records its inputs and backward rule
// only when gradient mode is on and some input requires a gradient.
template <class Real>
Tensor<Real> make_op(std::string_view name, Shape shape,
                     std::vector<Real> value,
                     std::vector<Tensor<Real>> inputs,
                     std::function<void(Node<Real>&)> backward) {
  auto node = std::make_shared<Node<Real>>();
  if (numel(shape) != value.size()) {
    throw ShapeError(std::string(name) + ": produced " +
                     std::to_string(value.size()) + " values for shape " +
                     shape_str(shape));
  }
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = name;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (any && grad_enabled()) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor<Real>(std::move(node));
}

template <class Real>
Tensor<Real> Tensor<Real>::reshape(Shape new_shape) const {
  if (numel(new_shape) != size()) {
    throw shape_mismatch("reshape", shape(), new_shape);
  }
  return make_op<Real>("reshape", std::move(new_shape), node_->value, {*this},
                       [](Node<Real>& self) {
                         if (Real* g = self.inputs[0]->grad_target()) {
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             g[i] += self.grad[i];
                         }
                       });
}

// Deterministic post-order over the recorded graph. Inputs are visited in
// declaration order so the gradient summation order is fixed.
template <class Real>
std::vector<Node<Real>*> topological_order(Node<Real>* root) {
  std::vector<Node<Real>*> order;
  std::unordered_set<Node<Real>*> seen;
  std::vector<std::pair<Node<Real>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<Real>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <class Real>
void backward(const Tensor<Real>& root) {
  if (root.size() != 1) {
    throw ShapeError("backward: root must be a scalar, got shape " +
                     shape_str(root.shape()));
  }
  if (!root.requires_grad()) {
    throw std::invalid_argument(
        "backward: root is not connected to any tensor requiring grad");
  }
  Node<Real>* top = root.node().get();
  auto order = topological_order(top);
  top->grad_target()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Real>* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
}

}  // namespace samsa
