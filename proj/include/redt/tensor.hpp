#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "redt/errors.hpp"

namespace redt {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

template <typename Scalar>
struct Node {
  Shape shape;
  Vec<Scalar> value;
  Vec<Scalar> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool recorded = false;  // produced by a recorded op (non-leaf)
  bool released = false;  // tape already consumed by backward()
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Vec<Scalar>&)> backward_fn;

  Vec<Scalar>& grad_buffer() {
    if (grad.size() != value.size()) grad = Vec<Scalar>::Zero(value.size());
    return grad;
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording for its lifetime (evaluation, optimizer updates).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

/// Dense row-major tensor with an optional gradient slot.
///
/// Copies are shallow: two Tensor handles may refer to the same node. Values
/// produced by an op are never modified afterwards; only leaves (parameters,
/// buffers) are updated in place through mutable_data().
template <typename Scalar>
class Tensor {
 public:
  using Node = detail::Node<Scalar>;

  Tensor() = default;

  Tensor(Shape shape, Vec<Scalar> values, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    for (Index d : shape)
      if (d <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
    if (numel(shape) != values.size())
      throw ShapeError("shape " + to_string(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const Index n = numel(shape);
    return Tensor(std::move(shape), Vec<Scalar>::Zero(n), requires_grad);
  }

  static Tensor full(Shape shape, Scalar v, bool requires_grad = false) {
    const Index n = numel(shape);
    return Tensor(std::move(shape), Vec<Scalar>::Constant(n, v), requires_grad);
  }

  static Tensor from(Shape shape, std::initializer_list<Scalar> values, bool requires_grad = false) {
    Vec<Scalar> v(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar x : values) v[i++] = x;
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor scalar(Scalar v, bool requires_grad = false) {
    return full({1}, v, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  Index rank() const { return static_cast<Index>(node().shape.size()); }
  Index dim(Index i) const {
    const Index r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) throw ShapeError("dim index out of range for " + to_string(shape()));
    return node().shape[static_cast<std::size_t>(i)];
  }
  Index size() const { return node().value.size(); }

  const Vec<Scalar>& data() const { return node().value; }
  // In-place access for leaves only: parameter updates, buffer updates, loading.
  Vec<Scalar>& mutable_data() {
    if (node().recorded) throw UsageError("cannot mutate the output of a recorded op");
    return node_->value;
  }

  Scalar item() const {
    if (size() != 1) throw ShapeError("item() requires a single-element tensor, got " + to_string(shape()));
    return node().value[0];
  }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool on) {
    if (node().recorded) throw UsageError("requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
  }
  bool is_leaf() const { return !node().recorded; }

  bool has_grad() const { return node().grad.size() == node().value.size(); }
  const Vec<Scalar>& grad() const {
    if (!has_grad()) throw UsageError("tensor has no gradient");
    return node().grad;
  }
  Vec<Scalar>& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.resize(0); }

  /// Shares no graph history with this tensor; values are copied.
  Tensor detach() const { return Tensor(shape(), data(), false); }

  /// Reverse-mode sweep from a scalar. Gradients accumulate (add) into leaves
  /// that require grad; the recorded graph is released afterwards.
  void backward() const;

  Tensor reshaped(Shape new_shape) const;

  /// Builds the output of an op. Records the backward closure only when
  /// recording is enabled and at least one input requires grad.
  static Tensor make_result(Shape shape, Vec<Scalar> values, std::vector<Tensor> inputs,
                            std::function<void(const Vec<Scalar>&)> backward_fn) {
    Tensor out(std::move(shape), std::move(values), false);
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->recorded = true;
    for (auto& in : inputs)
      if (in.defined() && in.requires_grad()) out.node_->parents.push_back(in.node_);
    out.node_->backward_fn = std::move(backward_fn);
    return out;
  }

  // Adds `g` into this tensor's gradient if it participates in the graph.
  template <typename Expr>
  void accumulate_grad(const Expr& g) const {
    if (node_ && node_->requires_grad) node_->grad_buffer() += g;
  }

  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  const Node& node() const {
    if (!node_) throw UsageError("use of an undefined tensor");
    return *node_;
  }

  std::shared_ptr<Node> node_;
};

template <typename Scalar>
void Tensor<Scalar>::backward() const {
  const Node& root = node();
  if (root.released) throw UsageError("backward through a graph that was already released");
  if (!root.requires_grad) throw UsageError("backward through an unrecorded value");
  if (root.value.size() != 1) throw ShapeError("backward requires a scalar loss, got " + to_string(root.shape));

  // Iterative post-order DFS gives a topological order (parents before children).
  // Shared handles keep every node alive while parent links are being cut.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
  stack.emplace_back(node_, 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      const std::shared_ptr<Node>& p = n->parents[next++];
      if (p->released) throw UsageError("backward through a graph that was already released");
      if (seen.insert(p.get()).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer() += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = it->get();
    if (!n->recorded) continue;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(n->grad);
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad.resize(0);
    n->released = true;
  }
}

}  // namespace redt
