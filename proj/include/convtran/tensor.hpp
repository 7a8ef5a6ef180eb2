// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "convtran/error.hpp"

namespace convtran {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Per-thread switch for graph recording. Evaluation and finite-difference
/// probing run with recording off.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set_enabled(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node;

template <typename T>
using BackwardFn = std::function<void(const Node<T>& out)>;

/// One value in the autodiff graph. Storage is shared so that reshape is a
/// metadata-only view; grad is private to the node.
template <typename T>
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<T>> storage;
  std::vector<T> grad;  // empty == no gradient recorded
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn<T> backward;
  std::string op = "leaf";

  bool is_leaf() const { return !backward; }
  std::size_t numel() const { return storage->size(); }
};

/// N-dimensional row-major array with reverse-mode autodiff.
///
/// Tensor is a cheap handle: copies alias the same node. Use clone() or
/// detach() for an independent value.
template <typename T = float>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    check_shape(shape);
    node_->storage = std::make_shared<std::vector<T>>(shape_numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    check_shape(shape);
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    node_->storage = std::make_shared<std::vector<T>>(std::move(data));
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  /// Build an op output. Graph edges are recorded only when grad mode is on
  /// and at least one input requires grad.
  static Tensor from_op(Shape shape, std::vector<T> data, std::string_view op,
                        std::vector<Tensor> inputs, BackwardFn<T> backward) {
    Tensor out(std::move(shape), std::move(data));
    out.node_->op = std::string(op);
    if (!GradMode::enabled()) return out;
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (!needs) return out;
    out.node_->requires_grad = true;
    out.node_->backward = std::move(backward);
    for (auto& in : inputs) out.node_->parents.push_back(std::move(in.node_));
    return out;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->numel(); }
  const std::string& op_name() const { return node_->op; }

  std::span<T> data() { return {node_->storage->data(), node_->storage->size()}; }
  std::span<const T> data() const { return {node_->storage->data(), node_->storage->size()}; }
  std::vector<T> to_vector() const { return *node_->storage; }

  T& operator[](std::size_t i) { return (*node_->storage)[i]; }
  const T& operator[](std::size_t i) const { return (*node_->storage)[i]; }

  T& at(std::initializer_list<std::size_t> idx) { return (*node_->storage)[offset(idx)]; }
  const T& at(std::initializer_list<std::size_t> idx) const {
    return (*node_->storage)[offset(idx)];
  }

  T item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return (*node_->storage)[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw UsageError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = on;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return {node_->grad.data(), node_->grad.size()}; }

  /// Gradient buffer, allocated as zeros on first access.
  std::span<T> mutable_grad() {
    if (node_->grad.empty()) node_->grad.assign(numel(), T(0));
    return {node_->grad.data(), node_->grad.size()};
  }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  void clear_grad() { node_->grad.clear(); }

  /// Metadata-only reshape; the returned tensor shares storage.
  Tensor reshape(Shape new_shape) const;

  /// Independent copy of the values, off the graph.
  Tensor detach() const {
    Tensor out(shape(), to_vector());
    return out;
  }

  /// Independent leaf copy keeping requires_grad.
  Tensor clone() const {
    Tensor out(shape(), to_vector(), requires_grad() && node_->is_leaf());
    return out;
  }

  void backward() const;

  Node<T>* node() const { return node_.get(); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (auto d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    const auto& s = node_->shape;
    if (idx.size() != s.size()) throw DimensionError("index rank does not match " + shape_str(s));
    std::size_t off = 0;
    std::size_t d = 0;
    for (auto i : idx) {
      if (i >= s[d]) throw DimensionError("index out of range for " + shape_str(s));
      off = off * s[d] + i;
      ++d;
    }
    return off;
  }

  std::shared_ptr<Node<T>> node_;

  template <typename U>
  friend class Tape;
};

/// Grad buffer of an op input if it participates in backward, else empty.
template <typename T>
std::span<T> grad_target(const Tensor<T>& t) {
  if (!t.requires_grad()) return {};
  return const_cast<Tensor<T>&>(t).mutable_grad();
}

/// Replays the recorded graph in reverse topological order.
template <typename T>
class Tape {
 public:
  /// Nodes reachable from root through requires_grad edges, parents before
  /// children. Each node appears once.
  static std::vector<Node<T>*> topological_order(Node<T>* root) {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    if (!root->requires_grad) return order;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node<T>* parent = node->parents[next++].get();
        if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    return order;
  }

  static void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
      throw UsageError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
      throw UsageError("backward() on a tensor that is not on the tape");
    }
    auto order = topological_order(loss.node());
    // Interior nodes get fresh buffers on every pass; leaves accumulate.
    for (auto* n : order) {
      if (!n->is_leaf()) n->grad.assign(n->numel(), T(0));
    }
    Node<T>* root = loss.node();
    if (root->grad.empty()) root->grad.assign(1, T(0));
    root->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if (!(*it)->is_leaf()) (*it)->backward(**it);
    }
    for (auto* n : order) {
      if (!n->is_leaf()) {
        n->grad.clear();
        n->grad.shrink_to_fit();
      }
    }
  }
};

template <typename T>
void Tensor<T>::backward() const {
  Tape<T>::backward(*this);
}

template <typename T>
Tensor<T> Tensor<T>::reshape(Shape new_shape) const {
  check_shape(new_shape);
  if (shape_numel(new_shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_str(shape()) + " to " + shape_str(new_shape));
  }
  Tensor out;
  out.node_ = std::make_shared<Node<T>>();
  out.node_->shape = std::move(new_shape);
  out.node_->storage = node_->storage;
  out.node_->op = "reshape";
  if (GradMode::enabled() && requires_grad()) {
    Tensor in = *this;
    out.node_->requires_grad = true;
    out.node_->parents.push_back(node_);
    out.node_->backward = [in](const Node<T>& self) {
      auto g = grad_target(in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  }
  return out;
}

template <typename T>
void zero_grad(std::span<Tensor<T>> params) {
  for (auto& p : params) p.zero_grad();
}

/// Element-wise conversion between precisions (values only, off-graph).
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t, bool requires_grad = false) {
  std::vector<To> v(t.numel());
  auto src = t.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<To>(src[i]);
  return Tensor<To>(t.shape(), std::move(v), requires_grad);
}

}  // namespace convtran
