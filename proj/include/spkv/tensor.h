// Copyright 2026 The spkv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tensor is a shared handle to a graph node. Ops record their inputs and a
// backward closure on the output node whenever any input requires a gradient.
// Backward() turns the graph reachable from a scalar loss into a Tape (reverse
// topological order), runs it once and then releases it: a second backward
// pass through the same graph raises StateError.

#ifndef SPKV_TENSOR_H_
#define SPKV_TENSOR_H_

#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "spkv/errors.h"

namespace spkv {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index NumElements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<Index>());
}

inline std::string ShapeString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Per-thread switch; when off, ops record no history.
inline bool& GradModeFlag() {
  thread_local bool enabled = true;
  return enabled;
}

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradModeFlag()) { GradModeFlag() = false; }
  ~NoGradGuard() { GradModeFlag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename S>
struct Node {
  using Array = Eigen::Array<S, Eigen::Dynamic, 1>;

  Shape shape;
  Array value;
  Array grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool released = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward && !released; }

  Array& EnsureGrad() {
    if (grad.size() != value.size()) grad = Array::Zero(value.size());
    return grad;
  }
};

}  // namespace detail

template <typename S>
class Tensor {
 public:
  using Scalar = S;
  using Array = Eigen::Array<S, Eigen::Dynamic, 1>;
  using NodePtr = std::shared_ptr<detail::Node<S>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  // Zero-filled leaf.
  explicit Tensor(Shape shape, bool requires_grad = false)
      : Tensor(shape, Array::Zero(NumElements(shape)), requires_grad) {}

  Tensor(Shape shape, Array value, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<S>>()) {
    if (value.size() != NumElements(shape))
      throw ShapeError("tensor data length " + std::to_string(value.size()) +
                       " does not match shape " + ShapeString(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor Scalar1(S v, bool requires_grad = false) {
    return Tensor(Shape{}, Array::Constant(1, v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  Index dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  Index size() const { return node_->value.size(); }

  const Array& value() const { return node_->value; }
  // Mutable access is meant for optimizers, initializers and tests.
  Array& value() { return node_->value; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Array& grad() const {
    if (!has_grad()) throw StateError("tensor has no gradient");
    return node_->grad;
  }
  Array& mutable_grad() { return node_->EnsureGrad(); }
  void ZeroGrad() { node_->grad.resize(0); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) {
    if (!node_->is_leaf()) throw StateError("requires_grad can only be set on leaves");
    node_->requires_grad = flag;
  }
  bool is_leaf() const { return node_->is_leaf(); }

  S item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + ShapeString(shape()));
    return node_->value[0];
  }

  // Leaf copy of the current value, without history.
  Tensor Detach() const { return Tensor(shape(), value(), false); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// The recorded computation reachable from a root, in topological order
// (inputs before outputs). Run() can be called exactly once.
template <typename S>
class Tape {
 public:
  using NodeT = detail::Node<S>;

  static Tape Record(const Tensor<S>& root) {
    Tape tape;
    tape.root_ = root.node();
    std::unordered_set<const NodeT*> visited;
    // Iterative post-order DFS; graphs of deep backbones are long chains.
    std::vector<std::pair<NodeT*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (node->released)
        throw StateError(std::string("graph through op '") + node->op +
                         "' was already consumed by a backward pass");
      if (next < node->inputs.size()) {
        NodeT* child = node->inputs[next++].get();
        if (child->backward || child->released) {
          if (visited.insert(child).second) stack.emplace_back(child, 0);
        }
        continue;
      }
      tape.order_.push_back(node);
      stack.pop_back();
    }
    return tape;
  }

  std::size_t size() const { return order_.size(); }
  bool consumed() const { return consumed_; }

  void Run() {
    if (consumed_) throw StateError("tape was already run");
    consumed_ = true;
    root_->EnsureGrad().setOnes();
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      NodeT* node = *it;
      if (node->backward && node->grad.size() == node->value.size()) node->backward(*node);
    }
    for (NodeT* node : order_) {
      node->backward = nullptr;
      node->inputs.clear();
      node->grad.resize(0);
      node->released = true;
    }
  }

 private:
  std::shared_ptr<NodeT> root_;
  std::vector<NodeT*> order_;
  bool consumed_ = false;
};

// Accumulates d(loss)/d(leaf) into every reachable leaf with requires_grad.
template <typename S>
void Backward(const Tensor<S>& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ArgumentError("backward needs a scalar loss, got shape " +
                        (loss.defined() ? ShapeString(loss.shape()) : std::string("<undefined>")));
  if (loss.node()->released)
    throw StateError("graph was already consumed by a backward pass");
  if (!loss.requires_grad()) throw ArgumentError("loss does not depend on any trainable tensor");
  if (loss.is_leaf()) {
    loss.node()->EnsureGrad() += S(1);
    return;
  }
  Tape<S>::Record(loss).Run();
}

namespace detail {

// Builds an op output. The backward closure only runs when a gradient
// reaches the output; it must accumulate into inputs that require grad.
template <typename S>
Tensor<S> MakeResult(const char* op, Shape shape, typename Tensor<S>::Array value,
                     std::vector<typename Tensor<S>::NodePtr> inputs,
                     std::function<void(Node<S>&)> backward) {
  if (!value.allFinite()) throw NumericError(std::string("non-finite values produced by ") + op);
  auto node = std::make_shared<Node<S>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (GradModeFlag())
    for (const auto& in : inputs) node->requires_grad = node->requires_grad || in->requires_grad;
  if (node->requires_grad) {
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor<S>(std::move(node));
}

}  // namespace detail

}  // namespace spkv

#endif  // SPKV_TENSOR_H_
