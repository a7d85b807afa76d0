/* Copyright 2026 The advseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef ADVSEG_AUTOGRAD_HPP_
#define ADVSEG_AUTOGRAD_HPP_

// A minimal reverse-mode tape. Every op appends a node holding its value and a
// closure that scatters the node's gradient into its inputs. Nodes live in a
// deque so references stay valid while the tape grows.

#include <deque>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>

#include "advseg/tensor.hpp"

namespace advseg {

/// Trainable tensor plus its gradient accumulator. The accumulator is mutable so
/// that const models can be run through a tape; only training passes touch it.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  mutable Tensor<Scalar> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<Scalar> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() const { grad.set_zero(); }
};

template <typename Scalar>
class Graph;

/// Handle to a node on a Graph tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Graph<Scalar>* graph, int id) : graph_(graph), id_(id) {}

  bool valid() const { return graph_ != nullptr && id_ >= 0; }
  int id() const { return id_; }
  Graph<Scalar>* graph() const { return graph_; }
  const Tensor<Scalar>& value() const { return graph_->value(*this); }
  const Shape& shape() const { return value().shape(); }

 private:
  Graph<Scalar>* graph_ = nullptr;
  int id_ = -1;
};

template <typename Scalar>
class Graph {
 public:
  using BackwardFn = std::function<void(const Tensor<Scalar>& grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Var<Scalar> constant(Tensor<Scalar> value) { return push(std::move(value), false, nullptr); }

  /// Leaf whose gradient can be read back with grad().
  Var<Scalar> variable(Tensor<Scalar> value) { return push(std::move(value), true, nullptr); }

  /// Leaf viewing a parameter. When trainable, backward() accumulates into p.grad.
  Var<Scalar> parameter(const Parameter<Scalar>& p, bool trainable) {
    Node& node = nodes_.emplace_back();
    node.view = &p.value;
    node.needs_grad = trainable;
    if (trainable) {
      Tensor<Scalar>* sink = &p.grad;
      node.backward = [sink](const Tensor<Scalar>& g) { sink->array() += g.array(); };
    }
    return {this, int(nodes_.size()) - 1};
  }

  /// Records an op result. The node needs a gradient iff any input does.
  Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || (v.valid() && needs_grad(v));
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor<Scalar>& value(const Var<Scalar>& v) const {
    const Node& node = nodes_.at(std::size_t(v.id()));
    return node.view ? *node.view : node.value;
  }

  bool needs_grad(const Var<Scalar>& v) const { return nodes_.at(std::size_t(v.id())).needs_grad; }

  /// Gradient buffer for v, zero-allocated on first use.
  Tensor<Scalar>& grad_buffer(const Var<Scalar>& v) {
    Node& node = nodes_.at(std::size_t(v.id()));
    if (node.grad.empty() && value(v).size() > 0) node.grad = Tensor<Scalar>(value(v).shape());
    return node.grad;
  }

  /// Gradient of the last backward() target with respect to v (zeros if unreached).
  Tensor<Scalar> grad(const Var<Scalar>& v) const {
    const Node& node = nodes_.at(std::size_t(v.id()));
    if (node.grad.empty()) return Tensor<Scalar>(value(v).shape());
    return node.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 for every element of `loss` and runs the tape backwards.
  void backward(const Var<Scalar>& loss) {
    if (!needs_grad(loss)) return;
    grad_buffer(loss).array().setOnes();
    for (int i = loss.id(); i >= 0; --i) {
      Node& node = nodes_[std::size_t(i)];
      if (!node.needs_grad || node.grad.empty() || !node.backward) continue;
      node.backward(node.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Scalar> value;
    const Tensor<Scalar>* view = nullptr;
    Tensor<Scalar> grad;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Var<Scalar> push(Tensor<Scalar> value, bool needs, BackwardFn fn) {
    Node& node = nodes_.emplace_back();
    node.value = std::move(value);
    node.needs_grad = needs;
    node.backward = std::move(fn);
    return {this, int(nodes_.size()) - 1};
  }

  std::deque<Node> nodes_;
};

/// How a network forward pass treats its state.
struct ForwardMode {
  bool training = false;      ///< normalize with batch statistics
  bool update_stats = false;  ///< fold batch statistics into running statistics
  bool param_grads = false;   ///< parameters become trainable tape leaves

  static ForwardMode train() { return {true, true, true}; }
  static ForwardMode eval() { return {false, false, false}; }
};

}  // namespace advseg

#endif  // ADVSEG_AUTOGRAD_HPP_
