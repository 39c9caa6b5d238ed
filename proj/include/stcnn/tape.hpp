// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "stcnn/tensor.hpp"

namespace stcnn {

// Handle into a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape: operations push nodes during the forward pass, backward
// replays them in reverse creation order (which is a topological order).
// One tape per example/batch; never shared across threads.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& upstream)>;

  Var leaf(Tensor<T> value, bool requires_grad) {
    return push(std::move(value), requires_grad, nullptr);
  }

  Var record(Tensor<T> value, bool requires_grad, BackwardFn bwd) {
    return push(std::move(value), requires_grad, requires_grad ? std::move(bwd) : nullptr);
  }

  const Tensor<T>& value(Var v) const { return nodes_[idx(v)].value; }
  bool requires_grad(Var v) const { return nodes_[idx(v)].requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  // Accumulates into the grad buffer of `v` (fan-out sums here).
  void accumulate(Var v, const Tensor<T>& g) {
    if (!nodes_[idx(v)].requires_grad) return;
    Tensor<T>& buf = grads_[idx(v)];
    if (!buf.defined()) buf = Tensor<T>(nodes_[idx(v)].value.shape());
    STCNN_CHECK(buf.size() == g.size(), "gradient shape " << shape_str(g.shape()) << " vs value "
                                                          << shape_str(buf.shape()));
    T* dst = buf.data();
    const T* src = g.data();
    const std::int64_t n = g.size();
    for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
  }

  // Runs the reverse sweep from a scalar loss. Each node is visited exactly
  // once; gradients land in buffers readable via grad().
  void backward(Var loss) {
    STCNN_CHECK(value(loss).size() == 1, "backward needs a scalar loss, got "
                                             << shape_str(value(loss).shape()));
    STCNN_CHECK(nodes_[idx(loss)].requires_grad, "loss is detached from every differentiable leaf");
    accumulate(loss, Tensor<T>::scalar(T(1)));
    for (int i = loss.id; i >= 0; --i) {
      auto& node = nodes_[static_cast<std::size_t>(i)];
      if (!node.backward) continue;
      const Tensor<T>& g = grads_[static_cast<std::size_t>(i)];
      if (!g.defined()) continue;  // not on a path to the loss
      node.backward(*this, g);
    }
  }

  // Gradient of `v` after backward(); nullptr when no gradient flowed.
  const Tensor<T>* grad(Var v) const {
    const Tensor<T>& g = grads_[idx(v)];
    return g.defined() ? &g : nullptr;
  }

 private:
  struct Node {
    Tensor<T> value;
    bool requires_grad;
    BackwardFn backward;
  };

  Var push(Tensor<T> value, bool requires_grad, BackwardFn bwd) {
    nodes_.push_back(Node{std::move(value), requires_grad, std::move(bwd)});
    grads_.emplace_back();
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  static std::size_t idx(Var v) { return static_cast<std::size_t>(v.id); }

  // Deques keep references returned by value()/grad() stable while later
  // operations append nodes.
  std::deque<Node> nodes_;
  std::deque<Tensor<T>> grads_;
};

}  // namespace stcnn
