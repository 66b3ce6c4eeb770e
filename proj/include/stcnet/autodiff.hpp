// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stcnet/ops.hpp"
#include "stcnet/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace stcnet::ad {

// Reverse-mode autodiff over a dynamically recorded DAG. Each op wrapper
// below computes its value eagerly through ops:: and records a node whose
// backward closure routes gradients to its parents. Graphs are per-forward
// tapes; parameter leaves persist across forwards.

template <typename T> struct Node;
template <typename T> using Var = std::shared_ptr<Node<T>>;

template <typename T> struct Node {
  Tensor<T> value;
  Tensor<T> grad; // empty until backward() reaches this node
  bool requires_grad = false;
  const char *op = "leaf";
  std::vector<Var<T>> parents;
  std::function<void(Node<T> &)> backward_fn;
};

template <typename T> Var<T> leaf(Tensor<T> value, bool requires_grad, const char *op = "leaf") {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->op = op;
  return n;
}

template <typename T> Var<T> constant(Tensor<T> value) {
  return leaf(std::move(value), false, "const");
}

// Generic node factory so other modules can define ops without touching this
// file. requires_grad is inherited from the parents.
template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents, const char *op,
                 std::function<void(Node<T> &)> backward_fn);

// Adds g into target's grad if it participates in differentiation.
template <typename T> void accumulate_grad(const Var<T> &target, const Tensor<T> &g);

// Runs reverse accumulation from a scalar root. Grads of every node in the
// reachable subgraph are reset first, so each backward() stands alone.
template <typename T> void backward(const Var<T> &root);

// ------------------------------ op wrappers ---------------------------------

template <typename T>
Var<T> conv3d(const Var<T> &x, const Var<T> &w, const Var<T> &bias, const ConvSpec &spec);

template <typename T> Var<T> maxpool3d(const Var<T> &x, const PoolSpec &spec);
template <typename T> Var<T> avgpool3d(const Var<T> &x, const PoolSpec &spec);

template <typename T> Var<T> affine(const Var<T> &x, const Var<T> &w, const Var<T> &bias);

template <typename T> Var<T> relu(const Var<T> &x);
template <typename T> Var<T> sigmoid(const Var<T> &x);

template <typename T> Var<T> add(const Var<T> &a, const Var<T> &b);
template <typename T> Var<T> mul(const Var<T> &a, const Var<T> &b);
template <typename T> Var<T> scale(const Var<T> &a, T factor);
template <typename T> Var<T> sum_all(const Var<T> &x);
template <typename T> Var<T> reshape(const Var<T> &x, std::vector<int64_t> dims);
template <typename T> Var<T> concat_cols(const Var<T> &a, const Var<T> &b);

// Batch norm; in train mode running stats (when provided) are updated in
// place by EMA with the given momentum.
template <typename T>
Var<T> batchnorm(const Var<T> &x, const Var<T> &gamma, const Var<T> &beta,
                 Tensor<T> *running_mean, Tensor<T> *running_var, bool train, T eps, T momentum);

template <typename T>
Var<T> softmax_cross_entropy(const Var<T> &logits, std::vector<int64_t> labels);

template <typename T> Var<T> scale_channels(const Var<T> &x, const Var<T> &gates);

template <typename T> Var<T> mean_over_thw(const Var<T> &x);
template <typename T> Var<T> mean_over_hw_tmajor(const Var<T> &x);

} // namespace stcnet::ad
