// SPDX-License-Identifier: Apache-2.0
#include "stcnet/autodiff.hpp"

#include <unordered_set>

namespace stcnet::ad {

template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents, const char *op,
                 std::function<void(Node<T> &)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  n->parents = std::move(parents);
  for (const auto &p : n->parents)
    if (p && p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

template <typename T> void accumulate_grad(const Var<T> &target, const Tensor<T> &g) {
  if (!target || !target->requires_grad) return;
  if (target->grad.empty()) {
    target->grad = g;
  } else {
    for (int64_t i = 0; i < g.numel(); ++i) target->grad[i] += g[i];
  }
}

template <typename T> void backward(const Var<T> &root) {
  if (!root) throw ContractError("backward: null root");
  if (!root->value.is_scalar())
    throw ContractError("backward: root must be scalar-valued, got " + root->value.shape_str());

  // Iterative post-order DFS; topo holds children after all their parents.
  std::vector<Node<T> *> topo;
  std::vector<Var<T>> owners; // keeps visited nodes alive during the pass
  std::unordered_set<Node<T> *> visited;
  std::vector<std::pair<Var<T>, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto &[node, next] = stack.back();
    if (next < node->parents.size()) {
      Var<T> p = node->parents[next++];
      if (p && !visited.count(p.get())) {
        visited.insert(p.get());
        stack.emplace_back(std::move(p), 0);
      }
    } else {
      topo.push_back(node.get());
      owners.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T> *n : topo) n->grad = Tensor<T>();
  root->grad = Tensor<T>::ones(root->value.dims());

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node<T> *n = *it;
    if (n->requires_grad && n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ------------------------------ op wrappers ---------------------------------

template <typename T>
Var<T> conv3d(const Var<T> &x, const Var<T> &w, const Var<T> &bias, const ConvSpec &spec) {
  Tensor<T> out = ops::conv3d(x->value, w->value, bias ? &bias->value : nullptr, spec);
  std::vector<Var<T>> parents{x, w};
  if (bias) parents.push_back(bias);
  return make_node<T>(std::move(out), std::move(parents), "conv3d", [spec](Node<T> &self) {
    const Var<T> &x = self.parents[0];
    const Var<T> &w = self.parents[1];
    if (x->requires_grad)
      accumulate_grad(x, ops::conv3d_backward_input(self.grad, w->value, spec, x->value.dims()));
    if (w->requires_grad)
      accumulate_grad(w, ops::conv3d_backward_weights(self.grad, x->value, spec));
    if (self.parents.size() > 2 && self.parents[2]->requires_grad)
      accumulate_grad(self.parents[2], ops::conv3d_backward_bias(self.grad));
  });
}

template <typename T> Var<T> maxpool3d(const Var<T> &x, const PoolSpec &spec) {
  auto argmax = std::make_shared<std::vector<int64_t>>();
  Tensor<T> out = ops::maxpool3d(x->value, spec, argmax.get());
  return make_node<T>(std::move(out), {x}, "maxpool3d", [argmax](Node<T> &self) {
    const Var<T> &x = self.parents[0];
    accumulate_grad(x, ops::maxpool3d_backward(self.grad, *argmax, x->value.dims()));
  });
}

template <typename T> Var<T> avgpool3d(const Var<T> &x, const PoolSpec &spec) {
  Tensor<T> out = ops::avgpool3d(x->value, spec);
  return make_node<T>(std::move(out), {x}, "avgpool3d", [spec](Node<T> &self) {
    const Var<T> &x = self.parents[0];
    accumulate_grad(x, ops::avgpool3d_backward(self.grad, spec, x->value.dims()));
  });
}

template <typename T> Var<T> affine(const Var<T> &x, const Var<T> &w, const Var<T> &bias) {
  Tensor<T> out = ops::affine(x->value, w->value, bias ? &bias->value : nullptr);
  std::vector<Var<T>> parents{x, w};
  if (bias) parents.push_back(bias);
  return make_node<T>(std::move(out), std::move(parents), "affine", [](Node<T> &self) {
    const Var<T> &x = self.parents[0];
    const Var<T> &w = self.parents[1];
    if (x->requires_grad) accumulate_grad(x, ops::affine_backward_input(self.grad, w->value));
    if (w->requires_grad) accumulate_grad(w, ops::affine_backward_weights(self.grad, x->value));
    if (self.parents.size() > 2 && self.parents[2]->requires_grad)
      accumulate_grad(self.parents[2], ops::affine_backward_bias(self.grad));
  });
}

template <typename T> Var<T> relu(const Var<T> &x) {
  return make_node<T>(ops::relu(x->value), {x}, "relu", [](Node<T> &self) {
    accumulate_grad(self.parents[0], ops::relu_backward(self.parents[0]->value, self.grad));
  });
}

template <typename T> Var<T> sigmoid(const Var<T> &x) {
  return make_node<T>(ops::sigmoid(x->value), {x}, "sigmoid", [](Node<T> &self) {
    accumulate_grad(self.parents[0], ops::sigmoid_backward(self.value, self.grad));
  });
}

template <typename T> Var<T> add(const Var<T> &a, const Var<T> &b) {
  return make_node<T>(ops::add(a->value, b->value), {a, b}, "add", [](Node<T> &self) {
    accumulate_grad(self.parents[0], self.grad);
    accumulate_grad(self.parents[1], self.grad);
  });
}

template <typename T> Var<T> mul(const Var<T> &a, const Var<T> &b) {
  return make_node<T>(ops::mul(a->value, b->value), {a, b}, "mul", [](Node<T> &self) {
    if (self.parents[0]->requires_grad)
      accumulate_grad(self.parents[0], ops::mul(self.grad, self.parents[1]->value));
    if (self.parents[1]->requires_grad)
      accumulate_grad(self.parents[1], ops::mul(self.grad, self.parents[0]->value));
  });
}

template <typename T> Var<T> scale(const Var<T> &a, T factor) {
  return make_node<T>(ops::scale(a->value, factor), {a}, "scale", [factor](Node<T> &self) {
    accumulate_grad(self.parents[0], ops::scale(self.grad, factor));
  });
}

template <typename T> Var<T> sum_all(const Var<T> &x) {
  return make_node<T>(ops::sum_all(x->value), {x}, "sum", [](Node<T> &self) {
    accumulate_grad(self.parents[0],
                    Tensor<T>::full(self.parents[0]->value.dims(), self.grad[0]));
  });
}

template <typename T> Var<T> reshape(const Var<T> &x, std::vector<int64_t> dims) {
  return make_node<T>(x->value.reshaped(std::move(dims)), {x}, "reshape", [](Node<T> &self) {
    accumulate_grad(self.parents[0], self.grad.reshaped(self.parents[0]->value.dims()));
  });
}

template <typename T> Var<T> concat_cols(const Var<T> &a, const Var<T> &b) {
  return make_node<T>(ops::concat_cols(a->value, b->value), {a, b}, "concat", [](Node<T> &self) {
    const int64_t N = self.grad.dim(0);
    const int64_t Da = self.parents[0]->value.dim(1);
    const int64_t Db = self.parents[1]->value.dim(1);
    if (self.parents[0]->requires_grad) {
      Tensor<T> ga({N, Da});
      for (int64_t n = 0; n < N; ++n)
        std::copy(self.grad.data() + n * (Da + Db), self.grad.data() + n * (Da + Db) + Da,
                  ga.data() + n * Da);
      accumulate_grad(self.parents[0], ga);
    }
    if (self.parents[1]->requires_grad) {
      Tensor<T> gb({N, Db});
      for (int64_t n = 0; n < N; ++n)
        std::copy(self.grad.data() + n * (Da + Db) + Da, self.grad.data() + (n + 1) * (Da + Db),
                  gb.data() + n * Db);
      accumulate_grad(self.parents[1], gb);
    }
  });
}

template <typename T>
Var<T> batchnorm(const Var<T> &x, const Var<T> &gamma, const Var<T> &beta,
                 Tensor<T> *running_mean, Tensor<T> *running_var, bool train, T eps, T momentum) {
  if (train) {
    Tensor<T> batch_mean, batch_var;
    Tensor<T> out = ops::batchnorm_train(x->value, gamma->value, beta->value, eps, batch_mean,
                                         batch_var);
    if (running_mean && running_var) {
      for (int64_t c = 0; c < batch_mean.numel(); ++c) {
        (*running_mean)[c] = (T(1) - momentum) * (*running_mean)[c] + momentum * batch_mean[c];
        (*running_var)[c] = (T(1) - momentum) * (*running_var)[c] + momentum * batch_var[c];
      }
    }
    auto mean = std::make_shared<Tensor<T>>(std::move(batch_mean));
    auto var = std::make_shared<Tensor<T>>(std::move(batch_var));
    return make_node<T>(std::move(out), {x, gamma, beta}, "batchnorm",
                        [mean, var, eps](Node<T> &self) {
                          const Var<T> &x = self.parents[0];
                          const Var<T> &gamma = self.parents[1];
                          Tensor<T> dx, dgamma, dbeta;
                          ops::batchnorm_train_backward(
                              x->value, gamma->value, *mean, *var, eps, self.grad,
                              x->requires_grad ? &dx : nullptr,
                              self.parents[1]->requires_grad ? &dgamma : nullptr,
                              self.parents[2]->requires_grad ? &dbeta : nullptr);
                          if (x->requires_grad) accumulate_grad(x, dx);
                          if (self.parents[1]->requires_grad) accumulate_grad(self.parents[1], dgamma);
                          if (self.parents[2]->requires_grad) accumulate_grad(self.parents[2], dbeta);
                        });
  }
  if (!running_mean || !running_var)
    throw ContractError("batchnorm: eval mode requires running statistics");
  // Snapshot the stats; the layer may update them on a later train forward.
  auto rm = std::make_shared<Tensor<T>>(*running_mean);
  auto rv = std::make_shared<Tensor<T>>(*running_var);
  Tensor<T> out = ops::batchnorm_eval(x->value, gamma->value, beta->value, *rm, *rv, eps);
  return make_node<T>(std::move(out), {x, gamma, beta}, "batchnorm_eval",
                      [rm, rv, eps](Node<T> &self) {
                        const Var<T> &x = self.parents[0];
                        Tensor<T> dx, dgamma, dbeta;
                        ops::batchnorm_eval_backward(
                            x->value, self.parents[1]->value, *rm, *rv, eps, self.grad,
                            x->requires_grad ? &dx : nullptr,
                            self.parents[1]->requires_grad ? &dgamma : nullptr,
                            self.parents[2]->requires_grad ? &dbeta : nullptr);
                        if (x->requires_grad) accumulate_grad(x, dx);
                        if (self.parents[1]->requires_grad) accumulate_grad(self.parents[1], dgamma);
                        if (self.parents[2]->requires_grad) accumulate_grad(self.parents[2], dbeta);
                      });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T> &logits, std::vector<int64_t> labels) {
  auto grad = std::make_shared<Tensor<T>>();
  T loss = ops::softmax_cross_entropy(logits->value, labels, grad.get());
  return make_node<T>(Tensor<T>::scalar(loss), {logits}, "softmax_ce", [grad](Node<T> &self) {
    accumulate_grad(self.parents[0], ops::scale(*grad, self.grad[0]));
  });
}

template <typename T> Var<T> scale_channels(const Var<T> &x, const Var<T> &gates) {
  return make_node<T>(ops::scale_channels(x->value, gates->value), {x, gates}, "scale_channels",
                      [](Node<T> &self) {
                        const Var<T> &x = self.parents[0];
                        const Var<T> &gates = self.parents[1];
                        Tensor<T> dx, dg;
                        ops::scale_channels_backward(x->value, gates->value, self.grad,
                                                     x->requires_grad ? &dx : nullptr,
                                                     gates->requires_grad ? &dg : nullptr);
                        if (x->requires_grad) accumulate_grad(x, dx);
                        if (gates->requires_grad) accumulate_grad(gates, dg);
                      });
}

template <typename T> Var<T> mean_over_thw(const Var<T> &x) {
  return make_node<T>(ops::mean_over_thw(x->value), {x}, "mean_thw", [](Node<T> &self) {
    accumulate_grad(self.parents[0],
                    ops::mean_over_thw_backward(self.grad, self.parents[0]->value.dims()));
  });
}

template <typename T> Var<T> mean_over_hw_tmajor(const Var<T> &x) {
  return make_node<T>(ops::mean_over_hw_tmajor(x->value), {x}, "mean_hw", [](Node<T> &self) {
    accumulate_grad(self.parents[0],
                    ops::mean_over_hw_tmajor_backward(self.grad, self.parents[0]->value.dims()));
  });
}

// --------------------------- instantiations ---------------------------------

#define STCNET_INSTANTIATE_AD(T)                                                                  \
  template Var<T> make_node<T>(Tensor<T>, std::vector<Var<T>>, const char *,                     \
                               std::function<void(Node<T> &)>);                                  \
  template void accumulate_grad<T>(const Var<T> &, const Tensor<T> &);                           \
  template void backward<T>(const Var<T> &);                                                     \
  template Var<T> conv3d<T>(const Var<T> &, const Var<T> &, const Var<T> &, const ConvSpec &);   \
  template Var<T> maxpool3d<T>(const Var<T> &, const PoolSpec &);                                \
  template Var<T> avgpool3d<T>(const Var<T> &, const PoolSpec &);                                \
  template Var<T> affine<T>(const Var<T> &, const Var<T> &, const Var<T> &);                     \
  template Var<T> relu<T>(const Var<T> &);                                                       \
  template Var<T> sigmoid<T>(const Var<T> &);                                                    \
  template Var<T> add<T>(const Var<T> &, const Var<T> &);                                        \
  template Var<T> mul<T>(const Var<T> &, const Var<T> &);                                        \
  template Var<T> scale<T>(const Var<T> &, T);                                                   \
  template Var<T> sum_all<T>(const Var<T> &);                                                    \
  template Var<T> reshape<T>(const Var<T> &, std::vector<int64_t>);                              \
  template Var<T> concat_cols<T>(const Var<T> &, const Var<T> &);                                \
  template Var<T> batchnorm<T>(const Var<T> &, const Var<T> &, const Var<T> &, Tensor<T> *,      \
                               Tensor<T> *, bool, T, T);                                         \
  template Var<T> softmax_cross_entropy<T>(const Var<T> &, std::vector<int64_t>);                \
  template Var<T> scale_channels<T>(const Var<T> &, const Var<T> &);                             \
  template Var<T> mean_over_thw<T>(const Var<T> &);                                              \
  template Var<T> mean_over_hw_tmajor<T>(const Var<T> &);

STCNET_INSTANTIATE_AD(float)
STCNET_INSTANTIATE_AD(double)

#undef STCNET_INSTANTIATE_AD

} // namespace stcnet::ad
