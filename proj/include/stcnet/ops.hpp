// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stcnet/tensor.hpp"

#include <functional>
#include <vector>

namespace stcnet::ops {

// Fast tensor kernels. Forward ops validate shapes and throw ShapeError /
// ConfigError; backward ops assume the shapes their forward produced.
// Inner accumulations run in double regardless of T so the float32 path
// stays within oracle tolerance.

// -------------------------------- conv3d -----------------------------------
// input (N, Cin, T, H, W), weights (Cout, Cin/groups, kt, kh, kw),
// bias (Cout) optional. im2col per (sample, group) + row-major matmul.
template <typename T>
Tensor<T> conv3d(const Tensor<T> &input, const Tensor<T> &weights, const Tensor<T> *bias,
                 const ConvSpec &spec);

template <typename T>
Tensor<T> conv3d(const Tensor<T> &input, const Tensor<T> &weights, const ConvSpec &spec) {
  return conv3d(input, weights, static_cast<const Tensor<T> *>(nullptr), spec);
}

template <typename T>
Tensor<T> conv3d_backward_input(const Tensor<T> &grad_out, const Tensor<T> &weights,
                                const ConvSpec &spec, const std::vector<int64_t> &input_dims);

template <typename T>
Tensor<T> conv3d_backward_weights(const Tensor<T> &grad_out, const Tensor<T> &input,
                                  const ConvSpec &spec);

template <typename T> Tensor<T> conv3d_backward_bias(const Tensor<T> &grad_out);

// -------------------------------- pooling ----------------------------------
// Padding positions are -inf for max pooling and excluded from the mean for
// average pooling.
template <typename T>
Tensor<T> maxpool3d(const Tensor<T> &input, const PoolSpec &spec,
                    std::vector<int64_t> *argmax = nullptr);

template <typename T>
Tensor<T> maxpool3d_backward(const Tensor<T> &grad_out, const std::vector<int64_t> &argmax,
                             const std::vector<int64_t> &input_dims);

template <typename T> Tensor<T> avgpool3d(const Tensor<T> &input, const PoolSpec &spec);

template <typename T>
Tensor<T> avgpool3d_backward(const Tensor<T> &grad_out, const PoolSpec &spec,
                             const std::vector<int64_t> &input_dims);

// -------------------------------- affine -----------------------------------
// input (N, K), weights (M, K), bias (M) optional -> (N, M).
template <typename T>
Tensor<T> affine(const Tensor<T> &input, const Tensor<T> &weights, const Tensor<T> *bias);

template <typename T> Tensor<T> affine(const Tensor<T> &input, const Tensor<T> &weights) {
  return affine(input, weights, static_cast<const Tensor<T> *>(nullptr));
}

template <typename T>
Tensor<T> affine_backward_input(const Tensor<T> &grad_out, const Tensor<T> &weights);

template <typename T>
Tensor<T> affine_backward_weights(const Tensor<T> &grad_out, const Tensor<T> &input);

template <typename T> Tensor<T> affine_backward_bias(const Tensor<T> &grad_out);

// ------------------------------ elementwise ---------------------------------
template <typename T> Tensor<T> relu(const Tensor<T> &x);
template <typename T> Tensor<T> relu_backward(const Tensor<T> &x, const Tensor<T> &grad_out);
template <typename T> Tensor<T> sigmoid(const Tensor<T> &x);
// Takes the forward output y: dy/dx = y * (1 - y).
template <typename T> Tensor<T> sigmoid_backward(const Tensor<T> &y, const Tensor<T> &grad_out);

template <typename T> Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b);
template <typename T> Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b);
template <typename T> Tensor<T> scale(const Tensor<T> &a, T factor);
template <typename T> Tensor<T> sum_all(const Tensor<T> &x); // -> scalar (1)

// ------------------------------ batch norm ----------------------------------
// Normalizes over all non-channel axes (channel axis = dim 1). Train mode
// uses batch statistics (biased variance) and reports them so the caller can
// update running stats; eval mode uses the provided running stats.
template <typename T>
Tensor<T> batchnorm_train(const Tensor<T> &x, const Tensor<T> &gamma, const Tensor<T> &beta,
                          T eps, Tensor<T> &batch_mean, Tensor<T> &batch_var);

template <typename T>
Tensor<T> batchnorm_eval(const Tensor<T> &x, const Tensor<T> &gamma, const Tensor<T> &beta,
                         const Tensor<T> &running_mean, const Tensor<T> &running_var, T eps);

template <typename T>
void batchnorm_train_backward(const Tensor<T> &x, const Tensor<T> &gamma,
                              const Tensor<T> &batch_mean, const Tensor<T> &batch_var, T eps,
                              const Tensor<T> &grad_out, Tensor<T> *dx, Tensor<T> *dgamma,
                              Tensor<T> *dbeta);

template <typename T>
void batchnorm_eval_backward(const Tensor<T> &x, const Tensor<T> &gamma,
                             const Tensor<T> &running_mean, const Tensor<T> &running_var, T eps,
                             const Tensor<T> &grad_out, Tensor<T> *dx, Tensor<T> *dgamma,
                             Tensor<T> *dbeta);

// ------------------------------ losses --------------------------------------
template <typename T> Tensor<T> softmax_rows(const Tensor<T> &logits); // (N,K) -> (N,K)

// Mean over the batch of -log softmax(logits)[label]; max-subtracted.
// Returns the scalar loss; the gradient wrt logits is (softmax - onehot)/N.
template <typename T>
T softmax_cross_entropy(const Tensor<T> &logits, const std::vector<int64_t> &labels,
                        Tensor<T> *grad_logits = nullptr);

// --------------------------- channel gating ---------------------------------
// out[n,c,t,h,w] = gates[n,c] * input[n,c,t,h,w].
template <typename T> Tensor<T> scale_channels(const Tensor<T> &input, const Tensor<T> &gates);

template <typename T>
void scale_channels_backward(const Tensor<T> &input, const Tensor<T> &gates,
                             const Tensor<T> &grad_out, Tensor<T> *dinput, Tensor<T> *dgates);

// --------------------------- global reductions ------------------------------
// Mean over (T,H,W) per (n,c): (N,C,T,H,W) -> (N,C).
template <typename T> Tensor<T> mean_over_thw(const Tensor<T> &x);
template <typename T>
Tensor<T> mean_over_thw_backward(const Tensor<T> &grad_out, const std::vector<int64_t> &input_dims);

// Mean over (H,W) per (n,t,c), flattened t-major: (N,C,T,H,W) -> (N, T*C)
// with flat index t*C + c.
template <typename T> Tensor<T> mean_over_hw_tmajor(const Tensor<T> &x);
template <typename T>
Tensor<T> mean_over_hw_tmajor_backward(const Tensor<T> &grad_out,
                                       const std::vector<int64_t> &input_dims);

// ------------------------------ reshaping -----------------------------------
// Concatenate along dim 1 of two rank-2 tensors: (N,Da)+(N,Db) -> (N,Da+Db).
template <typename T> Tensor<T> concat_cols(const Tensor<T> &a, const Tensor<T> &b);

// Row-wise argmax of a rank-2 tensor; ties break to the lowest index.
template <typename T> std::vector<int64_t> argmax_rows(const Tensor<T> &x);

// Runs fn over [0,n) split across the configured worker threads. Chunks are
// disjoint so writers never race; with 1 thread it degenerates to a plain call.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)> &fn);

} // namespace stcnet::ops
