// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stcnet/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace stcnet::oracle {

// Brute-force references and numeric verification. These share nothing with
// the fast kernels beyond the Tensor type: plain nested loops, 64-bit
// accumulation, no algorithmic shortcuts. Deliberately slow.

template <typename T>
Tensor<T> conv3d_reference(const Tensor<T> &input, const Tensor<T> &weights,
                           const Tensor<T> *bias, const ConvSpec &spec);

template <typename T>
Tensor<T> conv3d_reference(const Tensor<T> &input, const Tensor<T> &weights,
                           const ConvSpec &spec) {
  return conv3d_reference(input, weights, static_cast<const Tensor<T> *>(nullptr), spec);
}

template <typename T>
Tensor<T> maxpool3d_reference(const Tensor<T> &input, const PoolSpec &spec);

template <typename T>
Tensor<T> avgpool3d_reference(const Tensor<T> &input, const PoolSpec &spec);

template <typename T>
Tensor<T> affine_reference(const Tensor<T> &input, const Tensor<T> &weights,
                           const Tensor<T> *bias);

template <typename T>
Tensor<T> batchnorm_train_reference(const Tensor<T> &x, const Tensor<T> &gamma,
                                    const Tensor<T> &beta, T eps);

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
using ScalarFn = std::function<double(const Tensor<double> &)>;
Tensor<double> finite_diff_grad(const ScalarFn &f, const Tensor<double> &x, double h = 1e-5);

// ------------------------------- compare -------------------------------------

enum class Norm { Max, L2 };

struct Tolerance {
  double abs = 0.0;
  double rel = 0.0;
  Norm norm = Norm::Max;

  void validate() const {
    if (abs < 0 || rel < 0 || (abs == 0 && rel == 0))
      throw ConfigError("tolerance: at least one of abs/rel must be positive");
  }
};

struct CompareResult {
  bool pass = true;
  int64_t worst_index = -1; // flat index of the worst offender
  double a = 0.0, b = 0.0;  // offending values
  double abs_err = 0.0;
  double allowed = 0.0; // abs + rel*max(|a|,|b|) at the offender
  double l2_err = 0.0;

  std::string describe() const;
};

template <typename T>
CompareResult compare(const Tensor<T> &a, const Tensor<T> &b, const Tolerance &tol);

// Relative error with the denominator floored at 1e-8.
inline double rel_err(double a, double b) {
  double denom = std::max({1e-8, std::abs(a), std::abs(b)});
  return std::abs(a - b) / denom;
}

// Max relative error between a tensor pair, e.g. analytic vs finite-diff grads.
template <typename T> double max_rel_err(const Tensor<T> &a, const Tensor<T> &b);

} // namespace stcnet::oracle
