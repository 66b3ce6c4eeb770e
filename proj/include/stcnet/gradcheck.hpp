// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stcnet/tensor.hpp"

#include <string>
#include <vector>

namespace stcnet::gradcheck {

// Finite-difference verification of the differentiable ops and the full STC
// block (64-bit, central differences, rel err threshold 1e-4).

struct OpReport {
  std::string name;
  double max_rel_err = 0;
  bool pass = false;
};

constexpr double kRelTol = 1e-4;

std::vector<OpReport> check_ops(uint64_t seed);
// Full block on dims (2,8,4,5,5), every parameter and the input.
OpReport check_stc_block(uint64_t seed);

} // namespace stcnet::gradcheck
