// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stcnet/autodiff.hpp"

#include <functional>

namespace stcnet::stc {

// Spatio-temporal channel correlation block. Two gating branches over a
// (N,C,T,H,W) feature map:
//   TCB: squeeze over (T,H,W) -> C vector -> bottleneck fcs -> sigmoid gates
//   SCB: squeeze over (H,W)   -> T*C vector (t-major) -> bottleneck fcs -> C gates
// Branch outputs rescale the input per channel; with both branches active the
// block output is their elementwise average.

enum class BranchMode { TCB, SCB, Both };

inline const char *branch_mode_name(BranchMode m) {
  switch (m) {
  case BranchMode::TCB: return "TCB";
  case BranchMode::SCB: return "SCB";
  default: return "BOTH";
  }
}

BranchMode parse_branch_mode(const std::string &s);

struct StcBlockSpec {
  int channels = 0;  // C of the feature map this block gates
  int temporal = 0;  // T the SCB weights are bound to
  int reduction = 4; // r
  BranchMode mode = BranchMode::Both;
  // Bottleneck widths; 0 derives C/r and (T*C)/r from the reduction ratio.
  int tcb_hidden = 0;
  int scb_hidden = 0;
  bool use_bias = true;
  // ReLU between the two fcs; switchable to a bare linear bottleneck.
  bool bottleneck_relu = true;

  void validate() const;
  int tcb_hidden_width() const;
  int scb_hidden_width() const;
};

struct StcParamCount {
  int64_t tcb_weights = 0, tcb_biases = 0;
  int64_t scb_weights = 0, scb_biases = 0;
  int64_t total() const { return tcb_weights + tcb_biases + scb_weights + scb_biases; }
};

// Closed-form parameter counts per branch; weights only plus bias terms.
StcParamCount stc_param_count(const StcBlockSpec &spec);

template <typename T> struct StcBlockParams {
  StcBlockSpec spec;
  bool gate_bypass = false; // debug: forces both branch gates to 1

  ad::Var<T> tcb_w1, tcb_b1, tcb_w2, tcb_b2;
  ad::Var<T> scb_w1, scb_b1, scb_w2, scb_b2;

  std::vector<ad::Var<T>> parameters() const;
};

// Deterministic fan-in-scaled initialization; biases start at zero.
template <typename T>
StcBlockParams<T> make_stc_params(const StcBlockSpec &spec, Rng &rng, bool trainable = true);

// -------------------------------- branches ----------------------------------

// z_tcb[n,c] = mean over (t,h,w).
template <typename T> ad::Var<T> tcb_pool(const ad::Var<T> &x);

// sigmoid(W2 (relu) (W1 z)); output (N,C) strictly in (0,1).
template <typename T>
ad::Var<T> tcb_gate(const ad::Var<T> &z, const StcBlockParams<T> &params);

template <typename T>
ad::Var<T> tcb_forward(const ad::Var<T> &x, const StcBlockParams<T> &params);

// z_scb[n, t*C+c] = mean over (h,w).
template <typename T> ad::Var<T> scb_pool(const ad::Var<T> &x);

template <typename T>
ad::Var<T> scb_gate(const ad::Var<T> &z, const StcBlockParams<T> &params);

template <typename T>
ad::Var<T> scb_forward(const ad::Var<T> &x, const StcBlockParams<T> &params);

// Branch fusion: BOTH averages the two branch outputs; single modes pass
// their branch through. With gate_bypass set the input is returned untouched.
template <typename T>
ad::Var<T> stc_forward(const ad::Var<T> &x, const StcBlockParams<T> &params);

// shortcut(input) + stc_forward(conv_path(input)): the gate applies to the
// conv-path output before the residual addition.
template <typename T>
ad::Var<T> stc_residual_unit(const ad::Var<T> &input,
                             const std::function<ad::Var<T>(const ad::Var<T> &)> &conv_path,
                             const std::function<ad::Var<T>(const ad::Var<T> &)> &shortcut,
                             const StcBlockParams<T> &params);

} // namespace stcnet::stc
