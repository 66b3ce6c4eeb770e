// SPDX-License-Identifier: Apache-2.0
#include "stcnet/stc_block.hpp"

namespace stcnet::stc {

BranchMode parse_branch_mode(const std::string &s) {
  if (s == "TCB" || s == "tcb") return BranchMode::TCB;
  if (s == "SCB" || s == "scb") return BranchMode::SCB;
  if (s == "BOTH" || s == "both") return BranchMode::Both;
  throw ConfigError("unknown branch mode '" + s + "' (expected TCB, SCB or BOTH)");
}

void StcBlockSpec::validate() const {
  if (channels < 1) throw ConfigError("stc block: channels must be positive");
  if (temporal < 1) throw ConfigError("stc block: temporal depth must be positive");
  if (tcb_hidden == 0 || scb_hidden == 0) {
    if (reduction < 1) throw ConfigError("stc block: reduction ratio must be positive");
    if (tcb_hidden == 0 && channels % reduction != 0)
      throw ConfigError("stc block: channels " + std::to_string(channels) +
                        " not divisible by reduction " + std::to_string(reduction));
    if (scb_hidden == 0 && (static_cast<int64_t>(temporal) * channels) % reduction != 0)
      throw ConfigError("stc block: T*C = " + std::to_string(temporal * channels) +
                        " not divisible by reduction " + std::to_string(reduction));
  }
  if (tcb_hidden < 0 || scb_hidden < 0)
    throw ConfigError("stc block: bottleneck widths must be positive");
}

int StcBlockSpec::tcb_hidden_width() const {
  return tcb_hidden > 0 ? tcb_hidden : channels / reduction;
}

int StcBlockSpec::scb_hidden_width() const {
  return scb_hidden > 0 ? scb_hidden : temporal * channels / reduction;
}

StcParamCount stc_param_count(const StcBlockSpec &spec) {
  spec.validate();
  const int64_t C = spec.channels;
  const int64_t TC = static_cast<int64_t>(spec.temporal) * C;
  const int64_t th = spec.tcb_hidden_width();
  const int64_t sh = spec.scb_hidden_width();
  StcParamCount count;
  bool tcb = spec.mode != BranchMode::SCB;
  bool scb = spec.mode != BranchMode::TCB;
  if (tcb) {
    count.tcb_weights = C * th + th * C;
    if (spec.use_bias) count.tcb_biases = th + C;
  }
  if (scb) {
    count.scb_weights = TC * sh + sh * C;
    if (spec.use_bias) count.scb_biases = sh + C;
  }
  return count;
}

template <typename T> std::vector<ad::Var<T>> StcBlockParams<T>::parameters() const {
  std::vector<ad::Var<T>> out;
  for (const auto &v : {tcb_w1, tcb_b1, tcb_w2, tcb_b2, scb_w1, scb_b1, scb_w2, scb_b2})
    if (v) out.push_back(v);
  return out;
}

template <typename T>
StcBlockParams<T> make_stc_params(const StcBlockSpec &spec, Rng &rng, bool trainable) {
  spec.validate();
  StcBlockParams<T> p;
  p.spec = spec;
  const int64_t C = spec.channels;
  const int64_t TC = static_cast<int64_t>(spec.temporal) * C;
  const int64_t th = spec.tcb_hidden_width();
  const int64_t sh = spec.scb_hidden_width();

  auto init = [&](std::vector<int64_t> dims, int64_t fan_in) {
    Tensor<T> t(std::move(dims));
    fill_fan_in_uniform(t, fan_in, rng);
    return ad::leaf(std::move(t), trainable, "stc_param");
  };
  auto zero_bias = [&](int64_t len) {
    return spec.use_bias ? ad::leaf(Tensor<T>({len}), trainable, "stc_bias") : ad::Var<T>();
  };

  if (spec.mode != BranchMode::SCB) {
    p.tcb_w1 = init({th, C}, C);
    p.tcb_b1 = zero_bias(th);
    p.tcb_w2 = init({C, th}, th);
    p.tcb_b2 = zero_bias(C);
  }
  if (spec.mode != BranchMode::TCB) {
    p.scb_w1 = init({sh, TC}, TC);
    p.scb_b1 = zero_bias(sh);
    p.scb_w2 = init({C, sh}, sh);
    p.scb_b2 = zero_bias(C);
  }
  return p;
}

template <typename T> ad::Var<T> tcb_pool(const ad::Var<T> &x) {
  return ad::mean_over_thw(x);
}

template <typename T>
static ad::Var<T> bottleneck_gate(const ad::Var<T> &z, const ad::Var<T> &w1, const ad::Var<T> &b1,
                                  const ad::Var<T> &w2, const ad::Var<T> &b2, bool with_relu) {
  ad::Var<T> h = ad::affine(z, w1, b1);
  if (with_relu) h = ad::relu(h);
  return ad::sigmoid(ad::affine(h, w2, b2));
}

template <typename T>
ad::Var<T> tcb_gate(const ad::Var<T> &z, const StcBlockParams<T> &params) {
  if (!params.tcb_w1) throw ConfigError("tcb_gate: block has no TCB weights (mode SCB)");
  if (z->value.rank() != 2 || z->value.dim(1) != params.spec.channels)
    throw ShapeError("tcb_gate: expected (N," + std::to_string(params.spec.channels) +
                     ") input, got " + z->value.shape_str());
  return bottleneck_gate(z, params.tcb_w1, params.tcb_b1, params.tcb_w2, params.tcb_b2,
                         params.spec.bottleneck_relu);
}

template <typename T>
ad::Var<T> tcb_forward(const ad::Var<T> &x, const StcBlockParams<T> &params) {
  return ad::scale_channels(x, tcb_gate(tcb_pool(x), params));
}

template <typename T> ad::Var<T> scb_pool(const ad::Var<T> &x) {
  return ad::mean_over_hw_tmajor(x);
}

template <typename T>
ad::Var<T> scb_gate(const ad::Var<T> &z, const StcBlockParams<T> &params) {
  if (!params.scb_w1) throw ConfigError("scb_gate: block has no SCB weights (mode TCB)");
  const int64_t tc = static_cast<int64_t>(params.spec.temporal) * params.spec.channels;
  if (z->value.rank() != 2 || z->value.dim(1) != tc)
    throw ShapeError("scb_gate: temporal depth mismatch: SCB weights are bound to T=" +
                     std::to_string(params.spec.temporal) + " (T*C=" + std::to_string(tc) +
                     "), got input " + z->value.shape_str());
  return bottleneck_gate(z, params.scb_w1, params.scb_b1, params.scb_w2, params.scb_b2,
                         params.spec.bottleneck_relu);
}

template <typename T>
ad::Var<T> scb_forward(const ad::Var<T> &x, const StcBlockParams<T> &params) {
  if (x->value.dim(2) != params.spec.temporal)
    throw ShapeError("scb_forward: temporal depth mismatch: feature map has T=" +
                     std::to_string(x->value.dim(2)) + " but SCB weights are bound to T=" +
                     std::to_string(params.spec.temporal));
  return ad::scale_channels(x, scb_gate(scb_pool(x), params));
}

template <typename T>
ad::Var<T> stc_forward(const ad::Var<T> &x, const StcBlockParams<T> &params) {
  if (params.gate_bypass) return x;
  if (x->value.rank() != 5 || x->value.dim(1) != params.spec.channels)
    throw ShapeError("stc_forward: expected (N," + std::to_string(params.spec.channels) +
                     ",T,H,W) input, got " + x->value.shape_str());
  switch (params.spec.mode) {
  case BranchMode::TCB: return tcb_forward(x, params);
  case BranchMode::SCB: return scb_forward(x, params);
  case BranchMode::Both:
    return ad::scale(ad::add(tcb_forward(x, params), scb_forward(x, params)), T(0.5));
  }
  throw ContractError("stc_forward: unreachable branch mode");
}

template <typename T>
ad::Var<T> stc_residual_unit(const ad::Var<T> &input,
                             const std::function<ad::Var<T>(const ad::Var<T> &)> &conv_path,
                             const std::function<ad::Var<T>(const ad::Var<T> &)> &shortcut,
                             const StcBlockParams<T> &params) {
  ad::Var<T> gated = stc_forward(conv_path(input), params);
  ad::Var<T> sc = shortcut(input);
  if (!gated->value.same_dims(sc->value))
    throw ShapeError("stc_residual_unit: conv path output " + gated->value.shape_str() +
                     " does not match shortcut " + sc->value.shape_str());
  return ad::add(sc, gated);
}

#define STCNET_INSTANTIATE_STC(T)                                                                 \
  template struct StcBlockParams<T>;                                                             \
  template StcBlockParams<T> make_stc_params<T>(const StcBlockSpec &, Rng &, bool);              \
  template ad::Var<T> tcb_pool<T>(const ad::Var<T> &);                                           \
  template ad::Var<T> tcb_gate<T>(const ad::Var<T> &, const StcBlockParams<T> &);                \
  template ad::Var<T> tcb_forward<T>(const ad::Var<T> &, const StcBlockParams<T> &);             \
  template ad::Var<T> scb_pool<T>(const ad::Var<T> &);                                           \
  template ad::Var<T> scb_gate<T>(const ad::Var<T> &, const StcBlockParams<T> &);                \
  template ad::Var<T> scb_forward<T>(const ad::Var<T> &, const StcBlockParams<T> &);             \
  template ad::Var<T> stc_forward<T>(const ad::Var<T> &, const StcBlockParams<T> &);             \
  template ad::Var<T> stc_residual_unit<T>(                                                      \
      const ad::Var<T> &, const std::function<ad::Var<T>(const ad::Var<T> &)> &,                 \
      const std::function<ad::Var<T>(const ad::Var<T> &)> &, const StcBlockParams<T> &);

STCNET_INSTANTIATE_STC(float)
STCNET_INSTANTIATE_STC(double)

#undef STCNET_INSTANTIATE_STC

} // namespace stcnet::stc
