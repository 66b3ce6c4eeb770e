// SPDX-License-Identifier: Apache-2.0
#include "stcnet/gradcheck.hpp"

#include "stcnet/oracle.hpp"
#include "stcnet/stc_block.hpp"

namespace stcnet::gradcheck {

namespace {

Tensor64 rand64(std::vector<int64_t> dims, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor64 t(std::move(dims));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

Tensor64 rand64_nonkink(std::vector<int64_t> dims, uint64_t seed) {
  auto t = rand64(std::move(dims), seed);
  for (int64_t i = 0; i < t.numel(); ++i) {
    if (t[i] >= 0 && t[i] < 0.01) t[i] += 0.01;
    if (t[i] < 0 && t[i] > -0.01) t[i] -= 0.01;
  }
  return t;
}

using Builder = std::function<ad::Var<double>(std::vector<ad::Var<double>> &)>;

double run_check(const Builder &build, std::vector<Tensor64> inputs) {
  auto make_leaves = [](const std::vector<Tensor64> &ts) {
    std::vector<ad::Var<double>> leaves;
    for (const auto &t : ts) leaves.push_back(ad::leaf(t, true));
    return leaves;
  };
  auto leaves = make_leaves(inputs);
  auto root = build(leaves);
  ad::backward(root);

  double worst = 0.0;
  for (size_t j = 0; j < inputs.size(); ++j) {
    auto f = [&](const Tensor64 &x) {
      auto probe = inputs;
      probe[j] = x;
      auto ls = make_leaves(probe);
      return build(ls)->value[0];
    };
    auto fd = oracle::finite_diff_grad(f, inputs[j]);
    worst = std::max(worst, oracle::max_rel_err(leaves[j]->grad, fd));
  }
  return worst;
}

ad::Var<double> project(const ad::Var<double> &y, uint64_t seed) {
  return ad::sum_all(ad::mul(y, ad::constant(rand64(y->value.dims(), seed))));
}

OpReport report(std::string name, double err) {
  return {std::move(name), err, err < kRelTol};
}

} // namespace

std::vector<OpReport> check_ops(uint64_t seed) {
  std::vector<OpReport> out;
  uint64_t s = seed * 1000;

  {
    ConvSpec spec;
    spec.in_channels = 4;
    spec.out_channels = 4;
    spec.groups = 2;
    spec.kernel = {3, 3, 3};
    spec.stride = {1, 2, 2};
    spec.padding = {1, 1, 1};
    out.push_back(report(
        "conv3d", run_check(
                      [&](std::vector<ad::Var<double>> &in) {
                        return project(ad::conv3d(in[0], in[1], in[2], spec), s + 1);
                      },
                      {rand64({2, 4, 3, 5, 5}, s + 2), rand64({4, 2, 3, 3, 3}, s + 3),
                       rand64({4}, s + 4)})));
  }
  {
    PoolSpec spec{{2, 2, 2}, {1, 2, 2}, {0, 0, 0}};
    out.push_back(report(
        "maxpool3d",
        run_check([&](std::vector<ad::Var<double>> &in) {
                    return project(ad::maxpool3d(in[0], spec), s + 5);
                  },
                  {rand64({1, 2, 3, 5, 5}, s + 6)})));
  }
  {
    PoolSpec spec{{3, 3, 3}, {1, 1, 1}, {1, 1, 1}};
    out.push_back(report(
        "avgpool3d",
        run_check([&](std::vector<ad::Var<double>> &in) {
                    return project(ad::avgpool3d(in[0], spec), s + 7);
                  },
                  {rand64({1, 2, 3, 4, 4}, s + 8)})));
  }
  out.push_back(report(
      "affine", run_check(
                    [&](std::vector<ad::Var<double>> &in) {
                      return project(ad::affine(in[0], in[1], in[2]), s + 9);
                    },
                    {rand64({3, 4}, s + 10), rand64({5, 4}, s + 11), rand64({5}, s + 12)})));
  out.push_back(report("relu", run_check(
                                   [&](std::vector<ad::Var<double>> &in) {
                                     return project(ad::relu(in[0]), s + 13);
                                   },
                                   {rand64_nonkink({4, 6}, s + 14)})));
  out.push_back(report("sigmoid", run_check(
                                      [&](std::vector<ad::Var<double>> &in) {
                                        return project(ad::sigmoid(in[0]), s + 15);
                                      },
                                      {rand64({4, 6}, s + 16)})));
  out.push_back(report(
      "batchnorm",
      run_check(
          [&](std::vector<ad::Var<double>> &in) {
            return project(ad::batchnorm(in[0], in[1], in[2], static_cast<Tensor64 *>(nullptr),
                                         static_cast<Tensor64 *>(nullptr), true, 1e-5, 0.1),
                           s + 17);
          },
          {rand64({3, 2, 2, 3, 3}, s + 18), rand64({2}, s + 19, 0.5, 1.5),
           rand64({2}, s + 20)})));
  out.push_back(report(
      "softmax_cross_entropy",
      run_check(
          [&](std::vector<ad::Var<double>> &in) {
            return ad::softmax_cross_entropy(in[0], {2, 0, 1});
          },
          {rand64({3, 4}, s + 21, -2.0, 2.0)})));
  out.push_back(report(
      "scale_channels",
      run_check(
          [&](std::vector<ad::Var<double>> &in) {
            return project(ad::scale_channels(in[0], in[1]), s + 22);
          },
          {rand64({2, 3, 2, 3, 3}, s + 23), rand64({2, 3}, s + 24, 0.1, 0.9)})));
  out.push_back(report("mean_over_thw",
                       run_check(
                           [&](std::vector<ad::Var<double>> &in) {
                             return project(ad::mean_over_thw(in[0]), s + 25);
                           },
                           {rand64({2, 3, 2, 3, 3}, s + 26)})));
  out.push_back(report("mean_over_hw",
                       run_check(
                           [&](std::vector<ad::Var<double>> &in) {
                             return project(ad::mean_over_hw_tmajor(in[0]), s + 27);
                           },
                           {rand64({2, 3, 2, 3, 3}, s + 28)})));
  out.push_back(report(
      "concat_cols", run_check(
                         [&](std::vector<ad::Var<double>> &in) {
                           return project(ad::concat_cols(in[0], in[1]), s + 29);
                         },
                         {rand64({2, 4}, s + 30), rand64({2, 6}, s + 31)})));
  return out;
}

OpReport check_stc_block(uint64_t seed) {
  stc::StcBlockSpec spec;
  spec.channels = 8;
  spec.temporal = 4;
  spec.reduction = 4;
  Rng rng(seed);
  auto proto = stc::make_stc_params<double>(spec, rng);
  auto proj = rand64({2, 8, 4, 5, 5}, seed * 7 + 3);

  std::vector<Tensor64> inputs;
  inputs.push_back(rand64({2, 8, 4, 5, 5}, seed * 7 + 1));
  for (auto &v : proto.parameters()) inputs.push_back(v->value);

  auto build = [&](std::vector<ad::Var<double>> &in) {
    stc::StcBlockParams<double> p;
    p.spec = spec;
    size_t i = 1;
    p.tcb_w1 = in[i++];
    p.tcb_b1 = in[i++];
    p.tcb_w2 = in[i++];
    p.tcb_b2 = in[i++];
    p.scb_w1 = in[i++];
    p.scb_b1 = in[i++];
    p.scb_w2 = in[i++];
    p.scb_b2 = in[i++];
    return ad::sum_all(ad::mul(stc::stc_forward(in[0], p), ad::constant(proj)));
  };
  return report("stc-block(2,8,4,5,5)", run_check(build, inputs));
}

} // namespace stcnet::gradcheck
