// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "stcnet/ops.hpp"
#include "stcnet/oracle.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace stcnet;
using testutil::rand64;

TEST_CASE("reference conv: identity 1x1x1 depthwise kernel reproduces the input") {
  ConvSpec spec;
  spec.in_channels = spec.out_channels = spec.groups = 3;
  spec.kernel = {1, 1, 1};
  auto x = rand64({1, 3, 2, 3, 3}, 60);
  auto w = Tensor64::ones({3, 1, 1, 1, 1});
  auto y = oracle::conv3d_reference(x, w, spec);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("reference conv: impulse response lays out the kernel reversed (cross-correlation)") {
  ConvSpec spec;
  spec.in_channels = spec.out_channels = 1;
  spec.kernel = {1, 1, 3};
  spec.padding = {0, 0, 1};
  Tensor64 x({1, 1, 1, 1, 5});
  x.at(0, 0, 0, 0, 2) = 1.0;
  Tensor64 w({1, 1, 1, 1, 3}, {1.0, 2.0, 3.0});
  auto y = oracle::conv3d_reference(x, w, spec);
  // out[p] = sum_k w[k] x[p-1+k]: the footprint shows up mirrored
  CHECK(y.at(0, 0, 0, 0, 0) == 0.0);
  CHECK(y.at(0, 0, 0, 0, 1) == 3.0);
  CHECK(y.at(0, 0, 0, 0, 2) == 2.0);
  CHECK(y.at(0, 0, 0, 0, 3) == 1.0);
  CHECK(y.at(0, 0, 0, 0, 4) == 0.0);
}

TEST_CASE("fast conv3d agrees with the reference across a random seed sweep") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    int groups = static_cast<int>(rng.uniform_int(0, 2));
    groups = groups == 0 ? 1 : (groups == 1 ? 2 : 4);
    int64_t cin = groups * rng.uniform_int(1, 2);
    int64_t cout = groups * rng.uniform_int(1, 2);
    ConvSpec spec;
    spec.in_channels = static_cast<int>(cin);
    spec.out_channels = static_cast<int>(cout);
    spec.groups = groups;
    for (int a = 0; a < 3; ++a) {
      spec.kernel[a] = static_cast<int>(rng.uniform_int(1, 3));
      spec.stride[a] = static_cast<int>(rng.uniform_int(1, 2));
      spec.padding[a] = static_cast<int>(rng.uniform_int(0, 1));
    }
    int64_t T = rng.uniform_int(spec.kernel[0], 6);
    int64_t H = rng.uniform_int(spec.kernel[1], 8);
    int64_t W = rng.uniform_int(spec.kernel[2], 8);
    auto x = rand64({rng.uniform_int(1, 2), cin, T, H, W}, seed * 31 + 1);
    auto w = rand64({cout, cin / groups, spec.kernel[0], spec.kernel[1], spec.kernel[2]},
                    seed * 31 + 2);
    auto b = rand64({cout}, seed * 31 + 3);
    auto r = oracle::compare(ops::conv3d(x, w, &b, spec),
                             oracle::conv3d_reference(x, w, &b, spec),
                             {1e-10, 0.0, oracle::Norm::Max});
    CHECK_MESSAGE(r.pass, r.describe());
  }
}

TEST_CASE("finite differences on a closed form: f = sum(x^2) at (1,2) -> (2,4)") {
  auto f = [](const Tensor64 &x) {
    double s = 0;
    for (int64_t i = 0; i < x.numel(); ++i) s += x[i] * x[i];
    return s;
  };
  Tensor64 x({2}, {1.0, 2.0});
  auto g = oracle::finite_diff_grad(f, x);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-8));
}

TEST_CASE("finite differences are exact to rounding for affine functions") {
  Tensor64 coef = rand64({6}, 61);
  auto f = [&](const Tensor64 &x) {
    double s = 3.7;
    for (int64_t i = 0; i < x.numel(); ++i) s += coef[i] * x[i];
    return s;
  };
  auto x = rand64({6}, 62);
  for (double h : {1e-3, 1e-5, 1e-7}) {
    auto g = oracle::finite_diff_grad(f, x, h);
    for (int64_t i = 0; i < 6; ++i) CHECK(g[i] == doctest::Approx(coef[i]).epsilon(1e-7));
  }
}

TEST_CASE("finite-difference error shrinks ~4x when h halves (O(h^2) self-test)") {
  auto f = [](const Tensor64 &x) {
    double s = 0;
    for (int64_t i = 0; i < x.numel(); ++i) s += x[i] * x[i] * x[i];
    return s;
  };
  Tensor64 x({1}, {1.3});
  double exact = 3.0 * 1.3 * 1.3;
  double h = 1e-2;
  double e1 = std::abs(oracle::finite_diff_grad(f, x, h)[0] - exact);
  double e2 = std::abs(oracle::finite_diff_grad(f, x, h / 2)[0] - exact);
  double ratio = e1 / e2;
  CHECK(ratio > 3.0);
  CHECK(ratio < 5.0);
}

TEST_CASE("finite differences surface non-finite evaluations as numeric errors") {
  auto f = [](const Tensor64 &x) { return std::log(x[0]); };
  Tensor64 x({1}, {1e-7});
  CHECK_THROWS_AS(oracle::finite_diff_grad(f, x, 1e-5), NumericError);
}

TEST_CASE("compare: identical tensors pass with worst error 0") {
  auto a = rand64({3, 3}, 63);
  auto r = oracle::compare(a, a, {1e-12, 0.0, oracle::Norm::Max});
  CHECK(r.pass);
  CHECK(r.abs_err == 0.0);
}

TEST_CASE("compare: single element past tolerance fails and is indexed") {
  auto a = rand64({4, 4}, 64);
  auto b = a;
  b[7] += 2e-6;
  auto r = oracle::compare(a, b, {1e-6, 0.0, oracle::Norm::Max});
  CHECK_FALSE(r.pass);
  CHECK(r.worst_index == 7);
}

TEST_CASE("compare: planted fault at a known index is reported (seed 6)") {
  auto a = rand64({5, 5}, 6);
  auto b = a;
  Rng rng(6);
  int64_t where = rng.uniform_int(0, a.numel() - 1);
  b[where] += 0.5;
  auto r = oracle::compare(a, b, {1e-9, 1e-9, oracle::Norm::Max});
  CHECK_FALSE(r.pass);
  CHECK(r.worst_index == where);
}

TEST_CASE("compare: dim mismatch is a shape error, zero tolerance rejected") {
  Tensor64 a({2, 2});
  Tensor64 b({2, 3});
  CHECK_THROWS_AS(oracle::compare(a, b, {1e-9, 0.0, oracle::Norm::Max}), ShapeError);
  CHECK_THROWS_AS(oracle::compare(a, a, {0.0, 0.0, oracle::Norm::Max}), ConfigError);
}

TEST_CASE("compare honors the l2 norm option") {
  Tensor64 a({4}, {1.0, 1.0, 1.0, 1.0});
  Tensor64 b({4}, {1.001, 1.001, 1.001, 1.001});
  // each |a-b| = 1e-3, l2 = 2e-3
  auto pass = oracle::compare(a, b, {3e-3, 0.0, oracle::Norm::L2});
  CHECK(pass.pass);
  auto fail = oracle::compare(a, b, {1e-3, 0.0, oracle::Norm::L2});
  CHECK_FALSE(fail.pass);
}
