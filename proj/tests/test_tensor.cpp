// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "stcnet/tensor.hpp"

using namespace stcnet;

TEST_CASE("tensor dims invariant: product(dims) == length(data)") {
  Tensor32 t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.rank() == 3);
  CHECK_THROWS_AS(Tensor32({2, 3}, std::vector<float>(5)), ShapeError);
}

TEST_CASE("tensor rejects invalid extents and ranks") {
  CHECK_THROWS_AS(Tensor32({0, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor32({-1}), ShapeError);
  CHECK_THROWS_AS(Tensor32({2, 2, 2, 2, 2, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor32(std::vector<int64_t>{}), ShapeError);
}

TEST_CASE("indexing is row major over (N,C,T,H,W)") {
  Tensor32 t({2, 3, 4, 5, 6});
  CHECK(t.idx5(0, 0, 0, 0, 0) == 0);
  CHECK(t.idx5(0, 0, 0, 0, 1) == 1);
  CHECK(t.idx5(0, 0, 0, 1, 0) == 6);
  CHECK(t.idx5(1, 2, 3, 4, 5) == t.numel() - 1);
}

TEST_CASE("conv spec validates group divisibility") {
  ConvSpec spec;
  spec.in_channels = 6;
  spec.out_channels = 4;
  spec.groups = 4;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.groups = 2;
  CHECK_NOTHROW(spec.validate());
}

TEST_CASE("output extent formula: out = floor((in + 2p - k)/stride) + 1") {
  ConvSpec spec;
  spec.in_channels = spec.out_channels = 1;
  spec.kernel = {7, 7, 7};
  spec.stride = {2, 2, 2};
  spec.padding = {3, 3, 3};
  auto ext = spec.out_extents(16, 112, 112);
  CHECK(ext[0] == 8);
  CHECK(ext[1] == 56);
  CHECK(ext[2] == 56);

  spec.kernel = {9, 9, 9};
  spec.padding = {0, 0, 0};
  CHECK_THROWS_AS(spec.out_extents(4, 4, 4), ShapeError);
}

TEST_CASE("rng is deterministic and state round-trips") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  auto snap = a.state();
  double x1 = a.uniform(), x2 = a.normal();
  a.set_state(snap);
  CHECK(a.uniform() == x1);
  CHECK(a.normal() == x2);
}

TEST_CASE("rng streams derived by mix are decorrelated from the base seed") {
  Rng a(Rng::mix(7, 0)), b(Rng::mix(7, 1));
  int same = 0;
  for (int i = 0; i < 64; ++i)
    if (a.next_u64() == b.next_u64()) ++same;
  CHECK(same == 0);
}

TEST_CASE("fan-in uniform init stays within the documented bound") {
  Rng rng(3);
  Tensor64 w({64, 32});
  fill_fan_in_uniform(w, 32, rng);
  double bound = std::sqrt(6.0 / 32.0);
  for (int64_t i = 0; i < w.numel(); ++i) {
    CHECK(w[i] <= bound);
    CHECK(w[i] >= -bound);
  }
}
