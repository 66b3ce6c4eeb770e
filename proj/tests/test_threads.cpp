// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include "stcnet/oracle.hpp"
#include "stcnet/ops.hpp"
#include "test_util.hpp"

#include <cstdlib>

using namespace stcnet;

// STCNET_THREADS is read once, so this suite pins it before any op runs and
// checks that parallel execution stays bit-identical to the references.

int main(int argc, char **argv) {
  setenv("STCNET_THREADS", "4", 1);
  return doctest::Context(argc, argv).run();
}

TEST_CASE("worker count honors STCNET_THREADS") { CHECK(thread_count() == 4); }

TEST_CASE("parallel conv3d matches the reference and is deterministic") {
  ConvSpec spec;
  spec.in_channels = 4;
  spec.out_channels = 8;
  spec.groups = 2;
  spec.kernel = {3, 3, 3};
  spec.stride = {1, 1, 1};
  spec.padding = {1, 1, 1};
  auto x = testutil::rand64({6, 4, 3, 6, 6}, 1);
  auto w = testutil::rand64({8, 2, 3, 3, 3}, 2);
  auto b = testutil::rand64({8}, 3);

  auto fast = ops::conv3d(x, w, &b, spec);
  auto ref = oracle::conv3d_reference(x, w, &b, spec);
  auto r = oracle::compare(fast, ref, {1e-10, 0.0, oracle::Norm::Max});
  CHECK_MESSAGE(r.pass, r.describe());

  auto again = ops::conv3d(x, w, &b, spec);
  CHECK(std::memcmp(fast.data(), again.data(), sizeof(double) * fast.numel()) == 0);
}

TEST_CASE("parallel pooling and affine match their references") {
  PoolSpec pool{{3, 3, 3}, {1, 1, 1}, {1, 1, 1}};
  auto x = testutil::rand64({6, 3, 4, 6, 6}, 4);
  auto rmax = oracle::compare(ops::maxpool3d(x, pool), oracle::maxpool3d_reference(x, pool),
                              {1e-12, 0.0, oracle::Norm::Max});
  CHECK_MESSAGE(rmax.pass, rmax.describe());

  auto a = testutil::rand64({16, 24}, 5);
  auto w = testutil::rand64({10, 24}, 6);
  const Tensor64 *no_bias = nullptr;
  auto r = oracle::compare(ops::affine(a, w, no_bias), oracle::affine_reference(a, w, no_bias),
                           {1e-12, 0.0, oracle::Norm::Max});
  CHECK_MESSAGE(r.pass, r.describe());
}
