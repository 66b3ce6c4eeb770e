// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "stcnet/net_builder.hpp"
#include "test_util.hpp"

#include <cstring>

using namespace stcnet;
using nets::ArchConfig;
using nets::Family;
using testutil::rand_tensor;

namespace {

void check_row(const nets::ShapeRow &row, const char *name, int64_t c, int64_t h, int64_t w,
               int64_t t) {
  CHECK(row.layer == name);
  CHECK(row.channels == c);
  CHECK(row.h == h);
  CHECK(row.w == w);
  CHECK(row.t == t);
}

} // namespace

TEST_CASE("stc-resnet-101 reproduces the published stage output sizes") {
  auto cfg = nets::preset("stc-resnet-101");
  CHECK(cfg.blocks == std::array<int, 4>{3, 4, 23, 3});
  CHECK(cfg.stage_widths == std::array<int, 4>{256, 512, 1024, 2048});
  auto rows = nets::shape_check(cfg);
  REQUIRE(rows.size() == 7);
  check_row(rows[0], "conv1", 64, 56, 56, 8);
  check_row(rows[1], "pool1", 64, 56, 56, 8);
  check_row(rows[2], "res1", 256, 28, 28, 8);
  check_row(rows[3], "res2", 512, 14, 14, 4);
  check_row(rows[4], "res3", 1024, 7, 7, 2);
  check_row(rows[5], "res4", 2048, 4, 4, 1);
  check_row(rows[6], "classifier", 400, 1, 1, 1);
}

TEST_CASE("stc-resnext-101 carries cardinality 32 and the published widths") {
  auto cfg = nets::preset("stc-resnext-101");
  CHECK(cfg.cardinality == 32);
  CHECK(cfg.inner_widths == std::array<int, 4>{128, 256, 512, 512});
  CHECK(cfg.tcb_hidden == std::array<int, 4>{16, 32, 64, 128});
  auto rows = nets::shape_check(cfg);
  check_row(rows[5], "res4", 2048, 4, 4, 1);
}

TEST_CASE("input T=32 leaves temporal extent 2 before classification pooling") {
  auto cfg = nets::preset("stc-resnet-101");
  auto rows = nets::shape_check(cfg, {3, 32, 112, 112});
  CHECK(rows[5].t == 2);
}

TEST_CASE("shape_check names the stem when the input cannot fit it") {
  auto cfg = nets::preset("toy-stc-resnet");
  cfg.stem_padding = {0, 0, 0};
  cfg.input_dims = {1, 2, 2, 2}; // smaller than the 3x3x3 stem kernel
  CHECK_THROWS_WITH_AS(nets::shape_check(cfg), doctest::Contains("conv1"), ShapeError);
}

TEST_CASE("toy preset builds and forward-propagates a batch of 2 to logits (2,4)") {
  auto model = nets::Model::build(nets::preset("toy-stc-resnet"), 7);
  auto x = rand_tensor<float>({2, 1, 8, 16, 16}, 7, 0.0, 1.0);
  auto logits = model.forward(x, false);
  CHECK(logits->value.dims() == std::vector<int64_t>{2, 4});
}

TEST_CASE("toy resnext uses grouped 3x3x3 convolutions") {
  auto cfg = nets::preset("toy-stc-resnext");
  CHECK(cfg.cardinality == 4);
  auto model = nets::Model::build(cfg, 3);
  auto x = rand_tensor<float>({1, 1, 8, 16, 16}, 8, 0.0, 1.0);
  CHECK(model.forward(x, false)->value.dims() == std::vector<int64_t>{1, 4});
}

TEST_CASE("config violations name the offending field") {
  ArchConfig cfg;
  cfg.depth = 34;
  CHECK_THROWS_WITH_AS(cfg.resolve(), doctest::Contains("depth"), ConfigError);

  auto bad_card = nets::preset("stc-resnext-101");
  bad_card.cardinality = 7;
  CHECK_THROWS_WITH_AS(bad_card.resolve(), doctest::Contains("cardinality"), ConfigError);

  auto bad_classes = nets::preset("toy-stc-resnet");
  bad_classes.num_classes = 0;
  CHECK_THROWS_WITH_AS(bad_classes.resolve(), doctest::Contains("classes"), ConfigError);
}

TEST_CASE("param_count: stc and plain toy presets differ exactly by the STC formulas") {
  auto plain = nets::param_count(nets::preset("toy-resnet3d"));
  auto gated = nets::param_count(nets::preset("toy-stc-resnet"));
  CHECK(plain.stc_total == 0);
  CHECK(plain.backbone_total == gated.backbone_total);
  CHECK(gated.total() - plain.total() == gated.stc_total);
}

TEST_CASE("param_count matches the independent traversal recount on toy models") {
  for (const char *name : {"toy-resnet3d", "toy-stc-resnet", "toy-stc-resnext"}) {
    auto cfg = nets::preset(name);
    auto report = nets::param_count(cfg);
    auto model = nets::Model::build(cfg, 11);
    CHECK_MESSAGE(report.total() == nets::recount_parameters(model), name);
  }
}

TEST_CASE("build is deterministic: same (config, seed) gives bit-identical parameters") {
  auto a = nets::Model::build(nets::preset("toy-stc-resnet"), 42);
  auto b = nets::Model::build(nets::preset("toy-stc-resnet"), 42);
  auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(std::memcmp(pa[i].var->value.data(), pb[i].var->value.data(),
                      sizeof(float) * pa[i].var->value.numel()) == 0);
  }

  auto c = nets::Model::build(nets::preset("toy-stc-resnet"), 43);
  auto pc = c.parameters();
  bool any_diff = false;
  for (size_t i = 0; i < pa.size() && !any_diff; ++i)
    if (std::memcmp(pa[i].var->value.data(), pc[i].var->value.data(),
                    sizeof(float) * pa[i].var->value.numel()) != 0)
      any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("STC removability: gate bypass matches plain resnet3d with shared weights") {
  auto gated = nets::Model::build(nets::preset("toy-stc-resnet"), 5);
  auto plain = nets::Model::build(nets::preset("toy-resnet3d"), 6);

  // copy the gated model's backbone into the plain model by parameter name
  auto src = gated.parameters();
  auto dst = plain.parameters();
  for (auto &d : dst) {
    bool found = false;
    for (const auto &s : src)
      if (s.name == d.name) {
        d.var->value = s.var->value;
        found = true;
        break;
      }
    CHECK_MESSAGE(found, d.name);
  }

  gated.set_gate_bypass(true);
  auto x = rand_tensor<float>({2, 1, 8, 16, 16}, 12, 0.0, 1.0);
  auto yg = gated.forward(x, false);
  auto yp = plain.forward(x, false);
  CHECK(std::memcmp(yg->value.data(), yp->value.data(),
                    sizeof(float) * yg->value.numel()) == 0);

  gated.set_gate_bypass(false);
  auto yon = gated.forward(x, false);
  bool differs = std::memcmp(yon->value.data(), yp->value.data(),
                             sizeof(float) * yon->value.numel()) != 0;
  CHECK(differs);
}

TEST_CASE("parameter registry: unique dotted names, stc group separated") {
  auto model = nets::Model::build(nets::preset("toy-stc-resnet"), 1);
  auto params = model.parameters();
  std::vector<std::string> names;
  int64_t stc_count = 0;
  for (const auto &p : params) {
    names.push_back(p.name);
    if (p.group == "stc") stc_count += p.var->value.numel();
  }
  std::sort(names.begin(), names.end());
  CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());

  auto report = nets::param_count(model.config());
  CHECK(stc_count == report.stc_total);
}

TEST_CASE("gradients flow through a toy model training step") {
  auto model = nets::Model::build(nets::preset("toy-stc-resnet"), 21);
  auto x = rand_tensor<float>({4, 1, 8, 16, 16}, 22, 0.0, 1.0);
  auto loss = ad::softmax_cross_entropy(model.forward(x, true), {0, 1, 2, 3});
  ad::backward(loss);
  int without_grad = 0;
  for (const auto &p : model.parameters())
    if (p.var->grad.empty()) ++without_grad;
  CHECK(without_grad == 0);
  CHECK(std::isfinite(loss->value[0]));
}
