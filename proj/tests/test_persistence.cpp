// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "stcnet/checkpoint.hpp"
#include "stcnet/run_config.hpp"
#include "test_util.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

using namespace stcnet;
namespace fs = std::filesystem;

namespace {

synth::Dataset tiny_dataset(uint64_t seed = 2) {
  synth::SynthSpec spec;
  spec.samples_per_class = 8;
  spec.seed = seed;
  return synth::generate(spec);
}

} // namespace

// ------------------------------- run config ----------------------------------

TEST_CASE("empty config keeps defaults and the echo lists every key explicitly") {
  io::RunConfig cfg;
  io::parse_config_text(cfg, "", "empty");
  auto echo = cfg.echo();
  CHECK(echo.find("[arch]") != std::string::npos);
  CHECK(echo.find("[optim]") != std::string::npos);
  CHECK(echo.find("[data]") != std::string::npos);
  CHECK(echo.find("[transfer]") != std::string::npos);
  CHECK(echo.find("[ablation]") != std::string::npos);
  CHECK(echo.find("momentum = 0.9") != std::string::npos);
  CHECK(echo.find("weight-decay = 0.0001") != std::string::npos);
  CHECK(echo.find("lr = 0.1") != std::string::npos);
  CHECK(echo.find("r = 4") != std::string::npos);
}

TEST_CASE("the echo is itself a parseable config with the same digest") {
  io::RunConfig cfg;
  cfg.apply("optim.lr", "0.025");
  cfg.apply("arch.branch-mode", "TCB");
  cfg.apply("data.samples-per-class", "32");

  io::RunConfig reparsed;
  io::parse_config_text(reparsed, cfg.echo(), "echo");
  CHECK(reparsed.echo() == cfg.echo());
  CHECK(reparsed.digest() == cfg.digest());
}

TEST_CASE("ini parsing: sections, comments and momentum example") {
  io::RunConfig cfg;
  io::parse_config_text(cfg,
                        "# comment line\n"
                        "[optim]\n"
                        "momentum = 0.9   # trailing comment\n"
                        "lr = 0.05\n"
                        "\n"
                        "[data]\n"
                        "samples-per-class = 64\n",
                        "inline");
  CHECK(cfg.optim.momentum == 0.9);
  CHECK(cfg.optim.lr == 0.05);
  CHECK(cfg.data.samples_per_class == 64);
}

TEST_CASE("flag overrides take precedence over file values") {
  io::RunConfig cfg;
  io::parse_config_text(cfg, "[optim]\nlr = 0.1\n", "inline");
  cfg.apply("optim.lr", "0.01"); // flags apply after the file
  CHECK(cfg.optim.lr == 0.01);
  CHECK(cfg.echo().find("lr = 0.01") != std::string::npos);
}

TEST_CASE("unknown keys name the key and section; type mismatches name the key") {
  io::RunConfig cfg;
  CHECK_THROWS_WITH_AS(cfg.apply("optim.learning-rate", "0.1"),
                       doctest::Contains("unknown key 'learning-rate' in section [optim]"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(cfg.apply("nosuch.lr", "0.1"), doctest::Contains("unknown section"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(cfg.apply("optim.lr", "fast"), doctest::Contains("optim.lr"),
                       ConfigError);
  CHECK_THROWS_AS(io::parse_config_text(cfg, "lr = 0.1\n", "inline"), ConfigError);
}

TEST_CASE("arch preset expands and later keys override its fields") {
  io::RunConfig cfg;
  io::parse_config_text(cfg,
                        "[arch]\n"
                        "preset = toy-stc-resnet\n"
                        "branch-mode = SCB\n",
                        "inline");
  CHECK(cfg.arch.stage_widths == std::array<int, 4>{8, 16, 32, 64});
  CHECK(cfg.arch.branch_mode == stc::BranchMode::SCB);
}

// ------------------------------- checkpoints ---------------------------------

TEST_CASE("checkpoint round trip restores bit-identical logits") {
  auto dataset = tiny_dataset();
  auto arch = nets::preset("toy-stc-resnet");
  auto model = nets::Model::build(arch, 41);

  // move the weights off their init so the test is not vacuous
  train::OptimConfig cfg;
  cfg.max_epochs = 1;
  cfg.seed = 41;
  train::SgdOptimizer opt(model.parameters(), cfg);
  train::train_model(model, opt, dataset, cfg);

  auto cp = io::snapshot_training(model, &opt, nullptr, 1234);
  std::string path = "/tmp/stcnet_ckpt_roundtrip.stcn";
  io::save_checkpoint(cp, path);
  auto loaded = io::load_checkpoint(path, 1234);

  auto fresh = nets::Model::build(arch, 999); // different init, fully overwritten
  train::SgdOptimizer fresh_opt(fresh.parameters(), cfg);
  io::restore_training(loaded, fresh, &fresh_opt, nullptr);

  auto x = testutil::rand_tensor<float>({2, 1, 8, 16, 16}, 7, 0.0, 1.0);
  auto ya = model.forward(x, false);
  auto yb = fresh.forward(x, false);
  CHECK(std::memcmp(ya->value.data(), yb->value.data(), sizeof(float) * ya->value.numel()) == 0);
}

TEST_CASE("resumed training matches the uninterrupted loss trace") {
  auto dataset = tiny_dataset(3);
  auto arch = nets::preset("toy-stc-resnet");
  train::OptimConfig cfg;
  cfg.seed = 11;
  cfg.max_epochs = 4;

  // uninterrupted 4 epochs
  auto full_model = nets::Model::build(arch, cfg.seed);
  train::SgdOptimizer full_opt(full_model.parameters(), cfg);
  train::TrainState full_state;
  auto full = train::train_model(full_model, full_opt, dataset, cfg, {}, &full_state);

  // 2 epochs, checkpoint, restore into fresh objects, 2 more
  auto m1 = nets::Model::build(arch, cfg.seed);
  train::SgdOptimizer o1(m1.parameters(), cfg);
  train::TrainState s1;
  auto cfg_half = cfg;
  cfg_half.max_epochs = 2;
  auto first = train::train_model(m1, o1, dataset, cfg_half, {}, &s1);
  io::save_checkpoint(io::snapshot_training(m1, &o1, &s1, 77), "/tmp/stcnet_ckpt_resume.stcn");

  auto m2 = nets::Model::build(arch, 12345);
  train::SgdOptimizer o2(m2.parameters(), cfg);
  train::TrainState s2;
  auto loaded = io::load_checkpoint("/tmp/stcnet_ckpt_resume.stcn", 77);
  io::restore_training(loaded, m2, &o2, &s2);
  CHECK(s2.next_epoch == 2);
  auto rest = train::train_model(m2, o2, dataset, cfg, {}, &s2);

  REQUIRE(full.epochs.size() == 4);
  REQUIRE(first.epochs.size() == 2);
  REQUIRE(rest.epochs.size() == 2);
  CHECK(first.epochs[0].train_loss == full.epochs[0].train_loss);
  CHECK(first.epochs[1].train_loss == full.epochs[1].train_loss);
  CHECK(rest.epochs[0].train_loss == full.epochs[2].train_loss);
  CHECK(rest.epochs[1].train_loss == full.epochs[3].train_loss);
  CHECK(rest.epochs[1].val_acc == full.epochs[3].val_acc);
}

TEST_CASE("strict digest mismatch is refused as a compatibility error") {
  auto arch = nets::preset("toy-stc-resnet");
  auto model = nets::Model::build(arch, 1);
  auto cp = io::snapshot_training(model, nullptr, nullptr, 1000);
  std::string path = "/tmp/stcnet_ckpt_digest.stcn";
  io::save_checkpoint(cp, path);
  CHECK_NOTHROW(io::load_checkpoint(path, 1000));
  CHECK_THROWS_AS(io::load_checkpoint(path, 2000), CompatError);
  CHECK_NOTHROW(io::load_checkpoint(path)); // non-strict
}

TEST_CASE("truncated checkpoints report the byte offset as a format error") {
  auto arch = nets::preset("toy-stc-resnet");
  auto model = nets::Model::build(arch, 1);
  auto cp = io::snapshot_training(model, nullptr, nullptr, 1);
  std::string path = "/tmp/stcnet_ckpt_trunc.stcn";
  io::save_checkpoint(cp, path);
  auto full_size = fs::file_size(path);
  fs::resize_file(path, full_size - 64);
  CHECK_THROWS_WITH_AS(io::load_checkpoint(path), doctest::Contains("byte offset"), FormatError);

  fs::resize_file(path, 10);
  CHECK_THROWS_AS(io::load_checkpoint(path), FormatError);
}

TEST_CASE("corrupted magic is a format error") {
  auto arch = nets::preset("toy-stc-resnet");
  auto model = nets::Model::build(arch, 1);
  io::save_checkpoint(io::snapshot_training(model, nullptr, nullptr, 1),
                      "/tmp/stcnet_ckpt_magic.stcn");
  {
    std::fstream f("/tmp/stcnet_ckpt_magic.stcn", std::ios::in | std::ios::out | std::ios::binary);
    f.write("ZZZZ", 4);
  }
  CHECK_THROWS_WITH_AS(io::load_checkpoint("/tmp/stcnet_ckpt_magic.stcn"),
                       doctest::Contains("magic"), FormatError);
}

TEST_CASE("mismatched parameter sets are compatibility errors") {
  auto model_a = nets::Model::build(nets::preset("toy-stc-resnet"), 1);
  auto model_b = nets::Model::build(nets::preset("toy-resnet3d"), 1);
  auto cp = io::snapshot_training(model_b, nullptr, nullptr, 5);
  CHECK_THROWS_AS(io::restore_training(cp, model_a, nullptr, nullptr), CompatError);
}

TEST_CASE("checkpoint preserves dtypes and dims exactly, including float64 state") {
  io::Checkpoint cp;
  cp.config_digest = 9;
  cp.rng_state = {1, 2, 3, 4};
  auto t32 = testutil::rand_tensor<float>({3, 4}, 60);
  auto t64 = testutil::rand64({2, 2, 2}, 61);
  cp.add("g", "a32", io::AnyTensor::from(t32));
  cp.add("g", "b64", io::AnyTensor::from(t64));
  io::save_checkpoint(cp, "/tmp/stcnet_ckpt_dtypes.stcn");
  auto loaded = io::load_checkpoint("/tmp/stcnet_ckpt_dtypes.stcn");
  CHECK(loaded.rng_state == std::array<uint64_t, 4>{1, 2, 3, 4});

  auto a = loaded.find("g", "a32");
  REQUIRE(a != nullptr);
  CHECK(a->dtype == DType::Float32);
  auto a32 = a->to32();
  CHECK(std::memcmp(a32.data(), t32.data(), sizeof(float) * t32.numel()) == 0);
  CHECK_THROWS_AS(a->to64(), CompatError);

  auto b = loaded.find("g", "b64");
  REQUIRE(b != nullptr);
  auto b64 = b->to64();
  CHECK(std::memcmp(b64.data(), t64.data(), sizeof(double) * t64.numel()) == 0);
}

TEST_CASE("save is atomic: no temp file survives and the target is complete") {
  auto model = nets::Model::build(nets::preset("toy-stc-resnet"), 1);
  std::string path = "/tmp/stcnet_ckpt_atomic.stcn";
  io::save_checkpoint(io::snapshot_training(model, nullptr, nullptr, 1), path);
  CHECK(fs::exists(path));
  CHECK_FALSE(fs::exists(path + ".tmp"));
  CHECK_NOTHROW(io::load_checkpoint(path));
}
