// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "stcnet/transfer.hpp"
#include "test_util.hpp"

#include <cmath>
#include <set>

using namespace stcnet;
using testutil::rand_tensor;

namespace {

synth::Dataset toy_dataset(uint64_t seed = 0, int per_class = 8) {
  synth::SynthSpec spec;
  spec.seed = seed;
  spec.samples_per_class = per_class;
  return synth::generate(spec);
}

nets::ArchConfig student_arch(int feature_dim) {
  auto cfg = nets::preset("toy-stc-resnet");
  cfg.feature_dim = feature_dim;
  return cfg;
}

} // namespace

TEST_CASE("make_pairs: neg-ratio 1.0 gives an exact 50/50 label balance") {
  auto ds = toy_dataset(1);
  auto pairs = transfer::make_pairs(ds.train, 100, 4, 1.0, 3);
  REQUIRE(pairs.size() == 200);
  int positives = 0;
  for (const auto &p : pairs) positives += p.match ? 1 : 0;
  CHECK(positives == 100);
}

TEST_CASE("make_pairs: positives share video ids, negatives never do") {
  auto ds = toy_dataset(2);
  auto pairs = transfer::make_pairs(ds.train, 500, 4, 1.0, 4);
  for (const auto &p : pairs) {
    if (p.match) {
      CHECK(p.frame_video_id == p.clip_video_id);
      CHECK(p.frame_source == p.clip_source);
    } else {
      CHECK(p.frame_video_id != p.clip_video_id);
    }
    for (int64_t idx : p.frame_indices) {
      CHECK(idx >= 0);
      CHECK(idx < ds.train[p.frame_source].data.dim(1));
    }
  }
}

TEST_CASE("make_pairs: single-video dataset with negatives is a data error") {
  auto ds = toy_dataset(3);
  std::vector<synth::VideoClip> one{ds.train.front()};
  CHECK_THROWS_AS(transfer::make_pairs(one, 10, 4, 1.0, 0), DataError);
  CHECK_NOTHROW(transfer::make_pairs(one, 10, 4, 0.0, 0));
}

TEST_CASE("make_pairs: frozen golden list of the first 10 pair identities (seed 5)") {
  auto ds = toy_dataset(0, 8);
  auto pairs = transfer::make_pairs(ds.train, 10, 4, 1.0, 5);
  struct Golden {
    uint64_t frame_vid, clip_vid;
    bool match;
  };
  const Golden golden[10] = {{22, 22, true}, {19, 30, false}, {0, 23, false}, {3, 3, true},
                             {17, 17, true}, {30, 6, false},  {19, 7, false}, {28, 28, true},
                             {30, 25, false}, {12, 12, true}};
  REQUIRE(pairs.size() >= 10);
  for (size_t i = 0; i < 10; ++i) {
    CHECK(pairs[i].frame_video_id == golden[i].frame_vid);
    CHECK(pairs[i].clip_video_id == golden[i].clip_vid);
    CHECK(pairs[i].match == golden[i].match);
  }
}

TEST_CASE("teacher_forward: X=1 equals the single-frame feature") {
  auto teacher = transfer::Teacher2d::build(1, 16, 16, 8, 4, 7);
  auto frame = rand_tensor<float>({1, 1, 16, 16}, 20, 0.0, 1.0);
  auto one = teacher.forward_features(frame);
  CHECK(one.dims() == std::vector<int64_t>{1, 8});

  // duplicated frame repeated X times keeps the mean at the same feature
  Tensor32 repeated({4, 1, 16, 16});
  for (int64_t x = 0; x < 4; ++x)
    std::copy_n(frame.data(), frame.numel(), repeated.data() + x * frame.numel());
  auto mean = teacher.forward_features(repeated);
  for (int64_t d = 0; d < 8; ++d)
    CHECK(mean.at(0, d) == doctest::Approx(one.at(0, d)).epsilon(1e-6));
}

TEST_CASE("teacher_forward: 3 random frames equal the mean of 3 single forwards (seed 2)") {
  auto teacher = transfer::Teacher2d::build(1, 16, 16, 8, 4, 2);
  auto frames = rand_tensor<float>({3, 1, 16, 16}, 2, 0.0, 1.0);
  auto joint = teacher.forward_features(frames);

  Tensor64 acc({8});
  for (int64_t x = 0; x < 3; ++x) {
    Tensor32 single({1, 1, 16, 16});
    std::copy_n(frames.data() + x * 256, 256, single.data());
    auto f = teacher.forward_features(single);
    for (int64_t d = 0; d < 8; ++d) acc[d] += static_cast<double>(f.at(0, d));
  }
  for (int64_t d = 0; d < 8; ++d)
    CHECK(joint.at(0, d) == doctest::Approx(acc[d] / 3.0).epsilon(1e-5));
}

TEST_CASE("teacher freeze contract") {
  auto teacher = transfer::Teacher2d::build(1, 16, 16, 8, 4, 9);
  CHECK_NOTHROW(teacher.parameters());
  teacher.freeze();
  CHECK_THROWS_AS(teacher.parameters(), FreezeError);

  auto ds = toy_dataset(4, 4);
  CHECK_THROWS_AS(transfer::pretrain_teacher(teacher, ds, 1, 0.1, 0), FreezeError);
}

TEST_CASE("transfer_step requires a frozen teacher and keeps its bytes intact") {
  auto ds = toy_dataset(5, 8);
  auto head_spec = transfer::MatchingHeadSpec::scaled(16);
  auto teacher = transfer::Teacher2d::build(1, 16, 16, head_spec.teacher_dim, 4, 11);
  auto student = nets::Model::build(student_arch(head_spec.student_dim), 12);
  auto head = transfer::MatchingHead::build(head_spec, 13);

  auto params = student.parameters();
  auto hp = head.parameters();
  params.insert(params.end(), hp.begin(), hp.end());
  train::OptimConfig opt;
  train::SgdOptimizer optimizer(std::move(params), opt);

  auto pairs = transfer::make_pairs(ds.train, 4, 4, 1.0, 14);
  CHECK_THROWS_AS(
      transfer::transfer_step(pairs, ds.train, teacher, student, head, optimizer, 0.01),
      FreezeError);

  teacher.freeze();
  auto before = teacher.checksum();
  for (int step = 0; step < 20; ++step) {
    auto batch = transfer::make_pairs(ds.train, 4, 4, 1.0, 100 + static_cast<uint64_t>(step));
    transfer::transfer_step(batch, ds.train, teacher, student, head, optimizer, 0.01);
  }
  CHECK(teacher.checksum() == before);
}

TEST_CASE("balanced random batch opens at chance-level loss ln 2") {
  auto ds = toy_dataset(6, 8);
  auto head_spec = transfer::MatchingHeadSpec::scaled(16);
  auto teacher = transfer::Teacher2d::build(1, 16, 16, head_spec.teacher_dim, 4, 15);
  teacher.freeze();
  auto student = nets::Model::build(student_arch(head_spec.student_dim), 16);
  auto head = transfer::MatchingHead::build(head_spec, 17);

  auto params = student.parameters();
  auto hp = head.parameters();
  params.insert(params.end(), hp.begin(), hp.end());
  train::OptimConfig opt;
  train::SgdOptimizer optimizer(std::move(params), opt);

  auto batch = transfer::make_pairs(ds.train, 8, 4, 1.0, 18);
  float loss = transfer::transfer_step(batch, ds.train, teacher, student, head, optimizer, 0.0);
  CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(0.1));
}

TEST_CASE("label symmetry: swapping labels and classifier rows preserves the loss") {
  auto z = rand_tensor<float>({6, 4}, 30);
  auto w = rand_tensor<float>({2, 4}, 31);
  auto b = rand_tensor<float>({2}, 32);
  std::vector<int64_t> labels{0, 1, 1, 0, 1, 0};

  auto logits = ops::affine(z, w, &b);
  float loss = ops::softmax_cross_entropy(logits, labels);

  Tensor32 w_swapped({2, 4});
  Tensor32 b_swapped({2});
  for (int64_t k = 0; k < 4; ++k) {
    w_swapped.at(0, k) = w.at(1, k);
    w_swapped.at(1, k) = w.at(0, k);
  }
  b_swapped[0] = b[1];
  b_swapped[1] = b[0];
  std::vector<int64_t> flipped;
  for (auto l : labels) flipped.push_back(1 - l);
  float loss_swapped =
      ops::softmax_cross_entropy(ops::affine(z, w_swapped, &b_swapped), flipped);
  CHECK(loss == doctest::Approx(loss_swapped).epsilon(1e-6));
}

TEST_CASE("gradients reach every student feature-path parameter within 10 steps") {
  auto ds = toy_dataset(7, 8);
  auto head_spec = transfer::MatchingHeadSpec::scaled(16);
  auto teacher = transfer::Teacher2d::build(1, 16, 16, head_spec.teacher_dim, 4, 21);
  teacher.freeze();
  auto student = nets::Model::build(student_arch(head_spec.student_dim), 22);
  auto head = transfer::MatchingHead::build(head_spec, 23);

  auto student_params = student.parameters();
  auto params = student_params;
  auto hp = head.parameters();
  params.insert(params.end(), hp.begin(), hp.end());
  train::OptimConfig opt;
  train::SgdOptimizer optimizer(std::move(params), opt);

  std::set<std::string> touched;
  for (int step = 0; step < 10; ++step) {
    auto batch = transfer::make_pairs(ds.train, 8, 4, 1.0, 200 + static_cast<uint64_t>(step));
    auto data_before = teacher.checksum();
    transfer::transfer_step(batch, ds.train, teacher, student, head, optimizer, 0.01);
    CHECK(teacher.checksum() == data_before);
    for (const auto &p : student_params) {
      if (p.var->grad.empty()) continue;
      for (int64_t i = 0; i < p.var->grad.numel(); ++i)
        if (p.var->grad[i] != 0.0f) {
          touched.insert(p.name);
          break;
        }
    }
  }
  // the classifier sits behind the feature tap and is not part of transfer
  for (const auto &p : student_params) {
    if (p.name.rfind("classifier.", 0) == 0) continue;
    CHECK_MESSAGE(touched.count(p.name) == 1, p.name);
  }
}

TEST_CASE("matching head widths follow the published sizes and the toy scaling") {
  transfer::MatchingHeadSpec full;
  CHECK(full.teacher_dim == 1024);
  CHECK(full.student_dim == 1024);
  CHECK(full.fc_a == 2048);
  CHECK(full.fc_b == 512);
  CHECK(full.fc_c == 128);

  auto toy = transfer::MatchingHeadSpec::scaled(16);
  CHECK(toy.teacher_dim == 64);
  CHECK(toy.fc_a == 128);
  CHECK(toy.fc_b == 32);
  CHECK(toy.fc_c == 8);

  auto head = transfer::MatchingHead::build(toy, 3);
  auto t = ad::constant(rand_tensor<float>({2, 64}, 40));
  auto s = ad::constant(rand_tensor<float>({2, 64}, 41));
  CHECK(head.forward(t, s)->value.dims() == std::vector<int64_t>{2, 2});

  // pass-through variant skips the trainable fc-a
  auto pass = toy;
  pass.trainable_fc_a = false;
  auto head2 = transfer::MatchingHead::build(pass, 4);
  CHECK(head2.fc_a.weights == nullptr);
  CHECK(head2.fc_b.weights->value.dim(1) == 128); // Dt + Ds
  CHECK(head2.forward(t, s)->value.dims() == std::vector<int64_t>{2, 2});
}

TEST_CASE("linear probe on random balanced features sits at chance within 0.1") {
  const int64_t n = 500, d = 16;
  auto train_x = rand_tensor<float>({n, d}, 50);
  auto val_x = rand_tensor<float>({n, d}, 51);
  std::vector<int64_t> train_y, val_y;
  for (int64_t i = 0; i < n; ++i) {
    train_y.push_back(i % 4);
    val_y.push_back((i + 1) % 4);
  }
  auto result = transfer::fit_linear_probe(train_x, train_y, val_x, val_y, 4, 0, 60, 0.2);
  CHECK(result.holdout_accuracy > 0.25 - 0.1);
  CHECK(result.holdout_accuracy < 0.25 + 0.1);
}

TEST_CASE("identical students give identical probe accuracy under a fixed seed") {
  auto ds = toy_dataset(8, 8);
  auto arch = student_arch(16);
  auto a = nets::Model::build(arch, 33);
  auto b = nets::Model::build(arch, 33);
  auto pa = transfer::probe_features(a, ds, 9, 30, 0.3);
  auto pb = transfer::probe_features(b, ds, 9, 30, 0.3);
  CHECK(pa.holdout_accuracy == pb.holdout_accuracy);
  CHECK(pa.train_accuracy == pb.train_accuracy);
}
