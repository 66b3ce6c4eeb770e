// SPDX-License-Identifier: Apache-2.0
#include "stcnet/transfer.hpp"

#include "stcnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace stcnet::transfer {

// ------------------------------- teacher -------------------------------------

namespace {

nets::Conv3dLayer teacher_conv(int in_ch, int out_ch, Rng &rng) {
  ConvSpec spec;
  spec.in_channels = in_ch;
  spec.out_channels = out_ch;
  spec.kernel = {1, 3, 3};
  spec.stride = {1, 2, 2};
  spec.padding = {0, 1, 1};
  nets::Conv3dLayer layer;
  layer.spec = spec;
  Tensor32 w({out_ch, in_ch, 1, 3, 3});
  fill_fan_in_uniform(w, static_cast<int64_t>(in_ch) * 9, rng);
  layer.weights = ad::leaf(std::move(w), true, "teacher_conv");
  return layer;
}

nets::BatchNormLayer teacher_bn(int channels) {
  nets::BatchNormLayer bn;
  bn.gamma = ad::leaf(Tensor32::ones({channels}), true, "teacher_gamma");
  bn.beta = ad::leaf(Tensor32({channels}), true, "teacher_beta");
  bn.running_mean = Tensor32({channels});
  bn.running_var = Tensor32::ones({channels});
  return bn;
}

nets::AffineLayer teacher_fc(int64_t out, int64_t in, Rng &rng) {
  nets::AffineLayer fc;
  Tensor32 w({out, in});
  fill_fan_in_uniform(w, in, rng);
  fc.weights = ad::leaf(std::move(w), true, "teacher_fc_w");
  fc.bias = ad::leaf(Tensor32({out}), true, "teacher_fc_b");
  return fc;
}

uint64_t fnv1a(uint64_t h, const void *data, size_t bytes) {
  const unsigned char *p = static_cast<const unsigned char *>(data);
  for (size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

} // namespace

Teacher2d Teacher2d::build(int in_channels, int64_t height, int64_t width, int feature_dim,
                           int num_classes, uint64_t seed) {
  if (feature_dim < 1 || num_classes < 2)
    throw ConfigError("teacher: feature dim must be >= 1 and classes >= 2");
  Teacher2d t;
  t.in_channels_ = in_channels;
  t.feature_dim_ = feature_dim;
  t.num_classes_ = num_classes;
  Rng rng(seed);
  const int c1 = 8, c2 = 16;
  t.conv1_ = teacher_conv(in_channels, c1, rng);
  t.bn1_ = teacher_bn(c1);
  t.conv2_ = teacher_conv(c1, c2, rng);
  t.bn2_ = teacher_bn(c2);
  auto e1 = t.conv1_.spec.out_extents(1, height, width);
  auto e2 = t.conv2_.spec.out_extents(1, e1[1], e1[2]);
  t.flat_dim_ = c2 * e2[1] * e2[2];
  t.feature_fc_ = teacher_fc(feature_dim, t.flat_dim_, rng);
  t.classifier_ = teacher_fc(num_classes, feature_dim, rng);
  return t;
}

ad::Var<float> Teacher2d::features_var(const ad::Var<float> &images, bool train) {
  auto v = ad::conv3d(images, conv1_.weights, ad::Var<float>(), conv1_.spec);
  v = ad::batchnorm(v, bn1_.gamma, bn1_.beta, &bn1_.running_mean, &bn1_.running_var, train,
                    bn1_.eps, bn1_.momentum);
  v = ad::relu(v);
  v = ad::conv3d(v, conv2_.weights, ad::Var<float>(), conv2_.spec);
  v = ad::batchnorm(v, bn2_.gamma, bn2_.beta, &bn2_.running_mean, &bn2_.running_var, train,
                    bn2_.eps, bn2_.momentum);
  v = ad::relu(v);
  v = ad::reshape(v, {v->value.dim(0), flat_dim_});
  return ad::relu(ad::affine(v, feature_fc_.weights, feature_fc_.bias));
}

ad::Var<float> Teacher2d::forward_logits(const ad::Var<float> &images, bool train) {
  return ad::affine(features_var(images, train), classifier_.weights, classifier_.bias);
}

Tensor32 Teacher2d::forward_features(const Tensor32 &frames) const {
  if (frames.rank() != 4)
    throw ShapeError("teacher: frames must be (X,C,H,W), got " + frames.shape_str());
  const int64_t X = frames.dim(0);
  Tensor32 as5d = frames.reshaped({X, frames.dim(1), 1, frames.dim(2), frames.dim(3)});
  // eval-mode forward; const_cast is confined to reading layer tensors
  auto *self = const_cast<Teacher2d *>(this);
  auto feats = self->features_var(ad::constant(std::move(as5d)), false)->value;

  Tensor32 mean({1, feature_dim_});
  for (int64_t d = 0; d < feature_dim_; ++d) {
    double acc = 0.0;
    for (int64_t x = 0; x < X; ++x) acc += static_cast<double>(feats.at(x, d));
    mean.at(0, d) = static_cast<float>(acc / static_cast<double>(X));
  }
  return mean;
}

std::vector<nets::ParamEntry> Teacher2d::parameter_view() const {
  auto *self = const_cast<Teacher2d *>(this);
  std::vector<nets::ParamEntry> out;
  out.push_back({"teacher.conv1.weights", self->conv1_.weights, true, "teacher"});
  out.push_back({"teacher.bn1.gamma", self->bn1_.gamma, false, "teacher"});
  out.push_back({"teacher.bn1.beta", self->bn1_.beta, false, "teacher"});
  out.push_back({"teacher.conv2.weights", self->conv2_.weights, true, "teacher"});
  out.push_back({"teacher.bn2.gamma", self->bn2_.gamma, false, "teacher"});
  out.push_back({"teacher.bn2.beta", self->bn2_.beta, false, "teacher"});
  out.push_back({"teacher.feature_fc.weights", self->feature_fc_.weights, true, "teacher"});
  out.push_back({"teacher.feature_fc.bias", self->feature_fc_.bias, false, "teacher"});
  out.push_back({"teacher.classifier.weights", self->classifier_.weights, true, "teacher"});
  out.push_back({"teacher.classifier.bias", self->classifier_.bias, false, "teacher"});
  return out;
}

void Teacher2d::freeze() {
  frozen_ = true;
  for (auto &p : parameter_view()) p.var->requires_grad = false;
}

std::vector<nets::ParamEntry> Teacher2d::parameters() {
  if (frozen_)
    throw FreezeError("teacher: parameters requested for update after freeze");
  return parameter_view();
}

std::vector<nets::BufferEntry> Teacher2d::buffer_view() {
  return {{"teacher.bn1.running_mean", &bn1_.running_mean, "teacher"},
          {"teacher.bn1.running_var", &bn1_.running_var, "teacher"},
          {"teacher.bn2.running_mean", &bn2_.running_mean, "teacher"},
          {"teacher.bn2.running_var", &bn2_.running_var, "teacher"}};
}

uint64_t Teacher2d::checksum() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto &p : parameter_view())
    h = fnv1a(h, p.var->value.data(), sizeof(float) * static_cast<size_t>(p.var->value.numel()));
  for (const auto *bn : {&bn1_, &bn2_}) {
    h = fnv1a(h, bn->running_mean.data(), sizeof(float) * static_cast<size_t>(bn->running_mean.numel()));
    h = fnv1a(h, bn->running_var.data(), sizeof(float) * static_cast<size_t>(bn->running_var.numel()));
  }
  return h;
}

// --------------------------- teacher pretraining -----------------------------

namespace {

// Quadrant of the intensity centroid: a single-image label.
int64_t centroid_quadrant(const Tensor32 &video, int64_t t) {
  const int64_t C = video.dim(0), H = video.dim(2), W = video.dim(3);
  double sy = 0, sx = 0, mass = 1e-9;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        double v = video.data()[video.idx4(c, t, y, x)];
        sy += v * static_cast<double>(y);
        sx += v * static_cast<double>(x);
        mass += v;
      }
  double cy = sy / mass, cx = sx / mass;
  return (cy >= static_cast<double>(H) / 2.0 ? 2 : 0) + (cx >= static_cast<double>(W) / 2.0 ? 1 : 0);
}

} // namespace

TeacherPretrainResult pretrain_teacher(Teacher2d &teacher, const synth::Dataset &data, int steps,
                                       double lr, uint64_t seed, std::ostream *log) {
  if (teacher.frozen()) throw FreezeError("teacher: pretraining requested after freeze");
  if (data.train.empty()) throw DataError("teacher pretraining needs training videos");
  Rng rng(seed);
  train::OptimConfig opt;
  opt.lr = lr;
  opt.momentum = 0.9;
  opt.weight_decay = 1e-4;
  train::SgdOptimizer optimizer(teacher.parameters(), opt);

  const int batch = 32;
  const auto &first = data.train.front().data;
  const int64_t C = first.dim(0), H = first.dim(2), W = first.dim(3);

  TeacherPretrainResult result;
  double recent_correct = 0, recent_total = 0;
  for (int step = 0; step < steps; ++step) {
    Tensor32 images({batch, C, 1, H, W});
    std::vector<int64_t> labels(batch);
    for (int b = 0; b < batch; ++b) {
      const auto &video = data.train[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int64_t>(data.train.size()) - 1))];
      int64_t t = rng.uniform_int(0, video.data.dim(1) - 1);
      for (int64_t c = 0; c < C; ++c)
        std::copy_n(video.data.data() + video.data.idx4(c, t, 0, 0), H * W,
                    images.data() + images.idx5(b, c, 0, 0, 0));
      labels[static_cast<size_t>(b)] = centroid_quadrant(video.data, t);
    }
    optimizer.zero_grad();
    auto logits = teacher.forward_logits(ad::leaf(std::move(images), false), true);
    auto loss = ad::softmax_cross_entropy(logits, labels);
    ad::backward(loss);
    optimizer.step(lr);

    auto pred = ops::argmax_rows(logits->value);
    for (int b = 0; b < batch; ++b)
      if (pred[static_cast<size_t>(b)] == labels[static_cast<size_t>(b)]) recent_correct += 1;
    recent_total += batch;
    if (log && (step + 1) % 100 == 0) {
      (*log) << "teacher step " << step + 1 << " loss " << loss->value[0] << " acc "
             << recent_correct / recent_total << "\n";
      recent_correct = recent_total = 0;
    }
    result.steps = step + 1;
  }

  // measure accuracy on a fresh sweep
  double correct = 0, total = 0;
  for (int rep = 0; rep < 8; ++rep) {
    Tensor32 images({batch, C, 1, H, W});
    std::vector<int64_t> labels(batch);
    for (int b = 0; b < batch; ++b) {
      const auto &video = data.train[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int64_t>(data.train.size()) - 1))];
      int64_t t = rng.uniform_int(0, video.data.dim(1) - 1);
      for (int64_t c = 0; c < C; ++c)
        std::copy_n(video.data.data() + video.data.idx4(c, t, 0, 0), H * W,
                    images.data() + images.idx5(b, c, 0, 0, 0));
      labels[static_cast<size_t>(b)] = centroid_quadrant(video.data, t);
    }
    auto logits = teacher.forward_logits(ad::leaf(std::move(images), false), false);
    auto pred = ops::argmax_rows(logits->value);
    for (int b = 0; b < batch; ++b)
      if (pred[static_cast<size_t>(b)] == labels[static_cast<size_t>(b)]) correct += 1;
    total += batch;
  }
  result.train_acc = correct / total;
  return result;
}

// -------------------------------- pairs --------------------------------------

std::vector<PairSample> make_pairs(const std::vector<synth::VideoClip> &videos, int positives,
                                   int frames_per_pair, double neg_ratio, uint64_t seed) {
  if (videos.empty()) throw DataError("make_pairs: empty video list");
  int negatives = static_cast<int>(std::lround(positives * neg_ratio));
  if (negatives > 0 && videos.size() < 2)
    throw DataError("make_pairs: negatives need at least two distinct videos");
  if (frames_per_pair < 1) throw ConfigError("make_pairs: frames-per-pair must be >= 1");

  Rng rng(seed);
  std::vector<PairSample> pairs;
  pairs.reserve(static_cast<size_t>(positives + negatives));

  auto draw_frames = [&](const synth::VideoClip &v) {
    std::vector<int64_t> idx(static_cast<size_t>(frames_per_pair));
    for (auto &i : idx) i = rng.uniform_int(0, v.data.dim(1) - 1);
    return idx;
  };

  for (int i = 0; i < positives; ++i) {
    size_t v = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(videos.size()) - 1));
    PairSample p;
    p.match = true;
    p.frame_source = p.clip_source = v;
    p.frame_video_id = p.clip_video_id = videos[v].video_id;
    p.frame_indices = draw_frames(videos[v]);
    pairs.push_back(std::move(p));
  }
  for (int i = 0; i < negatives; ++i) {
    size_t a = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(videos.size()) - 1));
    size_t b = a;
    while (b == a)
      b = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(videos.size()) - 1));
    PairSample p;
    p.match = false;
    p.frame_source = a;
    p.clip_source = b;
    p.frame_video_id = videos[a].video_id;
    p.clip_video_id = videos[b].video_id;
    p.frame_indices = draw_frames(videos[a]);
    pairs.push_back(std::move(p));
  }
  for (size_t i = pairs.size(); i > 1; --i)
    std::swap(pairs[i - 1], pairs[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
  return pairs;
}

// ---------------------------- matching head ----------------------------------

MatchingHeadSpec MatchingHeadSpec::scaled(int factor) {
  if (factor < 1) throw ConfigError("matching head: scale factor must be >= 1");
  MatchingHeadSpec s;
  s.teacher_dim = 1024 / factor;
  s.student_dim = 1024 / factor;
  s.fc_a = 2048 / factor;
  s.fc_b = 512 / factor;
  s.fc_c = 128 / factor;
  s.validate();
  return s;
}

void MatchingHeadSpec::validate() const {
  if (teacher_dim < 1 || student_dim < 1 || fc_a < 1 || fc_b < 1 || fc_c < 1)
    throw ConfigError("matching head: all widths must be >= 1");
}

MatchingHead MatchingHead::build(const MatchingHeadSpec &spec, uint64_t seed) {
  spec.validate();
  MatchingHead head;
  head.spec = spec;
  Rng rng(seed);
  const int64_t concat = spec.teacher_dim + spec.student_dim;
  if (spec.trainable_fc_a) head.fc_a = teacher_fc(spec.fc_a, concat, rng);
  head.fc_b = teacher_fc(spec.fc_b, spec.trainable_fc_a ? spec.fc_a : concat, rng);
  head.fc_c = teacher_fc(spec.fc_c, spec.fc_b, rng);
  head.classifier = teacher_fc(2, spec.fc_c, rng);
  // zero-started classifier: the matching loss opens at exactly ln 2
  std::fill(head.classifier.weights->value.data(),
            head.classifier.weights->value.data() + head.classifier.weights->value.numel(), 0.0f);
  return head;
}

ad::Var<float> MatchingHead::forward(const ad::Var<float> &teacher_feat,
                                     const ad::Var<float> &student_feat) {
  if (teacher_feat->value.dim(1) != spec.teacher_dim)
    throw ShapeError("matching head: teacher features are " + teacher_feat->value.shape_str() +
                     ", expected width " + std::to_string(spec.teacher_dim));
  if (student_feat->value.dim(1) != spec.student_dim)
    throw ShapeError("matching head: student features are " + student_feat->value.shape_str() +
                     ", expected width " + std::to_string(spec.student_dim));
  auto v = ad::concat_cols(teacher_feat, student_feat);
  if (spec.trainable_fc_a) v = ad::relu(ad::affine(v, fc_a.weights, fc_a.bias));
  v = ad::relu(ad::affine(v, fc_b.weights, fc_b.bias));
  v = ad::relu(ad::affine(v, fc_c.weights, fc_c.bias));
  return ad::affine(v, classifier.weights, classifier.bias);
}

std::vector<nets::ParamEntry> MatchingHead::parameters() {
  std::vector<nets::ParamEntry> out;
  auto add = [&](const char *name, nets::AffineLayer &fc) {
    if (!fc.weights) return;
    out.push_back({std::string("head.") + name + ".weights", fc.weights, true, "head"});
    out.push_back({std::string("head.") + name + ".bias", fc.bias, false, "head"});
  };
  add("fc_a", fc_a);
  add("fc_b", fc_b);
  add("fc_c", fc_c);
  add("classifier", classifier);
  return out;
}

// ------------------------------ transfer run ---------------------------------

void TransferConfig::validate() const {
  if (steps < 1) throw ConfigError("transfer.steps must be >= 1");
  if (batch_size < 2) throw ConfigError("transfer.batch-size must be >= 2");
  if (frames_per_pair < 1) throw ConfigError("transfer.x-frames must be >= 1");
  if (neg_ratio < 0) throw ConfigError("transfer.neg-ratio must be >= 0");
  if (lr <= 0) throw ConfigError("transfer.lr must be positive");
  if (head_scale < 1) throw ConfigError("transfer.head-scale must be >= 1");
  if (teacher_steps < 0) throw ConfigError("transfer.teacher-steps must be >= 0");
}

namespace {

struct PairBatch {
  Tensor32 teacher_feats; // (B, Dt)
  Tensor32 clips;         // (B, C, T, H, W)
  std::vector<int64_t> labels;
};

PairBatch assemble_batch(const std::vector<PairSample> &batch,
                         const std::vector<synth::VideoClip> &videos, const Teacher2d &teacher) {
  const int64_t B = static_cast<int64_t>(batch.size());
  const auto &proto = videos.at(batch.front().clip_source).data;
  PairBatch out;
  out.teacher_feats = Tensor32({B, teacher.feature_dim()});
  out.clips = Tensor32({B, proto.dim(0), proto.dim(1), proto.dim(2), proto.dim(3)});
  out.labels.resize(static_cast<size_t>(B));
  for (int64_t b = 0; b < B; ++b) {
    const auto &pair = batch[static_cast<size_t>(b)];
    const auto &frame_video = videos.at(pair.frame_source).data;
    Tensor32 frames({static_cast<int64_t>(pair.frame_indices.size()), frame_video.dim(0),
                     frame_video.dim(2), frame_video.dim(3)});
    const int64_t hw = frame_video.dim(2) * frame_video.dim(3);
    for (size_t f = 0; f < pair.frame_indices.size(); ++f)
      for (int64_t c = 0; c < frame_video.dim(0); ++c)
        std::copy_n(frame_video.data() + frame_video.idx4(c, pair.frame_indices[f], 0, 0), hw,
                    frames.data() +
                        ((static_cast<int64_t>(f) * frame_video.dim(0) + c) * hw));
    auto feat = teacher.forward_features(frames);
    std::copy_n(feat.data(), teacher.feature_dim(),
                out.teacher_feats.data() + b * teacher.feature_dim());

    const auto &clip = videos.at(pair.clip_source).data;
    if (clip.dims() != proto.dims())
      throw ShapeError("transfer: clips disagree in dims within a batch");
    std::copy_n(clip.data(), clip.numel(), out.clips.data() + b * clip.numel());
    out.labels[static_cast<size_t>(b)] = pair.match ? 1 : 0;
  }
  return out;
}

} // namespace

float transfer_step(const std::vector<PairSample> &batch,
                    const std::vector<synth::VideoClip> &videos, const Teacher2d &teacher,
                    nets::Model &student, MatchingHead &head, train::SgdOptimizer &optimizer,
                    double lr) {
  if (!teacher.frozen())
    throw FreezeError("transfer_step: teacher must be frozen before transfer updates");
  if (batch.empty()) throw DataError("transfer_step: empty batch");

  auto data = assemble_batch(batch, videos, teacher);
  optimizer.zero_grad();
  auto student_feat = student.features(ad::constant(std::move(data.clips)), true);
  auto logits = head.forward(ad::constant(std::move(data.teacher_feats)), student_feat);
  auto loss = ad::softmax_cross_entropy(logits, data.labels);
  float loss_val = loss->value[0];
  if (!std::isfinite(loss_val))
    throw NumericError("transfer_step: non-finite loss, aborting");
  ad::backward(loss);
  optimizer.step(lr);
  return loss_val;
}

double matching_accuracy(const std::vector<PairSample> &pairs,
                         const std::vector<synth::VideoClip> &videos, const Teacher2d &teacher,
                         nets::Model &student, MatchingHead &head) {
  if (pairs.empty()) throw DataError("matching_accuracy: no pairs");
  int64_t correct = 0;
  const size_t chunk = 32;
  for (size_t start = 0; start < pairs.size(); start += chunk) {
    std::vector<PairSample> slice(pairs.begin() + static_cast<std::ptrdiff_t>(start),
                                  pairs.begin() +
                                      static_cast<std::ptrdiff_t>(std::min(pairs.size(), start + chunk)));
    auto data = assemble_batch(slice, videos, teacher);
    auto student_feat = student.features(ad::constant(std::move(data.clips)), false);
    auto logits = head.forward(ad::constant(std::move(data.teacher_feats)), student_feat);
    auto pred = ops::argmax_rows(logits->value);
    for (size_t i = 0; i < slice.size(); ++i)
      if (pred[i] == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

TransferResult run_transfer(const TransferConfig &config, const synth::Dataset &data,
                            Teacher2d &teacher, nets::Model &student, MatchingHead &head,
                            std::ostream *log) {
  config.validate();
  if (data.train.size() < 2 || data.val.size() < 2)
    throw DataError("run_transfer: need at least two train and two val videos");

  TransferResult result;
  if (!teacher.frozen()) {
    if (config.teacher_steps > 0) {
      auto pre = pretrain_teacher(teacher, data, config.teacher_steps, config.teacher_lr,
                                  Rng::mix(config.seed, 0x7ea), log);
      if (log) (*log) << "teacher pretrained: acc " << pre.train_acc << "\n";
    }
    teacher.freeze();
  }
  result.teacher_checksum_before = teacher.checksum();

  auto params = student.parameters();
  auto head_params = head.parameters();
  params.insert(params.end(), head_params.begin(), head_params.end());
  train::OptimConfig opt;
  opt.lr = config.lr;
  opt.momentum = config.momentum;
  opt.nesterov = config.nesterov;
  opt.weight_decay = config.weight_decay;
  train::SgdOptimizer optimizer(std::move(params), opt);

  const int pos_per_batch = std::max(1, config.batch_size / 2);
  double loss = 0;
  for (int step = 0; step < config.steps; ++step) {
    auto batch = make_pairs(data.train, pos_per_batch, config.frames_per_pair, config.neg_ratio,
                            Rng::mix(config.seed, static_cast<uint64_t>(step) + 1));
    double lr = config.lr;
    if (config.lr_step_every > 0)
      lr = config.lr / std::pow(10.0, step / config.lr_step_every);

    loss = transfer_step(batch, data.train, teacher, student, head, optimizer, lr);

    if (log && (step + 1) % 50 == 0)
      (*log) << "transfer step " << step + 1 << " loss " << loss << "\n";
    result.steps_run = step + 1;
  }
  result.final_loss = loss;
  result.teacher_checksum_after = teacher.checksum();

  auto holdout = make_pairs(data.val, 100, config.frames_per_pair, 1.0,
                            Rng::mix(config.seed, 0xe7a1));
  result.holdout_accuracy = matching_accuracy(holdout, data.val, teacher, student, head);
  return result;
}

// ------------------------------ linear probe ---------------------------------

ProbeResult fit_linear_probe(const Tensor32 &train_x, const std::vector<int64_t> &train_y,
                             const Tensor32 &val_x, const std::vector<int64_t> &val_y,
                             int num_classes, uint64_t seed, int epochs, double lr) {
  const int64_t D = train_x.dim(1);
  Rng rng(seed);
  Tensor32 w({num_classes, D});
  fill_fan_in_uniform(w, D, rng);
  auto wv = ad::leaf(std::move(w), true);
  auto bv = ad::leaf(Tensor32({num_classes}), true);

  Tensor32 wvel, bvel;
  for (int e = 0; e < epochs; ++e) {
    wv->grad = Tensor32();
    bv->grad = Tensor32();
    auto loss = ad::softmax_cross_entropy(ad::affine(ad::constant(train_x), wv, bv), train_y);
    ad::backward(loss);
    train::sgd_step(wv->value, wv->grad, wvel, lr, 0.9, true, 0.0);
    train::sgd_step(bv->value, bv->grad, bvel, lr, 0.9, true, 0.0);
  }

  auto acc = [&](const Tensor32 &x, const std::vector<int64_t> &y) {
    auto logits = ops::affine(x, wv->value, &bv->value);
    auto pred = ops::argmax_rows(logits);
    int64_t correct = 0;
    for (size_t i = 0; i < y.size(); ++i)
      if (pred[i] == y[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(y.size());
  };
  return {acc(train_x, train_y), acc(val_x, val_y)};
}

ProbeResult probe_features(nets::Model &student, const synth::Dataset &data, uint64_t seed,
                           int epochs, double lr) {
  auto extract = [&](const std::vector<synth::VideoClip> &videos, Tensor32 &x,
                     std::vector<int64_t> &y) {
    const auto &proto = videos.front().data;
    const size_t chunk = 32;
    std::vector<float> rows;
    y.clear();
    int64_t dim = 0;
    for (size_t start = 0; start < videos.size(); start += chunk) {
      size_t count = std::min(videos.size() - start, chunk);
      Tensor32 batch({static_cast<int64_t>(count), proto.dim(0), proto.dim(1), proto.dim(2),
                      proto.dim(3)});
      for (size_t i = 0; i < count; ++i) {
        const auto &clip = videos[start + i].data;
        std::copy_n(clip.data(), clip.numel(),
                    batch.data() + static_cast<int64_t>(i) * clip.numel());
        y.push_back(videos[start + i].label);
      }
      auto feats = student.features(ad::constant(std::move(batch)), false)->value;
      dim = feats.dim(1);
      rows.insert(rows.end(), feats.data(), feats.data() + feats.numel());
    }
    x = Tensor32({static_cast<int64_t>(y.size()), dim}, std::move(rows));
  };

  Tensor32 train_x, val_x;
  std::vector<int64_t> train_y, val_y;
  extract(data.train, train_x, train_y);
  extract(data.val, val_x, val_y);
  return fit_linear_probe(train_x, train_y, val_x, val_y, data.num_classes, seed, epochs, lr);
}

} // namespace stcnet::transfer
