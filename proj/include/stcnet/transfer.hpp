// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stcnet/trainer.hpp"

#include <optional>

namespace stcnet::transfer {

// 2D -> 3D supervision transfer: a frozen 2D teacher and a trainable 3D
// student solve a binary image-video correspondence task; only the student
// and the matching head receive updates.

// ------------------------------- teacher -------------------------------------

// Small 2D CNN (conv kernels are 1xsxs over T=1 inputs) ending in a feature
// fc of width feature_dim followed by a classifier. Pre-trained in-repo on a
// synthetic image task so its penultimate features carry position and
// appearance.
class Teacher2d {
public:
  static Teacher2d build(int in_channels, int64_t height, int64_t width, int feature_dim,
                         int num_classes, uint64_t seed);

  // Mean penultimate feature over the X input frames; never records
  // gradients. Frames are (X, C, H, W).
  Tensor32 forward_features(const Tensor32 &frames) const;
  // Per-image logits for pretraining; participates in autodiff.
  ad::Var<float> forward_logits(const ad::Var<float> &images, bool train);

  // Marks the teacher read-only and stops its vars from recording gradients.
  void freeze();
  bool frozen() const { return frozen_; }
  int feature_dim() const { return feature_dim_; }

  std::vector<nets::ParamEntry> parameters(); // throws FreezeError once frozen
  std::vector<nets::ParamEntry> parameter_view() const; // read-only listing
  std::vector<nets::BufferEntry> buffer_view();
  uint64_t checksum() const;

private:
  int in_channels_ = 1, feature_dim_ = 0, num_classes_ = 0;
  bool frozen_ = false;
  nets::Conv3dLayer conv1_, conv2_;
  nets::BatchNormLayer bn1_, bn2_;
  nets::AffineLayer feature_fc_, classifier_;
  int64_t flat_dim_ = 0;

  ad::Var<float> features_var(const ad::Var<float> &images, bool train);
};

// Pre-trains the teacher on single frames labeled by the quadrant of the
// frame's brightest region (a pure-appearance task learnable from one image).
struct TeacherPretrainResult {
  double train_acc = 0;
  int steps = 0;
};
TeacherPretrainResult pretrain_teacher(Teacher2d &teacher, const synth::Dataset &data,
                                       int steps, double lr, uint64_t seed,
                                       std::ostream *log = nullptr);

// -------------------------------- pairs --------------------------------------

struct PairSample {
  uint64_t frame_video_id = 0; // provenance of the teacher-side frames
  uint64_t clip_video_id = 0;  // provenance of the student-side clip
  std::vector<int64_t> frame_indices;
  bool match = false;
  size_t frame_source = 0; // dataset indices resolved at batch time
  size_t clip_source = 0;
};

// Positives pair a clip with X frames from its own window; negatives draw
// frames and clip from distinct videos. neg_ratio negatives per positive.
std::vector<PairSample> make_pairs(const std::vector<synth::VideoClip> &videos, int positives,
                                   int frames_per_pair, double neg_ratio, uint64_t seed);

// ---------------------------- matching head ----------------------------------

// fc-a (Dt+Ds)->wa, fc-b wa->wb, fc-c wb->wc, classifier wc->2. The full-size
// widths are (2048, 512, 128); toy presets scale every width by one factor.
struct MatchingHeadSpec {
  int teacher_dim = 1024;
  int student_dim = 1024;
  int fc_a = 2048;
  int fc_b = 512;
  int fc_c = 128;
  bool trainable_fc_a = true; // pass-through concat when false

  static MatchingHeadSpec scaled(int factor);
  void validate() const;
};

struct MatchingHead {
  MatchingHeadSpec spec;
  nets::AffineLayer fc_a, fc_b, fc_c, classifier;

  static MatchingHead build(const MatchingHeadSpec &spec, uint64_t seed);
  ad::Var<float> forward(const ad::Var<float> &teacher_feat, const ad::Var<float> &student_feat);
  std::vector<nets::ParamEntry> parameters();
};

// ------------------------------ transfer run ---------------------------------

struct TransferConfig {
  int steps = 500;
  int batch_size = 16;
  int frames_per_pair = 16; // X
  double neg_ratio = 1.0;
  double lr = 0.01;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
  int lr_step_every = 0; // 0 disables; otherwise divide lr by 10 every N steps
  uint64_t seed = 0;
  int head_scale = 16;     // divides the full-size head widths
  int teacher_steps = 300; // pretraining budget
  double teacher_lr = 0.05;

  void validate() const;
};

struct TransferResult {
  double final_loss = 0;
  double holdout_accuracy = 0; // pair matching on held-out videos
  uint64_t teacher_checksum_before = 0;
  uint64_t teacher_checksum_after = 0;
  int steps_run = 0;
};

// One optimization step over a pair batch; updates student + head only.
float transfer_step(const std::vector<PairSample> &batch,
                    const std::vector<synth::VideoClip> &videos, const Teacher2d &teacher,
                    nets::Model &student, MatchingHead &head, train::SgdOptimizer &optimizer,
                    double lr);

// Held-out pair-matching accuracy with the trained head.
double matching_accuracy(const std::vector<PairSample> &pairs,
                         const std::vector<synth::VideoClip> &videos, const Teacher2d &teacher,
                         nets::Model &student, MatchingHead &head);

// Full pipeline: pretrain + freeze teacher, stream pairs from the train
// split, train student + head, evaluate on val-split pairs.
TransferResult run_transfer(const TransferConfig &config, const synth::Dataset &data,
                            Teacher2d &teacher, nets::Model &student, MatchingHead &head,
                            std::ostream *log = nullptr);

// ------------------------------ linear probe ---------------------------------

struct ProbeResult {
  double train_accuracy = 0;
  double holdout_accuracy = 0;
};

// Multinomial linear classifier fit by SGD on fixed feature matrices.
ProbeResult fit_linear_probe(const Tensor32 &train_x, const std::vector<int64_t> &train_y,
                             const Tensor32 &val_x, const std::vector<int64_t> &val_y,
                             int num_classes, uint64_t seed, int epochs = 100, double lr = 0.5);

// Fits a multinomial linear classifier on frozen penultimate student
// features by SGD and reports held-out accuracy.
ProbeResult probe_features(nets::Model &student, const synth::Dataset &data, uint64_t seed,
                           int epochs = 100, double lr = 0.5);

} // namespace stcnet::transfer
