// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stcnet/tensor.hpp"

#include <string>
#include <vector>

namespace stcnet::synth {

// Synthetic labeled video generation. Every sample is one moving shape whose
// class is its motion (direction or motion type), so single frames carry no
// label information and solving the task requires temporal context.

enum class MotionFamily { Translate4, Translate8, RotateVsTranslate };
enum class ShapeFamily { Bar, Rectangle, Blob };

MotionFamily parse_motion(const std::string &s);
ShapeFamily parse_shape(const std::string &s);
const char *motion_name(MotionFamily m);
const char *shape_name(ShapeFamily s);
int motion_arity(MotionFamily m);

struct SynthSpec {
  int64_t height = 16, width = 16, frames = 8, channels = 1;
  int num_classes = 4;
  int samples_per_class = 128;
  MotionFamily motion = MotionFamily::Translate4;
  ShapeFamily shape = ShapeFamily::Blob;
  double velocity_min = 0.6;
  double velocity_max = 1.2;
  double noise_sigma = 0.02;
  uint64_t seed = 0;

  void validate() const;
};

struct VideoClip {
  Tensor32 data; // (C,T,H,W), values in [0,1] pre-normalization
  int64_t label = 0;
  uint64_t video_id = 0;
  std::string meta;
};

struct Dataset {
  SynthSpec spec;
  std::vector<VideoClip> train, val;
  int num_classes = 0;
  bool flip_safe = false; // labels relabel consistently under horizontal flip

  const VideoClip &sample(bool from_val, size_t i) const {
    return from_val ? val[i] : train[i];
  }
};

// Continuous parameters of one rendered sample; exposed so tests can probe
// the construction symmetries directly.
struct ClipParams {
  double start_y = 0, start_x = 0;
  double vel_y = 0, vel_x = 0;
  double angle0 = 0, angular_vel = 0;
  double size = 2.5;
  double intensity = 1.0;
  int64_t label = 0;
};

// Noise-free rendering of one clip from explicit parameters.
Tensor32 render_clip(const SynthSpec &spec, const ClipParams &params);

// Deterministic generation: sample i draws its RNG stream from
// mix(spec.seed, video_id); the train/val split hashes video ids 80/20.
Dataset generate(const SynthSpec &spec);

// Fastest velocity whose full trajectory stays inside the frame margins for
// the spec's clip length.
double max_feasible_velocity(const SynthSpec &spec);

// Copy of the spec with a new clip length; the velocity range shrinks when
// the longer trajectory demands it.
SynthSpec with_frames(const SynthSpec &spec, int64_t frames);

// Label permutation under horizontal flip (left and right classes swap).
int64_t hflip_label(int64_t label, MotionFamily motion);

// ------------------------------ augmentation ---------------------------------

struct AugmentPolicy {
  int64_t crop_h = 0, crop_w = 0; // random crop size; 0 disables
  double flip_prob = 0.0;         // horizontal flip probability
  bool subtract_mean = false;     // remove the dataset channel mean
  bool five_crop = false;         // eval-style: 4 corners + center
};

// Applies the policy in order crop -> flip -> mean-subtract; five_crop
// replaces the random crop and yields five clips. Flips relabel direction
// classes and are silently disabled unless the dataset declares flip-safe
// labels.
std::vector<VideoClip> augment(const VideoClip &clip, const AugmentPolicy &policy,
                               const Dataset &context, const std::vector<float> &mean, Rng &rng);

// Crop window constant across the clip's frames.
VideoClip random_crop(const VideoClip &clip, int64_t crop_h, int64_t crop_w, Rng &rng);

// Horizontal flip with relabeling; only valid on flip-safe datasets.
VideoClip hflip(const VideoClip &clip, MotionFamily motion);

// Four corners + center, in that order.
std::vector<VideoClip> five_crop(const VideoClip &clip, int64_t crop_h, int64_t crop_w);

std::vector<float> channel_mean(const std::vector<VideoClip> &clips);
VideoClip mean_subtract(const VideoClip &clip, const std::vector<float> &mean);

// Frame-shuffled copy for the temporal-necessity probe; the result is a
// frame permutation of the input.
VideoClip shuffle_frames(const VideoClip &clip, Rng &rng);

// ------------------------------- file I/O ------------------------------------
// Clip format (little-endian): magic "SVC1", version u32=1, dtype u8
// (0 = float32), rank u8=4, dims 4xu32 (C,T,H,W), label u32, video-id u64,
// then raw row-major data. Dataset = directory of clip files plus an index
// file of tab-separated (relative path, label, split) lines.

void write_clip(const VideoClip &clip, const std::string &path);
VideoClip read_clip(const std::string &path);

void write_dataset(const Dataset &dataset, const std::string &dir);
Dataset read_dataset(const std::string &dir);

} // namespace stcnet::synth
