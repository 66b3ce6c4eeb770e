// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "stcnet/data_synth.hpp"
#include "stcnet/run_config.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

using namespace stcnet;
using synth::SynthSpec;

namespace {

SynthSpec small_spec(uint64_t seed = 0, int per_class = 8) {
  SynthSpec spec;
  spec.seed = seed;
  spec.samples_per_class = per_class;
  return spec;
}

double clip_sum(const synth::VideoClip &c) {
  double s = 0;
  for (int64_t i = 0; i < c.data.numel(); ++i) s += c.data[i];
  return s;
}

} // namespace

TEST_CASE("generation is deterministic: identical specs give identical bytes") {
  auto a = synth::generate(small_spec(7));
  auto b = synth::generate(small_spec(7));
  REQUIRE(a.train.size() == b.train.size());
  for (size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].video_id == b.train[i].video_id);
    CHECK(std::memcmp(a.train[i].data.data(), b.train[i].data.data(),
                      sizeof(float) * a.train[i].data.numel()) == 0);
  }
  auto c = synth::generate(small_spec(8));
  bool differs = false;
  for (size_t i = 0; i < a.train.size() && i < c.train.size() && !differs; ++i)
    differs = std::memcmp(a.train[i].data.data(), c.train[i].data.data(),
                          sizeof(float) * a.train[i].data.numel()) != 0;
  CHECK(differs);
}

TEST_CASE("every class has exactly samples-per-class videos") {
  auto ds = synth::generate(small_spec(3, 16));
  std::vector<int> counts(4, 0);
  for (const auto &c : ds.train) counts[static_cast<size_t>(c.label)]++;
  for (const auto &c : ds.val) counts[static_cast<size_t>(c.label)]++;
  for (int k = 0; k < 4; ++k) CHECK(counts[static_cast<size_t>(k)] == 16);
}

TEST_CASE("values stay in [0,1] and finite") {
  auto spec = small_spec(11);
  spec.noise_sigma = 0.1;
  auto ds = synth::generate(spec);
  for (const auto &c : ds.train)
    for (int64_t i = 0; i < c.data.numel(); ++i) {
      CHECK(std::isfinite(c.data[i]));
      CHECK(c.data[i] >= 0.0f);
      CHECK(c.data[i] <= 1.0f);
    }
}

TEST_CASE("reversing an 'up' rendering gives the matching 'down' rendering") {
  SynthSpec spec = small_spec();
  spec.noise_sigma = 0;
  synth::ClipParams up;
  up.start_y = 10.0;
  up.start_x = 7.0;
  up.vel_y = -0.9; // up
  up.vel_x = 0.0;
  up.size = 2.0;
  up.intensity = 0.9;
  auto up_clip = synth::render_clip(spec, up);

  synth::ClipParams down = up;
  down.start_y = up.start_y + up.vel_y * static_cast<double>(spec.frames - 1);
  down.vel_y = -up.vel_y;
  auto down_clip = synth::render_clip(spec, down);

  // frame t of the reversed up-clip is frame T-1-t
  for (int64_t t = 0; t < spec.frames; ++t)
    for (int64_t y = 0; y < spec.height; ++y)
      for (int64_t x = 0; x < spec.width; ++x)
        CHECK(down_clip.data()[down_clip.idx4(0, t, y, x)] ==
              doctest::Approx(up_clip.data()[up_clip.idx4(0, spec.frames - 1 - t, y, x)])
                  .epsilon(1e-4));
}

TEST_CASE("noise-sigma 0: frames differ only by the shape displacement") {
  SynthSpec spec = small_spec(5);
  spec.noise_sigma = 0;
  auto ds = synth::generate(spec);
  const auto &clip = ds.train.front();
  // per-frame mass is constant when nothing enters or leaves the frame
  double first = 0, last = 0;
  for (int64_t y = 0; y < spec.height; ++y)
    for (int64_t x = 0; x < spec.width; ++x) {
      first += clip.data.data()[clip.data.idx4(0, 0, y, x)];
      last += clip.data.data()[clip.data.idx4(0, spec.frames - 1, y, x)];
    }
  CHECK(first == doctest::Approx(last).epsilon(0.08));
  // and the frames are not identical
  CHECK(std::memcmp(clip.data.data(), clip.data.data() + clip.data.idx4(0, spec.frames - 1, 0, 0),
                    sizeof(float) * spec.height * spec.width) != 0);
}

TEST_CASE("frozen golden digest: pixel-sum histogram of the default dataset (seed 0)") {
  SynthSpec spec; // defaults: 16x16x8, 4 classes, 128 per class
  spec.seed = 0;
  auto ds = synth::generate(spec);
  CHECK(ds.train.size() == 404);
  CHECK(ds.val.size() == 108);

  std::vector<int64_t> hist(64, 0);
  auto account = [&](const std::vector<synth::VideoClip> &clips) {
    for (const auto &c : clips) {
      int bin = static_cast<int>(clip_sum(c) / 10.0);
      hist[static_cast<size_t>(std::clamp(bin, 0, 63))]++;
    }
  };
  account(ds.train);
  account(ds.val);
  std::string text;
  for (auto h : hist) text += std::to_string(h) + ",";
  CHECK(io::fnv1a64(text) == 0x3b466f0cf68ba3b9ULL);
}

TEST_CASE("class arity must match the motion family") {
  SynthSpec spec = small_spec();
  spec.motion = synth::MotionFamily::Translate8;
  CHECK_THROWS_AS(synth::generate(spec), ConfigError); // classes still 4
  spec.num_classes = 8;
  CHECK_NOTHROW(synth::generate(spec));
}

TEST_CASE("infeasible velocity/extent combinations are rejected") {
  SynthSpec spec = small_spec();
  spec.velocity_max = 3.0;
  CHECK_THROWS_WITH_AS(synth::generate(spec), doctest::Contains("infeasible"), ConfigError);
}

TEST_CASE("hflip is an involution on the data and relabels directions") {
  auto ds = synth::generate(small_spec(9));
  const auto &clip = ds.train.front();
  auto once = synth::hflip(clip, synth::MotionFamily::Translate4);
  auto twice = synth::hflip(once, synth::MotionFamily::Translate4);
  CHECK(twice.label == clip.label);
  CHECK(std::memcmp(twice.data.data(), clip.data.data(),
                    sizeof(float) * clip.data.numel()) == 0);

  CHECK(synth::hflip_label(2, synth::MotionFamily::Translate4) == 3);
  CHECK(synth::hflip_label(3, synth::MotionFamily::Translate4) == 2);
  CHECK(synth::hflip_label(0, synth::MotionFamily::Translate4) == 0);
  CHECK(synth::hflip_label(4, synth::MotionFamily::Translate8) == 5);
  CHECK(synth::hflip_label(1, synth::MotionFamily::RotateVsTranslate) == 1);
}

TEST_CASE("five-crop with crop == frame size gives five identical crops") {
  auto ds = synth::generate(small_spec(10));
  const auto &clip = ds.train.front();
  auto crops = synth::five_crop(clip, clip.data.dim(2), clip.data.dim(3));
  REQUIRE(crops.size() == 5);
  for (const auto &c : crops)
    CHECK(std::memcmp(c.data.data(), clip.data.data(), sizeof(float) * clip.data.numel()) == 0);
}

TEST_CASE("random crop window is constant across frames") {
  auto ds = synth::generate(small_spec(12));
  const auto &clip = ds.train.front();
  Rng rng(4);
  auto cropped = synth::random_crop(clip, 12, 12, rng);
  CHECK(cropped.data.dims() == std::vector<int64_t>{1, 8, 12, 12});
  // every cropped frame appears somewhere in the source frame at one offset
  bool found_offset = false;
  for (int64_t y0 = 0; y0 <= 4 && !found_offset; ++y0)
    for (int64_t x0 = 0; x0 <= 4 && !found_offset; ++x0) {
      bool all = true;
      for (int64_t t = 0; t < 8 && all; ++t)
        for (int64_t y = 0; y < 12 && all; ++y)
          for (int64_t x = 0; x < 12 && all; ++x)
            all = cropped.data.data()[cropped.data.idx4(0, t, y, x)] ==
                  clip.data.data()[clip.data.idx4(0, t, y0 + y, x0 + x)];
      found_offset = all;
    }
  CHECK(found_offset);

  CHECK_THROWS_AS(synth::random_crop(clip, 20, 20, rng), ConfigError);
}

TEST_CASE("augment applies crop, flip and mean-subtraction per policy") {
  auto ds = synth::generate(small_spec(20));
  auto mean = synth::channel_mean(ds.train);
  Rng rng(5);

  synth::AugmentPolicy policy;
  policy.crop_h = policy.crop_w = 12;
  policy.flip_prob = 1.0;
  policy.subtract_mean = true;
  auto out = synth::augment(ds.train.front(), policy, ds, mean, rng);
  REQUIRE(out.size() == 1);
  CHECK(out[0].data.dims() == std::vector<int64_t>{1, 8, 12, 12});
  CHECK(out[0].label == synth::hflip_label(ds.train.front().label, ds.spec.motion));

  policy.five_crop = true;
  auto five = synth::augment(ds.train.front(), policy, ds, mean, rng);
  CHECK(five.size() == 5);

  // flips are disabled when the dataset does not declare flip-safe labels
  auto unsafe = ds;
  unsafe.flip_safe = false;
  synth::AugmentPolicy flip_only;
  flip_only.flip_prob = 1.0;
  auto kept = synth::augment(ds.train.front(), flip_only, unsafe, mean, rng);
  CHECK(kept[0].label == ds.train.front().label);
}

TEST_CASE("mean_subtract leaves the dataset channel mean at zero") {
  auto ds = synth::generate(small_spec(13));
  auto mean = synth::channel_mean(ds.train);
  std::vector<synth::VideoClip> centered;
  for (const auto &c : ds.train) centered.push_back(synth::mean_subtract(c, mean));
  auto mean2 = synth::channel_mean(centered);
  for (float m : mean2) CHECK(std::abs(m) < 1e-6f);
}

TEST_CASE("shuffle_frames is a frame permutation of the original") {
  auto ds = synth::generate(small_spec(14));
  const auto &clip = ds.train.front();
  Rng rng(3);
  auto shuffled = synth::shuffle_frames(clip, rng);

  auto frame_sums = [](const synth::VideoClip &c) {
    std::vector<double> sums;
    for (int64_t t = 0; t < c.data.dim(1); ++t) {
      double s = 0;
      for (int64_t y = 0; y < c.data.dim(2); ++y)
        for (int64_t x = 0; x < c.data.dim(3); ++x) s += c.data.data()[c.data.idx4(0, t, y, x)];
      sums.push_back(s);
    }
    std::sort(sums.begin(), sums.end());
    return sums;
  };
  CHECK(frame_sums(clip) == frame_sums(shuffled));
}

TEST_CASE("clip files round-trip bit-exactly") {
  auto ds = synth::generate(small_spec(15));
  const auto &clip = ds.train.front();
  std::string path = "/tmp/stcnet_test_clip.svc";
  synth::write_clip(clip, path);
  auto loaded = synth::read_clip(path);
  CHECK(loaded.label == clip.label);
  CHECK(loaded.video_id == clip.video_id);
  CHECK(loaded.data.dims() == clip.data.dims());
  CHECK(std::memcmp(loaded.data.data(), clip.data.data(),
                    sizeof(float) * clip.data.numel()) == 0);
}

TEST_CASE("file size is the 38-byte header plus 4*C*T*H*W payload") {
  auto ds = synth::generate(small_spec(16));
  const auto &clip = ds.train.front();
  std::string path = "/tmp/stcnet_test_clip_size.svc";
  synth::write_clip(clip, path);
  auto size = std::filesystem::file_size(path);
  CHECK(size == 38 + 4ull * static_cast<uint64_t>(clip.data.numel()));
}

TEST_CASE("corrupting the magic bytes is a format error, not a crash") {
  auto ds = synth::generate(small_spec(17));
  std::string path = "/tmp/stcnet_test_clip_bad.svc";
  synth::write_clip(ds.train.front(), path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_WITH_AS(synth::read_clip(path), doctest::Contains("magic"), FormatError);
}

TEST_CASE("truncated files report the byte offset") {
  auto ds = synth::generate(small_spec(18));
  std::string path = "/tmp/stcnet_test_clip_trunc.svc";
  synth::write_clip(ds.train.front(), path);
  std::filesystem::resize_file(path, 100);
  CHECK_THROWS_WITH_AS(synth::read_clip(path), doctest::Contains("byte offset"), FormatError);
}

TEST_CASE("dataset directories round-trip through the index file") {
  auto ds = synth::generate(small_spec(19));
  std::string dir = "/tmp/stcnet_test_dataset";
  std::filesystem::remove_all(dir);
  synth::write_dataset(ds, dir);
  auto loaded = synth::read_dataset(dir);
  CHECK(loaded.train.size() == ds.train.size());
  CHECK(loaded.val.size() == ds.val.size());
  CHECK(loaded.num_classes == ds.num_classes);
  CHECK(std::memcmp(loaded.train.front().data.data(), ds.train.front().data.data(),
                    sizeof(float) * ds.train.front().data.numel()) == 0);
}
