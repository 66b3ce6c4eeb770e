// SPDX-License-Identifier: Apache-2.0
#include "stcnet/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace stcnet::synth {

MotionFamily parse_motion(const std::string &s) {
  if (s == "translate-4dir") return MotionFamily::Translate4;
  if (s == "translate-8dir") return MotionFamily::Translate8;
  if (s == "rotate-vs-translate") return MotionFamily::RotateVsTranslate;
  throw ConfigError("unknown motion family '" + s + "'");
}

ShapeFamily parse_shape(const std::string &s) {
  if (s == "bar") return ShapeFamily::Bar;
  if (s == "rectangle") return ShapeFamily::Rectangle;
  if (s == "blob") return ShapeFamily::Blob;
  throw ConfigError("unknown shape family '" + s + "'");
}

const char *motion_name(MotionFamily m) {
  switch (m) {
  case MotionFamily::Translate4: return "translate-4dir";
  case MotionFamily::Translate8: return "translate-8dir";
  default: return "rotate-vs-translate";
  }
}

const char *shape_name(ShapeFamily s) {
  switch (s) {
  case ShapeFamily::Bar: return "bar";
  case ShapeFamily::Rectangle: return "rectangle";
  default: return "blob";
  }
}

int motion_arity(MotionFamily m) {
  switch (m) {
  case MotionFamily::Translate4: return 4;
  case MotionFamily::Translate8: return 8;
  default: return 2;
  }
}

namespace {
constexpr double kMargin = 2.5; // shapes keep this distance from the frame edge
}

void SynthSpec::validate() const {
  if (height < 4 || width < 4) throw ConfigError("data: frame extents must be >= 4");
  if (frames < 2) throw ConfigError("data: clips need at least 2 frames");
  if (channels < 1) throw ConfigError("data: channels must be >= 1");
  if (samples_per_class < 1) throw ConfigError("data: samples-per-class must be >= 1");
  if (num_classes != motion_arity(motion))
    throw ConfigError("data: classes must equal the motion family arity " +
                      std::to_string(motion_arity(motion)) + ", got " +
                      std::to_string(num_classes));
  if (velocity_min <= 0 || velocity_max < velocity_min)
    throw ConfigError("data: velocity range must satisfy 0 < min <= max");
  if (noise_sigma < 0) throw ConfigError("data: noise-sigma must be >= 0");
  // the fastest trajectory must stay inside the frame
  double margin = kMargin;
  double travel = velocity_max * static_cast<double>(frames - 1);
  if (2 * margin + travel > static_cast<double>(std::min(height, width) - 1))
    throw ConfigError("data: infeasible velocity/extent combination: shapes moving at " +
                      std::to_string(velocity_max) + " px/frame leave a " +
                      std::to_string(std::min(height, width)) + "px frame within " +
                      std::to_string(frames) + " frames");
}

// ------------------------------- rendering -----------------------------------

namespace {

// Direction unit vectors (dy, dx) per class, cardinal then diagonal.
constexpr double kDirs[8][2] = {{-1, 0}, {1, 0},  {0, -1}, {0, 1},
                                {-1, -1}, {-1, 1}, {1, -1}, {1, 1}};

double shape_intensity(ShapeFamily family, double dy, double dx, double size) {
  // anisotropic footprint so rotation is visible for every family
  const double sy = size * 0.45, sx = size;
  switch (family) {
  case ShapeFamily::Blob:
    return std::exp(-0.5 * (dy * dy / (sy * sy) + dx * dx / (sx * sx)));
  case ShapeFamily::Rectangle: {
    auto edge = [](double d, double half) {
      double t = (half - std::abs(d)) * 2.0; // soft 0.5px edge
      return std::clamp(t, 0.0, 1.0);
    };
    return edge(dy, sy) * edge(dx, sx);
  }
  case ShapeFamily::Bar: {
    auto edge = [](double d, double half) {
      double t = (half - std::abs(d)) * 2.0;
      return std::clamp(t, 0.0, 1.0);
    };
    return edge(dy, size * 0.22) * edge(dx, size * 1.4);
  }
  }
  return 0.0;
}

} // namespace

Tensor32 render_clip(const SynthSpec &spec, const ClipParams &p) {
  Tensor32 data({spec.channels, spec.frames, spec.height, spec.width});
  for (int64_t t = 0; t < spec.frames; ++t) {
    double cy = p.start_y + p.vel_y * static_cast<double>(t);
    double cx = p.start_x + p.vel_x * static_cast<double>(t);
    double ang = p.angle0 + p.angular_vel * static_cast<double>(t);
    double ca = std::cos(ang), sa = std::sin(ang);
    for (int64_t y = 0; y < spec.height; ++y)
      for (int64_t x = 0; x < spec.width; ++x) {
        double dy = static_cast<double>(y) - cy;
        double dx = static_cast<double>(x) - cx;
        // rotate offsets into the shape frame
        double ry = ca * dy - sa * dx;
        double rx = sa * dy + ca * dx;
        float v = static_cast<float>(p.intensity * shape_intensity(spec.shape, ry, rx, p.size));
        for (int64_t c = 0; c < spec.channels; ++c)
          data.data()[data.idx4(c, t, y, x)] = v;
      }
  }
  return data;
}

double max_feasible_velocity(const SynthSpec &spec) {
  return (static_cast<double>(std::min(spec.height, spec.width) - 1) - 2 * kMargin) /
         static_cast<double>(spec.frames - 1);
}

SynthSpec with_frames(const SynthSpec &spec, int64_t frames) {
  SynthSpec out = spec;
  out.frames = frames;
  double feasible = max_feasible_velocity(out);
  if (out.velocity_max > feasible) {
    out.velocity_max = feasible;
    out.velocity_min = std::min(out.velocity_min, 0.5 * feasible);
  }
  return out;
}

int64_t hflip_label(int64_t label, MotionFamily motion) {
  switch (motion) {
  case MotionFamily::Translate4:
    // up, down stay; left <-> right
    return label == 2 ? 3 : (label == 3 ? 2 : label);
  case MotionFamily::Translate8:
    if (label == 2 || label == 3) return label ^ 1;
    if (label >= 4) return label ^ 1; // diagonal pairs (4,5) and (6,7)
    return label;
  case MotionFamily::RotateVsTranslate:
    return label; // motion type survives mirroring
  }
  return label;
}

Dataset generate(const SynthSpec &spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.num_classes = spec.num_classes;
  ds.flip_safe = true;

  const double margin = kMargin;
  uint64_t video_id = 0;
  for (int cls = 0; cls < spec.num_classes; ++cls) {
    for (int i = 0; i < spec.samples_per_class; ++i, ++video_id) {
      Rng rng(Rng::mix(spec.seed, video_id));
      ClipParams p;
      p.label = cls;
      p.size = rng.uniform(1.6, 2.4);
      p.intensity = rng.uniform(0.7, 1.0);

      double speed = rng.uniform(spec.velocity_min, spec.velocity_max);
      bool rotate_class = spec.motion == MotionFamily::RotateVsTranslate && cls == 0;
      if (rotate_class) {
        p.vel_y = p.vel_x = 0.0;
        p.angle0 = rng.uniform(0.0, 3.14159);
        p.angular_vel = rng.uniform(0.18, 0.35) * (rng.uniform() < 0.5 ? 1.0 : -1.0);
      } else {
        int dir = spec.motion == MotionFamily::RotateVsTranslate
                      ? static_cast<int>(rng.uniform_int(0, 3))
                      : cls;
        double ny = kDirs[dir][0], nx = kDirs[dir][1];
        double norm = std::sqrt(ny * ny + nx * nx);
        p.vel_y = speed * ny / norm;
        p.vel_x = speed * nx / norm;
        if (spec.motion == MotionFamily::RotateVsTranslate)
          p.angle0 = rng.uniform(0.0, 3.14159);
      }

      // start anywhere that keeps the whole trajectory inside the margins
      double travel_y = p.vel_y * static_cast<double>(spec.frames - 1);
      double travel_x = p.vel_x * static_cast<double>(spec.frames - 1);
      double lo_y = margin + std::max(0.0, -travel_y);
      double hi_y = static_cast<double>(spec.height - 1) - margin - std::max(0.0, travel_y);
      double lo_x = margin + std::max(0.0, -travel_x);
      double hi_x = static_cast<double>(spec.width - 1) - margin - std::max(0.0, travel_x);
      p.start_y = rng.uniform(lo_y, hi_y);
      p.start_x = rng.uniform(lo_x, hi_x);

      VideoClip clip;
      clip.data = render_clip(spec, p);
      if (spec.noise_sigma > 0) {
        for (int64_t j = 0; j < clip.data.numel(); ++j) {
          double v = clip.data[j] + spec.noise_sigma * rng.normal();
          clip.data[j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
      clip.label = cls;
      clip.video_id = video_id;
      {
        std::ostringstream meta;
        meta << "start=(" << p.start_y << "," << p.start_x << ") vel=(" << p.vel_y << ","
             << p.vel_x << ") size=" << p.size;
        clip.meta = meta.str();
      }

      bool is_val = Rng::mix(spec.seed ^ 0x76616c5fULL, video_id) % 5 == 0; // ~20%
      (is_val ? ds.val : ds.train).push_back(std::move(clip));
    }
  }
  return ds;
}

// ------------------------------ augmentation ---------------------------------

static void check_crop(const VideoClip &clip, int64_t ch, int64_t cw) {
  if (ch > clip.data.dim(2) || cw > clip.data.dim(3) || ch < 1 || cw < 1)
    throw ConfigError("augment: crop " + std::to_string(ch) + "x" + std::to_string(cw) +
                      " does not fit frame " + std::to_string(clip.data.dim(2)) + "x" +
                      std::to_string(clip.data.dim(3)));
}

static VideoClip crop_at(const VideoClip &clip, int64_t y0, int64_t x0, int64_t ch, int64_t cw) {
  const auto &d = clip.data;
  VideoClip out;
  out.label = clip.label;
  out.video_id = clip.video_id;
  out.meta = clip.meta;
  out.data = Tensor32({d.dim(0), d.dim(1), ch, cw});
  for (int64_t c = 0; c < d.dim(0); ++c)
    for (int64_t t = 0; t < d.dim(1); ++t)
      for (int64_t y = 0; y < ch; ++y)
        std::memcpy(out.data.data() + out.data.idx4(c, t, y, 0),
                    d.data() + d.idx4(c, t, y0 + y, x0),
                    sizeof(float) * static_cast<size_t>(cw));
  return out;
}

std::vector<VideoClip> augment(const VideoClip &clip, const AugmentPolicy &policy,
                               const Dataset &context, const std::vector<float> &mean,
                               Rng &rng) {
  std::vector<VideoClip> clips;
  if (policy.five_crop && policy.crop_h > 0)
    clips = five_crop(clip, policy.crop_h, policy.crop_w);
  else if (policy.crop_h > 0)
    clips.push_back(random_crop(clip, policy.crop_h, policy.crop_w, rng));
  else
    clips.push_back(clip);

  if (policy.flip_prob > 0 && context.flip_safe)
    for (auto &c : clips)
      if (rng.uniform() < policy.flip_prob) c = hflip(c, context.spec.motion);

  if (policy.subtract_mean)
    for (auto &c : clips) c = mean_subtract(c, mean);
  return clips;
}

VideoClip random_crop(const VideoClip &clip, int64_t crop_h, int64_t crop_w, Rng &rng) {
  check_crop(clip, crop_h, crop_w);
  int64_t y0 = rng.uniform_int(0, clip.data.dim(2) - crop_h);
  int64_t x0 = rng.uniform_int(0, clip.data.dim(3) - crop_w);
  return crop_at(clip, y0, x0, crop_h, crop_w);
}

VideoClip hflip(const VideoClip &clip, MotionFamily motion) {
  const auto &d = clip.data;
  VideoClip out;
  out.label = hflip_label(clip.label, motion);
  out.video_id = clip.video_id;
  out.meta = clip.meta;
  out.data = Tensor32(d.dims());
  const int64_t W = d.dim(3);
  for (int64_t c = 0; c < d.dim(0); ++c)
    for (int64_t t = 0; t < d.dim(1); ++t)
      for (int64_t y = 0; y < d.dim(2); ++y)
        for (int64_t x = 0; x < W; ++x)
          out.data.data()[out.data.idx4(c, t, y, x)] = d.data()[d.idx4(c, t, y, W - 1 - x)];
  return out;
}

std::vector<VideoClip> five_crop(const VideoClip &clip, int64_t crop_h, int64_t crop_w) {
  check_crop(clip, crop_h, crop_w);
  const int64_t H = clip.data.dim(2), W = clip.data.dim(3);
  std::vector<VideoClip> out;
  out.push_back(crop_at(clip, 0, 0, crop_h, crop_w));
  out.push_back(crop_at(clip, 0, W - crop_w, crop_h, crop_w));
  out.push_back(crop_at(clip, H - crop_h, 0, crop_h, crop_w));
  out.push_back(crop_at(clip, H - crop_h, W - crop_w, crop_h, crop_w));
  out.push_back(crop_at(clip, (H - crop_h) / 2, (W - crop_w) / 2, crop_h, crop_w));
  return out;
}

std::vector<float> channel_mean(const std::vector<VideoClip> &clips) {
  if (clips.empty()) throw DataError("channel_mean: empty clip list");
  const int64_t C = clips[0].data.dim(0);
  std::vector<double> acc(static_cast<size_t>(C), 0.0);
  std::vector<int64_t> count(static_cast<size_t>(C), 0);
  for (const auto &clip : clips) {
    const auto &d = clip.data;
    const int64_t inner = d.numel() / C;
    for (int64_t c = 0; c < C; ++c) {
      const float *p = d.data() + c * inner;
      for (int64_t i = 0; i < inner; ++i) acc[static_cast<size_t>(c)] += p[i];
      count[static_cast<size_t>(c)] += inner;
    }
  }
  std::vector<float> mean(static_cast<size_t>(C));
  for (int64_t c = 0; c < C; ++c)
    mean[static_cast<size_t>(c)] =
        static_cast<float>(acc[static_cast<size_t>(c)] / static_cast<double>(count[static_cast<size_t>(c)]));
  return mean;
}

VideoClip mean_subtract(const VideoClip &clip, const std::vector<float> &mean) {
  const int64_t C = clip.data.dim(0);
  if (static_cast<int64_t>(mean.size()) != C)
    throw ShapeError("mean_subtract: mean length " + std::to_string(mean.size()) +
                     " does not match channels " + std::to_string(C));
  VideoClip out = clip;
  const int64_t inner = clip.data.numel() / C;
  for (int64_t c = 0; c < C; ++c) {
    float *p = out.data.data() + c * inner;
    for (int64_t i = 0; i < inner; ++i) p[i] -= mean[static_cast<size_t>(c)];
  }
  return out;
}

VideoClip shuffle_frames(const VideoClip &clip, Rng &rng) {
  const int64_t T = clip.data.dim(1);
  std::vector<int64_t> perm(static_cast<size_t>(T));
  for (int64_t i = 0; i < T; ++i) perm[static_cast<size_t>(i)] = i;
  for (int64_t i = T - 1; i > 0; --i)
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(rng.uniform_int(0, i))]);

  VideoClip out = clip;
  const int64_t frame = clip.data.dim(2) * clip.data.dim(3);
  for (int64_t c = 0; c < clip.data.dim(0); ++c)
    for (int64_t t = 0; t < T; ++t)
      std::memcpy(out.data.data() + (c * T + t) * frame,
                  clip.data.data() + (c * T + perm[static_cast<size_t>(t)]) * frame,
                  sizeof(float) * static_cast<size_t>(frame));
  return out;
}

// ------------------------------- file I/O ------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'V', 'C', '1'};

void put_u32(std::string &buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string &buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const unsigned char *p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint64_t get_u64(const unsigned char *p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

} // namespace

void write_clip(const VideoClip &clip, const std::string &path) {
  if (clip.data.rank() != 4)
    throw ShapeError("write_clip: clip data must be rank 4 (C,T,H,W), got " +
                     clip.data.shape_str());
  std::string header;
  header.append(kMagic, 4);
  put_u32(header, 1);                                    // version
  header.push_back(0);                                   // dtype: float32
  header.push_back(4);                                   // rank
  for (int i = 0; i < 4; ++i) put_u32(header, static_cast<uint32_t>(clip.data.dim(i)));
  put_u32(header, static_cast<uint32_t>(clip.label));
  put_u64(header, clip.video_id);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("write_clip: cannot open '" + path + "' for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char *>(clip.data.data()),
            static_cast<std::streamsize>(sizeof(float) * clip.data.numel()));
  if (!out) throw DataError("write_clip: short write to '" + path + "'");
}

VideoClip read_clip(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("read_clip: cannot open '" + path + "'");
  std::vector<unsigned char> header(38);
  in.read(reinterpret_cast<char *>(header.data()), 38);
  if (in.gcount() != 38)
    throw FormatError("read_clip: truncated header at byte offset " +
                      std::to_string(in.gcount()) + " in '" + path + "'");
  if (std::memcmp(header.data(), kMagic, 4) != 0)
    throw FormatError("read_clip: bad magic at byte offset 0 in '" + path + "'");
  if (get_u32(header.data() + 4) != 1)
    throw FormatError("read_clip: unsupported version at byte offset 4 in '" + path + "'");
  if (header[8] != 0)
    throw FormatError("read_clip: unsupported dtype at byte offset 8 in '" + path + "'");
  if (header[9] != 4)
    throw FormatError("read_clip: unsupported rank at byte offset 9 in '" + path + "'");

  std::vector<int64_t> dims(4);
  for (int i = 0; i < 4; ++i) dims[static_cast<size_t>(i)] = get_u32(header.data() + 10 + 4 * i);
  VideoClip clip;
  clip.label = get_u32(header.data() + 26);
  clip.video_id = get_u64(header.data() + 30);
  clip.data = Tensor32(dims);
  in.read(reinterpret_cast<char *>(clip.data.data()),
          static_cast<std::streamsize>(sizeof(float) * clip.data.numel()));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(float) * clip.data.numel()))
    throw FormatError("read_clip: truncated payload at byte offset " +
                      std::to_string(38 + in.gcount()) + " in '" + path + "'");
  return clip;
}

void write_dataset(const Dataset &dataset, const std::string &dir) {
  fs::create_directories(dir);
  std::ofstream index(fs::path(dir) / "index.tsv", std::ios::trunc);
  if (!index) throw DataError("write_dataset: cannot write index in '" + dir + "'");
  auto dump = [&](const std::vector<VideoClip> &clips, const char *split) {
    for (const auto &clip : clips) {
      char name[32];
      std::snprintf(name, sizeof(name), "clip_%06llu.svc",
                    static_cast<unsigned long long>(clip.video_id));
      write_clip(clip, (fs::path(dir) / name).string());
      index << name << "\t" << clip.label << "\t" << split << "\n";
    }
  };
  dump(dataset.train, "train");
  dump(dataset.val, "val");
}

Dataset read_dataset(const std::string &dir) {
  std::ifstream index(fs::path(dir) / "index.tsv");
  if (!index) throw DataError("read_dataset: no index.tsv in '" + dir + "'");
  Dataset ds;
  ds.flip_safe = true;
  std::string line;
  int64_t max_label = -1;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string rel, split;
    int64_t label = 0;
    if (!(ls >> rel >> label >> split))
      throw FormatError("read_dataset: malformed index line '" + line + "'");
    auto clip = read_clip((fs::path(dir) / rel).string());
    if (clip.label != label)
      throw FormatError("read_dataset: index label " + std::to_string(label) +
                        " disagrees with clip label " + std::to_string(clip.label) + " in '" +
                        rel + "'");
    max_label = std::max(max_label, label);
    if (split == "val")
      ds.val.push_back(std::move(clip));
    else
      ds.train.push_back(std::move(clip));
  }
  ds.num_classes = static_cast<int>(max_label + 1);
  return ds;
}

} // namespace stcnet::synth
