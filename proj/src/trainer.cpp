// SPDX-License-Identifier: Apache-2.0
#include "stcnet/trainer.hpp"

#include "stcnet/ops.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

namespace fs = std::filesystem;

namespace stcnet::train {

LrPolicy parse_lr_policy(const std::string &s) {
  if (s == "plateau") return LrPolicy::Plateau;
  if (s == "step") return LrPolicy::Step;
  throw ConfigError("unknown lr policy '" + s + "' (expected plateau or step)");
}

void OptimConfig::validate() const {
  if (lr <= 0) throw ConfigError("optim.lr must be positive");
  if (momentum < 0 || momentum >= 1) throw ConfigError("optim.momentum must be in [0,1)");
  if (weight_decay < 0) throw ConfigError("optim.weight-decay must be >= 0");
  if (batch_size < 1) throw ConfigError("optim.batch-size must be >= 1");
  if (max_epochs < 1) throw ConfigError("optim.max-epochs must be >= 1");
  if (lr_decay_factor <= 0) throw ConfigError("optim.lr-decay-factor must be positive");
  if (step_every < 1) throw ConfigError("optim.step-every must be >= 1");
  if (patience < 1) throw ConfigError("optim.patience must be >= 1");
  if (min_delta < 0) throw ConfigError("optim.min-delta must be >= 0");
}

template <typename T>
void sgd_step(Tensor<T> &param, const Tensor<T> &grad, Tensor<T> &velocity, double lr,
              double momentum, bool nesterov, double weight_decay) {
  if (!param.same_dims(grad))
    throw ShapeError("sgd_step: grad dims " + grad.shape_str() + " do not match param " +
                     param.shape_str());
  if (velocity.empty()) velocity = Tensor<T>(param.dims());
  const T mu = static_cast<T>(momentum);
  const T wd = static_cast<T>(weight_decay);
  const T step = static_cast<T>(lr);
  for (int64_t i = 0; i < param.numel(); ++i) {
    T g = grad[i] + wd * param[i];
    T v = mu * velocity[i] + g;
    velocity[i] = v;
    param[i] -= nesterov ? step * (g + mu * v) : step * v;
  }
}

template void sgd_step<float>(Tensor<float> &, const Tensor<float> &, Tensor<float> &, double,
                              double, bool, double);
template void sgd_step<double>(Tensor<double> &, const Tensor<double> &, Tensor<double> &,
                               double, double, bool, double);

SgdOptimizer::SgdOptimizer(std::vector<nets::ParamEntry> params, OptimConfig config)
    : params_(std::move(params)), config_(std::move(config)) {
  config_.validate();
  velocities_.resize(params_.size());
}

void SgdOptimizer::zero_grad() {
  for (auto &p : params_) p.var->grad = Tensor32();
}

void SgdOptimizer::step(double lr) {
  for (size_t i = 0; i < params_.size(); ++i) {
    auto &entry = params_[i];
    if (entry.var->grad.empty()) continue;
    double wd = (entry.decay || config_.decay_bn_and_bias) ? config_.weight_decay : 0.0;
    sgd_step(entry.var->value, entry.var->grad, velocities_[i], lr, config_.momentum,
             config_.nesterov, wd);
  }
}

double lr_schedule(int epoch, const std::vector<double> &val_loss_history,
                   const OptimConfig &config) {
  if (config.lr_policy == LrPolicy::Step)
    return config.lr / std::pow(config.lr_decay_factor, epoch / config.step_every);

  double best = std::numeric_limits<double>::infinity();
  int stall = 0, decays = 0;
  for (double loss : val_loss_history) {
    if (loss < best - config.min_delta) {
      best = loss;
      stall = 0;
    } else if (++stall >= config.patience) {
      ++decays;
      stall = 0;
    }
  }
  return config.lr / std::pow(config.lr_decay_factor, decays);
}

// ---------------------------- clip protocol ----------------------------------

std::vector<std::vector<int64_t>> sample_clips(int64_t video_len, int clip_len, int stride,
                                               bool train_mode, Rng *rng) {
  if (video_len < 1) throw DataError("sample_clips: empty video");
  if (clip_len < 1 || stride < 1)
    throw ConfigError("sample_clips: clip length and stride must be >= 1");

  const int64_t span = static_cast<int64_t>(clip_len) * stride;
  auto window = [&](int64_t start) {
    std::vector<int64_t> idx(static_cast<size_t>(clip_len));
    for (int i = 0; i < clip_len; ++i)
      idx[static_cast<size_t>(i)] = (start + static_cast<int64_t>(i) * stride) % video_len;
    return idx;
  };

  if (train_mode) {
    int64_t start = 0;
    if (video_len > span && rng) start = rng->uniform_int(0, video_len - span);
    return {window(start)};
  }

  std::vector<std::vector<int64_t>> clips;
  for (int64_t start = 0; start + span <= video_len; start += span) clips.push_back(window(start));
  if (clips.empty()) clips.push_back(window(0)); // short video: one loop-padded clip
  return clips;
}

void validate_stride(int stride, bool allow_free_form) {
  if (allow_free_form) {
    if (stride < 1) throw ConfigError("stride must be >= 1");
    return;
  }
  for (int s : {1, 2, 4, 16})
    if (stride == s) return;
  throw ConfigError("stride " + std::to_string(stride) +
                    " is outside the preset set {1,2,4,16}; pass the free-form flag to allow it");
}

Tensor32 gather_frames(const Tensor32 &video, const std::vector<int64_t> &idx) {
  const int64_t C = video.dim(0), H = video.dim(2), W = video.dim(3);
  const int64_t frame = H * W;
  Tensor32 out({C, static_cast<int64_t>(idx.size()), H, W});
  for (int64_t c = 0; c < C; ++c)
    for (size_t t = 0; t < idx.size(); ++t)
      std::copy_n(video.data() + (c * video.dim(1) + idx[t]) * frame, frame,
                  out.data() + (c * static_cast<int64_t>(idx.size()) + static_cast<int64_t>(t)) * frame);
  return out;
}

VideoPrediction average_clip_predictions(const Tensor32 &clip_logits) {
  if (clip_logits.rank() != 2 || clip_logits.dim(0) < 1)
    throw DataError("average_clip_predictions: need at least one clip row");
  auto probs = ops::softmax_rows(clip_logits);
  const int64_t n_clips = probs.dim(0), K = probs.dim(1);
  VideoPrediction pred;
  pred.probs.assign(static_cast<size_t>(K), 0.0);
  for (int64_t i = 0; i < n_clips; ++i)
    for (int64_t k = 0; k < K; ++k)
      pred.probs[static_cast<size_t>(k)] += static_cast<double>(probs.at(i, k));
  for (auto &p : pred.probs) p /= static_cast<double>(n_clips);

  pred.label = 0;
  for (int64_t k = 1; k < K; ++k)
    if (pred.probs[static_cast<size_t>(k)] > pred.probs[static_cast<size_t>(pred.label)])
      pred.label = k;
  return pred;
}

VideoPrediction evaluate_video(nets::Model &model, const std::vector<Tensor32> &clips) {
  if (clips.empty()) throw DataError("evaluate_video: need at least one clip");
  const auto &d0 = clips[0].dims();
  Tensor32 batch({static_cast<int64_t>(clips.size()), d0[0], d0[1], d0[2], d0[3]});
  for (size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].dims() != d0)
      throw ShapeError("evaluate_video: clips disagree in dims");
    std::copy_n(clips[i].data(), clips[i].numel(), batch.data() + static_cast<int64_t>(i) * clips[i].numel());
  }
  auto logits = model.forward(batch, false);
  return average_clip_predictions(logits->value);
}

// --------------------------------- runs --------------------------------------

namespace {

std::string format_row(const EpochRecord &r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.8g,%.6f,%.6f,%.6f,%.6f,%.3f", r.epoch, r.lr,
                r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.seconds);
  return buf;
}

constexpr const char *kCsvHeader = "epoch,lr,train_loss,train_acc,val_loss,val_acc,seconds";

} // namespace

void write_run_csv(const RunRecord &record, const std::string &path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("write_run_csv: cannot open '" + path + "'");
  out << kCsvHeader << "\n";
  for (const auto &r : record.epochs) out << format_row(r) << "\n";
}

EvalResult evaluate_dataset(nets::Model &model, const std::vector<synth::VideoClip> &videos,
                            int clip_stride) {
  const int clip_len = static_cast<int>(model.config().input_dims[1]);
  EvalResult res;
  if (videos.empty()) return res;
  int64_t correct = 0;
  double loss = 0;
  for (const auto &video : videos) {
    auto windows = sample_clips(video.data.dim(1), clip_len, clip_stride, false, nullptr);
    std::vector<Tensor32> clips;
    clips.reserve(windows.size());
    for (const auto &w : windows) clips.push_back(gather_frames(video.data, w));
    auto pred = evaluate_video(model, clips);
    if (pred.label == video.label) ++correct;
    loss += -std::log(std::max(pred.probs[static_cast<size_t>(video.label)], 1e-12));
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(videos.size());
  res.mean_loss = loss / static_cast<double>(videos.size());
  return res;
}

RunRecord train_model(nets::Model &model, SgdOptimizer &optimizer, const synth::Dataset &data,
                      const OptimConfig &config, const TrainOptions &options,
                      TrainState *state) {
  config.validate();
  if (data.train.empty()) throw DataError("train_model: dataset has no training videos");
  const int clip_len = static_cast<int>(model.config().input_dims[1]);
  const auto in_dims = model.config().input_dims;

  TrainState local;
  if (!state) {
    state = &local;
  }
  if (state->next_epoch == 0) state->rng = Rng(config.seed);

  RunRecord record;
  record.seed = config.seed;

  std::ofstream csv;
  if (!options.csv_path.empty()) {
    bool fresh = state->next_epoch == 0;
    csv.open(options.csv_path, fresh ? std::ios::trunc : std::ios::app);
    if (!csv) throw DataError("train_model: cannot open csv '" + options.csv_path + "'");
    if (fresh) csv << kCsvHeader << "\n";
  }

  std::vector<size_t> order(data.train.size());

  for (int epoch = state->next_epoch; epoch < config.max_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    double lr = lr_schedule(epoch, state->val_history, config);

    // deterministic shuffle of the identity order from the loop rng; a pure
    // function of the rng state so resumed runs reproduce the same batches
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<size_t>(state->rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);

    double loss_sum = 0;
    int64_t seen = 0, correct = 0;
    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(config.batch_size)) {
      size_t count = std::min(order.size() - pos, static_cast<size_t>(config.batch_size));
      // a trailing singleton would degenerate batch norm at 1x1x1 stages
      if (count == 1 && order.size() > 1) break;
      Tensor32 batch({static_cast<int64_t>(count), in_dims[0], in_dims[1], in_dims[2], in_dims[3]});
      std::vector<int64_t> labels(count);
      for (size_t b = 0; b < count; ++b) {
        const auto &video = data.train[order[pos + b]];
        auto idx = sample_clips(video.data.dim(1), clip_len, options.clip_stride, true,
                                &state->rng)[0];
        auto clip = gather_frames(video.data, idx);
        if (clip.dims() != std::vector<int64_t>{in_dims[0], in_dims[1], in_dims[2], in_dims[3]})
          throw ShapeError("train_model: clip dims " + clip.shape_str() +
                           " do not match the model input");
        std::copy_n(clip.data(), clip.numel(), batch.data() + static_cast<int64_t>(b) * clip.numel());
        labels[b] = video.label;
      }

      optimizer.zero_grad();
      auto logits = model.forward(batch, true);
      auto loss = ad::softmax_cross_entropy(logits, labels);
      double loss_val = static_cast<double>(loss->value[0]);
      if (!std::isfinite(loss_val)) {
        if (csv.is_open()) csv.flush();
        throw NumericError("train_model: non-finite loss at epoch " + std::to_string(epoch) +
                           ", aborting (lr=" + std::to_string(lr) + ")");
      }
      ad::backward(loss);
      optimizer.step(lr);

      loss_sum += loss_val * static_cast<double>(count);
      seen += static_cast<int64_t>(count);
      auto pred = ops::argmax_rows(logits->value);
      for (size_t b = 0; b < count; ++b)
        if (pred[b] == labels[b]) ++correct;
    }

    EpochRecord er;
    er.epoch = epoch;
    er.lr = lr;
    er.train_loss = loss_sum / static_cast<double>(seen);
    er.train_acc = static_cast<double>(correct) / static_cast<double>(seen);

    auto val = evaluate_dataset(model, data.val, options.clip_stride);
    er.val_loss = val.mean_loss;
    er.val_acc = val.accuracy;
    state->val_history.push_back(er.val_loss);

    er.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    record.epochs.push_back(er);
    state->next_epoch = epoch + 1;

    if (csv.is_open()) csv << format_row(er) << "\n" << std::flush;
    if (options.log)
      (*options.log) << "epoch " << er.epoch << " lr " << er.lr << " train_loss "
                     << er.train_loss << " train_acc " << er.train_acc << " val_acc "
                     << er.val_acc << "\n";
    if (options.on_epoch_end) options.on_epoch_end(epoch, *state);

    if (config.target_train_acc >= 0 && config.target_val_acc >= 0 &&
        er.train_acc >= config.target_train_acc && er.val_acc >= config.target_val_acc) {
      record.reached_targets = true;
      break;
    }
  }
  return record;
}

// ------------------------------- ablations -----------------------------------

AblationAxis parse_axis(const std::string &s) {
  if (s == "none" || s.empty()) return AblationAxis::None;
  if (s == "depth") return AblationAxis::Depth;
  if (s == "temporal-depth") return AblationAxis::TemporalDepth;
  if (s == "branch-mode") return AblationAxis::BranchMode;
  if (s == "stride") return AblationAxis::Stride;
  if (s == "family") return AblationAxis::Family;
  throw ConfigError("unknown ablation axis '" + s +
                    "' (expected depth, temporal-depth, branch-mode, stride or family)");
}

const char *axis_name(AblationAxis a) {
  switch (a) {
  case AblationAxis::None: return "none";
  case AblationAxis::Depth: return "depth";
  case AblationAxis::TemporalDepth: return "temporal-depth";
  case AblationAxis::BranchMode: return "branch-mode";
  case AblationAxis::Stride: return "stride";
  default: return "family";
  }
}

namespace {

struct Setting {
  std::string name;
  nets::ArchConfig arch;
  synth::SynthSpec data;
  int clip_stride = 1;
};

std::vector<Setting> expand_axis(const nets::ArchConfig &arch, const synth::SynthSpec &data,
                                 AblationAxis axis) {
  std::vector<Setting> out;
  auto base = [&](const std::string &name) {
    Setting s{name, arch, data, 1};
    return s;
  };
  switch (axis) {
  case AblationAxis::None:
    out.push_back(base("single"));
    break;
  case AblationAxis::Depth:
    for (int depth : {18, 50, 101}) {
      auto s = base(std::to_string(depth));
      s.arch.depth = depth;
      s.arch.blocks = {0, 0, 0, 0};
      s.arch.inner_widths = {0, 0, 0, 0};
      s.arch.basic_blocks = false;
      out.push_back(std::move(s));
    }
    break;
  case AblationAxis::TemporalDepth:
    for (int td : {4, 8}) {
      auto s = base(std::to_string(td));
      s.arch.input_dims[1] = td;
      s.data = synth::with_frames(s.data, 16); // room for either clip length
      out.push_back(std::move(s));
    }
    break;
  case AblationAxis::BranchMode:
    for (auto mode : {stc::BranchMode::SCB, stc::BranchMode::TCB, stc::BranchMode::Both}) {
      auto s = base(stc::branch_mode_name(mode));
      s.arch.branch_mode = mode;
      out.push_back(std::move(s));
    }
    break;
  case AblationAxis::Stride:
    for (int stride : {1, 2, 4, 16}) {
      validate_stride(stride, false);
      auto s = base(std::to_string(stride));
      s.clip_stride = stride;
      s.data = synth::with_frames(s.data, 64); // strided windows; stride 16 loop-pads
      out.push_back(std::move(s));
    }
    break;
  case AblationAxis::Family:
    for (auto fam : {nets::Family::ResNet3d, nets::Family::StcResNet}) {
      auto s = base(nets::family_name(fam));
      s.arch.family = fam;
      out.push_back(std::move(s));
    }
    break;
  }
  return out;
}

} // namespace

ExperimentResult run_experiment(const nets::ArchConfig &arch, const OptimConfig &optim,
                                const synth::SynthSpec &data_spec, AblationAxis axis,
                                const std::string &run_dir, std::ostream *log) {
  fs::create_directories(run_dir);
  ExperimentResult result;
  auto settings = expand_axis(arch, data_spec, axis);

  for (const auto &setting : settings) {
    if (log) (*log) << "[" << axis_name(axis) << "=" << setting.name << "] training\n";
    auto dataset = synth::generate(setting.data);
    auto model = nets::Model::build(setting.arch, optim.seed);
    SgdOptimizer optimizer(model.parameters(), optim);

    fs::path sub = fs::path(run_dir) / (std::string(axis_name(axis)) + "-" + setting.name);
    fs::create_directories(sub);
    TrainOptions options;
    options.clip_stride = setting.clip_stride;
    options.csv_path = (sub / "train_log.csv").string();
    options.log = log;
    auto record = train_model(model, optimizer, dataset, optim, options);

    AblationRow row;
    row.setting = setting.name;
    row.train_loss = record.last().train_loss;
    row.train_acc = record.last().train_acc;
    row.val_loss = record.last().val_loss;
    row.val_acc = record.last().val_acc;
    row.epochs_run = static_cast<int>(record.epochs.size());
    result.rows.push_back(row);
  }

  if (axis != AblationAxis::None) {
    fs::path csv_path = fs::path(run_dir) / "ablation.csv";
    std::ofstream csv(csv_path, std::ios::trunc);
    csv << "setting,train_loss,train_acc,val_loss,val_acc,epochs_run\n";
    for (const auto &row : result.rows) {
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%d", row.setting.c_str(),
                    row.train_loss, row.train_acc, row.val_loss, row.val_acc, row.epochs_run);
      csv << buf << "\n";
    }
    result.ablation_csv = csv_path.string();
  }
  return result;
}

} // namespace stcnet::train
