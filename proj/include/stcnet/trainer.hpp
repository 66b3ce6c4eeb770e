// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stcnet/data_synth.hpp"
#include "stcnet/net_builder.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace stcnet::train {

enum class LrPolicy { Plateau, Step };

LrPolicy parse_lr_policy(const std::string &s);

struct OptimConfig {
  double lr = 0.1;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
  int batch_size = 16;
  int max_epochs = 200;
  double lr_decay_factor = 10.0;
  LrPolicy lr_policy = LrPolicy::Plateau;
  int step_every = 30;     // step policy period
  double min_delta = 1e-3; // plateau improvement threshold
  int patience = 10;       // plateau stall epochs before decay
  bool decay_bn_and_bias = false;
  uint64_t seed = 0;
  // optional early stop once both targets are reached (negative = off)
  double target_train_acc = -1.0;
  double target_val_acc = -1.0;

  void validate() const;
};

// One SGD update. Weight decay folds into the gradient (g += wd*p), then
// v <- mu*v + g and p <- p - lr*(g + mu*v) with Nesterov, p <- p - lr*v
// without.
template <typename T>
void sgd_step(Tensor<T> &param, const Tensor<T> &grad, Tensor<T> &velocity, double lr,
              double momentum, bool nesterov, double weight_decay);

class SgdOptimizer {
public:
  SgdOptimizer(std::vector<nets::ParamEntry> params, OptimConfig config);

  void zero_grad();
  // Applies one update from the gradients stored in the parameter vars.
  void step(double lr);

  const std::vector<nets::ParamEntry> &params() const { return params_; }
  std::vector<Tensor32> &velocities() { return velocities_; }

private:
  std::vector<nets::ParamEntry> params_;
  std::vector<Tensor32> velocities_;
  OptimConfig config_;
};

// Learning rate for `epoch` given the completed validation-loss history.
// Plateau: divide by the decay factor when val loss fails to improve by
// min_delta for `patience` epochs. Step: divide every step_every epochs.
double lr_schedule(int epoch, const std::vector<double> &val_loss_history,
                   const OptimConfig &config);

// ---------------------------- clip protocol ----------------------------------

// Frame-index lists. Train mode draws one random strided window; eval mode
// tiles non-overlapping windows of span clip_len*stride across the video.
// Videos shorter than one window loop-pad (indices wrap).
std::vector<std::vector<int64_t>> sample_clips(int64_t video_len, int clip_len, int stride,
                                               bool train_mode, Rng *rng);

// The sampling-rate ablation presets cover strides {1,2,4,16}; other values
// need the explicit free-form flag.
void validate_stride(int stride, bool allow_free_form);

Tensor32 gather_frames(const Tensor32 &video, const std::vector<int64_t> &idx);

struct VideoPrediction {
  int64_t label = 0;
  std::vector<double> probs;
};

// Softmax per clip, arithmetic mean over clips, argmax with ties broken
// toward the lowest class index. clip_logits is (clips, classes).
VideoPrediction average_clip_predictions(const Tensor32 &clip_logits);
VideoPrediction evaluate_video(nets::Model &model, const std::vector<Tensor32> &clips);

// --------------------------------- runs --------------------------------------

struct EpochRecord {
  int epoch = 0;
  double lr = 0, train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0, seconds = 0;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  uint64_t seed = 0;
  std::string config_digest;
  bool reached_targets = false;

  const EpochRecord &last() const { return epochs.back(); }
};

// CSV with the fixed header epoch,lr,train_loss,train_acc,val_loss,val_acc,seconds.
void write_run_csv(const RunRecord &record, const std::string &path);

struct TrainState {
  int next_epoch = 0;
  std::vector<double> val_history;
  Rng rng{0};
};

struct TrainOptions {
  int clip_stride = 1;
  std::string csv_path;       // per-epoch rows appended as they complete
  std::ostream *log = nullptr;
  std::function<void(int epoch, const TrainState &)> on_epoch_end;
};

// Runs the SGD loop; resumes from *state when given (and leaves the final
// loop state there). Non-finite losses abort with NumericError after the
// partial record is flushed.
RunRecord train_model(nets::Model &model, SgdOptimizer &optimizer, const synth::Dataset &data,
                      const OptimConfig &config, const TrainOptions &options = {},
                      TrainState *state = nullptr);

// Video-level evaluation over a clip list per the eval protocol.
struct EvalResult {
  double accuracy = 0;
  double mean_loss = 0;
};
EvalResult evaluate_dataset(nets::Model &model, const std::vector<synth::VideoClip> &videos,
                            int clip_stride);

// ------------------------------- ablations -----------------------------------

enum class AblationAxis { None, Depth, TemporalDepth, BranchMode, Stride, Family };

AblationAxis parse_axis(const std::string &s);
const char *axis_name(AblationAxis a);

struct AblationRow {
  std::string setting;
  double train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0;
  int epochs_run = 0;
};

struct ExperimentResult {
  std::vector<AblationRow> rows;
  std::string ablation_csv; // written file, empty for single runs
};

// Sweeps the requested axis (depth 18/50/101, temporal depth, branch mode
// SCB/TCB/BOTH, input stride 1/2/4/16, or the plain-vs-gated family
// comparison), trains one model per setting and writes one CSV row each.
ExperimentResult run_experiment(const nets::ArchConfig &arch, const OptimConfig &optim,
                                const synth::SynthSpec &data_spec, AblationAxis axis,
                                const std::string &run_dir, std::ostream *log = nullptr);

} // namespace stcnet::train
