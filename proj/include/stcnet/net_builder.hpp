// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stcnet/stc_block.hpp"

#include <array>
#include <optional>
#include <string>

namespace stcnet::nets {

enum class Family { ResNet3d, StcResNet, StcResNext };

const char *family_name(Family f);
Family parse_family(const std::string &s);

// Declarative description of a 3D-ResNet / STC-ResNet / STC-ResNext variant.
// Depth presets expand to per-stage block counts; explicit counts are also
// accepted. All activation tensors are (N,C,T,H,W); reports print the
// conventional HxWxT order.
struct ArchConfig {
  Family family = Family::StcResNet;
  int depth = 0;                     // 18, 50 or 101; 0 with explicit blocks
  std::array<int, 4> blocks{};       // per-stage residual unit counts
  std::array<int, 4> stage_widths{}; // stage output widths
  std::array<int, 4> inner_widths{}; // bottleneck 3x3x3 widths (0 = derive)
  bool basic_blocks = false;         // two-conv units without expansion
  int cardinality = 1;               // groups of the 3x3x3 conv
  int reduction = 4;                 // STC r
  std::array<int, 4> tcb_hidden{};   // explicit per-stage gate fc widths (0 = C/r)
  stc::BranchMode branch_mode = stc::BranchMode::Both;
  std::array<int64_t, 4> input_dims{3, 16, 112, 112}; // (C,T,H,W)
  int num_classes = 400;
  int feature_dim = 0; // optional penultimate fc width (transfer student)

  int stem_width = 64;
  std::array<int, 3> stem_kernel{7, 7, 7};
  std::array<int, 3> stem_stride{2, 2, 2};
  std::array<int, 3> stem_padding{3, 3, 3};
  PoolSpec stem_pool{{3, 3, 3}, {1, 1, 1}, {1, 1, 1}};
  // (temporal, spatial) stride of each stage's first unit
  std::array<std::array<int, 2>, 4> stage_strides{{{1, 2}, {2, 2}, {2, 2}, {2, 2}}};

  bool stc_bias = true;
  bool bottleneck_relu = true;
  bool gate_bypass = false;

  bool has_stc() const { return family != Family::ResNet3d; }
  // Expands depth presets and derived widths in place, then checks every
  // field; violations raise ConfigError naming the field.
  void resolve();

  int inner_width(int stage) const;
  int tcb_width(int stage) const; // 0 means derive from reduction
};

// Presets addressable by name: resnet3d-{18,50,101}, stc-resnet-{18,50,101},
// stc-resnext-101, toy-resnet3d, toy-stc-resnet, toy-stc-resnext.
ArchConfig preset(const std::string &name);
std::vector<std::string> preset_names();

// ------------------------------- model --------------------------------------

struct Conv3dLayer {
  ConvSpec spec;
  ad::Var<float> weights;
};

struct BatchNormLayer {
  ad::Var<float> gamma, beta;
  Tensor32 running_mean, running_var;
  float eps = 1e-5f;
  float momentum = 0.1f;
};

struct AffineLayer {
  ad::Var<float> weights, bias;
};

struct ResidualUnit {
  struct PreActConv {
    BatchNormLayer bn;
    Conv3dLayer conv;
  };
  std::vector<PreActConv> path; // BN-ReLU-Conv composites
  std::optional<Conv3dLayer> projection;
  std::optional<stc::StcBlockParams<float>> stc;
};

struct ParamEntry {
  std::string name;
  ad::Var<float> var;
  bool decay = true; // weight decay applies (conv/fc weights only)
  std::string group; // checkpoint parameter group
};

struct BufferEntry {
  std::string name;
  Tensor32 *tensor;
  std::string group;
};

class Model {
public:
  static Model build(const ArchConfig &config, uint64_t seed);

  // Penultimate features (N,D): global pool, plus the feature fc when the
  // config carries one.
  ad::Var<float> features(const ad::Var<float> &x, bool train);
  ad::Var<float> forward(const ad::Var<float> &x, bool train);
  ad::Var<float> forward(const Tensor32 &input, bool train);

  const ArchConfig &config() const { return config_; }
  std::vector<ParamEntry> parameters();
  std::vector<BufferEntry> buffers();
  void set_gate_bypass(bool bypass);

private:
  ArchConfig config_;
  Conv3dLayer stem_;
  std::array<std::vector<ResidualUnit>, 4> stages_;
  BatchNormLayer final_bn_; // pre-activation nets normalize once more before pooling
  std::optional<AffineLayer> feature_fc_;
  AffineLayer classifier_;

  ad::Var<float> unit_forward(ResidualUnit &unit, const ad::Var<float> &x, bool train);
};

// ----------------------- static verification --------------------------------

struct ShapeRow {
  std::string layer;
  int64_t channels, t, h, w;
};

// Symbolic shape propagation through the configured graph; raises ShapeError
// naming the first violating layer and axis.
std::vector<ShapeRow> shape_check(const ArchConfig &config);
std::vector<ShapeRow> shape_check(const ArchConfig &config,
                                  const std::array<int64_t, 4> &input_dims);

struct ParamReport {
  struct Row {
    std::string layer;
    int64_t backbone = 0;
    int64_t stc = 0;
  };
  std::vector<Row> rows;
  int64_t backbone_total = 0;
  int64_t stc_total = 0;
  int64_t total() const { return backbone_total + stc_total; }
};

// Closed-form per-layer counts of trainable parameters from the config alone.
ParamReport param_count(const ArchConfig &config);

// Independent recount: walks a built model's registry and sums tensor sizes.
int64_t recount_parameters(Model &model);

} // namespace stcnet::nets
