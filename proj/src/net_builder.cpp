// SPDX-License-Identifier: Apache-2.0
#include "stcnet/net_builder.hpp"

#include <algorithm>

namespace stcnet::nets {

const char *family_name(Family f) {
  switch (f) {
  case Family::ResNet3d: return "resnet3d";
  case Family::StcResNet: return "stc-resnet";
  default: return "stc-resnext";
  }
}

Family parse_family(const std::string &s) {
  if (s == "resnet3d") return Family::ResNet3d;
  if (s == "stc-resnet") return Family::StcResNet;
  if (s == "stc-resnext") return Family::StcResNext;
  throw ConfigError("unknown family '" + s + "' (expected resnet3d, stc-resnet or stc-resnext)");
}

void ArchConfig::resolve() {
  bool blocks_given = std::any_of(blocks.begin(), blocks.end(), [](int b) { return b != 0; });
  if (!blocks_given) {
    switch (depth) {
    case 18:
      blocks = {2, 2, 2, 2};
      basic_blocks = true;
      break;
    case 50:
      blocks = {3, 4, 6, 3};
      basic_blocks = false;
      break;
    case 101:
      blocks = {3, 4, 23, 3};
      basic_blocks = false;
      break;
    default:
      throw ConfigError("arch.depth must be one of 18/50/101 when block counts are not given, "
                        "got " + std::to_string(depth));
    }
  }
  for (int b : blocks)
    if (b < 1) throw ConfigError("arch.blocks entries must be >= 1");

  bool widths_given =
      std::any_of(stage_widths.begin(), stage_widths.end(), [](int w) { return w != 0; });
  if (!widths_given) stage_widths = basic_blocks ? std::array<int, 4>{64, 128, 256, 512}
                                                 : std::array<int, 4>{256, 512, 1024, 2048};
  for (int w : stage_widths)
    if (w < 1) throw ConfigError("arch.widths entries must be >= 1");

  if (!basic_blocks) {
    for (int s = 0; s < 4; ++s) {
      if (inner_widths[s] == 0)
        inner_widths[s] = family == Family::StcResNext ? stage_widths[s] / 2
                                                       : stage_widths[s] / 4;
      if (inner_widths[s] < 1)
        throw ConfigError("arch.inner-widths entries must be >= 1");
    }
  }

  if (cardinality < 1) throw ConfigError("arch.cardinality must be >= 1");
  if (cardinality > 1) {
    if (basic_blocks)
      throw ConfigError("arch.cardinality > 1 requires bottleneck blocks");
    for (int s = 0; s < 4; ++s)
      if (inner_widths[s] % cardinality != 0)
        throw ConfigError("arch.cardinality " + std::to_string(cardinality) +
                          " does not divide the stage " + std::to_string(s + 1) +
                          " bottleneck width " + std::to_string(inner_widths[s]));
  }

  if (reduction < 1) throw ConfigError("arch.r must be >= 1");
  for (int s = 0; s < 4; ++s) {
    if (tcb_hidden[s] < 0) throw ConfigError("arch.tcb-hidden entries must be >= 0");
    if (tcb_hidden[s] > 0 && stage_widths[s] % tcb_hidden[s] != 0)
      throw ConfigError("arch.tcb-hidden " + std::to_string(tcb_hidden[s]) +
                        " must divide the stage width " + std::to_string(stage_widths[s]));
  }

  for (int64_t d : input_dims)
    if (d < 1) throw ConfigError("arch.input extents must be >= 1");
  if (num_classes < 1) throw ConfigError("arch.classes must be >= 1");
  if (feature_dim < 0) throw ConfigError("arch.feature-dim must be >= 0");
  if (stem_width < 1) throw ConfigError("arch.stem-width must be >= 1");
  for (auto &ss : stage_strides)
    if (ss[0] < 1 || ss[1] < 1) throw ConfigError("arch.stage-strides must be >= 1");
}

int ArchConfig::inner_width(int stage) const {
  return basic_blocks ? stage_widths[static_cast<size_t>(stage)]
                      : inner_widths[static_cast<size_t>(stage)];
}

int ArchConfig::tcb_width(int stage) const { return tcb_hidden[static_cast<size_t>(stage)]; }

ArchConfig preset(const std::string &name) {
  ArchConfig cfg;
  auto toy_base = [&](Family fam) {
    cfg.family = fam;
    cfg.blocks = {1, 1, 1, 1};
    cfg.stage_widths = {8, 16, 32, 64};
    cfg.basic_blocks = true;
    cfg.input_dims = {1, 8, 16, 16};
    cfg.num_classes = 4;
    cfg.stem_width = 8;
    cfg.reduction = 4;
    // light stem for 16x16 inputs
    cfg.stem_kernel = {3, 3, 3};
    cfg.stem_padding = {1, 1, 1};
  };

  if (name == "resnet3d-18" || name == "stc-resnet-18") {
    cfg.family = name[0] == 'r' ? Family::ResNet3d : Family::StcResNet;
    cfg.depth = 18;
  } else if (name == "resnet3d-50" || name == "stc-resnet-50") {
    cfg.family = name[0] == 'r' ? Family::ResNet3d : Family::StcResNet;
    cfg.depth = 50;
  } else if (name == "resnet3d-101" || name == "stc-resnet-101") {
    cfg.family = name[0] == 'r' ? Family::ResNet3d : Family::StcResNet;
    cfg.depth = 101;
    if (cfg.family == Family::StcResNet) cfg.tcb_hidden = {16, 32, 64, 128};
  } else if (name == "stc-resnext-101") {
    cfg.family = Family::StcResNext;
    cfg.depth = 101;
    cfg.cardinality = 32;
    cfg.inner_widths = {128, 256, 512, 512};
    cfg.tcb_hidden = {16, 32, 64, 128};
  } else if (name == "toy-resnet3d") {
    toy_base(Family::ResNet3d);
  } else if (name == "toy-stc-resnet") {
    toy_base(Family::StcResNet);
  } else if (name == "toy-stc-resnext") {
    toy_base(Family::StcResNext);
    cfg.basic_blocks = false;
    cfg.inner_widths = {4, 8, 16, 32};
    cfg.cardinality = 4;
  } else {
    throw ConfigError("unknown architecture preset '" + name + "'");
  }
  cfg.resolve();
  return cfg;
}

std::vector<std::string> preset_names() {
  return {"resnet3d-18",  "resnet3d-50",   "resnet3d-101",
          "stc-resnet-18", "stc-resnet-50", "stc-resnet-101",
          "stc-resnext-101", "toy-resnet3d", "toy-stc-resnet", "toy-stc-resnext"};
}

// ------------------------- shared derivations --------------------------------

namespace {

std::array<int64_t, 3> propagate_or_name(const ConvSpec &spec, int64_t t, int64_t h, int64_t w,
                                         const std::string &layer) {
  try {
    return spec.out_extents(t, h, w);
  } catch (const ShapeError &e) {
    throw ShapeError(layer + ": " + e.what());
  }
}

std::array<int64_t, 3> propagate_or_name(const PoolSpec &spec, int64_t t, int64_t h, int64_t w,
                                         const std::string &layer) {
  try {
    return spec.out_extents(t, h, w);
  } catch (const ShapeError &e) {
    throw ShapeError(layer + ": " + e.what());
  }
}

ConvSpec stem_spec(const ArchConfig &cfg) {
  ConvSpec s;
  s.in_channels = static_cast<int>(cfg.input_dims[0]);
  s.out_channels = cfg.stem_width;
  s.kernel = cfg.stem_kernel;
  s.stride = cfg.stem_stride;
  s.padding = cfg.stem_padding;
  return s;
}

stc::StcBlockSpec stc_spec_for(const ArchConfig &cfg, int stage, int64_t t_out) {
  stc::StcBlockSpec s;
  s.channels = cfg.stage_widths[static_cast<size_t>(stage)];
  s.temporal = static_cast<int>(t_out);
  s.mode = cfg.branch_mode;
  s.use_bias = cfg.stc_bias;
  s.bottleneck_relu = cfg.bottleneck_relu;
  if (cfg.tcb_width(stage) > 0) {
    s.tcb_hidden = cfg.tcb_width(stage);
    int implied_r = s.channels / s.tcb_hidden;
    int64_t tc = static_cast<int64_t>(s.temporal) * s.channels;
    if (tc % implied_r != 0)
      throw ConfigError("arch.tcb-hidden implies reduction " + std::to_string(implied_r) +
                        " which does not divide T*C = " + std::to_string(tc) + " at stage " +
                        std::to_string(stage + 1));
    s.scb_hidden = static_cast<int>(tc / implied_r);
    s.reduction = implied_r;
  } else {
    s.reduction = cfg.reduction;
  }
  s.validate();
  return s;
}

// Conv specs of one residual unit: the stride sits on the 3x3x3 conv of
// bottleneck units and on the first conv of basic units.
std::vector<ConvSpec> unit_conv_specs(const ArchConfig &cfg, int stage, int in_ch, bool first) {
  const int out_ch = cfg.stage_widths[static_cast<size_t>(stage)];
  const int width = cfg.inner_width(stage);
  const auto ss = cfg.stage_strides[static_cast<size_t>(stage)];
  std::array<int, 3> stride = first ? std::array<int, 3>{ss[0], ss[1], ss[1]}
                                    : std::array<int, 3>{1, 1, 1};
  std::vector<ConvSpec> specs;
  if (cfg.basic_blocks) {
    ConvSpec a;
    a.in_channels = in_ch;
    a.out_channels = out_ch;
    a.kernel = {3, 3, 3};
    a.stride = stride;
    a.padding = {1, 1, 1};
    ConvSpec b = a;
    b.in_channels = out_ch;
    b.stride = {1, 1, 1};
    specs = {a, b};
  } else {
    ConvSpec reduce;
    reduce.in_channels = in_ch;
    reduce.out_channels = width;
    ConvSpec mid;
    mid.in_channels = width;
    mid.out_channels = width;
    mid.groups = cfg.cardinality;
    mid.kernel = {3, 3, 3};
    mid.stride = stride;
    mid.padding = {1, 1, 1};
    ConvSpec expand;
    expand.in_channels = width;
    expand.out_channels = out_ch;
    specs = {reduce, mid, expand};
  }
  return specs;
}

} // namespace

// ------------------------------- building ------------------------------------

namespace {

Conv3dLayer make_conv(const ConvSpec &spec, Rng &rng) {
  spec.validate();
  Conv3dLayer layer;
  layer.spec = spec;
  Tensor32 w({spec.out_channels, spec.in_channels / spec.groups, spec.kernel[0], spec.kernel[1],
              spec.kernel[2]});
  int64_t fan_in = static_cast<int64_t>(spec.in_channels / spec.groups) * spec.kernel[0] *
                   spec.kernel[1] * spec.kernel[2];
  fill_fan_in_uniform(w, fan_in, rng);
  layer.weights = ad::leaf(std::move(w), true, "conv_w");
  return layer;
}

BatchNormLayer make_bn(int channels) {
  BatchNormLayer bn;
  bn.gamma = ad::leaf(Tensor32::ones({channels}), true, "bn_gamma");
  bn.beta = ad::leaf(Tensor32({channels}), true, "bn_beta");
  bn.running_mean = Tensor32({channels});
  bn.running_var = Tensor32::ones({channels});
  return bn;
}

AffineLayer make_affine(int64_t out, int64_t in, Rng &rng) {
  AffineLayer fc;
  Tensor32 w({out, in});
  fill_fan_in_uniform(w, in, rng);
  fc.weights = ad::leaf(std::move(w), true, "fc_w");
  fc.bias = ad::leaf(Tensor32({out}), true, "fc_b");
  return fc;
}

} // namespace

Model Model::build(const ArchConfig &config, uint64_t seed) {
  ArchConfig cfg = config;
  cfg.resolve();
  // surfaces inconsistent extents before any allocation
  shape_check(cfg);

  Model m;
  m.config_ = cfg;
  Rng rng(seed);

  m.stem_ = make_conv(stem_spec(cfg), rng);
  int64_t t = cfg.input_dims[1], h = cfg.input_dims[2], w = cfg.input_dims[3];
  auto e = m.stem_.spec.out_extents(t, h, w);
  t = e[0], h = e[1], w = e[2];
  e = cfg.stem_pool.out_extents(t, h, w);
  t = e[0], h = e[1], w = e[2];

  int in_ch = cfg.stem_width;
  for (int s = 0; s < 4; ++s) {
    const int out_ch = cfg.stage_widths[static_cast<size_t>(s)];
    for (int i = 0; i < cfg.blocks[static_cast<size_t>(s)]; ++i) {
      bool first = i == 0;
      ResidualUnit unit;
      auto specs = unit_conv_specs(cfg, s, in_ch, first);
      for (const auto &cs : specs) {
        ResidualUnit::PreActConv pac;
        pac.bn = make_bn(cs.in_channels);
        pac.conv = make_conv(cs, rng);
        unit.path.push_back(std::move(pac));
      }
      const auto &strided = cfg.basic_blocks ? specs[0] : specs[1];
      if (first) {
        auto se = strided.out_extents(t, h, w);
        t = se[0], h = se[1], w = se[2];
      }
      bool need_proj = in_ch != out_ch || (first && (strided.stride[0] != 1 ||
                                                     strided.stride[1] != 1 ||
                                                     strided.stride[2] != 1));
      if (need_proj) {
        ConvSpec ps;
        ps.in_channels = in_ch;
        ps.out_channels = out_ch;
        ps.stride = first ? strided.stride : std::array<int, 3>{1, 1, 1};
        unit.projection = make_conv(ps, rng);
      }
      if (cfg.has_stc()) {
        auto sspec = stc_spec_for(cfg, s, t);
        unit.stc = stc::make_stc_params<float>(sspec, rng);
        unit.stc->gate_bypass = cfg.gate_bypass;
      }
      m.stages_[static_cast<size_t>(s)].push_back(std::move(unit));
      in_ch = out_ch;
    }
  }

  m.final_bn_ = make_bn(cfg.stage_widths[3]);
  int64_t feat = cfg.stage_widths[3];
  if (cfg.feature_dim > 0) {
    m.feature_fc_ = make_affine(cfg.feature_dim, feat, rng);
    feat = cfg.feature_dim;
  }
  m.classifier_ = make_affine(cfg.num_classes, feat, rng);
  return m;
}

ad::Var<float> Model::unit_forward(ResidualUnit &unit, const ad::Var<float> &x, bool train) {
  auto conv_path = [&](const ad::Var<float> &in) {
    ad::Var<float> v = in;
    for (auto &pac : unit.path) {
      v = ad::batchnorm(v, pac.bn.gamma, pac.bn.beta, &pac.bn.running_mean, &pac.bn.running_var,
                        train, pac.bn.eps, pac.bn.momentum);
      v = ad::relu(v);
      v = ad::conv3d(v, pac.conv.weights, ad::Var<float>(), pac.conv.spec);
    }
    return v;
  };
  auto shortcut = [&](const ad::Var<float> &in) {
    if (unit.projection)
      return ad::conv3d(in, unit.projection->weights, ad::Var<float>(), unit.projection->spec);
    return in;
  };
  if (unit.stc) return stc::stc_residual_unit<float>(x, conv_path, shortcut, *unit.stc);
  auto path_out = conv_path(x);
  auto sc = shortcut(x);
  if (!path_out->value.same_dims(sc->value))
    throw ShapeError("residual unit: conv path output " + path_out->value.shape_str() +
                     " does not match shortcut " + sc->value.shape_str());
  return ad::add(sc, path_out);
}

ad::Var<float> Model::features(const ad::Var<float> &x, bool train) {
  if (x->value.rank() != 5 || x->value.dim(1) != config_.input_dims[0])
    throw ShapeError("stem: expected (N," + std::to_string(config_.input_dims[0]) +
                     ",T,H,W) input, got " + x->value.shape_str());
  auto v = ad::conv3d(x, stem_.weights, ad::Var<float>(), stem_.spec);
  v = ad::maxpool3d(v, config_.stem_pool);
  for (auto &stage : stages_)
    for (auto &unit : stage) v = unit_forward(unit, v, train);
  v = ad::batchnorm(v, final_bn_.gamma, final_bn_.beta, &final_bn_.running_mean,
                    &final_bn_.running_var, train, final_bn_.eps, final_bn_.momentum);
  v = ad::relu(v);
  v = ad::mean_over_thw(v);
  if (feature_fc_) v = ad::relu(ad::affine(v, feature_fc_->weights, feature_fc_->bias));
  return v;
}

ad::Var<float> Model::forward(const ad::Var<float> &x, bool train) {
  return ad::affine(features(x, train), classifier_.weights, classifier_.bias);
}

ad::Var<float> Model::forward(const Tensor32 &input, bool train) {
  return forward(ad::constant(input), train);
}

std::vector<ParamEntry> Model::parameters() {
  std::vector<ParamEntry> out;
  out.push_back({"stem.conv.weights", stem_.weights, true, "backbone"});
  for (int s = 0; s < 4; ++s) {
    for (size_t i = 0; i < stages_[static_cast<size_t>(s)].size(); ++i) {
      auto &unit = stages_[static_cast<size_t>(s)][i];
      std::string base = "stage" + std::to_string(s + 1) + ".unit" + std::to_string(i) + ".";
      for (size_t j = 0; j < unit.path.size(); ++j) {
        std::string cb = base + std::to_string(j);
        out.push_back({cb + ".bn.gamma", unit.path[j].bn.gamma, false, "backbone"});
        out.push_back({cb + ".bn.beta", unit.path[j].bn.beta, false, "backbone"});
        out.push_back({cb + ".conv.weights", unit.path[j].conv.weights, true, "backbone"});
      }
      if (unit.projection)
        out.push_back({base + "proj.weights", unit.projection->weights, true, "backbone"});
      if (unit.stc) {
        auto add_param = [&](const char *n, const ad::Var<float> &v, bool decay) {
          if (v) out.push_back({base + "stc." + n, v, decay, "stc"});
        };
        add_param("tcb_w1", unit.stc->tcb_w1, true);
        add_param("tcb_b1", unit.stc->tcb_b1, false);
        add_param("tcb_w2", unit.stc->tcb_w2, true);
        add_param("tcb_b2", unit.stc->tcb_b2, false);
        add_param("scb_w1", unit.stc->scb_w1, true);
        add_param("scb_b1", unit.stc->scb_b1, false);
        add_param("scb_w2", unit.stc->scb_w2, true);
        add_param("scb_b2", unit.stc->scb_b2, false);
      }
    }
  }
  out.push_back({"final_bn.gamma", final_bn_.gamma, false, "backbone"});
  out.push_back({"final_bn.beta", final_bn_.beta, false, "backbone"});
  if (feature_fc_) {
    out.push_back({"feature_fc.weights", feature_fc_->weights, true, "backbone"});
    out.push_back({"feature_fc.bias", feature_fc_->bias, false, "backbone"});
  }
  out.push_back({"classifier.weights", classifier_.weights, true, "backbone"});
  out.push_back({"classifier.bias", classifier_.bias, false, "backbone"});
  return out;
}

std::vector<BufferEntry> Model::buffers() {
  std::vector<BufferEntry> out;
  for (int s = 0; s < 4; ++s)
    for (size_t i = 0; i < stages_[static_cast<size_t>(s)].size(); ++i) {
      auto &unit = stages_[static_cast<size_t>(s)][i];
      std::string base = "stage" + std::to_string(s + 1) + ".unit" + std::to_string(i) + ".";
      for (size_t j = 0; j < unit.path.size(); ++j) {
        std::string cb = base + std::to_string(j);
        out.push_back({cb + ".bn.running_mean", &unit.path[j].bn.running_mean, "backbone"});
        out.push_back({cb + ".bn.running_var", &unit.path[j].bn.running_var, "backbone"});
      }
    }
  out.push_back({"final_bn.running_mean", &final_bn_.running_mean, "backbone"});
  out.push_back({"final_bn.running_var", &final_bn_.running_var, "backbone"});
  return out;
}

void Model::set_gate_bypass(bool bypass) {
  config_.gate_bypass = bypass;
  for (auto &stage : stages_)
    for (auto &unit : stage)
      if (unit.stc) unit.stc->gate_bypass = bypass;
}

// ----------------------- static verification --------------------------------

std::vector<ShapeRow> shape_check(const ArchConfig &config) {
  return shape_check(config, config.input_dims);
}

std::vector<ShapeRow> shape_check(const ArchConfig &config,
                                  const std::array<int64_t, 4> &input_dims) {
  ArchConfig cfg = config;
  cfg.resolve();
  std::vector<ShapeRow> rows;
  int64_t t = input_dims[1], h = input_dims[2], w = input_dims[3];

  auto e = propagate_or_name(stem_spec(cfg), t, h, w, "conv1");
  t = e[0], h = e[1], w = e[2];
  rows.push_back({"conv1", cfg.stem_width, t, h, w});
  e = propagate_or_name(cfg.stem_pool, t, h, w, "pool1");
  t = e[0], h = e[1], w = e[2];
  rows.push_back({"pool1", cfg.stem_width, t, h, w});

  int in_ch = cfg.stem_width;
  for (int s = 0; s < 4; ++s) {
    std::string name = "res" + std::to_string(s + 1);
    auto specs = unit_conv_specs(cfg, s, in_ch, true);
    const auto &strided = cfg.basic_blocks ? specs[0] : specs[1];
    e = propagate_or_name(strided, t, h, w, name);
    t = e[0], h = e[1], w = e[2];
    rows.push_back({name, cfg.stage_widths[static_cast<size_t>(s)], t, h, w});
    in_ch = cfg.stage_widths[static_cast<size_t>(s)];
  }
  rows.push_back({"classifier", cfg.num_classes, 1, 1, 1});
  return rows;
}

ParamReport param_count(const ArchConfig &config) {
  ArchConfig cfg = config;
  cfg.resolve();
  ParamReport report;

  auto conv_params = [](const ConvSpec &s) {
    return static_cast<int64_t>(s.out_channels) * (s.in_channels / s.groups) * s.kernel[0] *
           s.kernel[1] * s.kernel[2];
  };

  auto stem = stem_spec(cfg);
  report.rows.push_back({"conv1", conv_params(stem), 0});
  report.rows.push_back({"pool1", 0, 0});

  int64_t t = cfg.input_dims[1], h = cfg.input_dims[2], w = cfg.input_dims[3];
  auto e = stem.out_extents(t, h, w);
  t = e[0], h = e[1], w = e[2];
  e = cfg.stem_pool.out_extents(t, h, w);
  t = e[0], h = e[1], w = e[2];

  int in_ch = cfg.stem_width;
  for (int s = 0; s < 4; ++s) {
    int64_t backbone = 0, stc_total = 0;
    const int out_ch = cfg.stage_widths[static_cast<size_t>(s)];
    for (int i = 0; i < cfg.blocks[static_cast<size_t>(s)]; ++i) {
      bool first = i == 0;
      auto specs = unit_conv_specs(cfg, s, in_ch, first);
      for (const auto &cs : specs) {
        backbone += 2 * cs.in_channels; // bn gamma+beta
        backbone += conv_params(cs);
      }
      const auto &strided = cfg.basic_blocks ? specs[0] : specs[1];
      if (first) {
        auto se = strided.out_extents(t, h, w);
        t = se[0], h = se[1], w = se[2];
      }
      bool need_proj = in_ch != out_ch || (first && (strided.stride[0] != 1 ||
                                                     strided.stride[1] != 1 ||
                                                     strided.stride[2] != 1));
      if (need_proj) backbone += static_cast<int64_t>(in_ch) * out_ch;
      if (cfg.has_stc()) stc_total += stc::stc_param_count(stc_spec_for(cfg, s, t)).total();
      in_ch = out_ch;
    }
    report.rows.push_back({"res" + std::to_string(s + 1), backbone, stc_total});
  }

  int64_t feat = cfg.stage_widths[3];
  int64_t head = 2 * cfg.stage_widths[3]; // final bn
  if (cfg.feature_dim > 0) {
    head += feat * cfg.feature_dim + cfg.feature_dim;
    feat = cfg.feature_dim;
  }
  head += feat * cfg.num_classes + cfg.num_classes;
  report.rows.push_back({"classifier", head, 0});

  for (const auto &row : report.rows) {
    report.backbone_total += row.backbone;
    report.stc_total += row.stc;
  }
  return report;
}

int64_t recount_parameters(Model &model) {
  int64_t total = 0;
  for (const auto &entry : model.parameters()) total += entry.var->value.numel();
  return total;
}

} // namespace stcnet::nets
