// SPDX-License-Identifier: Apache-2.0
#include "stcnet/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace stcnet::io {

namespace {

int64_t to_int(const std::string &v, const std::string &key) {
  try {
    size_t pos = 0;
    int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception &) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double to_real(const std::string &v, const std::string &key) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception &) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string &v, const std::string &key) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

std::array<int, 4> to_int4(const std::string &v, const std::string &key) {
  std::array<int, 4> out{};
  std::istringstream ss(v);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= 4) throw ConfigError("config: key '" + key + "' expects 4 comma-separated ints");
    out[static_cast<size_t>(i++)] = static_cast<int>(to_int(item, key));
  }
  if (i != 4) throw ConfigError("config: key '" + key + "' expects 4 comma-separated ints");
  return out;
}

std::array<int64_t, 4> to_dims4(const std::string &v, const std::string &key) {
  std::array<int64_t, 4> out{};
  std::istringstream ss(v);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, 'x')) {
    if (i >= 4) throw ConfigError("config: key '" + key + "' expects CxTxHxW");
    out[static_cast<size_t>(i++)] = to_int(item, key);
  }
  if (i != 4) throw ConfigError("config: key '" + key + "' expects CxTxHxW");
  return out;
}

std::string int4_str(const std::array<int, 4> &a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%d,%d,%d,%d", a[0], a[1], a[2], a[3]);
  return buf;
}

std::string dims4_str(const std::array<int64_t, 4> &a) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%lldx%lldx%lldx%lld", static_cast<long long>(a[0]),
                static_cast<long long>(a[1]), static_cast<long long>(a[2]),
                static_cast<long long>(a[3]));
  return buf;
}

std::string real_str(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

struct KeyDef {
  const char *section;
  const char *key;
  std::function<std::string(const RunConfig &)> get;
  std::function<void(RunConfig &, const std::string &, const std::string &)> set;
};

const std::vector<KeyDef> &key_table() {
  static const std::vector<KeyDef> table = [] {
    std::vector<KeyDef> t;
    auto add = [&t](const char *sec, const char *key, auto get, auto set) {
      t.push_back({sec, key, get, set});
    };

    // ------------------------------ [arch] ----------------------------------
    add("arch", "preset", [](const RunConfig &c) { return c.arch_preset; },
        [](RunConfig &c, const std::string &v, const std::string &) {
          c.arch_preset = v;
          c.arch = nets::preset(v);
        });
    add("arch", "family",
        [](const RunConfig &c) { return std::string(nets::family_name(c.arch.family)); },
        [](RunConfig &c, const std::string &v, const std::string &) {
          c.arch.family = nets::parse_family(v);
        });
    add("arch", "depth", [](const RunConfig &c) { return std::to_string(c.arch.depth); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.arch.depth = static_cast<int>(to_int(v, k));
          c.arch.blocks = {0, 0, 0, 0};
          c.arch.inner_widths = {0, 0, 0, 0};
        });
    add("arch", "blocks", [](const RunConfig &c) { return int4_str(c.arch.blocks); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.arch.blocks = to_int4(v, k);
        });
    add("arch", "widths", [](const RunConfig &c) { return int4_str(c.arch.stage_widths); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.arch.stage_widths = to_int4(v, k);
        });
    add("arch", "inner-widths", [](const RunConfig &c) { return int4_str(c.arch.inner_widths); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.arch.inner_widths = to_int4(v, k);
        });
    add("arch", "basic-blocks",
        [](const RunConfig &c) { return std::string(c.arch.basic_blocks ? "true" : "false"); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.arch.basic_blocks = to_bool(v, k);
        });
    add("arch", "cardinality",
        [](const RunConfig &c) { return std::to_string(c.arch.cardinality); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.arch.cardinality = static_cast<int>(to_int(v, k));
        });
    add("arch", "r", [](const RunConfig &c) { return std::to_string(c.arch.reduction); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.arch.reduction = static_cast<int>(to_int(v, k));
        });
    add("arch", "tcb-hidden", [](const RunConfig &c) { return int4_str(c.arch.tcb_hidden); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.arch.tcb_hidden = to_int4(v, k);
        });
    add("arch", "branch-mode",
        [](const RunConfig &c) { return std::string(stc::branch_mode_name(c.arch.branch_mode)); },
        [](RunConfig &c, const std::string &v, const std::string &) {
          c.arch.branch_mode = stc::parse_branch_mode(v);
        });
    add("arch", "input", [](const RunConfig &c) { return dims4_str(c.arch.input_dims); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.arch.input_dims = to_dims4(v, k);
        });
    add("arch", "classes", [](const RunConfig &c) { return std::to_string(c.arch.num_classes); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.arch.num_classes = static_cast<int>(to_int(v, k));
        });
    add("arch", "feature-dim",
        [](const RunConfig &c) { return std::to_string(c.arch.feature_dim); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.arch.feature_dim = static_cast<int>(to_int(v, k));
        });
    add("arch", "stem-width",
        [](const RunConfig &c) { return std::to_string(c.arch.stem_width); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.arch.stem_width = static_cast<int>(to_int(v, k));
        });
    add("arch", "stc-bias",
        [](const RunConfig &c) { return std::string(c.arch.stc_bias ? "true" : "false"); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.arch.stc_bias = to_bool(v, k);
        });
    add("arch", "bottleneck-relu",
        [](const RunConfig &c) { return std::string(c.arch.bottleneck_relu ? "true" : "false"); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.arch.bottleneck_relu = to_bool(v, k);
        });
    add("arch", "gate-bypass",
        [](const RunConfig &c) { return std::string(c.arch.gate_bypass ? "true" : "false"); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.arch.gate_bypass = to_bool(v, k);
        });

    // ------------------------------ [optim] ---------------------------------
    add("optim", "lr", [](const RunConfig &c) { return real_str(c.optim.lr); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.optim.lr = to_real(v, k);
        });
    add("optim", "momentum", [](const RunConfig &c) { return real_str(c.optim.momentum); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.optim.momentum = to_real(v, k);
        });
    add("optim", "nesterov",
        [](const RunConfig &c) { return std::string(c.optim.nesterov ? "true" : "false"); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.optim.nesterov = to_bool(v, k);
        });
    add("optim", "weight-decay",
        [](const RunConfig &c) { return real_str(c.optim.weight_decay); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.optim.weight_decay = to_real(v, k);
        });
    add("optim", "batch-size",
        [](const RunConfig &c) { return std::to_string(c.optim.batch_size); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.optim.batch_size = static_cast<int>(to_int(v, k));
        });
    add("optim", "max-epochs",
        [](const RunConfig &c) { return std::to_string(c.optim.max_epochs); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.optim.max_epochs = static_cast<int>(to_int(v, k));
        });
    add("optim", "lr-decay-factor",
        [](const RunConfig &c) { return real_str(c.optim.lr_decay_factor); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.optim.lr_decay_factor = to_real(v, k);
        });
    add("optim", "lr-policy",
        [](const RunConfig &c) {
          return std::string(c.optim.lr_policy == train::LrPolicy::Plateau ? "plateau" : "step");
        },
        [](RunConfig &c, const std::string &v, const std::string &) {
          c.optim.lr_policy = train::parse_lr_policy(v);
        });
    add("optim", "step-every",
        [](const RunConfig &c) { return std::to_string(c.optim.step_every); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.optim.step_every = static_cast<int>(to_int(v, k));
        });
    add("optim", "min-delta", [](const RunConfig &c) { return real_str(c.optim.min_delta); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.optim.min_delta = to_real(v, k);
        });
    add("optim", "patience", [](const RunConfig &c) { return std::to_string(c.optim.patience); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.optim.patience = static_cast<int>(to_int(v, k));
        });
    add("optim", "decay-bn-and-bias",
        [](const RunConfig &c) {
          return std::string(c.optim.decay_bn_and_bias ? "true" : "false");
        },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.optim.decay_bn_and_bias = to_bool(v, k);
        });
    add("optim", "seed", [](const RunConfig &c) { return std::to_string(c.optim.seed); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.optim.seed = static_cast<uint64_t>(to_int(v, k));
        });
    add("optim", "target-train-acc",
        [](const RunConfig &c) { return real_str(c.optim.target_train_acc); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.optim.target_train_acc = to_real(v, k);
        });
    add("optim", "target-val-acc",
        [](const RunConfig &c) { return real_str(c.optim.target_val_acc); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.optim.target_val_acc = to_real(v, k);
        });

    // ------------------------------ [data] ----------------------------------
    add("data", "h", [](const RunConfig &c) { return std::to_string(c.data.height); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.data.height = to_int(v, k);
        });
    add("data", "w", [](const RunConfig &c) { return std::to_string(c.data.width); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.data.width = to_int(v, k);
        });
    add("data", "t", [](const RunConfig &c) { return std::to_string(c.data.frames); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.data.frames = to_int(v, k);
        });
    add("data", "c", [](const RunConfig &c) { return std::to_string(c.data.channels); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.data.channels = to_int(v, k);
        });
    add("data", "classes", [](const RunConfig &c) { return std::to_string(c.data.num_classes); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.data.num_classes = static_cast<int>(to_int(v, k));
        });
    add("data", "samples-per-class",
        [](const RunConfig &c) { return std::to_string(c.data.samples_per_class); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.data.samples_per_class = static_cast<int>(to_int(v, k));
        });
    add("data", "motion",
        [](const RunConfig &c) { return std::string(synth::motion_name(c.data.motion)); },
        [](RunConfig &c, const std::string &v, const std::string &) {
          c.data.motion = synth::parse_motion(v);
        });
    add("data", "shape",
        [](const RunConfig &c) { return std::string(synth::shape_name(c.data.shape)); },
        [](RunConfig &c, const std::string &v, const std::string &) {
          c.data.shape = synth::parse_shape(v);
        });
    add("data", "velocity-min",
        [](const RunConfig &c) { return real_str(c.data.velocity_min); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.data.velocity_min = to_real(v, k);
        });
    add("data", "velocity-max",
        [](const RunConfig &c) { return real_str(c.data.velocity_max); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.data.velocity_max = to_real(v, k);
        });
    add("data", "noise-sigma", [](const RunConfig &c) { return real_str(c.data.noise_sigma); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.data.noise_sigma = to_real(v, k);
        });
    add("data", "seed", [](const RunConfig &c) { return std::to_string(c.data.seed); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.data.seed = static_cast<uint64_t>(to_int(v, k));
        });
    add("data", "dir", [](const RunConfig &c) { return c.data_dir; },
        [](RunConfig &c, const std::string &v, const std::string &) { c.data_dir = v; });

    // ----------------------------- [transfer] -------------------------------
    add("transfer", "steps",
        [](const RunConfig &c) { return std::to_string(c.transfer.steps); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.transfer.steps = static_cast<int>(to_int(v, k));
        });
    add("transfer", "batch-size",
        [](const RunConfig &c) { return std::to_string(c.transfer.batch_size); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.transfer.batch_size = static_cast<int>(to_int(v, k));
        });
    add("transfer", "x-frames",
        [](const RunConfig &c) { return std::to_string(c.transfer.frames_per_pair); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.transfer.frames_per_pair = static_cast<int>(to_int(v, k));
        });
    add("transfer", "neg-ratio",
        [](const RunConfig &c) { return real_str(c.transfer.neg_ratio); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.transfer.neg_ratio = to_real(v, k);
        });
    add("transfer", "lr", [](const RunConfig &c) { return real_str(c.transfer.lr); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.transfer.lr = to_real(v, k);
        });
    add("transfer", "momentum",
        [](const RunConfig &c) { return real_str(c.transfer.momentum); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.transfer.momentum = to_real(v, k);
        });
    add("transfer", "weight-decay",
        [](const RunConfig &c) { return real_str(c.transfer.weight_decay); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.transfer.weight_decay = to_real(v, k);
        });
    add("transfer", "lr-step-every",
        [](const RunConfig &c) { return std::to_string(c.transfer.lr_step_every); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.transfer.lr_step_every = static_cast<int>(to_int(v, k));
        });
    add("transfer", "seed", [](const RunConfig &c) { return std::to_string(c.transfer.seed); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.transfer.seed = static_cast<uint64_t>(to_int(v, k));
        });
    add("transfer", "head-scale",
        [](const RunConfig &c) { return std::to_string(c.transfer.head_scale); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.transfer.head_scale = static_cast<int>(to_int(v, k));
        });
    add("transfer", "teacher-steps",
        [](const RunConfig &c) { return std::to_string(c.transfer.teacher_steps); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.transfer.teacher_steps = static_cast<int>(to_int(v, k));
        });
    add("transfer", "teacher-lr",
        [](const RunConfig &c) { return real_str(c.transfer.teacher_lr); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.transfer.teacher_lr = to_real(v, k);
        });

    // ----------------------------- [ablation] -------------------------------
    add("ablation", "axis",
        [](const RunConfig &c) { return std::string(train::axis_name(c.ablation_axis)); },
        [](RunConfig &c, const std::string &v, const std::string &) {
          c.ablation_axis = train::parse_axis(v);
        });
    add("ablation", "stride",
        [](const RunConfig &c) { return std::to_string(c.clip_stride); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.clip_stride = static_cast<int>(to_int(v, k));
        });
    add("ablation", "free-form-stride",
        [](const RunConfig &c) { return std::string(c.free_form_stride ? "true" : "false"); },
        [](RunConfig &c, const std::string &v, const std::string &k) {
          c.free_form_stride = to_bool(v, k);
        });
    return t;
  }();
  return table;
}

} // namespace

RunConfig::RunConfig() : arch_preset("toy-stc-resnet") {}

void RunConfig::apply(const std::string &key, const std::string &value) {
  auto dot = key.find('.');
  if (dot == std::string::npos)
    throw ConfigError("config: key '" + key + "' must be section.key");
  std::string section = key.substr(0, dot);
  std::string name = key.substr(dot + 1);
  for (const auto &def : key_table()) {
    if (section == def.section && name == def.key) {
      def.set(*this, value, key);
      return;
    }
  }
  bool section_known = false;
  for (const auto &def : key_table())
    if (section == def.section) section_known = true;
  if (!section_known)
    throw ConfigError("config: unknown section [" + section + "] for key '" + name + "'");
  throw ConfigError("config: unknown key '" + name + "' in section [" + section + "]");
}

std::string RunConfig::echo() const {
  std::ostringstream out;
  std::string current;
  for (const auto &def : key_table()) {
    if (current != def.section) {
      if (!current.empty()) out << "\n";
      current = def.section;
      out << "[" << current << "]\n";
    }
    out << def.key << " = " << def.get(*this) << "\n";
  }
  return out.str();
}

uint64_t fnv1a64(const std::string &text) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t RunConfig::digest() const { return fnv1a64(echo()); }

void parse_config_text(RunConfig &config, const std::string &text, const std::string &origin) {
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: malformed section header at " + origin + ":" +
                          std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key = value at " + origin + ":" +
                        std::to_string(lineno));
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError("config: key '" + key + "' appears before any [section] at " + origin +
                        ":" + std::to_string(lineno));
    config.apply(section + "." + key, value);
  }
}

void parse_config_file(RunConfig &config, const std::string &path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  parse_config_text(config, buf.str(), path);
}

} // namespace stcnet::io
