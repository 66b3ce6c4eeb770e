// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stcnet/net_builder.hpp"
#include "stcnet/trainer.hpp"
#include "stcnet/transfer.hpp"

#include <string>
#include <vector>

namespace stcnet::io {

// Structured run configuration: INI-style sections of key = value pairs,
// overridable by --section.key command-line flags. Unknown keys are rejected
// naming the key and section; defaults apply only for absent keys. The echo
// form lists every key explicitly and is itself a parseable config file.
struct RunConfig {
  std::string arch_preset; // applied before other [arch] keys
  nets::ArchConfig arch = nets::preset("toy-stc-resnet");
  train::OptimConfig optim;
  synth::SynthSpec data;
  transfer::TransferConfig transfer;

  train::AblationAxis ablation_axis = train::AblationAxis::None;
  int clip_stride = 1;
  bool free_form_stride = false;
  std::string data_dir; // load dataset from here instead of generating

  RunConfig();

  // Applies one assignment; key is "section.key".
  void apply(const std::string &key, const std::string &value);

  // Canonical echo listing every key; parseable as a config file.
  std::string echo() const;
  uint64_t digest() const;
};

// Parses an INI config file ('#' comments, [section] headers, key = value).
void parse_config_file(RunConfig &config, const std::string &path);

// Parses inline text (same format as a file).
void parse_config_text(RunConfig &config, const std::string &text, const std::string &origin);

uint64_t fnv1a64(const std::string &text);

} // namespace stcnet::io
