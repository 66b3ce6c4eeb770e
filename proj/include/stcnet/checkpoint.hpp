// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stcnet/net_builder.hpp"
#include "stcnet/trainer.hpp"

#include <optional>

namespace stcnet::io {

// Checkpoint format (little-endian): magic "STCN", version u32=1, config
// digest u64, RNG state 4xu64, then a manifest of named parameter groups
// (per tensor: length-prefixed UTF-8 name, dtype u8, rank u8, dims rank xu32,
// payload offset u64) followed by the raw tensor payload. Writes are atomic
// (temp file + rename).

struct AnyTensor {
  DType dtype = DType::Float32;
  std::vector<int64_t> dims;
  std::vector<unsigned char> bytes;

  static AnyTensor from(const Tensor32 &t);
  static AnyTensor from(const Tensor64 &t);
  Tensor32 to32() const;
  Tensor64 to64() const;
  int64_t numel() const;
};

struct Checkpoint {
  uint64_t config_digest = 0;
  std::array<uint64_t, 4> rng_state{};
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, AnyTensor>>>> groups;

  std::vector<std::pair<std::string, AnyTensor>> &group(const std::string &name);
  const AnyTensor *find(const std::string &group, const std::string &name) const;
  void add(const std::string &group, const std::string &name, AnyTensor tensor);
};

void save_checkpoint(const Checkpoint &checkpoint, const std::string &path);

// expect_digest (strict mode) refuses checkpoints produced by a different
// config with CompatError.
Checkpoint load_checkpoint(const std::string &path,
                           std::optional<uint64_t> expect_digest = std::nullopt);

// ----------------------- model/train-state bridging --------------------------

// Captures model parameters + buffers by registry group, optimizer
// velocities and the training-loop state (epoch cursor, val history, RNG).
Checkpoint snapshot_training(nets::Model &model, const train::SgdOptimizer *optimizer,
                             const train::TrainState *state, uint64_t config_digest);

// Restores in place; parameter sets and dims must match exactly.
void restore_training(const Checkpoint &checkpoint, nets::Model &model,
                      train::SgdOptimizer *optimizer, train::TrainState *state);

} // namespace stcnet::io
