// SPDX-License-Identifier: Apache-2.0
#include "stcnet/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace stcnet::io {

// ------------------------------ AnyTensor ------------------------------------

AnyTensor AnyTensor::from(const Tensor32 &t) {
  AnyTensor out;
  out.dtype = DType::Float32;
  out.dims = t.dims();
  out.bytes.resize(sizeof(float) * static_cast<size_t>(t.numel()));
  std::memcpy(out.bytes.data(), t.data(), out.bytes.size());
  return out;
}

AnyTensor AnyTensor::from(const Tensor64 &t) {
  AnyTensor out;
  out.dtype = DType::Float64;
  out.dims = t.dims();
  out.bytes.resize(sizeof(double) * static_cast<size_t>(t.numel()));
  std::memcpy(out.bytes.data(), t.data(), out.bytes.size());
  return out;
}

int64_t AnyTensor::numel() const {
  int64_t n = 1;
  for (int64_t d : dims) n *= d;
  return n;
}

Tensor32 AnyTensor::to32() const {
  if (dtype != DType::Float32)
    throw CompatError("checkpoint tensor is " + std::string(dtype_name(dtype)) +
                      ", expected float32");
  Tensor32 t(dims);
  std::memcpy(t.data(), bytes.data(), bytes.size());
  return t;
}

Tensor64 AnyTensor::to64() const {
  if (dtype != DType::Float64)
    throw CompatError("checkpoint tensor is " + std::string(dtype_name(dtype)) +
                      ", expected float64");
  Tensor64 t(dims);
  std::memcpy(t.data(), bytes.data(), bytes.size());
  return t;
}

std::vector<std::pair<std::string, AnyTensor>> &Checkpoint::group(const std::string &name) {
  for (auto &g : groups)
    if (g.first == name) return g.second;
  groups.emplace_back(name, std::vector<std::pair<std::string, AnyTensor>>{});
  return groups.back().second;
}

const AnyTensor *Checkpoint::find(const std::string &group_name, const std::string &name) const {
  for (const auto &g : groups)
    if (g.first == group_name)
      for (const auto &t : g.second)
        if (t.first == name) return &t.second;
  return nullptr;
}

void Checkpoint::add(const std::string &group_name, const std::string &name, AnyTensor tensor) {
  group(group_name).emplace_back(name, std::move(tensor));
}

// -------------------------------- file I/O -----------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'T', 'C', 'N'};

void put_u16(std::string &b, uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u32(std::string &b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string &b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_name(std::string &b, const std::string &name) {
  if (name.size() > 0xffff) throw ContractError("checkpoint: name too long");
  put_u16(b, static_cast<uint16_t>(name.size()));
  b.append(name);
}

struct Reader {
  const unsigned char *p;
  size_t size, pos = 0;
  std::string path;

  void need(size_t n, const char *what) {
    if (pos + n > size)
      throw FormatError("checkpoint: truncated " + std::string(what) + " at byte offset " +
                        std::to_string(pos) + " in '" + path + "'");
  }
  uint16_t u16() {
    need(2, "u16");
    uint16_t v = static_cast<uint16_t>(p[pos] | (p[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4, "u32");
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[pos + static_cast<size_t>(i)];
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8, "u64");
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[pos + static_cast<size_t>(i)];
    pos += 8;
    return v;
  }
  std::string name() {
    uint16_t len = u16();
    need(len, "name");
    std::string s(reinterpret_cast<const char *>(p + pos), len);
    pos += len;
    return s;
  }
};

size_t dtype_size(DType d) { return d == DType::Float32 ? 4 : 8; }

} // namespace

void save_checkpoint(const Checkpoint &checkpoint, const std::string &path) {
  std::string manifest;
  manifest.append(kMagic, 4);
  put_u32(manifest, 1);
  put_u64(manifest, checkpoint.config_digest);
  for (uint64_t s : checkpoint.rng_state) put_u64(manifest, s);
  put_u32(manifest, static_cast<uint32_t>(checkpoint.groups.size()));

  uint64_t offset = 0;
  for (const auto &[gname, tensors] : checkpoint.groups) {
    put_name(manifest, gname);
    put_u32(manifest, static_cast<uint32_t>(tensors.size()));
    for (const auto &[tname, tensor] : tensors) {
      put_name(manifest, tname);
      manifest.push_back(static_cast<char>(tensor.dtype));
      manifest.push_back(static_cast<char>(tensor.dims.size()));
      for (int64_t d : tensor.dims) put_u32(manifest, static_cast<uint32_t>(d));
      put_u64(manifest, offset);
      offset += tensor.bytes.size();
    }
  }

  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot open '" + tmp.string() + "' for writing");
    out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    for (const auto &[gname, tensors] : checkpoint.groups)
      for (const auto &[tname, tensor] : tensors)
        out.write(reinterpret_cast<const char *>(tensor.bytes.data()),
                  static_cast<std::streamsize>(tensor.bytes.size()));
    if (!out) throw DataError("checkpoint: short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string &path, std::optional<uint64_t> expect_digest) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  Reader r{blob.data(), blob.size(), 0, path};

  r.need(4, "magic");
  if (std::memcmp(blob.data(), kMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic at byte offset 0 in '" + path + "'");
  r.pos = 4;
  uint32_t version = r.u32();
  if (version != 1)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " in '" +
                      path + "'");

  Checkpoint cp;
  cp.config_digest = r.u64();
  for (auto &s : cp.rng_state) s = r.u64();
  if (expect_digest && cp.config_digest != *expect_digest)
    throw CompatError("checkpoint: config digest mismatch (checkpoint " +
                      std::to_string(cp.config_digest) + ", expected " +
                      std::to_string(*expect_digest) + ")");

  struct PendingTensor {
    std::string group, name;
    DType dtype;
    std::vector<int64_t> dims;
    uint64_t offset;
  };
  std::vector<PendingTensor> pending;

  uint32_t group_count = r.u32();
  for (uint32_t g = 0; g < group_count; ++g) {
    std::string gname = r.name();
    cp.group(gname); // preserve group order even when empty
    uint32_t tensor_count = r.u32();
    for (uint32_t t = 0; t < tensor_count; ++t) {
      PendingTensor pt;
      pt.group = gname;
      pt.name = r.name();
      r.need(2, "dtype/rank");
      pt.dtype = static_cast<DType>(blob[r.pos++]);
      uint8_t rank = blob[r.pos++];
      if (pt.dtype != DType::Float32 && pt.dtype != DType::Float64)
        throw FormatError("checkpoint: unknown dtype for '" + pt.name + "' in '" + path + "'");
      for (uint8_t d = 0; d < rank; ++d) pt.dims.push_back(r.u32());
      pt.offset = r.u64();
      pending.push_back(std::move(pt));
    }
  }

  const size_t payload_start = r.pos;
  uint64_t expected_offset = 0;
  for (auto &pt : pending) {
    if (pt.offset != expected_offset)
      throw FormatError("checkpoint: manifest offset " + std::to_string(pt.offset) +
                        " for '" + pt.name + "' does not match payload position " +
                        std::to_string(expected_offset) + " in '" + path + "'");
    int64_t numel = 1;
    for (int64_t d : pt.dims) numel *= d;
    size_t bytes = static_cast<size_t>(numel) * dtype_size(pt.dtype);
    if (payload_start + pt.offset + bytes > blob.size())
      throw FormatError("checkpoint: truncated payload for '" + pt.name + "' at byte offset " +
                        std::to_string(payload_start + pt.offset) + " in '" + path + "'");
    AnyTensor tensor;
    tensor.dtype = pt.dtype;
    tensor.dims = pt.dims;
    tensor.bytes.assign(blob.begin() + static_cast<std::ptrdiff_t>(payload_start + pt.offset),
                        blob.begin() + static_cast<std::ptrdiff_t>(payload_start + pt.offset + bytes));
    cp.add(pt.group, pt.name, std::move(tensor));
    expected_offset += bytes;
  }
  if (payload_start + expected_offset != blob.size())
    throw FormatError("checkpoint: trailing bytes after payload at byte offset " +
                      std::to_string(payload_start + expected_offset) + " in '" + path + "'");
  return cp;
}

// ----------------------- model/train-state bridging --------------------------

Checkpoint snapshot_training(nets::Model &model, const train::SgdOptimizer *optimizer,
                             const train::TrainState *state, uint64_t config_digest) {
  Checkpoint cp;
  cp.config_digest = config_digest;
  for (const auto &p : model.parameters()) cp.add(p.group, p.name, AnyTensor::from(p.var->value));
  for (const auto &b : model.buffers()) cp.add(b.group, b.name, AnyTensor::from(*b.tensor));
  if (optimizer) {
    auto *opt = const_cast<train::SgdOptimizer *>(optimizer);
    const auto &params = opt->params();
    auto &vels = opt->velocities();
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor32 v = vels[i].empty() ? Tensor32(params[i].var->value.dims()) : vels[i];
      cp.add("optimizer-state", "velocity/" + params[i].name, AnyTensor::from(v));
    }
  }
  if (state) {
    Tensor64 ts({static_cast<int64_t>(state->val_history.size()) + 2});
    ts[0] = static_cast<double>(state->next_epoch);
    ts[1] = static_cast<double>(state->val_history.size());
    for (size_t i = 0; i < state->val_history.size(); ++i)
      ts[static_cast<int64_t>(i) + 2] = state->val_history[i];
    cp.add("optimizer-state", "train_state", AnyTensor::from(ts));
    cp.rng_state = state->rng.state();
  }
  return cp;
}

void restore_training(const Checkpoint &checkpoint, nets::Model &model,
                      train::SgdOptimizer *optimizer, train::TrainState *state) {
  auto fetch = [&](const std::string &group, const std::string &name) -> const AnyTensor & {
    const AnyTensor *t = checkpoint.find(group, name);
    if (!t)
      throw CompatError("checkpoint: missing tensor '" + name + "' in group '" + group + "'");
    return *t;
  };

  for (auto &p : model.parameters()) {
    const auto &t = fetch(p.group, p.name);
    if (t.dims != p.var->value.dims())
      throw CompatError("checkpoint: dims mismatch for '" + p.name + "'");
    p.var->value = t.to32();
  }
  for (auto &b : model.buffers()) {
    const auto &t = fetch(b.group, b.name);
    if (t.dims != b.tensor->dims())
      throw CompatError("checkpoint: dims mismatch for '" + b.name + "'");
    *b.tensor = t.to32();
  }
  if (optimizer) {
    const auto &params = optimizer->params();
    auto &vels = optimizer->velocities();
    for (size_t i = 0; i < params.size(); ++i)
      vels[i] = fetch("optimizer-state", "velocity/" + params[i].name).to32();
  }
  if (state) {
    auto ts = fetch("optimizer-state", "train_state").to64();
    state->next_epoch = static_cast<int>(ts[0]);
    int64_t n = static_cast<int64_t>(ts[1]);
    state->val_history.assign(static_cast<size_t>(n), 0.0);
    for (int64_t i = 0; i < n; ++i) state->val_history[static_cast<size_t>(i)] = ts[i + 2];
    state->rng.set_state(checkpoint.rng_state);
  }
}

} // namespace stcnet::io
