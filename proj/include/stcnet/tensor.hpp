// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace stcnet {

// ---------------------------------------------------------------------------
// Error hierarchy. Every error carries a short machine-parsable category that
// the CLI prints as `error <category>: <message>` on a single line.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
  Error(std::string category, const std::string &msg)
      : std::runtime_error(msg), category_(std::move(category)) {}
  const std::string &category() const noexcept { return category_; }

private:
  std::string category_;
};

class ShapeError : public Error {
public:
  explicit ShapeError(const std::string &msg) : Error("shape", msg) {}
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string &msg) : Error("config", msg) {}
};

class DataError : public Error {
public:
  explicit DataError(const std::string &msg) : Error("data", msg) {}
};

class FormatError : public Error {
public:
  explicit FormatError(const std::string &msg) : Error("format", msg) {}
};

class NumericError : public Error {
public:
  explicit NumericError(const std::string &msg) : Error("numeric", msg) {}
};

class IndexError : public Error {
public:
  explicit IndexError(const std::string &msg) : Error("index", msg) {}
};

class ContractError : public Error {
public:
  explicit ContractError(const std::string &msg) : Error("contract", msg) {}
};

class FreezeError : public Error {
public:
  explicit FreezeError(const std::string &msg) : Error("freeze", msg) {}
};

class CompatError : public Error {
public:
  explicit CompatError(const std::string &msg) : Error("compat", msg) {}
};

class UsageError : public Error {
public:
  explicit UsageError(const std::string &msg) : Error("usage", msg) {}
};

// ---------------------------------------------------------------------------
// Dense row-major tensor, rank 1..5. Canonical 5D activation layout is
// (N, C, T, H, W): batch, channels, temporal depth, height, width.
// ---------------------------------------------------------------------------

enum class DType : uint8_t { Float32 = 0, Float64 = 1 };

template <typename T> constexpr DType dtype_of();
template <> constexpr DType dtype_of<float>() { return DType::Float32; }
template <> constexpr DType dtype_of<double>() { return DType::Float64; }

inline const char *dtype_name(DType d) {
  return d == DType::Float32 ? "float32" : "float64";
}

constexpr int kMaxRank = 5;

template <typename T> class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> dims) : dims_(std::move(dims)) {
    validate_dims();
    data_.assign(static_cast<size_t>(numel_from_dims()), T(0));
  }

  Tensor(std::vector<int64_t> dims, std::vector<T> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    validate_dims();
    if (static_cast<int64_t>(data_.size()) != numel_from_dims())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match product of dims " + shape_str());
  }

  static Tensor zeros(std::vector<int64_t> dims) { return Tensor(std::move(dims)); }

  static Tensor full(std::vector<int64_t> dims, T value) {
    Tensor t(std::move(dims));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor ones(std::vector<int64_t> dims) { return full(std::move(dims), T(1)); }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  bool empty() const noexcept { return dims_.empty(); }
  int rank() const noexcept { return static_cast<int>(dims_.size()); }
  const std::vector<int64_t> &dims() const noexcept { return dims_; }
  int64_t dim(int i) const { return dims_.at(static_cast<size_t>(i)); }
  int64_t numel() const noexcept { return static_cast<int64_t>(data_.size()); }

  bool is_scalar() const noexcept { return numel() == 1; }

  T *data() noexcept { return data_.data(); }
  const T *data() const noexcept { return data_.data(); }
  std::vector<T> &storage() noexcept { return data_; }
  const std::vector<T> &storage() const noexcept { return data_; }

  T &operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T &operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Flat index helpers for the canonical layouts.
  int64_t idx2(int64_t i, int64_t j) const { return i * dims_[1] + j; }
  int64_t idx4(int64_t c, int64_t t, int64_t h, int64_t w) const {
    return ((c * dims_[1] + t) * dims_[2] + h) * dims_[3] + w;
  }
  int64_t idx5(int64_t n, int64_t c, int64_t t, int64_t h, int64_t w) const {
    return (((n * dims_[1] + c) * dims_[2] + t) * dims_[3] + h) * dims_[4] + w;
  }

  T &at(int64_t i, int64_t j) { return data_[static_cast<size_t>(idx2(i, j))]; }
  const T &at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(idx2(i, j))]; }
  T &at(int64_t n, int64_t c, int64_t t, int64_t h, int64_t w) {
    return data_[static_cast<size_t>(idx5(n, c, t, h, w))];
  }
  const T &at(int64_t n, int64_t c, int64_t t, int64_t h, int64_t w) const {
    return data_[static_cast<size_t>(idx5(n, c, t, h, w))];
  }

  bool same_dims(const Tensor &other) const { return dims_ == other.dims_; }

  Tensor reshaped(std::vector<int64_t> new_dims) const {
    Tensor out(std::move(new_dims), data_);
    return out;
  }

  template <typename U> Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(dims_, std::move(out));
  }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + ")";
  }

private:
  int64_t numel_from_dims() const {
    return std::accumulate(dims_.begin(), dims_.end(), int64_t(1),
                           std::multiplies<int64_t>());
  }

  void validate_dims() const {
    if (dims_.empty() || dims_.size() > kMaxRank)
      throw ShapeError("tensor rank must be 1.." + std::to_string(kMaxRank) +
                       ", got " + std::to_string(dims_.size()));
    for (int64_t d : dims_)
      if (d < 1) throw ShapeError("tensor extents must be >= 1, got " + shape_str());
  }

  std::vector<int64_t> dims_;
  std::vector<T> data_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

// ---------------------------------------------------------------------------
// Convolution / pooling specs.
// ---------------------------------------------------------------------------

// Axis order for kernel/stride/padding triples is (t, h, w).
struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int groups = 1;
  std::array<int, 3> kernel{1, 1, 1};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> padding{0, 0, 0};

  void validate() const;
  // Output extent per axis: floor((in + 2p - k) / stride) + 1.
  std::array<int64_t, 3> out_extents(int64_t t, int64_t h, int64_t w) const;
};

struct PoolSpec {
  std::array<int, 3> kernel{1, 1, 1};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> padding{0, 0, 0};

  void validate() const;
  std::array<int64_t, 3> out_extents(int64_t t, int64_t h, int64_t w) const;
};

// ---------------------------------------------------------------------------
// Deterministic seedable RNG (xoshiro256** with splitmix64 seeding). All
// randomness in the project flows through this so runs are reproducible and
// the full state can be checkpointed.
// ---------------------------------------------------------------------------

class Rng {
public:
  explicit Rng(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed);

  uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range [lo, hi].
  int64_t uniform_int(int64_t lo, int64_t hi);

  // Standard normal via Box-Muller (no cached spare; state is 4 words).
  double normal();

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4> &s) { s_ = s; }

  // Derives an independent stream, e.g. per-sample generators.
  static uint64_t mix(uint64_t seed, uint64_t stream);

private:
  std::array<uint64_t, 4> s_{};
};

// Fills a tensor with the fan-in-scaled uniform init: U(-b, b), b = sqrt(6/fan_in).
template <typename T> void fill_fan_in_uniform(Tensor<T> &t, int64_t fan_in, Rng &rng);
template <typename T> void fill_uniform(Tensor<T> &t, T lo, T hi, Rng &rng);
template <typename T> void fill_normal(Tensor<T> &t, T mean, T stddev, Rng &rng);

// Intra-op worker count; reads STCNET_THREADS once (default 1).
int thread_count();

} // namespace stcnet
