// SPDX-License-Identifier: Apache-2.0
#include "stcnet/tensor.hpp"

#include <cmath>
#include <cstdlib>

namespace stcnet {

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1)
    throw ConfigError("conv channels must be positive, got in=" +
                      std::to_string(in_channels) + " out=" + std::to_string(out_channels));
  if (groups < 1) throw ConfigError("conv groups must be positive");
  if (in_channels % groups != 0)
    throw ConfigError("in_channels " + std::to_string(in_channels) +
                      " not divisible by groups " + std::to_string(groups));
  if (out_channels % groups != 0)
    throw ConfigError("out_channels " + std::to_string(out_channels) +
                      " not divisible by groups " + std::to_string(groups));
  for (int a = 0; a < 3; ++a) {
    if (kernel[a] < 1) throw ConfigError("conv kernel extents must be >= 1");
    if (stride[a] < 1) throw ConfigError("conv strides must be >= 1");
    if (padding[a] < 0) throw ConfigError("conv padding must be >= 0");
  }
}

static int64_t out_extent(int64_t in, int k, int s, int p, const char *axis) {
  int64_t out = (in + 2 * p - k) / s + 1;
  if (in + 2 * p < k || out < 1)
    throw ShapeError(std::string("window does not fit on axis ") + axis + ": extent " +
                     std::to_string(in) + ", kernel " + std::to_string(k) + ", padding " +
                     std::to_string(p));
  return out;
}

std::array<int64_t, 3> ConvSpec::out_extents(int64_t t, int64_t h, int64_t w) const {
  return {out_extent(t, kernel[0], stride[0], padding[0], "T"),
          out_extent(h, kernel[1], stride[1], padding[1], "H"),
          out_extent(w, kernel[2], stride[2], padding[2], "W")};
}

void PoolSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (kernel[a] < 1) throw ConfigError("pool kernel extents must be >= 1");
    if (stride[a] < 1) throw ConfigError("pool strides must be >= 1");
    if (padding[a] < 0) throw ConfigError("pool padding must be >= 0");
    // padding < kernel guarantees every window overlaps the input
    if (padding[a] >= kernel[a])
      throw ConfigError("pool padding must be smaller than the kernel");
  }
}

std::array<int64_t, 3> PoolSpec::out_extents(int64_t t, int64_t h, int64_t w) const {
  return {out_extent(t, kernel[0], stride[0], padding[0], "T"),
          out_extent(h, kernel[1], stride[1], padding[1], "H"),
          out_extent(w, kernel[2], stride[2], padding[2], "W")};
}

// --------------------------------- Rng -------------------------------------

static uint64_t splitmix64(uint64_t &x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void Rng::reseed(uint64_t seed) {
  uint64_t x = seed;
  for (auto &w : s_) w = splitmix64(x);
}

static inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

uint64_t Rng::next_u64() {
  uint64_t result = rotl(s_[1] * 5, 7) * 9;
  uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  if (hi < lo) throw ContractError("uniform_int: hi < lo");
  uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int64_t>(next_u64() % span);
}

double Rng::normal() {
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

uint64_t Rng::mix(uint64_t seed, uint64_t stream) {
  uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL + stream * 0xd1b54a32d192ed03ULL);
  return splitmix64(x);
}

template <typename T> void fill_fan_in_uniform(Tensor<T> &t, int64_t fan_in, Rng &rng) {
  if (fan_in < 1) throw ContractError("fan_in must be positive");
  double b = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(-b, b));
}

template <typename T> void fill_uniform(Tensor<T> &t, T lo, T hi, Rng &rng) {
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
}

template <typename T> void fill_normal(Tensor<T> &t, T mean, T stddev, Rng &rng) {
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(static_cast<double>(mean) +
                          static_cast<double>(stddev) * rng.normal());
}

template void fill_fan_in_uniform<float>(Tensor<float> &, int64_t, Rng &);
template void fill_fan_in_uniform<double>(Tensor<double> &, int64_t, Rng &);
template void fill_uniform<float>(Tensor<float> &, float, float, Rng &);
template void fill_uniform<double>(Tensor<double> &, double, double, Rng &);
template void fill_normal<float>(Tensor<float> &, float, float, Rng &);
template void fill_normal<double>(Tensor<double> &, double, double, Rng &);

int thread_count() {
  static int n = [] {
    const char *env = std::getenv("STCNET_THREADS");
    if (!env) return 1;
    int v = std::atoi(env);
    if (v < 1) throw ConfigError("STCNET_THREADS must be a positive integer");
    return v;
  }();
  return n;
}

} // namespace stcnet
