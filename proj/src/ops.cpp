// SPDX-License-Identifier: Apache-2.0
#include "stcnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

namespace stcnet::ops {

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)> &fn) {
  int workers = thread_count();
  if (workers <= 1 || n <= 1) {
    fn(0, n);
    return;
  }
  workers = static_cast<int>(std::min<int64_t>(workers, n));
  int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    int64_t begin = w * chunk;
    int64_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto &t : threads) t.join();
}

// ------------------------------- conv3d ------------------------------------

template <typename T>
static void check_conv_args(const Tensor<T> &input, const Tensor<T> &weights,
                            const Tensor<T> *bias, const ConvSpec &spec) {
  spec.validate();
  if (input.rank() != 5)
    throw ShapeError("conv3d: input must be rank 5 (N,C,T,H,W), got " + input.shape_str());
  if (weights.rank() != 5)
    throw ShapeError("conv3d: weights must be rank 5 (Cout,Cin/groups,kt,kh,kw), got " +
                     weights.shape_str());
  if (input.dim(1) != spec.in_channels)
    throw ShapeError("conv3d: input channel axis is " + std::to_string(input.dim(1)) +
                     ", spec expects " + std::to_string(spec.in_channels));
  if (weights.dim(0) != spec.out_channels)
    throw ShapeError("conv3d: weights out-channel axis is " + std::to_string(weights.dim(0)) +
                     ", spec expects " + std::to_string(spec.out_channels));
  if (weights.dim(1) != spec.in_channels / spec.groups)
    throw ShapeError("conv3d: weights group-channel axis is " + std::to_string(weights.dim(1)) +
                     ", spec expects " + std::to_string(spec.in_channels / spec.groups));
  if (weights.dim(2) != spec.kernel[0] || weights.dim(3) != spec.kernel[1] ||
      weights.dim(4) != spec.kernel[2])
    throw ShapeError("conv3d: weights kernel axes " + weights.shape_str() +
                     " do not match spec kernel");
  if (bias && !(bias->rank() == 1 && bias->dim(0) == spec.out_channels))
    throw ShapeError("conv3d: bias must be rank 1 of length Cout");
}

// Unpacks one sample's group slice into a (Cg*kt*kh*kw) x (To*Ho*Wo) matrix.
template <typename T>
static void vol2col(const T *x, int64_t Tin, int64_t Hin, int64_t Win, int64_t Cg,
                    const ConvSpec &spec, int64_t To, int64_t Ho, int64_t Wo, T *col) {
  const int kt = spec.kernel[0], kh = spec.kernel[1], kw = spec.kernel[2];
  const int st = spec.stride[0], sh = spec.stride[1], sw = spec.stride[2];
  const int pt = spec.padding[0], ph = spec.padding[1], pw = spec.padding[2];
  const int64_t P = To * Ho * Wo;
  int64_t row = 0;
  for (int64_t c = 0; c < Cg; ++c) {
    const T *xc = x + c * Tin * Hin * Win;
    for (int it = 0; it < kt; ++it)
      for (int ih = 0; ih < kh; ++ih)
        for (int iw = 0; iw < kw; ++iw, ++row) {
          T *out = col + row * P;
          for (int64_t to = 0; to < To; ++to) {
            int64_t t = to * st - pt + it;
            for (int64_t ho = 0; ho < Ho; ++ho) {
              int64_t h = ho * sh - ph + ih;
              int64_t base = (to * Ho + ho) * Wo;
              if (t < 0 || t >= Tin || h < 0 || h >= Hin) {
                for (int64_t wo = 0; wo < Wo; ++wo) out[base + wo] = T(0);
                continue;
              }
              const T *xrow = xc + (t * Hin + h) * Win;
              for (int64_t wo = 0; wo < Wo; ++wo) {
                int64_t w = wo * sw - pw + iw;
                out[base + wo] = (w >= 0 && w < Win) ? xrow[w] : T(0);
              }
            }
          }
        }
  }
}

// Scatter-add of a column matrix back onto the (Cg,T,H,W) volume.
static void col2vol(const double *col, int64_t Tin, int64_t Hin, int64_t Win, int64_t Cg,
                    const ConvSpec &spec, int64_t To, int64_t Ho, int64_t Wo, double *x) {
  const int kt = spec.kernel[0], kh = spec.kernel[1], kw = spec.kernel[2];
  const int st = spec.stride[0], sh = spec.stride[1], sw = spec.stride[2];
  const int pt = spec.padding[0], ph = spec.padding[1], pw = spec.padding[2];
  const int64_t P = To * Ho * Wo;
  int64_t row = 0;
  for (int64_t c = 0; c < Cg; ++c) {
    double *xc = x + c * Tin * Hin * Win;
    for (int it = 0; it < kt; ++it)
      for (int ih = 0; ih < kh; ++ih)
        for (int iw = 0; iw < kw; ++iw, ++row) {
          const double *in = col + row * P;
          for (int64_t to = 0; to < To; ++to) {
            int64_t t = to * st - pt + it;
            if (t < 0 || t >= Tin) continue;
            for (int64_t ho = 0; ho < Ho; ++ho) {
              int64_t h = ho * sh - ph + ih;
              if (h < 0 || h >= Hin) continue;
              double *xrow = xc + (t * Hin + h) * Win;
              const double *irow = in + (to * Ho + ho) * Wo;
              for (int64_t wo = 0; wo < Wo; ++wo) {
                int64_t w = wo * sw - pw + iw;
                if (w >= 0 && w < Win) xrow[w] += irow[wo];
              }
            }
          }
        }
  }
}

template <typename T>
Tensor<T> conv3d(const Tensor<T> &input, const Tensor<T> &weights, const Tensor<T> *bias,
                 const ConvSpec &spec) {
  check_conv_args(input, weights, bias, spec);
  const int64_t N = input.dim(0), Tin = input.dim(2), Hin = input.dim(3), Win = input.dim(4);
  auto [To, Ho, Wo] = spec.out_extents(Tin, Hin, Win);
  const int64_t G = spec.groups;
  const int64_t Cg = spec.in_channels / G;
  const int64_t Og = spec.out_channels / G;
  const int64_t K = Cg * spec.kernel[0] * spec.kernel[1] * spec.kernel[2];
  const int64_t P = To * Ho * Wo;

  Tensor<T> out({N, spec.out_channels, To, Ho, Wo});
  parallel_for(N, [&](int64_t n0, int64_t n1) {
    std::vector<T> col(static_cast<size_t>(K * P));
    std::vector<double> acc(static_cast<size_t>(Og * P));
    for (int64_t n = n0; n < n1; ++n) {
      for (int64_t g = 0; g < G; ++g) {
        const T *xg = input.data() + (n * spec.in_channels + g * Cg) * Tin * Hin * Win;
        vol2col(xg, Tin, Hin, Win, Cg, spec, To, Ho, Wo, col.data());
        for (int64_t o = 0; o < Og; ++o) {
          double b = bias ? static_cast<double>((*bias)[g * Og + o]) : 0.0;
          std::fill(acc.begin() + o * P, acc.begin() + (o + 1) * P, b);
        }
        for (int64_t o = 0; o < Og; ++o) {
          const T *wrow = weights.data() + (g * Og + o) * K;
          double *arow = acc.data() + o * P;
          for (int64_t k = 0; k < K; ++k) {
            double wv = static_cast<double>(wrow[k]);
            const T *crow = col.data() + k * P;
            for (int64_t p = 0; p < P; ++p) arow[p] += wv * static_cast<double>(crow[p]);
          }
        }
        T *og = out.data() + (n * spec.out_channels + g * Og) * P;
        for (int64_t i = 0; i < Og * P; ++i) og[i] = static_cast<T>(acc[static_cast<size_t>(i)]);
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> conv3d_backward_input(const Tensor<T> &grad_out, const Tensor<T> &weights,
                                const ConvSpec &spec, const std::vector<int64_t> &input_dims) {
  const int64_t N = input_dims[0], Tin = input_dims[2], Hin = input_dims[3], Win = input_dims[4];
  auto [To, Ho, Wo] = spec.out_extents(Tin, Hin, Win);
  const int64_t G = spec.groups;
  const int64_t Cg = spec.in_channels / G;
  const int64_t Og = spec.out_channels / G;
  const int64_t K = Cg * spec.kernel[0] * spec.kernel[1] * spec.kernel[2];
  const int64_t P = To * Ho * Wo;

  Tensor<T> dx(input_dims);
  parallel_for(N, [&](int64_t n0, int64_t n1) {
    std::vector<double> dcol(static_cast<size_t>(K * P));
    std::vector<double> dvol(static_cast<size_t>(Cg * Tin * Hin * Win));
    for (int64_t n = n0; n < n1; ++n) {
      for (int64_t g = 0; g < G; ++g) {
        std::fill(dcol.begin(), dcol.end(), 0.0);
        const T *go = grad_out.data() + (n * spec.out_channels + g * Og) * P;
        for (int64_t o = 0; o < Og; ++o) {
          const T *wrow = weights.data() + (g * Og + o) * K;
          const T *grow = go + o * P;
          for (int64_t k = 0; k < K; ++k) {
            double wv = static_cast<double>(wrow[k]);
            double *drow = dcol.data() + k * P;
            for (int64_t p = 0; p < P; ++p) drow[p] += wv * static_cast<double>(grow[p]);
          }
        }
        std::fill(dvol.begin(), dvol.end(), 0.0);
        col2vol(dcol.data(), Tin, Hin, Win, Cg, spec, To, Ho, Wo, dvol.data());
        T *dxg = dx.data() + (n * spec.in_channels + g * Cg) * Tin * Hin * Win;
        for (size_t i = 0; i < dvol.size(); ++i) dxg[i] = static_cast<T>(dvol[i]);
      }
    }
  });
  return dx;
}

template <typename T>
Tensor<T> conv3d_backward_weights(const Tensor<T> &grad_out, const Tensor<T> &input,
                                  const ConvSpec &spec) {
  const int64_t N = input.dim(0), Tin = input.dim(2), Hin = input.dim(3), Win = input.dim(4);
  auto [To, Ho, Wo] = spec.out_extents(Tin, Hin, Win);
  const int64_t G = spec.groups;
  const int64_t Cg = spec.in_channels / G;
  const int64_t Og = spec.out_channels / G;
  const int64_t K = Cg * spec.kernel[0] * spec.kernel[1] * spec.kernel[2];
  const int64_t P = To * Ho * Wo;

  std::vector<double> dw(static_cast<size_t>(spec.out_channels * K), 0.0);
  std::vector<T> col(static_cast<size_t>(K * P));
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t g = 0; g < G; ++g) {
      const T *xg = input.data() + (n * spec.in_channels + g * Cg) * Tin * Hin * Win;
      vol2col(xg, Tin, Hin, Win, Cg, spec, To, Ho, Wo, col.data());
      const T *go = grad_out.data() + (n * spec.out_channels + g * Og) * P;
      for (int64_t o = 0; o < Og; ++o) {
        const T *grow = go + o * P;
        double *dwrow = dw.data() + (g * Og + o) * K;
        for (int64_t k = 0; k < K; ++k) {
          const T *crow = col.data() + k * P;
          double acc = 0.0;
          for (int64_t p = 0; p < P; ++p)
            acc += static_cast<double>(grow[p]) * static_cast<double>(crow[p]);
          dwrow[k] += acc;
        }
      }
    }
  }
  Tensor<T> out({spec.out_channels, Cg, spec.kernel[0], spec.kernel[1], spec.kernel[2]});
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(dw[static_cast<size_t>(i)]);
  return out;
}

template <typename T> Tensor<T> conv3d_backward_bias(const Tensor<T> &grad_out) {
  const int64_t N = grad_out.dim(0), C = grad_out.dim(1);
  const int64_t S = grad_out.numel() / (N * C);
  Tensor<T> db({C});
  for (int64_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int64_t n = 0; n < N; ++n) {
      const T *p = grad_out.data() + (n * C + c) * S;
      for (int64_t i = 0; i < S; ++i) acc += static_cast<double>(p[i]);
    }
    db[c] = static_cast<T>(acc);
  }
  return db;
}

// ------------------------------- pooling -----------------------------------

template <typename T>
static void check_pool_args(const Tensor<T> &input, const PoolSpec &spec) {
  spec.validate();
  if (input.rank() != 5)
    throw ShapeError("pool3d: input must be rank 5 (N,C,T,H,W), got " + input.shape_str());
}

template <typename T>
Tensor<T> maxpool3d(const Tensor<T> &input, const PoolSpec &spec, std::vector<int64_t> *argmax) {
  check_pool_args(input, spec);
  const int64_t N = input.dim(0), C = input.dim(1);
  const int64_t Tin = input.dim(2), Hin = input.dim(3), Win = input.dim(4);
  auto [To, Ho, Wo] = spec.out_extents(Tin, Hin, Win);
  Tensor<T> out({N, C, To, Ho, Wo});
  if (argmax) argmax->assign(static_cast<size_t>(out.numel()), -1);

  const int64_t planes = N * C;
  parallel_for(planes, [&](int64_t p0, int64_t p1) {
    for (int64_t pl = p0; pl < p1; ++pl) {
      const T *x = input.data() + pl * Tin * Hin * Win;
      T *y = out.data() + pl * To * Ho * Wo;
      int64_t oi = 0;
      for (int64_t to = 0; to < To; ++to)
        for (int64_t ho = 0; ho < Ho; ++ho)
          for (int64_t wo = 0; wo < Wo; ++wo, ++oi) {
            T best = std::numeric_limits<T>::lowest();
            int64_t best_idx = -1;
            for (int it = 0; it < spec.kernel[0]; ++it) {
              int64_t t = to * spec.stride[0] - spec.padding[0] + it;
              if (t < 0 || t >= Tin) continue;
              for (int ih = 0; ih < spec.kernel[1]; ++ih) {
                int64_t h = ho * spec.stride[1] - spec.padding[1] + ih;
                if (h < 0 || h >= Hin) continue;
                for (int iw = 0; iw < spec.kernel[2]; ++iw) {
                  int64_t w = wo * spec.stride[2] - spec.padding[2] + iw;
                  if (w < 0 || w >= Win) continue;
                  int64_t idx = (t * Hin + h) * Win + w;
                  if (best_idx < 0 || x[idx] > best) {
                    best = x[idx];
                    best_idx = idx;
                  }
                }
              }
            }
            y[oi] = best;
            if (argmax) (*argmax)[static_cast<size_t>(pl * To * Ho * Wo + oi)] =
                pl * Tin * Hin * Win + best_idx;
          }
    }
  });
  return out;
}

template <typename T>
Tensor<T> maxpool3d_backward(const Tensor<T> &grad_out, const std::vector<int64_t> &argmax,
                             const std::vector<int64_t> &input_dims) {
  Tensor<T> dx(input_dims);
  for (int64_t i = 0; i < grad_out.numel(); ++i)
    dx[argmax[static_cast<size_t>(i)]] += grad_out[i];
  return dx;
}

template <typename T> Tensor<T> avgpool3d(const Tensor<T> &input, const PoolSpec &spec) {
  check_pool_args(input, spec);
  const int64_t N = input.dim(0), C = input.dim(1);
  const int64_t Tin = input.dim(2), Hin = input.dim(3), Win = input.dim(4);
  auto [To, Ho, Wo] = spec.out_extents(Tin, Hin, Win);
  Tensor<T> out({N, C, To, Ho, Wo});

  const int64_t planes = N * C;
  parallel_for(planes, [&](int64_t p0, int64_t p1) {
    for (int64_t pl = p0; pl < p1; ++pl) {
      const T *x = input.data() + pl * Tin * Hin * Win;
      T *y = out.data() + pl * To * Ho * Wo;
      int64_t oi = 0;
      for (int64_t to = 0; to < To; ++to)
        for (int64_t ho = 0; ho < Ho; ++ho)
          for (int64_t wo = 0; wo < Wo; ++wo, ++oi) {
            double acc = 0.0;
            int64_t count = 0;
            for (int it = 0; it < spec.kernel[0]; ++it) {
              int64_t t = to * spec.stride[0] - spec.padding[0] + it;
              if (t < 0 || t >= Tin) continue;
              for (int ih = 0; ih < spec.kernel[1]; ++ih) {
                int64_t h = ho * spec.stride[1] - spec.padding[1] + ih;
                if (h < 0 || h >= Hin) continue;
                for (int iw = 0; iw < spec.kernel[2]; ++iw) {
                  int64_t w = wo * spec.stride[2] - spec.padding[2] + iw;
                  if (w < 0 || w >= Win) continue;
                  acc += static_cast<double>(x[(t * Hin + h) * Win + w]);
                  ++count;
                }
              }
            }
            y[oi] = static_cast<T>(acc / static_cast<double>(count));
          }
    }
  });
  return out;
}

template <typename T>
Tensor<T> avgpool3d_backward(const Tensor<T> &grad_out, const PoolSpec &spec,
                             const std::vector<int64_t> &input_dims) {
  const int64_t N = input_dims[0], C = input_dims[1];
  const int64_t Tin = input_dims[2], Hin = input_dims[3], Win = input_dims[4];
  auto [To, Ho, Wo] = spec.out_extents(Tin, Hin, Win);
  Tensor<T> dx(input_dims);
  for (int64_t pl = 0; pl < N * C; ++pl) {
    const T *g = grad_out.data() + pl * To * Ho * Wo;
    T *d = dx.data() + pl * Tin * Hin * Win;
    int64_t oi = 0;
    for (int64_t to = 0; to < To; ++to)
      for (int64_t ho = 0; ho < Ho; ++ho)
        for (int64_t wo = 0; wo < Wo; ++wo, ++oi) {
          int64_t count = 0;
          for (int it = 0; it < spec.kernel[0]; ++it) {
            int64_t t = to * spec.stride[0] - spec.padding[0] + it;
            if (t < 0 || t >= Tin) continue;
            for (int ih = 0; ih < spec.kernel[1]; ++ih) {
              int64_t h = ho * spec.stride[1] - spec.padding[1] + ih;
              if (h < 0 || h >= Hin) continue;
              for (int iw = 0; iw < spec.kernel[2]; ++iw) {
                int64_t w = wo * spec.stride[2] - spec.padding[2] + iw;
                if (w >= 0 && w < Win) ++count;
              }
            }
          }
          T share = static_cast<T>(static_cast<double>(g[oi]) / static_cast<double>(count));
          for (int it = 0; it < spec.kernel[0]; ++it) {
            int64_t t = to * spec.stride[0] - spec.padding[0] + it;
            if (t < 0 || t >= Tin) continue;
            for (int ih = 0; ih < spec.kernel[1]; ++ih) {
              int64_t h = ho * spec.stride[1] - spec.padding[1] + ih;
              if (h < 0 || h >= Hin) continue;
              for (int iw = 0; iw < spec.kernel[2]; ++iw) {
                int64_t w = wo * spec.stride[2] - spec.padding[2] + iw;
                if (w >= 0 && w < Win) d[(t * Hin + h) * Win + w] += share;
              }
            }
          }
        }
  }
  return dx;
}

// ------------------------------- affine ------------------------------------

template <typename T>
Tensor<T> affine(const Tensor<T> &input, const Tensor<T> &weights, const Tensor<T> *bias) {
  if (input.rank() != 2)
    throw ShapeError("affine: input must be rank 2 (N,K), got " + input.shape_str());
  if (weights.rank() != 2)
    throw ShapeError("affine: weights must be rank 2 (M,K), got " + weights.shape_str());
  if (input.dim(1) != weights.dim(1))
    throw ShapeError("affine: inner dimension mismatch, input K=" + std::to_string(input.dim(1)) +
                     " vs weights K=" + std::to_string(weights.dim(1)));
  const int64_t N = input.dim(0), K = input.dim(1), M = weights.dim(0);
  if (bias && !(bias->rank() == 1 && bias->dim(0) == M))
    throw ShapeError("affine: bias must be rank 1 of length M=" + std::to_string(M));

  Tensor<T> out({N, M});
  parallel_for(N, [&](int64_t n0, int64_t n1) {
    for (int64_t n = n0; n < n1; ++n) {
      const T *x = input.data() + n * K;
      T *y = out.data() + n * M;
      for (int64_t m = 0; m < M; ++m) {
        const T *w = weights.data() + m * K;
        double acc = bias ? static_cast<double>((*bias)[m]) : 0.0;
        for (int64_t k = 0; k < K; ++k)
          acc += static_cast<double>(x[k]) * static_cast<double>(w[k]);
        y[m] = static_cast<T>(acc);
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> affine_backward_input(const Tensor<T> &grad_out, const Tensor<T> &weights) {
  const int64_t N = grad_out.dim(0), M = grad_out.dim(1), K = weights.dim(1);
  Tensor<T> dx({N, K});
  parallel_for(N, [&](int64_t n0, int64_t n1) {
    std::vector<double> acc(static_cast<size_t>(K));
    for (int64_t n = n0; n < n1; ++n) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const T *g = grad_out.data() + n * M;
      for (int64_t m = 0; m < M; ++m) {
        double gv = static_cast<double>(g[m]);
        const T *w = weights.data() + m * K;
        for (int64_t k = 0; k < K; ++k) acc[static_cast<size_t>(k)] += gv * static_cast<double>(w[k]);
      }
      T *d = dx.data() + n * K;
      for (int64_t k = 0; k < K; ++k) d[k] = static_cast<T>(acc[static_cast<size_t>(k)]);
    }
  });
  return dx;
}

template <typename T>
Tensor<T> affine_backward_weights(const Tensor<T> &grad_out, const Tensor<T> &input) {
  const int64_t N = grad_out.dim(0), M = grad_out.dim(1), K = input.dim(1);
  std::vector<double> acc(static_cast<size_t>(M * K), 0.0);
  for (int64_t n = 0; n < N; ++n) {
    const T *g = grad_out.data() + n * M;
    const T *x = input.data() + n * K;
    for (int64_t m = 0; m < M; ++m) {
      double gv = static_cast<double>(g[m]);
      double *row = acc.data() + m * K;
      for (int64_t k = 0; k < K; ++k) row[k] += gv * static_cast<double>(x[k]);
    }
  }
  Tensor<T> dw({M, K});
  for (int64_t i = 0; i < dw.numel(); ++i) dw[i] = static_cast<T>(acc[static_cast<size_t>(i)]);
  return dw;
}

template <typename T> Tensor<T> affine_backward_bias(const Tensor<T> &grad_out) {
  const int64_t N = grad_out.dim(0), M = grad_out.dim(1);
  Tensor<T> db({M});
  for (int64_t m = 0; m < M; ++m) {
    double acc = 0.0;
    for (int64_t n = 0; n < N; ++n) acc += static_cast<double>(grad_out.at(n, m));
    db[m] = static_cast<T>(acc);
  }
  return db;
}

// ----------------------------- elementwise ----------------------------------

template <typename T> Tensor<T> relu(const Tensor<T> &x) {
  Tensor<T> y(x.dims());
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

template <typename T> Tensor<T> relu_backward(const Tensor<T> &x, const Tensor<T> &grad_out) {
  Tensor<T> dx(x.dims());
  for (int64_t i = 0; i < x.numel(); ++i) dx[i] = x[i] > T(0) ? grad_out[i] : T(0);
  return dx;
}

template <typename T> Tensor<T> sigmoid(const Tensor<T> &x) {
  Tensor<T> y(x.dims());
  for (int64_t i = 0; i < x.numel(); ++i)
    y[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x[i]))));
  return y;
}

template <typename T> Tensor<T> sigmoid_backward(const Tensor<T> &y, const Tensor<T> &grad_out) {
  Tensor<T> dx(y.dims());
  for (int64_t i = 0; i < y.numel(); ++i) dx[i] = grad_out[i] * y[i] * (T(1) - y[i]);
  return dx;
}

template <typename T> Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b) {
  if (!a.same_dims(b))
    throw ShapeError("add: dims mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor<T> y(a.dims());
  for (int64_t i = 0; i < a.numel(); ++i) y[i] = a[i] + b[i];
  return y;
}

template <typename T> Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b) {
  if (!a.same_dims(b))
    throw ShapeError("mul: dims mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor<T> y(a.dims());
  for (int64_t i = 0; i < a.numel(); ++i) y[i] = a[i] * b[i];
  return y;
}

template <typename T> Tensor<T> scale(const Tensor<T> &a, T factor) {
  Tensor<T> y(a.dims());
  for (int64_t i = 0; i < a.numel(); ++i) y[i] = a[i] * factor;
  return y;
}

template <typename T> Tensor<T> sum_all(const Tensor<T> &x) {
  double acc = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(x[i]);
  return Tensor<T>::scalar(static_cast<T>(acc));
}

// ------------------------------ batch norm ----------------------------------

template <typename T>
static void check_bn_args(const Tensor<T> &x, const Tensor<T> &gamma, const Tensor<T> &beta) {
  if (x.rank() < 2)
    throw ShapeError("batchnorm: input must have a channel axis (rank >= 2), got " +
                     x.shape_str());
  const int64_t C = x.dim(1);
  if (gamma.numel() != C || beta.numel() != C)
    throw ShapeError("batchnorm: gamma/beta length must equal channel count " +
                     std::to_string(C));
}

// Iterates (n, c, inner) with inner = product of axes after the channel axis.
template <typename T, typename Fn>
static void for_each_channel_slice(const Tensor<T> &x, Fn &&fn) {
  const int64_t N = x.dim(0), C = x.dim(1);
  const int64_t inner = x.numel() / (N * C);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) fn(c, x.data() + (n * C + c) * inner, inner);
}

template <typename T>
Tensor<T> batchnorm_train(const Tensor<T> &x, const Tensor<T> &gamma, const Tensor<T> &beta,
                          T eps, Tensor<T> &batch_mean, Tensor<T> &batch_var) {
  check_bn_args(x, gamma, beta);
  const int64_t N = x.dim(0), C = x.dim(1);
  const int64_t inner = x.numel() / (N * C);
  const int64_t m = N * inner;
  if (m == 1)
    throw NumericError("batchnorm: train mode needs more than one value per channel "
                       "(zero-variance batch)");

  std::vector<double> mean(static_cast<size_t>(C), 0.0), var(static_cast<size_t>(C), 0.0);
  for_each_channel_slice(x, [&](int64_t c, const T *p, int64_t len) {
    double s = 0.0;
    for (int64_t i = 0; i < len; ++i) s += static_cast<double>(p[i]);
    mean[static_cast<size_t>(c)] += s;
  });
  for (auto &v : mean) v /= static_cast<double>(m);
  for_each_channel_slice(x, [&](int64_t c, const T *p, int64_t len) {
    double mu = mean[static_cast<size_t>(c)], s = 0.0;
    for (int64_t i = 0; i < len; ++i) {
      double d = static_cast<double>(p[i]) - mu;
      s += d * d;
    }
    var[static_cast<size_t>(c)] += s;
  });
  for (auto &v : var) v /= static_cast<double>(m);

  batch_mean = Tensor<T>({C});
  batch_var = Tensor<T>({C});
  for (int64_t c = 0; c < C; ++c) {
    batch_mean[c] = static_cast<T>(mean[static_cast<size_t>(c)]);
    batch_var[c] = static_cast<T>(var[static_cast<size_t>(c)]);
  }

  Tensor<T> y(x.dims());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      double inv = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + static_cast<double>(eps));
      double mu = mean[static_cast<size_t>(c)];
      double g = static_cast<double>(gamma[c]), b = static_cast<double>(beta[c]);
      const T *px = x.data() + (n * C + c) * inner;
      T *py = y.data() + (n * C + c) * inner;
      for (int64_t i = 0; i < inner; ++i)
        py[i] = static_cast<T>(g * ((static_cast<double>(px[i]) - mu) * inv) + b);
    }
  return y;
}

template <typename T>
Tensor<T> batchnorm_eval(const Tensor<T> &x, const Tensor<T> &gamma, const Tensor<T> &beta,
                         const Tensor<T> &running_mean, const Tensor<T> &running_var, T eps) {
  check_bn_args(x, gamma, beta);
  const int64_t N = x.dim(0), C = x.dim(1);
  const int64_t inner = x.numel() / (N * C);
  Tensor<T> y(x.dims());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      double inv = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + static_cast<double>(eps));
      double mu = static_cast<double>(running_mean[c]);
      double g = static_cast<double>(gamma[c]), b = static_cast<double>(beta[c]);
      const T *px = x.data() + (n * C + c) * inner;
      T *py = y.data() + (n * C + c) * inner;
      for (int64_t i = 0; i < inner; ++i)
        py[i] = static_cast<T>(g * ((static_cast<double>(px[i]) - mu) * inv) + b);
    }
  return y;
}

template <typename T>
void batchnorm_train_backward(const Tensor<T> &x, const Tensor<T> &gamma,
                              const Tensor<T> &batch_mean, const Tensor<T> &batch_var, T eps,
                              const Tensor<T> &grad_out, Tensor<T> *dx, Tensor<T> *dgamma,
                              Tensor<T> *dbeta) {
  const int64_t N = x.dim(0), C = x.dim(1);
  const int64_t inner = x.numel() / (N * C);
  const double m = static_cast<double>(N * inner);

  std::vector<double> sum_g(static_cast<size_t>(C), 0.0), sum_gx(static_cast<size_t>(C), 0.0);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      double mu = static_cast<double>(batch_mean[c]);
      double inv = 1.0 / std::sqrt(static_cast<double>(batch_var[c]) + static_cast<double>(eps));
      const T *px = x.data() + (n * C + c) * inner;
      const T *pg = grad_out.data() + (n * C + c) * inner;
      for (int64_t i = 0; i < inner; ++i) {
        double xhat = (static_cast<double>(px[i]) - mu) * inv;
        sum_g[static_cast<size_t>(c)] += static_cast<double>(pg[i]);
        sum_gx[static_cast<size_t>(c)] += static_cast<double>(pg[i]) * xhat;
      }
    }

  if (dgamma) {
    *dgamma = Tensor<T>({C});
    for (int64_t c = 0; c < C; ++c) (*dgamma)[c] = static_cast<T>(sum_gx[static_cast<size_t>(c)]);
  }
  if (dbeta) {
    *dbeta = Tensor<T>({C});
    for (int64_t c = 0; c < C; ++c) (*dbeta)[c] = static_cast<T>(sum_g[static_cast<size_t>(c)]);
  }
  if (dx) {
    *dx = Tensor<T>(x.dims());
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        double mu = static_cast<double>(batch_mean[c]);
        double inv = 1.0 / std::sqrt(static_cast<double>(batch_var[c]) + static_cast<double>(eps));
        double g = static_cast<double>(gamma[c]);
        const T *px = x.data() + (n * C + c) * inner;
        const T *pg = grad_out.data() + (n * C + c) * inner;
        T *pd = dx->data() + (n * C + c) * inner;
        for (int64_t i = 0; i < inner; ++i) {
          double xhat = (static_cast<double>(px[i]) - mu) * inv;
          double v = m * static_cast<double>(pg[i]) - sum_g[static_cast<size_t>(c)] -
                     xhat * sum_gx[static_cast<size_t>(c)];
          pd[i] = static_cast<T>(g * inv / m * v);
        }
      }
  }
}

template <typename T>
void batchnorm_eval_backward(const Tensor<T> &x, const Tensor<T> &gamma,
                             const Tensor<T> &running_mean, const Tensor<T> &running_var, T eps,
                             const Tensor<T> &grad_out, Tensor<T> *dx, Tensor<T> *dgamma,
                             Tensor<T> *dbeta) {
  const int64_t N = x.dim(0), C = x.dim(1);
  const int64_t inner = x.numel() / (N * C);
  if (dgamma) *dgamma = Tensor<T>({C});
  if (dbeta) *dbeta = Tensor<T>({C});
  if (dx) *dx = Tensor<T>(x.dims());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      double mu = static_cast<double>(running_mean[c]);
      double inv = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + static_cast<double>(eps));
      double g = static_cast<double>(gamma[c]);
      const T *px = x.data() + (n * C + c) * inner;
      const T *pg = grad_out.data() + (n * C + c) * inner;
      for (int64_t i = 0; i < inner; ++i) {
        double xhat = (static_cast<double>(px[i]) - mu) * inv;
        if (dgamma) (*dgamma)[c] += static_cast<T>(static_cast<double>(pg[i]) * xhat);
        if (dbeta) (*dbeta)[c] += pg[i];
        if (dx) dx->data()[(n * C + c) * inner + i] = static_cast<T>(g * inv * pg[i]);
      }
    }
}

// ------------------------------- losses -------------------------------------

template <typename T> Tensor<T> softmax_rows(const Tensor<T> &logits) {
  if (logits.rank() != 2)
    throw ShapeError("softmax: logits must be rank 2 (N,K), got " + logits.shape_str());
  const int64_t N = logits.dim(0), K = logits.dim(1);
  Tensor<T> y({N, K});
  for (int64_t n = 0; n < N; ++n) {
    const T *x = logits.data() + n * K;
    double mx = static_cast<double>(x[0]);
    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(x[k]));
    double z = 0.0;
    for (int64_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(x[k]) - mx);
    T *py = y.data() + n * K;
    for (int64_t k = 0; k < K; ++k)
      py[k] = static_cast<T>(std::exp(static_cast<double>(x[k]) - mx) / z);
  }
  return y;
}

template <typename T>
T softmax_cross_entropy(const Tensor<T> &logits, const std::vector<int64_t> &labels,
                        Tensor<T> *grad_logits) {
  if (logits.rank() != 2)
    throw ShapeError("cross_entropy: logits must be rank 2 (N,K), got " + logits.shape_str());
  const int64_t N = logits.dim(0), K = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != N)
    throw ShapeError("cross_entropy: label count " + std::to_string(labels.size()) +
                     " does not match batch size " + std::to_string(N));
  for (int64_t n = 0; n < N; ++n)
    if (labels[static_cast<size_t>(n)] < 0 || labels[static_cast<size_t>(n)] >= K)
      throw IndexError("cross_entropy: label " + std::to_string(labels[static_cast<size_t>(n)]) +
                       " out of range [0," + std::to_string(K) + ") at row " + std::to_string(n));

  if (grad_logits) *grad_logits = Tensor<T>({N, K});
  double loss = 0.0;
  for (int64_t n = 0; n < N; ++n) {
    const T *x = logits.data() + n * K;
    double mx = static_cast<double>(x[0]);
    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(x[k]));
    double z = 0.0;
    for (int64_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(x[k]) - mx);
    int64_t lbl = labels[static_cast<size_t>(n)];
    loss += -(static_cast<double>(x[lbl]) - mx - std::log(z));
    if (grad_logits) {
      T *g = grad_logits->data() + n * K;
      for (int64_t k = 0; k < K; ++k) {
        double p = std::exp(static_cast<double>(x[k]) - mx) / z;
        g[k] = static_cast<T>((p - (k == lbl ? 1.0 : 0.0)) / static_cast<double>(N));
      }
    }
  }
  return static_cast<T>(loss / static_cast<double>(N));
}

// --------------------------- channel gating ---------------------------------

template <typename T>
Tensor<T> scale_channels(const Tensor<T> &input, const Tensor<T> &gates) {
  if (input.rank() != 5)
    throw ShapeError("scale_channels: input must be rank 5, got " + input.shape_str());
  if (gates.rank() != 2 || gates.dim(0) != input.dim(0) || gates.dim(1) != input.dim(1))
    throw ShapeError("scale_channels: gates must be (N,C) = (" + std::to_string(input.dim(0)) +
                     "," + std::to_string(input.dim(1)) + "), got " + gates.shape_str());
  const int64_t N = input.dim(0), C = input.dim(1);
  const int64_t inner = input.numel() / (N * C);
  Tensor<T> y(input.dims());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      T g = gates.at(n, c);
      const T *px = input.data() + (n * C + c) * inner;
      T *py = y.data() + (n * C + c) * inner;
      for (int64_t i = 0; i < inner; ++i) py[i] = g * px[i];
    }
  return y;
}

template <typename T>
void scale_channels_backward(const Tensor<T> &input, const Tensor<T> &gates,
                             const Tensor<T> &grad_out, Tensor<T> *dinput, Tensor<T> *dgates) {
  const int64_t N = input.dim(0), C = input.dim(1);
  const int64_t inner = input.numel() / (N * C);
  if (dinput) *dinput = Tensor<T>(input.dims());
  if (dgates) *dgates = Tensor<T>({N, C});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T *px = input.data() + (n * C + c) * inner;
      const T *pg = grad_out.data() + (n * C + c) * inner;
      if (dinput) {
        T g = gates.at(n, c);
        T *pd = dinput->data() + (n * C + c) * inner;
        for (int64_t i = 0; i < inner; ++i) pd[i] = g * pg[i];
      }
      if (dgates) {
        double acc = 0.0;
        for (int64_t i = 0; i < inner; ++i)
          acc += static_cast<double>(pg[i]) * static_cast<double>(px[i]);
        dgates->at(n, c) = static_cast<T>(acc);
      }
    }
}

// --------------------------- global reductions ------------------------------

template <typename T> Tensor<T> mean_over_thw(const Tensor<T> &x) {
  if (x.rank() != 5)
    throw ShapeError("mean_over_thw: input must be rank 5, got " + x.shape_str());
  const int64_t N = x.dim(0), C = x.dim(1);
  const int64_t inner = x.dim(2) * x.dim(3) * x.dim(4);
  Tensor<T> y({N, C});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T *p = x.data() + (n * C + c) * inner;
      double acc = 0.0;
      for (int64_t i = 0; i < inner; ++i) acc += static_cast<double>(p[i]);
      y.at(n, c) = static_cast<T>(acc / static_cast<double>(inner));
    }
  return y;
}

template <typename T>
Tensor<T> mean_over_thw_backward(const Tensor<T> &grad_out, const std::vector<int64_t> &input_dims) {
  const int64_t N = input_dims[0], C = input_dims[1];
  const int64_t inner = input_dims[2] * input_dims[3] * input_dims[4];
  Tensor<T> dx(input_dims);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      T share = static_cast<T>(static_cast<double>(grad_out.at(n, c)) / static_cast<double>(inner));
      T *p = dx.data() + (n * C + c) * inner;
      for (int64_t i = 0; i < inner; ++i) p[i] = share;
    }
  return dx;
}

template <typename T> Tensor<T> mean_over_hw_tmajor(const Tensor<T> &x) {
  if (x.rank() != 5)
    throw ShapeError("mean_over_hw: input must be rank 5, got " + x.shape_str());
  const int64_t N = x.dim(0), C = x.dim(1), Td = x.dim(2);
  const int64_t hw = x.dim(3) * x.dim(4);
  Tensor<T> y({N, Td * C});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t t = 0; t < Td; ++t)
      for (int64_t c = 0; c < C; ++c) {
        const T *p = x.data() + ((n * C + c) * Td + t) * hw;
        double acc = 0.0;
        for (int64_t i = 0; i < hw; ++i) acc += static_cast<double>(p[i]);
        y.at(n, t * C + c) = static_cast<T>(acc / static_cast<double>(hw));
      }
  return y;
}

template <typename T>
Tensor<T> mean_over_hw_tmajor_backward(const Tensor<T> &grad_out,
                                       const std::vector<int64_t> &input_dims) {
  const int64_t N = input_dims[0], C = input_dims[1], Td = input_dims[2];
  const int64_t hw = input_dims[3] * input_dims[4];
  Tensor<T> dx(input_dims);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t t = 0; t < Td; ++t)
      for (int64_t c = 0; c < C; ++c) {
        T share =
            static_cast<T>(static_cast<double>(grad_out.at(n, t * C + c)) / static_cast<double>(hw));
        T *p = dx.data() + ((n * C + c) * Td + t) * hw;
        for (int64_t i = 0; i < hw; ++i) p[i] = share;
      }
  return dx;
}

// ------------------------------ reshaping -----------------------------------

template <typename T> Tensor<T> concat_cols(const Tensor<T> &a, const Tensor<T> &b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    throw ShapeError("concat_cols: need rank-2 tensors with equal row counts, got " +
                     a.shape_str() + " and " + b.shape_str());
  const int64_t N = a.dim(0), Da = a.dim(1), Db = b.dim(1);
  Tensor<T> y({N, Da + Db});
  for (int64_t n = 0; n < N; ++n) {
    std::copy(a.data() + n * Da, a.data() + (n + 1) * Da, y.data() + n * (Da + Db));
    std::copy(b.data() + n * Db, b.data() + (n + 1) * Db, y.data() + n * (Da + Db) + Da);
  }
  return y;
}

template <typename T> std::vector<int64_t> argmax_rows(const Tensor<T> &x) {
  const int64_t N = x.dim(0), K = x.dim(1);
  std::vector<int64_t> out(static_cast<size_t>(N));
  for (int64_t n = 0; n < N; ++n) {
    const T *p = x.data() + n * K;
    int64_t best = 0;
    for (int64_t k = 1; k < K; ++k)
      if (p[k] > p[best]) best = k;
    out[static_cast<size_t>(n)] = best;
  }
  return out;
}

// --------------------------- instantiations ---------------------------------

#define STCNET_INSTANTIATE_OPS(T)                                                                 \
  template Tensor<T> conv3d<T>(const Tensor<T> &, const Tensor<T> &, const Tensor<T> *,          \
                               const ConvSpec &);                                                 \
  template Tensor<T> conv3d_backward_input<T>(const Tensor<T> &, const Tensor<T> &,              \
                                              const ConvSpec &, const std::vector<int64_t> &);   \
  template Tensor<T> conv3d_backward_weights<T>(const Tensor<T> &, const Tensor<T> &,            \
                                                const ConvSpec &);                               \
  template Tensor<T> conv3d_backward_bias<T>(const Tensor<T> &);                                 \
  template Tensor<T> maxpool3d<T>(const Tensor<T> &, const PoolSpec &, std::vector<int64_t> *);  \
  template Tensor<T> maxpool3d_backward<T>(const Tensor<T> &, const std::vector<int64_t> &,      \
                                           const std::vector<int64_t> &);                        \
  template Tensor<T> avgpool3d<T>(const Tensor<T> &, const PoolSpec &);                          \
  template Tensor<T> avgpool3d_backward<T>(const Tensor<T> &, const PoolSpec &,                  \
                                           const std::vector<int64_t> &);                        \
  template Tensor<T> affine<T>(const Tensor<T> &, const Tensor<T> &, const Tensor<T> *);         \
  template Tensor<T> affine_backward_input<T>(const Tensor<T> &, const Tensor<T> &);             \
  template Tensor<T> affine_backward_weights<T>(const Tensor<T> &, const Tensor<T> &);           \
  template Tensor<T> affine_backward_bias<T>(const Tensor<T> &);                                 \
  template Tensor<T> relu<T>(const Tensor<T> &);                                                 \
  template Tensor<T> relu_backward<T>(const Tensor<T> &, const Tensor<T> &);                     \
  template Tensor<T> sigmoid<T>(const Tensor<T> &);                                              \
  template Tensor<T> sigmoid_backward<T>(const Tensor<T> &, const Tensor<T> &);                  \
  template Tensor<T> add<T>(const Tensor<T> &, const Tensor<T> &);                               \
  template Tensor<T> mul<T>(const Tensor<T> &, const Tensor<T> &);                               \
  template Tensor<T> scale<T>(const Tensor<T> &, T);                                             \
  template Tensor<T> sum_all<T>(const Tensor<T> &);                                              \
  template Tensor<T> batchnorm_train<T>(const Tensor<T> &, const Tensor<T> &, const Tensor<T> &, \
                                        T, Tensor<T> &, Tensor<T> &);                            \
  template Tensor<T> batchnorm_eval<T>(const Tensor<T> &, const Tensor<T> &, const Tensor<T> &,  \
                                       const Tensor<T> &, const Tensor<T> &, T);                 \
  template void batchnorm_train_backward<T>(const Tensor<T> &, const Tensor<T> &,                \
                                            const Tensor<T> &, const Tensor<T> &, T,             \
                                            const Tensor<T> &, Tensor<T> *, Tensor<T> *,         \
                                            Tensor<T> *);                                        \
  template void batchnorm_eval_backward<T>(const Tensor<T> &, const Tensor<T> &,                 \
                                           const Tensor<T> &, const Tensor<T> &, T,              \
                                           const Tensor<T> &, Tensor<T> *, Tensor<T> *,          \
                                           Tensor<T> *);                                         \
  template Tensor<T> softmax_rows<T>(const Tensor<T> &);                                         \
  template T softmax_cross_entropy<T>(const Tensor<T> &, const std::vector<int64_t> &,           \
                                      Tensor<T> *);                                              \
  template Tensor<T> scale_channels<T>(const Tensor<T> &, const Tensor<T> &);                    \
  template void scale_channels_backward<T>(const Tensor<T> &, const Tensor<T> &,                 \
                                           const Tensor<T> &, Tensor<T> *, Tensor<T> *);         \
  template Tensor<T> mean_over_thw<T>(const Tensor<T> &);                                        \
  template Tensor<T> mean_over_thw_backward<T>(const Tensor<T> &, const std::vector<int64_t> &); \
  template Tensor<T> mean_over_hw_tmajor<T>(const Tensor<T> &);                                  \
  template Tensor<T> mean_over_hw_tmajor_backward<T>(const Tensor<T> &,                          \
                                                     const std::vector<int64_t> &);              \
  template Tensor<T> concat_cols<T>(const Tensor<T> &, const Tensor<T> &);                       \
  template std::vector<int64_t> argmax_rows<T>(const Tensor<T> &);

STCNET_INSTANTIATE_OPS(float)
STCNET_INSTANTIATE_OPS(double)

#undef STCNET_INSTANTIATE_OPS

} // namespace stcnet::ops
