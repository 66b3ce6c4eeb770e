// SPDX-License-Identifier: Apache-2.0
#include "stcnet/oracle.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace stcnet::oracle {

template <typename T>
Tensor<T> conv3d_reference(const Tensor<T> &input, const Tensor<T> &weights,
                           const Tensor<T> *bias, const ConvSpec &spec) {
  spec.validate();
  const int64_t N = input.dim(0);
  const int64_t Tin = input.dim(2), Hin = input.dim(3), Win = input.dim(4);
  auto [To, Ho, Wo] = spec.out_extents(Tin, Hin, Win);
  const int64_t G = spec.groups;
  const int64_t Cg = spec.in_channels / G;
  const int64_t Og = spec.out_channels / G;

  Tensor<T> out({N, spec.out_channels, To, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t co = 0; co < spec.out_channels; ++co) {
      int64_t g = co / Og;
      for (int64_t to = 0; to < To; ++to)
        for (int64_t ho = 0; ho < Ho; ++ho)
          for (int64_t wo = 0; wo < Wo; ++wo) {
            double acc = 0.0;
            for (int64_t ci = 0; ci < Cg; ++ci)
              for (int kt = 0; kt < spec.kernel[0]; ++kt)
                for (int kh = 0; kh < spec.kernel[1]; ++kh)
                  for (int kw = 0; kw < spec.kernel[2]; ++kw) {
                    int64_t t = to * spec.stride[0] - spec.padding[0] + kt;
                    int64_t h = ho * spec.stride[1] - spec.padding[1] + kh;
                    int64_t w = wo * spec.stride[2] - spec.padding[2] + kw;
                    if (t < 0 || t >= Tin || h < 0 || h >= Hin || w < 0 || w >= Win) continue;
                    double xv = static_cast<double>(input.at(n, g * Cg + ci, t, h, w));
                    double wv = static_cast<double>(
                        weights.data()[(((co * Cg + ci) * spec.kernel[0] + kt) * spec.kernel[1] +
                                        kh) *
                                           spec.kernel[2] +
                                       kw]);
                    acc += xv * wv;
                  }
            if (bias) acc += static_cast<double>((*bias)[co]);
            out.at(n, co, to, ho, wo) = static_cast<T>(acc);
          }
    }
  return out;
}

template <typename T>
Tensor<T> maxpool3d_reference(const Tensor<T> &input, const PoolSpec &spec) {
  spec.validate();
  const int64_t N = input.dim(0), C = input.dim(1);
  const int64_t Tin = input.dim(2), Hin = input.dim(3), Win = input.dim(4);
  auto [To, Ho, Wo] = spec.out_extents(Tin, Hin, Win);
  Tensor<T> out({N, C, To, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t to = 0; to < To; ++to)
        for (int64_t ho = 0; ho < Ho; ++ho)
          for (int64_t wo = 0; wo < Wo; ++wo) {
            double best = -std::numeric_limits<double>::infinity();
            for (int kt = 0; kt < spec.kernel[0]; ++kt)
              for (int kh = 0; kh < spec.kernel[1]; ++kh)
                for (int kw = 0; kw < spec.kernel[2]; ++kw) {
                  int64_t t = to * spec.stride[0] - spec.padding[0] + kt;
                  int64_t h = ho * spec.stride[1] - spec.padding[1] + kh;
                  int64_t w = wo * spec.stride[2] - spec.padding[2] + kw;
                  if (t < 0 || t >= Tin || h < 0 || h >= Hin || w < 0 || w >= Win) continue;
                  best = std::max(best, static_cast<double>(input.at(n, c, t, h, w)));
                }
            out.at(n, c, to, ho, wo) = static_cast<T>(best);
          }
  return out;
}

template <typename T>
Tensor<T> avgpool3d_reference(const Tensor<T> &input, const PoolSpec &spec) {
  spec.validate();
  const int64_t N = input.dim(0), C = input.dim(1);
  const int64_t Tin = input.dim(2), Hin = input.dim(3), Win = input.dim(4);
  auto [To, Ho, Wo] = spec.out_extents(Tin, Hin, Win);
  Tensor<T> out({N, C, To, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t to = 0; to < To; ++to)
        for (int64_t ho = 0; ho < Ho; ++ho)
          for (int64_t wo = 0; wo < Wo; ++wo) {
            double acc = 0.0;
            int64_t count = 0;
            for (int kt = 0; kt < spec.kernel[0]; ++kt)
              for (int kh = 0; kh < spec.kernel[1]; ++kh)
                for (int kw = 0; kw < spec.kernel[2]; ++kw) {
                  int64_t t = to * spec.stride[0] - spec.padding[0] + kt;
                  int64_t h = ho * spec.stride[1] - spec.padding[1] + kh;
                  int64_t w = wo * spec.stride[2] - spec.padding[2] + kw;
                  if (t < 0 || t >= Tin || h < 0 || h >= Hin || w < 0 || w >= Win) continue;
                  acc += static_cast<double>(input.at(n, c, t, h, w));
                  ++count;
                }
            out.at(n, c, to, ho, wo) = static_cast<T>(acc / static_cast<double>(count));
          }
  return out;
}

template <typename T>
Tensor<T> affine_reference(const Tensor<T> &input, const Tensor<T> &weights,
                           const Tensor<T> *bias) {
  const int64_t N = input.dim(0), K = input.dim(1), M = weights.dim(0);
  if (weights.dim(1) != K)
    throw ShapeError("affine_reference: inner dimension mismatch K=" + std::to_string(K) +
                     " vs " + std::to_string(weights.dim(1)));
  Tensor<T> out({N, M});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t m = 0; m < M; ++m) {
      double acc = 0.0;
      for (int64_t k = 0; k < K; ++k)
        acc += static_cast<double>(input.at(n, k)) * static_cast<double>(weights.at(m, k));
      if (bias) acc += static_cast<double>((*bias)[m]);
      out.at(n, m) = static_cast<T>(acc);
    }
  return out;
}

template <typename T>
Tensor<T> batchnorm_train_reference(const Tensor<T> &x, const Tensor<T> &gamma,
                                    const Tensor<T> &beta, T eps) {
  const int64_t N = x.dim(0), C = x.dim(1);
  const int64_t inner = x.numel() / (N * C);
  Tensor<T> out(x.dims());
  for (int64_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < inner; ++i)
        sum += static_cast<double>(x.data()[(n * C + c) * inner + i]);
    double mean = sum / static_cast<double>(N * inner);
    double sq = 0.0;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < inner; ++i) {
        double d = static_cast<double>(x.data()[(n * C + c) * inner + i]) - mean;
        sq += d * d;
      }
    double var = sq / static_cast<double>(N * inner);
    double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < inner; ++i) {
        double v = static_cast<double>(x.data()[(n * C + c) * inner + i]);
        out.data()[(n * C + c) * inner + i] =
            static_cast<T>(static_cast<double>(gamma[c]) * (v - mean) * inv +
                           static_cast<double>(beta[c]));
      }
  }
  return out;
}

Tensor<double> finite_diff_grad(const ScalarFn &f, const Tensor<double> &x, double h) {
  Tensor<double> grad(x.dims());
  Tensor<double> probe = x;
  for (int64_t i = 0; i < x.numel(); ++i) {
    double orig = probe[i];
    probe[i] = orig + h;
    double fp = f(probe);
    probe[i] = orig - h;
    double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_grad: non-finite function value at coordinate " +
                         std::to_string(i));
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

std::string CompareResult::describe() const {
  std::ostringstream os;
  if (pass) {
    os << "pass (worst abs err " << abs_err << ")";
  } else {
    os << "fail at flat index " << worst_index << ": a=" << a << " b=" << b << " |a-b|=" << abs_err
       << " allowed=" << allowed;
  }
  return os.str();
}

template <typename T>
CompareResult compare(const Tensor<T> &a, const Tensor<T> &b, const Tolerance &tol) {
  tol.validate();
  if (!a.same_dims(b))
    throw ShapeError("compare: dims mismatch " + a.shape_str() + " vs " + b.shape_str());

  CompareResult r;
  double worst_margin = -std::numeric_limits<double>::infinity();
  double sq = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double av = static_cast<double>(a[i]), bv = static_cast<double>(b[i]);
    double err = std::abs(av - bv);
    double allowed = tol.abs + tol.rel * std::max(std::abs(av), std::abs(bv));
    sq += err * err;
    double margin = err - allowed;
    if (margin > worst_margin) {
      worst_margin = margin;
      r.worst_index = i;
      r.a = av;
      r.b = bv;
      r.abs_err = err;
      r.allowed = allowed;
    }
  }
  r.l2_err = std::sqrt(sq);
  if (tol.norm == Norm::Max) {
    r.pass = worst_margin <= 0.0;
  } else {
    r.pass = r.l2_err <= tol.abs + tol.rel;
  }
  return r;
}

template <typename T> double max_rel_err(const Tensor<T> &a, const Tensor<T> &b) {
  if (!a.same_dims(b))
    throw ShapeError("max_rel_err: dims mismatch " + a.shape_str() + " vs " + b.shape_str());
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, rel_err(static_cast<double>(a[i]), static_cast<double>(b[i])));
  return worst;
}

#define STCNET_INSTANTIATE_ORACLE(T)                                                             \
  template Tensor<T> conv3d_reference<T>(const Tensor<T> &, const Tensor<T> &,                   \
                                         const Tensor<T> *, const ConvSpec &);                   \
  template Tensor<T> maxpool3d_reference<T>(const Tensor<T> &, const PoolSpec &);                \
  template Tensor<T> avgpool3d_reference<T>(const Tensor<T> &, const PoolSpec &);                \
  template Tensor<T> affine_reference<T>(const Tensor<T> &, const Tensor<T> &,                   \
                                         const Tensor<T> *);                                     \
  template Tensor<T> batchnorm_train_reference<T>(const Tensor<T> &, const Tensor<T> &,          \
                                                  const Tensor<T> &, T);                         \
  template CompareResult compare<T>(const Tensor<T> &, const Tensor<T> &, const Tolerance &);    \
  template double max_rel_err<T>(const Tensor<T> &, const Tensor<T> &);

STCNET_INSTANTIATE_ORACLE(float)
STCNET_INSTANTIATE_ORACLE(double)

#undef STCNET_INSTANTIATE_ORACLE

} // namespace stcnet::oracle
