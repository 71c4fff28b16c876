#pragma once

// Independent reference implementations used only by tests. Each one is the
// most literal loop form of its definition, sharing no code with the library.

#include <cmath>
#include <random>
#include <vector>

#include "dlv/tensor.hpp"

namespace oracle {

using dlv::Shape;
using dlv::Tensor;

inline Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(s);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

inline Tensor<float> random_tensor_f(Shape s, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor<float> t(s);
  std::uniform_real_distribution<float> u(lo, hi);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

/// Six nested loops, zero padding.
inline Tensor<double> conv2d(const Tensor<double>& in, const Tensor<double>& k, const Tensor<double>& bias) {
  const Shape is = in.shape(), ks = k.shape();
  const long pad = static_cast<long>(ks.h / 2);
  Tensor<double> out(Shape{is.n, ks.n, is.h, is.w});
  for (std::size_t b = 0; b < is.n; ++b)
    for (std::size_t oc = 0; oc < ks.n; ++oc)
      for (std::size_t y = 0; y < is.h; ++y)
        for (std::size_t x = 0; x < is.w; ++x) {
          double acc = bias[oc];
          for (std::size_t ic = 0; ic < ks.c; ++ic)
            for (std::size_t ky = 0; ky < ks.h; ++ky)
              for (std::size_t kx = 0; kx < ks.w; ++kx) {
                const long sy = static_cast<long>(y + ky) - pad, sx = static_cast<long>(x + kx) - pad;
                if (sy < 0 || sx < 0 || sy >= static_cast<long>(is.h) || sx >= static_cast<long>(is.w)) continue;
                acc += in.at(b, ic, sy, sx) * k.at(oc, ic, ky, kx);
              }
          out.at(b, oc, y, x) = acc;
        }
  return out;
}

inline double kahan_sum(const std::vector<double>& v) {
  double sum = 0.0, c = 0.0;
  for (double x : v) {
    const double y = x - c;
    const double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
  return sum;
}

/// Haar by the 2x2 block formulas, one output element at a time.
inline Tensor<double> haar(const Tensor<double>& x) {
  const Shape s = x.shape();
  Tensor<double> out(Shape{s.n, 4 * s.c, s.h / 2, s.w / 2});
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < s.h / 2; ++i)
        for (std::size_t j = 0; j < s.w / 2; ++j) {
          const double a = x.at(b, c, 2 * i, 2 * j), bb = x.at(b, c, 2 * i, 2 * j + 1);
          const double cc = x.at(b, c, 2 * i + 1, 2 * j), d = x.at(b, c, 2 * i + 1, 2 * j + 1);
          out.at(b, c, i, j) = (a + bb + cc + d) / 2;
          out.at(b, s.c + c, i, j) = (a - bb + cc - d) / 2;
          out.at(b, 2 * s.c + c, i, j) = (a + bb - cc - d) / 2;
          out.at(b, 3 * s.c + c, i, j) = (a - bb - cc + d) / 2;
        }
  return out;
}

/// Antialiased Keys (a = -0.5) weights for one output sample, computed
/// directly from the definition: every source index whose scaled distance
/// falls inside the widened support, clamped at the edges, then normalized.
inline std::vector<double> bicubic_row(std::size_t out_index, std::size_t in_len, std::size_t factor) {
  auto keys = [](double t) {
    t = std::fabs(t);
    if (t <= 1) return 1.5 * t * t * t - 2.5 * t * t + 1;
    if (t < 2) return -0.5 * t * t * t + 2.5 * t * t - 4 * t + 2;
    return 0.0;
  };
  const double s = static_cast<double>(factor);
  const double center = (out_index + 0.5) * s - 0.5;
  std::vector<double> w(in_len, 0.0);
  double total = 0.0;
  for (long k = static_cast<long>(std::floor(center - 2 * s)) - 1; k <= static_cast<long>(std::ceil(center + 2 * s)) + 1; ++k) {
    const double v = keys((k - center) / s);
    if (v == 0.0) continue;
    const long idx = std::clamp<long>(k, 0, static_cast<long>(in_len) - 1);
    w[idx] += v;
    total += v;
  }
  for (auto& v : w) v /= total;
  return w;
}

inline double bt601_y(double r, double g, double b) { return (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0; }

/// SSIM with full 2-D 11x11 window sums at every valid position.
inline double ssim(const std::vector<double>& a, const std::vector<double>& b, std::size_t w, std::size_t h) {
  double g[11][11];
  double total = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
      total += g[i][j];
    }
  const double c1 = std::pow(0.01 * 255, 2), c2 = std::pow(0.03 * 255, 2);
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y + 11 <= h; ++y)
    for (std::size_t x = 0; x + 11 <= w; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double wt = g[i][j] / total;
          const double va = a[(y + i) * w + x + j], vb = b[(y + i) * w + x + j];
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return acc / static_cast<double>(count);
}

}  // namespace oracle
