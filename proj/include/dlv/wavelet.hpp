#pragma once

#include "dlv/tensor.hpp"

namespace dlv {

// One level of the orthonormal 2-D Haar transform.
//
// Each 2x2 block [[a, b], [c, d]] of every input channel maps to
//   LL = (a + b + c + d) / 2    LH = (a - b + c - d) / 2
//   HL = (a + b - c - d) / 2    HH = (a - b - c + d) / 2
// Output channels are grouped by subband: [LL(all C) | LH(all C) | HL(all C) | HH(all C)].
// The map is orthogonal, so its inverse is its transpose.

template <typename T>
Tensor<T> haar_forward(const Tensor<T>& x) {
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("haar_forward: height and width must be even, got " + s.str());
  }
  const std::size_t h = s.h / 2, w = s.w / 2, c = s.c;
  Tensor<T> out(Shape{s.n, 4 * c, h, w});
  const T half = T(0.5);
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* src = x.channel(b, ch);
      T* ll = out.channel(b, ch);
      T* lh = out.channel(b, c + ch);
      T* hl = out.channel(b, 2 * c + ch);
      T* hh = out.channel(b, 3 * c + ch);
      for (std::size_t y = 0; y < h; ++y) {
        const T* top = src + (2 * y) * s.w;
        const T* bot = top + s.w;
        for (std::size_t xx = 0; xx < w; ++xx) {
          const T a = top[2 * xx], bb = top[2 * xx + 1], cc = bot[2 * xx], d = bot[2 * xx + 1];
          const std::size_t o = y * w + xx;
          ll[o] = (a + bb + cc + d) * half;
          lh[o] = (a - bb + cc - d) * half;
          hl[o] = (a + bb - cc - d) * half;
          hh[o] = (a - bb - cc + d) * half;
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> haar_inverse(const Tensor<T>& coeffs) {
  const Shape s = coeffs.shape();
  if (s.c % 4 != 0) {
    throw ShapeError("haar_inverse: channel count must be divisible by 4, got " + s.str());
  }
  const std::size_t c = s.c / 4, h = s.h, w = s.w;
  Tensor<T> out(Shape{s.n, c, 2 * h, 2 * w});
  const T half = T(0.5);
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* ll = coeffs.channel(b, ch);
      const T* lh = coeffs.channel(b, c + ch);
      const T* hl = coeffs.channel(b, 2 * c + ch);
      const T* hh = coeffs.channel(b, 3 * c + ch);
      T* dst = out.channel(b, ch);
      for (std::size_t y = 0; y < h; ++y) {
        T* top = dst + (2 * y) * (2 * w);
        T* bot = top + 2 * w;
        for (std::size_t xx = 0; xx < w; ++xx) {
          const std::size_t i = y * w + xx;
          top[2 * xx] = (ll[i] + lh[i] + hl[i] + hh[i]) * half;
          top[2 * xx + 1] = (ll[i] - lh[i] + hl[i] - hh[i]) * half;
          bot[2 * xx] = (ll[i] + lh[i] - hl[i] - hh[i]) * half;
          bot[2 * xx + 1] = (ll[i] - lh[i] - hl[i] + hh[i]) * half;
        }
      }
    }
  }
  return out;
}

}  // namespace dlv
