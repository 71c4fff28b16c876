#pragma once

#include <Eigen/Core>

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "dlv/tensor.hpp"

namespace dlv {

// Stride-1 cross-correlation with zero padding (k - 1) / 2, k in {1, 3}.
//
// A 3x3 layer runs as nine GEMMs over one zero-padded, channel-major buffer:
// each tap is a constant column offset into that buffer, so no unfolded
// column matrix is materialized. Border positions of the padded grid produce
// values that are simply not read back.

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using OuterStride = Eigen::OuterStride<Eigen::Dynamic>;
template <typename T>
using StridedMap = Eigen::Map<RowMatrix<T>, 0, OuterStride>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMatrix<T>, 0, OuterStride>;

inline void check_conv_shapes(const Shape& in, const Shape& kernel, const Shape& bias) {
  if (kernel.h != kernel.w || (kernel.h != 1 && kernel.h != 3)) {
    throw ShapeError("conv2d: kernel must be 1x1 or 3x3, got " + kernel.str());
  }
  if (kernel.c != in.c) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.c) + " input channels, input has shape " +
                     in.str());
  }
  if (bias.numel() != kernel.n) {
    throw ShapeError("conv2d: bias " + bias.str() + " does not match " + std::to_string(kernel.n) +
                     " output channels");
  }
}

/// Geometry of the padded channel-major buffer: each channel row holds
/// `margin` zeros, then B padded (H+2)x(W+2) planes, then `margin` zeros.
struct PaddedGrid {
  std::size_t batch, h, w;
  std::size_t pw() const { return w + 2; }
  std::size_t plane() const { return (h + 2) * (w + 2); }
  std::size_t margin() const { return w + 3; }
  std::size_t span() const { return batch * plane(); }
  std::size_t row() const { return span() + 2 * margin(); }
  long tap_offset(std::size_t t) const {
    const long dy = static_cast<long>(t / 3) - 1, dx = static_cast<long>(t % 3) - 1;
    return dy * static_cast<long>(pw()) + dx;
  }
  std::size_t index(std::size_t b, std::size_t y, std::size_t x) const {
    return margin() + b * plane() + (y + 1) * pw() + (x + 1);
  }
};

/// Uninitialized scratch storage.
template <typename T>
struct Scratch {
  std::unique_ptr<T[]> buf;
  explicit Scratch(std::size_t n) : buf(new T[n]) {}
  T* data() { return buf.get(); }
  const T* data() const { return buf.get(); }
};

/// Fills the padded buffer: interior from `t`, border ring and margins zero.
template <typename T>
void to_padded(const Tensor<T>& t, const PaddedGrid& g, T* buf) {
  const Shape s = t.shape();
  const std::size_t row = g.row(), pw = g.pw(), m = g.margin();
  for (std::size_t c = 0; c < s.c; ++c) {
    T* r = buf + c * row;
    std::fill_n(r, m + pw, T(0));
    for (std::size_t b = 0; b < s.n; ++b) {
      const T* src = t.channel(b, c);
      T* plane = r + m + b * g.plane();
      if (b > 0) std::fill_n(plane, pw, T(0));
      for (std::size_t y = 0; y < s.h; ++y) {
        T* line = plane + (y + 1) * pw;
        line[0] = T(0);
        std::copy_n(src + y * s.w, s.w, line + 1);
        line[pw - 1] = T(0);
      }
      std::fill_n(plane + (s.h + 1) * pw, pw, T(0));
    }
    std::fill_n(r + m + g.span(), m, T(0));
  }
}

template <typename T>
void from_padded(const T* buf, const PaddedGrid& g, Tensor<T>& t) {
  const Shape s = t.shape();
  const std::size_t row = g.row();
  for (std::size_t c = 0; c < s.c; ++c) {
    for (std::size_t b = 0; b < s.n; ++b) {
      T* dst = t.channel(b, c);
      for (std::size_t y = 0; y < s.h; ++y) std::copy_n(buf + c * row + g.index(b, y, 0), s.w, dst + y * s.w);
    }
  }
}

/// kernel [oc][ic][9] -> nine contiguous [oc][ic] matrices.
template <typename T>
std::vector<T> split_taps(const Tensor<T>& kernel) {
  const std::size_t oc_n = kernel.shape().n, ic_n = kernel.shape().c;
  std::vector<T> taps(9 * oc_n * ic_n);
  for (std::size_t oc = 0; oc < oc_n; ++oc) {
    for (std::size_t ic = 0; ic < ic_n; ++ic) {
      for (std::size_t t = 0; t < 9; ++t) taps[(t * oc_n + oc) * ic_n + ic] = kernel[(oc * ic_n + ic) * 9 + t];
    }
  }
  return taps;
}

/// NCHW -> [C][B * HW].
template <typename T>
void to_channel_major(const Tensor<T>& t, std::vector<T>& out) {
  const Shape s = t.shape();
  const std::size_t hw = s.plane();
  out.resize(t.size());
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) std::copy_n(t.channel(b, c), hw, out.data() + (c * s.n + b) * hw);
  }
}

template <typename T>
void from_channel_major(const std::vector<T>& buf, Tensor<T>& t) {
  const Shape s = t.shape();
  const std::size_t hw = s.plane();
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) std::copy_n(buf.data() + (c * s.n + b) * hw, hw, t.channel(b, c));
  }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& in, const Tensor<T>& kernel, const Tensor<T>& bias) {
  using detail::ConstStridedMap;
  using detail::OuterStride;
  using detail::StridedMap;
  const Shape is = in.shape();
  const Shape ks = kernel.shape();
  detail::check_conv_shapes(is, ks, bias.shape());
  const auto oc_n = static_cast<Eigen::Index>(ks.n), ic_n = static_cast<Eigen::Index>(ks.c);
  Tensor<T> out(Shape{is.n, ks.n, is.h, is.w});

  if (ks.h == 1) {
    const auto n = static_cast<Eigen::Index>(is.n * is.plane());
    std::vector<T> src, dst(ks.n * is.n * is.plane());
    detail::to_channel_major(in, src);
    StridedMap<T>(dst.data(), oc_n, n, OuterStride(n)).noalias() =
        ConstStridedMap<T>(kernel.ptr(), oc_n, ic_n, OuterStride(ic_n)) *
        ConstStridedMap<T>(src.data(), ic_n, n, OuterStride(n));
    detail::from_channel_major(dst, out);
  } else {
    const detail::PaddedGrid g{is.n, is.h, is.w};
    const auto row = static_cast<Eigen::Index>(g.row());
    const auto n = static_cast<Eigen::Index>(g.span());
    const auto m = static_cast<Eigen::Index>(g.margin());
    detail::Scratch<T> src(ks.c * g.row()), dst(ks.n * g.row());
    detail::to_padded(in, g, src.data());
    const std::vector<T> taps = detail::split_taps(kernel);
    StridedMap<T> res(dst.data() + m, oc_n, n, OuterStride(row));
    for (std::size_t t = 0; t < 9; ++t) {
      const auto prod = ConstStridedMap<T>(taps.data() + t * ks.n * ks.c, oc_n, ic_n, OuterStride(ic_n)) *
                        ConstStridedMap<T>(src.data() + m + g.tap_offset(t), ic_n, n, OuterStride(row));
      if (t == 0) {
        res.noalias() = prod;
      } else {
        res.noalias() += prod;
      }
    }
    detail::from_padded(dst.data(), g, out);
  }
  const std::size_t hw = is.plane();
  for (std::size_t b = 0; b < is.n; ++b) {
    for (std::size_t oc = 0; oc < ks.n; ++oc) {
      T* o = out.channel(b, oc);
      const T bv = bias[oc];
      for (std::size_t i = 0; i < hw; ++i) o[i] += bv;
    }
  }
  return out;
}

/// Gradients of conv2d. Null outputs are skipped; kernel and bias gradients
/// accumulate (+=), the input gradient is overwritten.
template <typename T>
void conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& in, const Tensor<T>& kernel, Tensor<T>* grad_in,
                     Tensor<T>* grad_kernel, Tensor<T>* grad_bias) {
  using detail::ConstStridedMap;
  using detail::OuterStride;
  using detail::StridedMap;
  const Shape is = in.shape();
  const Shape ks = kernel.shape();
  const auto oc_n = static_cast<Eigen::Index>(ks.n), ic_n = static_cast<Eigen::Index>(ks.c);

  if (grad_bias) {
    const std::size_t hw = is.plane();
    for (std::size_t oc = 0; oc < ks.n; ++oc) {
      double acc = 0.0;
      for (std::size_t b = 0; b < is.n; ++b) acc += detail::pairwise_sum(grad_out.channel(b, oc), hw);
      (*grad_bias)[oc] += static_cast<T>(acc);
    }
  }

  if (ks.h == 1) {
    const auto n = static_cast<Eigen::Index>(is.n * is.plane());
    std::vector<T> go;
    detail::to_channel_major(grad_out, go);
    ConstStridedMap<T> gmat(go.data(), oc_n, n, OuterStride(n));
    ConstStridedMap<T> kmat(kernel.ptr(), oc_n, ic_n, OuterStride(ic_n));
    if (grad_in) {
      std::vector<T> gi(ks.c * is.n * is.plane());
      StridedMap<T>(gi.data(), ic_n, n, OuterStride(n)).noalias() = kmat.transpose() * gmat;
      *grad_in = Tensor<T>(is);
      detail::from_channel_major(gi, *grad_in);
    }
    if (grad_kernel) {
      std::vector<T> src;
      detail::to_channel_major(in, src);
      StridedMap<T>(grad_kernel->ptr(), oc_n, ic_n, OuterStride(ic_n)).noalias() +=
          gmat * ConstStridedMap<T>(src.data(), ic_n, n, OuterStride(n)).transpose();
    }
    return;
  }

  const detail::PaddedGrid g{is.n, is.h, is.w};
  const auto row = static_cast<Eigen::Index>(g.row());
  const auto n = static_cast<Eigen::Index>(g.span());
  const auto m = static_cast<Eigen::Index>(g.margin());
  detail::Scratch<T> go(ks.n * g.row());
  detail::to_padded(grad_out, g, go.data());
  const std::vector<T> taps = detail::split_taps(kernel);
  if (grad_in) {
    detail::Scratch<T> gi(ks.c * g.row());
    StridedMap<T> res(gi.data() + m, ic_n, n, OuterStride(row));
    for (std::size_t t = 0; t < 9; ++t) {
      const auto prod =
          ConstStridedMap<T>(taps.data() + t * ks.n * ks.c, oc_n, ic_n, OuterStride(ic_n)).transpose() *
          ConstStridedMap<T>(go.data() + m - g.tap_offset(t), oc_n, n, OuterStride(row));
      if (t == 0) {
        res.noalias() = prod;
      } else {
        res.noalias() += prod;
      }
    }
    *grad_in = Tensor<T>(is);
    detail::from_padded(gi.data(), g, *grad_in);
  }
  if (grad_kernel) {
    detail::Scratch<T> src(ks.c * g.row());
    detail::to_padded(in, g, src.data());
    ConstStridedMap<T> gmat(go.data() + m, oc_n, n, OuterStride(row));
    std::vector<T> tap_grad(ks.n * ks.c);
    for (std::size_t t = 0; t < 9; ++t) {
      StridedMap<T>(tap_grad.data(), oc_n, ic_n, OuterStride(ic_n)).noalias() =
          gmat * ConstStridedMap<T>(src.data() + m + g.tap_offset(t), ic_n, n, OuterStride(row)).transpose();
      for (std::size_t oc = 0; oc < ks.n; ++oc) {
        for (std::size_t ic = 0; ic < ks.c; ++ic) (*grad_kernel)[(oc * ks.c + ic) * 9 + t] += tap_grad[oc * ks.c + ic];
      }
    }
  }
}

}  // namespace dlv
