#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dlv {

using Rng = std::mt19937_64;

/// Raised for any tensor extent disagreement. The message names the operation
/// and both offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  std::size_t n = 0;  // batch
  std::size_t c = 0;  // channels
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool empty() const { return numel() == 0; }

  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << '[' << n << ',' << c << ',' << h << ',' << w << ']';
    return os.str();
  }
};

inline void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " +
                     b.str());
  }
}

/// Dense NCHW tensor. The scalar type is the dtype; float is used for training
/// and double for verification.
///
/// A default-constructed tensor is the empty tensor (all extents zero). It
/// stands in for an absent downscaling latent when C_w = 0. Any tensor built
/// from an explicit shape has every extent >= 1.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape) {
    if (shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0) {
      throw ShapeError("Tensor: every extent must be >= 1, got " + shape.str());
    }
    data_.assign(shape.numel(), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0) {
      throw ShapeError("Tensor: every extent must be >= 1, got " + shape.str());
    }
    if (data_.size() != shape.numel()) {
      throw ShapeError("Tensor: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape.str());
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(shape, T(0)); }
  static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool is_scalar() const { return data_.size() == 1; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const {
    return ((b * shape_.c + ch) * shape_.h + y) * shape_.w + x;
  }
  T& at(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) {
    return data_[offset(b, ch, y, x)];
  }
  const T& at(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const {
    return data_[offset(b, ch, y, x)];
  }

  T* channel(std::size_t b, std::size_t ch) { return data_.data() + offset(b, ch, 0, 0); }
  const T* channel(std::size_t b, std::size_t ch) const {
    return data_.data() + offset(b, ch, 0, 0);
  }

  T item() const {
    if (data_.size() != 1) {
      throw ShapeError("Tensor::item: not a scalar, shape " + shape_.str());
    }
    return data_[0];
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    if (empty()) return out;
    out = Tensor<U>(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// Reductions

namespace detail {

template <typename T>
double pairwise_sum(const T* p, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(p[i]);
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(p, half) + pairwise_sum(p + half, n - half);
}

template <typename T>
double pairwise_sumsq(const T* p, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(p[i]) * static_cast<double>(p[i]);
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sumsq(p, half) + pairwise_sumsq(p + half, n - half);
}

}  // namespace detail

/// Row-major, pairwise within each row, then pairwise over the row totals.
/// Accumulates in double regardless of T so f32 training losses are stable.
template <typename T>
double sum_all(const Tensor<T>& a) {
  if (a.empty()) return 0.0;
  const std::size_t row = a.shape().w;
  const std::size_t rows = a.size() / row;
  std::vector<double> partial(rows);
  for (std::size_t r = 0; r < rows; ++r) partial[r] = detail::pairwise_sum(a.ptr() + r * row, row);
  return detail::pairwise_sum(partial.data(), rows);
}

template <typename T>
double sumsq_all(const Tensor<T>& a) {
  if (a.empty()) return 0.0;
  const std::size_t row = a.shape().w;
  const std::size_t rows = a.size() / row;
  std::vector<double> partial(rows);
  for (std::size_t r = 0; r < rows; ++r) partial[r] = detail::pairwise_sumsq(a.ptr() + r * row, row);
  return detail::pairwise_sum(partial.data(), rows);
}

template <typename T>
double mean_all(const Tensor<T>& a) {
  if (a.empty()) return 0.0;
  return sum_all(a) / static_cast<double>(a.size());
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("max_abs_diff", a.shape(), b.shape());
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<T>(std::abs(a[i] - b[i])));
  return m;
}

// ---------------------------------------------------------------------------
// Channel plumbing

/// Concatenate along the channel axis. Empty tensors are skipped, so an absent
/// latent concatenates to a no-op.
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts) {
  std::size_t channels = 0;
  const Tensor<T>* first = nullptr;
  for (const auto* p : parts) {
    if (p->empty()) continue;
    if (!first) {
      first = p;
    } else if (p->shape().n != first->shape().n || p->shape().h != first->shape().h ||
               p->shape().w != first->shape().w) {
      throw ShapeError("concat_channels: incompatible " + first->shape().str() + " and " +
                       p->shape().str());
    }
    channels += p->shape().c;
  }
  if (!first) return {};
  const Shape fs = first->shape();
  Tensor<T> out(Shape{fs.n, channels, fs.h, fs.w});
  const std::size_t plane = fs.plane();
  for (std::size_t b = 0; b < fs.n; ++b) {
    T* dst = out.channel(b, 0);
    for (const auto* p : parts) {
      if (p->empty()) continue;
      const std::size_t len = p->shape().c * plane;
      std::copy_n(p->channel(b, 0), len, dst);
      dst += len;
    }
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Tensor<T>* parts[] = {&a, &b};
  return concat_channels<T>(std::span<const Tensor<T>* const>(parts));
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, std::size_t begin, std::size_t count) {
  const Shape s = a.shape();
  if (count == 0 || begin + count > s.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ',' +
                     std::to_string(begin + count) + ") outside " + s.str());
  }
  Tensor<T> out(Shape{s.n, count, s.h, s.w});
  const std::size_t len = count * s.plane();
  for (std::size_t b = 0; b < s.n; ++b) std::copy_n(a.channel(b, begin), len, out.channel(b, 0));
  return out;
}

}  // namespace dlv
