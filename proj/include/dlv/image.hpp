#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlv/tensor.hpp"

namespace dlv {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Planar RGB image with values in [0, 1].
struct ImageRGB {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;  // 3 planes of height * width

  ImageRGB() = default;
  ImageRGB(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), values(3 * w * h, fill) {}

  double& at(std::size_t ch, std::size_t y, std::size_t x) { return values[(ch * height + y) * width + x]; }
  double at(std::size_t ch, std::size_t y, std::size_t x) const { return values[(ch * height + y) * width + x]; }

  friend bool operator==(const ImageRGB&, const ImageRGB&) = default;
};

/// Single-channel plane; metrics take these.
struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;

  Plane() = default;
  Plane(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), values(w * h, fill) {}

  double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::round(v * 255.0), 0.0, 255.0));
}

/// Reads an 8-bit RGB or gray PNG. Gray is replicated into three channels.
inline ImageRGB load_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ImageError("load_png: no such file: " + path.string());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw ImageError("load_png: malformed PNG " + path.string() + ": " + image.message);
  }
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw ImageError("load_png: " + path.string() + " has 16-bit samples; only 8-bit depth is supported");
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw ImageError("load_png: failed decoding " + path.string() + ": " + msg);
  }
  ImageRGB img(image.width, image.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        img.at(ch, y, x) = buffer[(y * img.width + x) * 3 + ch] / 255.0;
      }
    }
  }
  return img;
}

inline void save_png(const std::filesystem::path& path, const ImageRGB& img) {
  if (img.width == 0 || img.height == 0) throw ImageError("save_png: empty image");
  std::vector<png_byte> buffer(img.width * img.height * 3);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) buffer[(y * img.width + x) * 3 + ch] = to_byte(img.at(ch, y, x));
    }
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw ImageError("save_png: cannot write " + path.string() + ": " + image.message);
  }
}

/// Snaps every value to the nearest 8-bit level, as a save/load round trip would.
inline ImageRGB quantize_8bit(const ImageRGB& img) {
  ImageRGB out = img;
  for (auto& v : out.values) v = to_byte(v) / 255.0;
  return out;
}

// ---------------------------------------------------------------------------
// Color

/// BT.601 studio-range luma, returned normalized to [0, 1] (16/255 .. 235/255).
inline double luma_bt601(double r, double g, double b) {
  return (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0;
}

inline Plane rgb_to_y(const ImageRGB& img) {
  Plane out(img.width, img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      out.at(y, x) = luma_bt601(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tensor bridges

template <typename T>
Tensor<T> image_to_tensor(const ImageRGB& img) {
  Tensor<T> t(Shape{1, 3, img.height, img.width});
  for (std::size_t i = 0; i < img.values.size(); ++i) t[i] = static_cast<T>(img.values[i]);
  return t;
}

template <typename T>
ImageRGB tensor_to_image(const Tensor<T>& t, std::size_t batch = 0) {
  const Shape s = t.shape();
  if (s.c != 3) throw ShapeError("tensor_to_image: expected 3 channels, got " + s.str());
  ImageRGB img(s.w, s.h);
  const T* src = t.channel(batch, 0);
  for (std::size_t i = 0; i < img.values.size(); ++i) img.values[i] = static_cast<double>(src[i]);
  return img;
}

inline ImageRGB crop(const ImageRGB& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  if (x0 + w > img.width || y0 + h > img.height) throw ShapeError("crop: window outside image");
  ImageRGB out(w, h);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out.at(ch, y, x) = img.at(ch, y0 + y, x0 + x);
    }
  }
  return out;
}

/// Center crop to the largest size divisible by `multiple`.
inline ImageRGB center_crop_to_multiple(const ImageRGB& img, std::size_t multiple) {
  const std::size_t w = img.width - img.width % multiple;
  const std::size_t h = img.height - img.height % multiple;
  if (w == 0 || h == 0) throw ShapeError("center_crop_to_multiple: image smaller than one block");
  return crop(img, (img.width - w) / 2, (img.height - h) / 2, w, h);
}

// ---------------------------------------------------------------------------
// Bicubic downsampling

/// Keys cubic with a = -0.5.
inline double cubic_kernel(double x) {
  constexpr double a = -0.5;
  const double ax = std::abs(x);
  if (ax <= 1.0) return ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0;
  if (ax < 2.0) return ((a * ax - 5.0 * a) * ax + 8.0 * a) * ax - 4.0 * a;
  return 0.0;
}

/// One row of the resampling matrix per output sample.
struct ResampleTaps {
  std::size_t out_len = 0;
  std::size_t taps = 0;
  std::vector<std::size_t> index;  // out_len * taps, clamped to the source range
  std::vector<double> weight;      // out_len * taps, each row sums to 1
};

/// Antialiased bicubic taps for reducing `in_len` samples by `factor`: the
/// kernel is stretched by `factor`, source positions use the align-centers
/// mapping src = (dst + 0.5) * factor - 0.5, and out-of-range sources clamp.
inline ResampleTaps bicubic_taps(std::size_t in_len, std::size_t factor) {
  if (factor == 0 || in_len % factor != 0) {
    throw ShapeError("bicubic_taps: length " + std::to_string(in_len) + " not divisible by " +
                     std::to_string(factor));
  }
  const double s = static_cast<double>(factor);
  const double support = 2.0 * s;
  ResampleTaps t;
  t.out_len = in_len / factor;
  t.taps = static_cast<std::size_t>(std::ceil(2.0 * support)) + 2;
  t.index.resize(t.out_len * t.taps);
  t.weight.resize(t.out_len * t.taps);
  const auto last = static_cast<long>(in_len) - 1;
  for (std::size_t o = 0; o < t.out_len; ++o) {
    const double center = (static_cast<double>(o) + 0.5) * s - 0.5;
    const long left = static_cast<long>(std::floor(center - support));
    double total = 0.0;
    for (std::size_t k = 0; k < t.taps; ++k) {
      const long src = left + static_cast<long>(k);
      const double wgt = cubic_kernel((center - static_cast<double>(src)) / s) / s;
      t.index[o * t.taps + k] = static_cast<std::size_t>(std::clamp(src, 0L, last));
      t.weight[o * t.taps + k] = wgt;
      total += wgt;
    }
    for (std::size_t k = 0; k < t.taps; ++k) t.weight[o * t.taps + k] /= total;
  }
  return t;
}

namespace detail {

/// Separable resample of one plane: rows first, then columns.
inline void resample_plane(const double* src, std::size_t w, std::size_t h, const ResampleTaps& tx,
                           const ResampleTaps& ty, double* dst) {
  std::vector<double> tmp(h * tx.out_len);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t o = 0; o < tx.out_len; ++o) {
      double acc = 0.0;
      for (std::size_t k = 0; k < tx.taps; ++k) {
        acc += tx.weight[o * tx.taps + k] * src[y * w + tx.index[o * tx.taps + k]];
      }
      tmp[y * tx.out_len + o] = acc;
    }
  }
  for (std::size_t o = 0; o < ty.out_len; ++o) {
    for (std::size_t x = 0; x < tx.out_len; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < ty.taps; ++k) {
        acc += ty.weight[o * ty.taps + k] * tmp[ty.index[o * ty.taps + k] * tx.out_len + x];
      }
      dst[o * tx.out_len + x] = acc;
    }
  }
}

}  // namespace detail

inline ImageRGB bicubic_downsample(const ImageRGB& img, std::size_t factor) {
  const ResampleTaps tx = bicubic_taps(img.width, factor);
  const ResampleTaps ty = bicubic_taps(img.height, factor);
  ImageRGB out(tx.out_len, ty.out_len);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    detail::resample_plane(img.values.data() + ch * img.width * img.height, img.width, img.height, tx, ty,
                           out.values.data() + ch * out.width * out.height);
  }
  return out;
}

/// Channel-wise bicubic reduction of an NCHW tensor.
template <typename T>
Tensor<T> bicubic_downsample(const Tensor<T>& x, std::size_t factor) {
  const Shape s = x.shape();
  const ResampleTaps tx = bicubic_taps(s.w, factor);
  const ResampleTaps ty = bicubic_taps(s.h, factor);
  Tensor<T> out(Shape{s.n, s.c, ty.out_len, tx.out_len});
  std::vector<double> src(s.plane());
  std::vector<double> dst(ty.out_len * tx.out_len);
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t ch = 0; ch < s.c; ++ch) {
      std::copy_n(x.channel(b, ch), s.plane(), src.begin());
      detail::resample_plane(src.data(), s.w, s.h, tx, ty, dst.data());
      T* o = out.channel(b, ch);
      for (std::size_t i = 0; i < dst.size(); ++i) o[i] = static_cast<T>(dst[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus and patch sampling

struct Corpus {
  std::vector<std::string> names;
  std::vector<ImageRGB> images;
  bool empty() const { return images.empty(); }
  std::size_t size() const { return images.size(); }
};

/// Every *.png under `dir` (non-recursive), in lexicographic name order.
inline Corpus load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ImageError("load_corpus: not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Corpus c;
  for (const auto& f : files) {
    c.names.push_back(f.filename().string());
    c.images.push_back(load_png(f));
  }
  return c;
}

template <typename T>
struct PatchBatch {
  Tensor<T> hr;                    // [B, 3, P, P]
  std::vector<std::size_t> image;  // source index per batch entry
  std::vector<std::size_t> x0, y0;
};

/// B crops of size P x P, offsets on multiples of `scale`. Images smaller
/// than P are skipped with a warning; an empty usable set is an error.
template <typename T>
PatchBatch<T> random_crop_batch(const Corpus& corpus, std::size_t batch, std::size_t patch, std::size_t scale,
                                Rng& rng) {
  if (corpus.empty()) throw std::invalid_argument("random_crop_batch: empty corpus");
  if (patch % scale != 0) throw std::invalid_argument("random_crop_batch: patch size not divisible by scale");
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& im = corpus.images[i];
    if (im.width >= patch && im.height >= patch) {
      usable.push_back(i);
    } else {
      std::clog << "warning: skipping " << corpus.names[i] << " (" << im.width << 'x' << im.height
                << ") smaller than patch " << patch << '\n';
    }
  }
  if (usable.empty()) throw std::invalid_argument("random_crop_batch: no corpus image is at least patch-sized");
  PatchBatch<T> out;
  out.hr = Tensor<T>(Shape{batch, 3, patch, patch});
  std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t idx = usable[pick(rng)];
    const auto& im = corpus.images[idx];
    std::uniform_int_distribution<std::size_t> ox(0, (im.width - patch) / scale);
    std::uniform_int_distribution<std::size_t> oy(0, (im.height - patch) / scale);
    const std::size_t x0 = ox(rng) * scale;
    const std::size_t y0 = oy(rng) * scale;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      T* dst = out.hr.channel(b, ch);
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) dst[y * patch + x] = static_cast<T>(im.at(ch, y0 + y, x0 + x));
      }
    }
    out.image.push_back(idx);
    out.x0.push_back(x0);
    out.y0.push_back(y0);
  }
  return out;
}

}  // namespace dlv
