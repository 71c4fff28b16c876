#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "dlv/image.hpp"

namespace dlv {

/// Text output caps infinite PSNR (identical inputs) at this value.
inline constexpr double kPsnrCapDb = 99.0;

inline void require_same_dims(const char* op, const Plane& a, const Plane& b) {
  if (a.width != b.width || a.height != b.height) {
    throw ShapeError(std::string(op) + ": plane sizes differ (" + std::to_string(a.width) + 'x' +
                     std::to_string(a.height) + " vs " + std::to_string(b.width) + 'x' +
                     std::to_string(b.height) + ')');
  }
}

/// 10 log10(peak^2 / MSE) for planes on the 0..peak scale. +inf when identical.
inline double psnr(const Plane& a, const Plane& b, double peak = 255.0) {
  require_same_dims("psnr", a, b);
  double se = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.values.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

inline double capped_db(double db) { return std::min(db, kPsnrCapDb); }

namespace detail {

inline std::array<double, 11> gaussian_window_1d() {
  std::array<double, 11> g{};
  double total = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double d = i - 5;
    g[i] = std::exp(-(d * d) / (2.0 * 1.5 * 1.5));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

/// 'valid' separable filtering with the 11-tap Gaussian.
inline std::vector<double> filter_valid(const std::vector<double>& src, std::size_t w, std::size_t h) {
  static const auto g = gaussian_window_1d();
  const std::size_t ow = w - 10, oh = h - 10;
  std::vector<double> rows(h * ow);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 11; ++k) acc += g[k] * src[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 11; ++k) acc += g[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace detail

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, L = 255, averaged over all fully-contained window positions.
inline double ssim(const Plane& a, const Plane& b) {
  require_same_dims("ssim", a, b);
  if (a.width < 11 || a.height < 11) {
    throw ShapeError("ssim: planes must be at least 11x11, got " + std::to_string(a.width) + 'x' +
                     std::to_string(a.height));
  }
  constexpr double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  constexpr double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  const std::size_t w = a.width, h = a.height;
  std::vector<double> aa(a.values.size()), bb(a.values.size()), ab(a.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    aa[i] = a.values[i] * a.values[i];
    bb[i] = b.values[i] * b.values[i];
    ab[i] = a.values[i] * b.values[i];
  }
  const auto mu_a = detail::filter_valid(a.values, w, h);
  const auto mu_b = detail::filter_valid(b.values, w, h);
  const auto e_aa = detail::filter_valid(aa, w, h);
  const auto e_bb = detail::filter_valid(bb, w, h);
  const auto e_ab = detail::filter_valid(ab, w, h);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
    total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

inline Plane crop_border(const Plane& p, std::size_t border) {
  if (2 * border >= p.width || 2 * border >= p.height) throw ShapeError("crop_border: border too large");
  Plane out(p.width - 2 * border, p.height - 2 * border);
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) out.at(y, x) = p.at(y + border, x + border);
  }
  return out;
}

struct MetricReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::size_t border_crop = 0;
};

/// PSNR and SSIM on the BT.601 luma of two RGB images (0..255 scale) after
/// removing `border` pixels from each side.
inline MetricReport evaluate_y(const ImageRGB& a, const ImageRGB& b, std::size_t border) {
  auto to_255 = [border](const ImageRGB& img) {
    Plane y = rgb_to_y(img);
    for (auto& v : y.values) v *= 255.0;
    return border > 0 ? crop_border(y, border) : y;
  };
  const Plane pa = to_255(a);
  const Plane pb = to_255(b);
  return {psnr(pa, pb), ssim(pa, pb), border};
}

/// SSIM averaged over the three RGB channels (not used for acceptance).
inline double ssim_rgb(const ImageRGB& a, const ImageRGB& b, std::size_t border) {
  double total = 0.0;
  for (std::size_t ch = 0; ch < 3; ++ch) {
    Plane pa(a.width, a.height), pb(b.width, b.height);
    for (std::size_t i = 0; i < pa.values.size(); ++i) {
      pa.values[i] = a.values[ch * pa.values.size() + i] * 255.0;
      pb.values[i] = b.values[ch * pb.values.size() + i] * 255.0;
    }
    if (border > 0) {
      pa = crop_border(pa, border);
      pb = crop_border(pb, border);
    }
    total += ssim(pa, pb);
  }
  return total / 3.0;
}

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

struct MetricRow {
  std::string name;
  MetricReport report;
};

/// name,psnr_db,ssim with PSNR capped for text output. Rows are emitted in
/// name order so parallel evaluation cannot change the file.
inline void write_metrics_csv(std::ostream& os, std::vector<MetricRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) { return a.name < b.name; });
  os << "name,psnr_db,ssim\n";
  for (const auto& r : rows) {
    os << r.name << ',' << format_fixed(capped_db(r.report.psnr_db), 4) << ','
       << format_fixed(r.report.ssim, 6) << '\n';
  }
}

}  // namespace dlv
