#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dlv/image.hpp"

namespace dlv {

// Procedural test images: a smooth colour field, overlapping flat and
// shaded shapes with hard edges, oriented gratings and a little fine noise.
// Gives the network both low-frequency content and edges/texture to model.

inline ImageRGB synth_image(std::size_t width, std::size_t height, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageRGB img(width, height);
  const std::size_t plane = width * height;
  const double w = static_cast<double>(width), h = static_cast<double>(height);

  double base[3][3];
  for (auto& ch : base) {
    for (auto& v : ch) v = u(rng);
  }
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = x / w, fy = y / h;
      for (int c = 0; c < 3; ++c) {
        img.values[c * plane + y * width + x] = 0.15 + 0.7 * (base[c][0] * (1 - fx) * (1 - fy) + base[c][1] * fx + base[c][2] * fy * (1 - fx)) / 1.5;
      }
    }
  }

  const int shapes = 4 + static_cast<int>(u(rng) * 6);
  for (int k = 0; k < shapes; ++k) {
    const double cx = u(rng) * w, cy = u(rng) * h;
    const double rx = (0.08 + 0.3 * u(rng)) * w, ry = (0.08 + 0.3 * u(rng)) * h;
    const double angle = u(rng) * std::numbers::pi;
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double col[3] = {u(rng), u(rng), u(rng)};
    const int kind = static_cast<int>(u(rng) * 3);  // 0 ellipse, 1 rectangle, 2 grating disk
    const double freq = 0.15 + 0.6 * u(rng);
    const double shade = u(rng) * 0.5;
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double px = (ca * dx + sa * dy) / rx, py = (-sa * dx + ca * dy) / ry;
        const bool inside = kind == 1 ? (std::abs(px) <= 1 && std::abs(py) <= 1) : (px * px + py * py <= 1);
        if (!inside) continue;
        double t = 1.0 - shade * (px + 1) / 2;
        if (kind == 2) t *= 0.65 + 0.35 * std::sin(freq * (ca * dx + sa * dy) * 2 * std::numbers::pi / 2);
        for (int c = 0; c < 3; ++c) img.values[c * plane + y * width + x] = col[c] * t;
      }
    }
  }

  std::normal_distribution<double> noise(0.0, 0.015);
  for (auto& v : img.values) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return quantize_8bit(img);
}

/// Writes `count` images named <prefix>_NN.png and returns their paths.
inline std::vector<std::filesystem::path> write_synth_corpus(const std::filesystem::path& dir, std::size_t count,
                                                             std::size_t width, std::size_t height,
                                                             std::uint64_t seed, const std::string& prefix = "img") {
  std::filesystem::create_directories(dir);
  Rng rng(seed);
  std::vector<std::filesystem::path> out;
  for (std::size_t i = 0; i < count; ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%02zu.png", prefix.c_str(), i);
    const auto path = dir / name;
    save_png(path, synth_image(width, height, rng));
    out.push_back(path);
  }
  return out;
}

}  // namespace dlv
