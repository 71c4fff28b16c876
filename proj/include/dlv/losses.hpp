#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "dlv/autodiff.hpp"
#include "dlv/image.hpp"
#include "dlv/inn.hpp"

namespace dlv {

/// Weights of the four-term objective
///   L = recon * L_r + guidance * L_g + distribution * L_d + invariance * L_i
/// plus the invariance sample count m.
struct LossWeights {
  double recon = 1.0;
  double guidance = 4.0;
  double distribution = 1e-2;
  double invariance = 1.0;
  int m = 3;

  /// recon 1, guidance s^2, distribution 1e-2, invariance s^2 / 4, m = 3.
  static LossWeights defaults(int scale) {
    LossWeights w;
    const double s2 = static_cast<double>(scale) * scale;
    w.guidance = s2;
    w.invariance = s2 / 4.0;
    return w;
  }

  void validate() const {
    if (recon < 0 || guidance < 0 || distribution < 0 || invariance < 0) {
      throw std::invalid_argument("LossWeights: weights must be nonnegative");
    }
    if (m < 2) throw std::invalid_argument("LossWeights: m must be >= 2");
  }
};

/// Mean absolute difference.
template <typename T>
Var<T> recon_loss(const Var<T>& xhat, const Var<T>& x) {
  require_same_shape("recon_loss", xhat.shape(), x.shape());
  return mean(abs(xhat - x));
}

/// Mean squared difference against the bicubic reference.
template <typename T>
Var<T> guidance_loss(const Var<T>& y, const Var<T>& ybar) {
  require_same_shape("guidance_loss", y.shape(), ybar.shape());
  return scale(sumsq(y - ybar), 1.0 / static_cast<double>(y.value().size()));
}

/// Mean of z^2: the standard-normal negative log density with its constant
/// and factor 1/2 folded into the weight.
template <typename T>
Var<T> distribution_loss(const Var<T>& z) {
  return scale(sumsq(z), 1.0 / static_cast<double>(z.value().size()));
}

/// sqrt(mean over elements of the per-element sample variance (divisor m-1)).
template <typename T>
Var<T> invariance_loss(std::span<const Var<T>> samples) {
  const std::size_t m = samples.size();
  if (m < 2) throw std::invalid_argument("invariance_loss: needs at least 2 samples, got " + std::to_string(m));
  for (const auto& s : samples) require_same_shape("invariance_loss", s.shape(), samples.front().shape());
  Var<T> total = samples[0];
  for (std::size_t j = 1; j < m; ++j) total = total + samples[j];
  const Var<T> avg = scale(total, 1.0 / static_cast<double>(m));
  Var<T> spread = sumsq(samples[0] - avg);
  for (std::size_t j = 1; j < m; ++j) spread = spread + sumsq(samples[j] - avg);
  const double n = static_cast<double>(samples.front().value().size());
  return sqrt(scale(spread, 1.0 / (static_cast<double>(m - 1) * n)));
}

struct LatentOptions {
  LatentMode w_mode = LatentMode::kGaussian;
  LatentMode zhat_mode = LatentMode::kZero;
  bool quantize = true;  // round the LR to 8 bits (straight-through) before upscaling
};

template <typename T>
struct LossBreakdown {
  Var<T> total;
  double recon = 0.0;
  double guidance = 0.0;
  double distribution = 0.0;
  double invariance = 0.0;
  double total_value = 0.0;
};

/// Records one evaluation of the full objective on `tape`.
///
/// The model's y is in orthonormal-Haar units (LF gain 2^n); guidance,
/// invariance and quantization act on the display-range LR y / 2^n.
/// m forward passes are taken only when they can differ and are weighted
/// (c_w > 0, gaussian w, invariance > 0); otherwise a single pass is used and
/// L_i is reported as 0. L_g and L_d use the first sample.
template <typename T>
LossBreakdown<T> total_loss(Tape<T>& tape, RescaleModel<T>& model, const Tensor<T>& x, const LossWeights& weights,
                            const LatentOptions& latents, Rng& rng) {
  weights.validate();
  const auto s = static_cast<std::size_t>(model.scale());
  const double gain = model.lf_gain();
  const bool multi = model.config().c_w > 0 && latents.w_mode == LatentMode::kGaussian && weights.invariance > 0;
  const int passes = multi ? weights.m : 1;

  const Var<T> xv = tape.constant(x);
  const Var<T> ybar = tape.constant(bicubic_downsample(x, s));
  std::vector<Var<T>> lr;
  Var<T> y1, z1;
  for (int j = 0; j < passes; ++j) {
    const Var<T> w = tape.constant(sample_latent<T>(latents.w_mode, model.latent_shape(x.shape()), rng));
    auto [y, z] = model.forward(tape, xv, w);
    if (j == 0) {
      y1 = y;
      z1 = z;
    }
    lr.push_back(scale(y, 1.0 / gain));
  }

  LossBreakdown<T> out;
  const Var<T> lg = guidance_loss(lr[0], ybar);
  const Var<T> ld = distribution_loss(z1);
  const Var<T> y_in = latents.quantize ? scale(quantize_ste(lr[0]), gain) : y1;
  const Var<T> zhat = tape.constant(sample_latent<T>(latents.zhat_mode, z1.shape(), rng));
  const Var<T> xhat = model.inverse(tape, y_in, zhat).first;
  const Var<T> lr_loss = recon_loss(xhat, xv);

  Var<T> total = scale(lr_loss, weights.recon) + scale(lg, weights.guidance) + scale(ld, weights.distribution);
  if (passes > 1) {
    const Var<T> li = invariance_loss(std::span<const Var<T>>(lr));
    total = total + scale(li, weights.invariance);
    out.invariance = static_cast<double>(li.value().item());
  }
  out.total = total;
  out.recon = static_cast<double>(lr_loss.value().item());
  out.guidance = static_cast<double>(lg.value().item());
  out.distribution = static_cast<double>(ld.value().item());
  out.total_value = static_cast<double>(total.value().item());
  return out;
}

}  // namespace dlv
