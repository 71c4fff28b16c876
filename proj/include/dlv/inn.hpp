#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dlv/autodiff.hpp"

namespace dlv {

enum class LatentMode { kZero, kGaussian };

inline std::string to_string(LatentMode m) { return m == LatentMode::kZero ? "zero" : "gaussian"; }

inline LatentMode parse_latent_mode(const std::string& s) {
  if (s == "zero" || s == "0") return LatentMode::kZero;
  if (s == "gaussian" || s == "normal" || s == "N") return LatentMode::kGaussian;
  throw std::invalid_argument("unknown latent mode '" + s + "' (expected zero|gaussian)");
}

/// Zero mode gives all zeros; gaussian mode gives i.i.d. N(0, 1) draws from rng.
/// A shape with zero channels yields the empty tensor (absent latent).
template <typename T>
Tensor<T> sample_latent(LatentMode mode, Shape shape, Rng& rng) {
  if (shape.c == 0) return {};
  Tensor<T> out(shape);
  if (mode == LatentMode::kGaussian) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : out.data()) v = static_cast<T>(normal(rng));
  }
  return out;
}

/// Uniform(-b, b) with b = gain * sqrt(3 / fan_in).
template <typename T>
void fill_fan_in_uniform(Tensor<T>& t, std::size_t fan_in, double gain, Rng& rng) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
}

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kInitGain = 0.2;

/// Five 3x3 convolutions with dense skip concatenation. Layers 1-4 emit
/// `growth` channels followed by leaky ReLU; layer 5 maps everything seen so
/// far to `out_channels` and starts at exactly zero.
template <typename T>
class DenseBlock {
 public:
  DenseBlock() = default;
  DenseBlock(std::size_t in_channels, std::size_t out_channels, std::size_t growth, Rng& rng)
      : in_(in_channels), out_(out_channels), growth_(growth) {
    for (std::size_t l = 0; l < 5; ++l) {
      const std::size_t ic = in_ + l * growth_;
      const std::size_t oc = l < 4 ? growth_ : out_;
      Tensor<T> k(Shape{oc, ic, 3, 3});
      if (l < 4) fill_fan_in_uniform(k, ic * 9, kInitGain, rng);
      kernels_.emplace_back(std::move(k));
      biases_.emplace_back(Tensor<T>(Shape{oc, 1, 1, 1}));
    }
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& x) {
    std::vector<Var<T>> feats{x};
    for (std::size_t l = 0; l < 5; ++l) {
      const Var<T> in = l == 0 ? x : concat(std::span<const Var<T>>(feats));
      Var<T> out = conv2d(in, tape.watch(kernels_[l]), tape.watch(biases_[l]), 1);
      if (l == 4) return out;
      feats.push_back(leaky_relu(out, kLeakySlope));
    }
    return {};
  }

  /// Re-draws every layer, including the output layer, from the interior
  /// initializer scaled by `gain`. Used to exercise non-trivial couplings.
  void randomize(Rng& rng, double gain) {
    for (std::size_t l = 0; l < 5; ++l) {
      fill_fan_in_uniform(kernels_[l].value, kernels_[l].value.shape().c * 9, gain, rng);
      fill_fan_in_uniform(biases_[l].value, kernels_[l].value.shape().c * 9, gain, rng);
    }
  }

  void collect(std::vector<Parameter<T>*>& out, std::vector<std::string>* names, const std::string& prefix) {
    for (std::size_t l = 0; l < 5; ++l) {
      out.push_back(&kernels_[l]);
      out.push_back(&biases_[l]);
      if (names) {
        names->push_back(prefix + ".conv" + std::to_string(l + 1) + ".weight");
        names->push_back(prefix + ".conv" + std::to_string(l + 1) + ".bias");
      }
    }
  }

  std::size_t out_channels() const { return out_; }

 private:
  std::size_t in_ = 0, out_ = 0, growth_ = 0;
  std::vector<Parameter<T>> kernels_;
  std::vector<Parameter<T>> biases_;
};

/// Coupling block on a (3 | M) channel split:
///   h1' = h1 + phi(h2)
///   s   = exp(clamp * (2 sigmoid(rho(h1')) - 1))
///   h2' = h2 * s + eta(h1')
/// |log s| <= clamp, so s >= exp(-clamp) and the inverse never divides by ~0.
template <typename T>
class InvBlock {
 public:
  static constexpr std::size_t kSplit = 3;

  InvBlock() = default;
  InvBlock(std::size_t mixture_channels, std::size_t growth, double clamp, Rng& rng)
      : clamp_(clamp),
        phi_(mixture_channels, kSplit, growth, rng),
        rho_(kSplit, mixture_channels, growth, rng),
        eta_(kSplit, mixture_channels, growth, rng) {}

  Var<T> log_scale(Tape<T>& tape, const Var<T>& h1_out) {
    return scale(shift(scale(sigmoid(rho_.forward(tape, h1_out)), 2.0), -1.0), clamp_);
  }

  std::pair<Var<T>, Var<T>> forward(Tape<T>& tape, const Var<T>& h1, const Var<T>& h2) {
    const Var<T> h1_out = h1 + phi_.forward(tape, h2);
    const Var<T> s = exp(log_scale(tape, h1_out));
    const Var<T> h2_out = h2 * s + eta_.forward(tape, h1_out);
    return {h1_out, h2_out};
  }

  std::pair<Var<T>, Var<T>> inverse(Tape<T>& tape, const Var<T>& h1_out, const Var<T>& h2_out) {
    const Var<T> inv_s = exp(scale(log_scale(tape, h1_out), -1.0));
    const Var<T> h2 = (h2_out - eta_.forward(tape, h1_out)) * inv_s;
    const Var<T> h1 = h1_out - phi_.forward(tape, h2);
    return {h1, h2};
  }

  void randomize(Rng& rng, double gain) {
    phi_.randomize(rng, gain);
    rho_.randomize(rng, gain);
    eta_.randomize(rng, gain);
  }

  void collect(std::vector<Parameter<T>*>& out, std::vector<std::string>* names, const std::string& prefix) {
    phi_.collect(out, names, prefix + ".phi");
    rho_.collect(out, names, prefix + ".rho");
    eta_.collect(out, names, prefix + ".eta");
  }

  double clamp() const { return clamp_; }

 private:
  double clamp_ = 1.0;
  DenseBlock<T> phi_, rho_, eta_;
};

struct ModelConfig {
  int scale = 2;       // 2 or 4
  int c_w = 2;         // downscaling-latent channels per HR pixel
  int blocks = 8;      // InvBlocks per stage
  int growth = 16;     // DenseBlock growth channels
  double clamp = 1.0;  // bound on |log s|

  int stages() const { return scale == 4 ? 2 : 1; }
  /// Channels of the full tensor after `stage` + 1 Haar levels.
  std::size_t channels_after(int stage) const {
    std::size_t c = static_cast<std::size_t>(3 + c_w);
    for (int i = 0; i <= stage; ++i) c *= 4;
    return c;
  }
  std::size_t z_channels() const { return channels_after(stages() - 1) - 3; }

  void validate() const {
    if (scale != 2 && scale != 4) throw std::invalid_argument("ModelConfig: scale must be 2 or 4");
    if (c_w < 0) throw std::invalid_argument("ModelConfig: c_w must be >= 0");
    if (blocks < 1) throw std::invalid_argument("ModelConfig: blocks must be >= 1");
    if (growth < 1) throw std::invalid_argument("ModelConfig: growth must be >= 1");
    if (!(clamp >= 0.0)) throw std::invalid_argument("ModelConfig: clamp must be >= 0");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// The invertible rescaling network. Forward: concatenate [x | w] at HR, then
/// per stage a Haar level over the whole tensor followed by `blocks` InvBlocks
/// on the (3 | rest) split. After the last stage the first three channels are
/// y and the remainder is z, so elements(x) + elements(w) == elements(y) + elements(z).
template <typename T>
class RescaleModel {
 public:
  RescaleModel() = default;

  RescaleModel(const ModelConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    for (int st = 0; st < config_.stages(); ++st) {
      const std::size_t mixture = config_.channels_after(st) - InvBlock<T>::kSplit;
      for (int b = 0; b < config_.blocks; ++b) {
        blocks_.emplace_back(mixture, static_cast<std::size_t>(config_.growth), config_.clamp, rng);
      }
    }
  }

  const ModelConfig& config() const { return config_; }
  int scale() const { return config_.scale; }
  /// LF gain of n orthonormal Haar levels on a constant image (2^n).
  double lf_gain() const { return static_cast<double>(1 << config_.stages()); }

  Shape latent_shape(const Shape& x) const {
    return Shape{x.n, static_cast<std::size_t>(config_.c_w), x.h, x.w};
  }
  Shape z_shape(const Shape& x) const {
    const auto s = static_cast<std::size_t>(config_.scale);
    return Shape{x.n, config_.z_channels(), x.h / s, x.w / s};
  }
  Shape z_shape_for_lr(const Shape& y) const {
    return Shape{y.n, config_.z_channels(), y.h, y.w};
  }

  std::pair<Var<T>, Var<T>> forward(Tape<T>& tape, const Var<T>& x, const Var<T>& w) {
    check_forward_shapes(x.shape(), w.shape());
    Var<T> cur = config_.c_w > 0 ? concat({x, w}) : x;
    const std::size_t per_stage = static_cast<std::size_t>(config_.blocks);
    for (int st = 0; st < config_.stages(); ++st) {
      cur = haar(cur);
      const std::size_t channels = cur.shape().c;
      Var<T> h1 = slice(cur, 0, InvBlock<T>::kSplit);
      Var<T> h2 = slice(cur, InvBlock<T>::kSplit, channels - InvBlock<T>::kSplit);
      for (std::size_t b = 0; b < per_stage; ++b) {
        std::tie(h1, h2) = blocks_[st * per_stage + b].forward(tape, h1, h2);
      }
      if (st + 1 == config_.stages()) return {h1, h2};
      cur = concat({h1, h2});
    }
    return {};
  }

  /// Exact algebraic inverse. Returns (x_hat, w_hat); w_hat is an invalid Var
  /// when c_w == 0.
  std::pair<Var<T>, Var<T>> inverse(Tape<T>& tape, const Var<T>& y, const Var<T>& zhat) {
    check_inverse_shapes(y.shape(), zhat.shape());
    const std::size_t per_stage = static_cast<std::size_t>(config_.blocks);
    Var<T> h1 = y;
    Var<T> h2 = zhat;
    Var<T> cur;
    for (int st = config_.stages() - 1; st >= 0; --st) {
      if (st != config_.stages() - 1) {
        const std::size_t channels = cur.shape().c;
        h1 = slice(cur, 0, InvBlock<T>::kSplit);
        h2 = slice(cur, InvBlock<T>::kSplit, channels - InvBlock<T>::kSplit);
      }
      for (std::size_t b = per_stage; b-- > 0;) {
        std::tie(h1, h2) = blocks_[st * per_stage + b].inverse(tape, h1, h2);
      }
      cur = haar_inv(concat({h1, h2}));
    }
    if (config_.c_w == 0) return {cur, Var<T>()};
    return {slice(cur, 0, 3), slice(cur, 3, static_cast<std::size_t>(config_.c_w))};
  }

  struct Encoded {
    Tensor<T> y;
    Tensor<T> z;
  };
  struct Decoded {
    Tensor<T> x;
    Tensor<T> w;  // empty when c_w == 0
  };

  Encoded forward(const Tensor<T>& x, const Tensor<T>& w) {
    Tape<T> tape;
    auto [y, z] = forward(tape, tape.constant(x), tape.constant(w));
    return {y.value(), z.value()};
  }

  Decoded inverse(const Tensor<T>& y, const Tensor<T>& zhat) {
    Tape<T> tape;
    auto [x, w] = inverse(tape, tape.constant(y), tape.constant(zhat));
    return {x.value(), w.valid() ? w.value() : Tensor<T>()};
  }

  std::vector<Parameter<T>*> parameters(std::vector<std::string>* names = nullptr) {
    std::vector<Parameter<T>*> out;
    const std::size_t per_stage = static_cast<std::size_t>(config_.blocks);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i].collect(out, names,
                         "stage" + std::to_string(i / per_stage) + ".block" + std::to_string(i % per_stage));
    }
    return out;
  }

  std::vector<std::string> parameter_names() {
    std::vector<std::string> names;
    parameters(&names);
    return names;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  void randomize(Rng& rng, double gain = kInitGain) {
    for (auto& b : blocks_) b.randomize(rng, gain);
  }

  InvBlock<T>& block(std::size_t i) { return blocks_[i]; }
  std::size_t block_count() const { return blocks_.size(); }

  /// Same architecture and weights in another scalar type.
  template <typename U>
  RescaleModel<U> convert() {
    Rng dummy(0);
    RescaleModel<U> out(config_, dummy);
    auto src = parameters();
    auto dst = out.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
    return out;
  }

 private:
  void check_forward_shapes(const Shape& x, const Shape& w) const {
    const auto s = static_cast<std::size_t>(config_.scale);
    if (x.c != 3) throw ShapeError("model_forward: x must have 3 channels, got " + x.str());
    if (x.h % s != 0 || x.w % s != 0) {
      throw ShapeError("model_forward: spatial size " + x.str() + " not divisible by scale " +
                       std::to_string(s));
    }
    if (config_.c_w == 0) {
      if (!w.empty()) throw ShapeError("model_forward: model has no w channels but w is " + w.str());
      return;
    }
    const Shape expected = latent_shape(x);
    if (w != expected) {
      throw ShapeError("model_forward: w must be " + expected.str() + ", got " + w.str());
    }
  }

  void check_inverse_shapes(const Shape& y, const Shape& z) const {
    if (y.c != 3) throw ShapeError("model_inverse: y must have 3 channels, got " + y.str());
    const Shape expected = z_shape_for_lr(y);
    if (z != expected) {
      throw ShapeError("model_inverse: zhat must be " + expected.str() + ", got " + z.str());
    }
  }

  ModelConfig config_{};
  std::vector<InvBlock<T>> blocks_;
};

}  // namespace dlv
