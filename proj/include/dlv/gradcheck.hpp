#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "dlv/autodiff.hpp"
#include "dlv/inn.hpp"
#include "dlv/losses.hpp"

namespace dlv {

// Central finite differences in double precision against the tape.
//
// Each check projects the output onto a fixed random tensor r, so the scalar
// f(inputs) = <op(inputs), r> has gradient r^T J. Relative error per element
// is |analytic - numeric| / max(|analytic|, |numeric|, kGradFloor).

inline constexpr double kFdStep = 1e-5;
inline constexpr double kGradFloor = 1e-3;
inline constexpr double kPrimitiveTolerance = 1e-4;
inline constexpr double kCompositeTolerance = 1e-3;

struct GradcheckEntry {
  std::string name;
  double worst = 0.0;
  double tolerance = 0.0;
  bool passed() const { return std::isfinite(worst) && worst <= tolerance; }
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.passed(); });
  }
  void print(std::ostream& os) const {
    for (const auto& e : entries) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%-14s worst_rel_err=%.3e tol=%.0e %s\n", e.name.c_str(), e.worst, e.tolerance,
                    e.passed() ? "PASS" : "FAIL");
      os << buf;
    }
  }
};

struct GradcheckOptions {
  int points = 100;           // random points per primitive
  int composite_points = 3;   // random points per composite
  int param_samples = 24;     // parameter elements probed per composite point
  std::uint64_t seed = 7;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
}

namespace detail {

using D = double;

inline double dot(const Tensor<D>& a, const Tensor<D>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline Tensor<D> uniform_tensor(Shape s, double lo, double hi, Rng& rng) {
  Tensor<D> t(s);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

/// Magnitudes in [lo, hi] with random sign, keeping every entry away from 0.
inline Tensor<D> signed_tensor(Shape s, double lo, double hi, Rng& rng) {
  Tensor<D> t = uniform_tensor(s, lo, hi, rng);
  std::bernoulli_distribution coin(0.5);
  for (auto& v : t.data()) v = coin(rng) ? v : -v;
  return t;
}

using Builder = std::function<Var<D>(Tape<D>&, const std::vector<Var<D>>&)>;

/// Worst relative error of d<op(inputs), r>/d inputs over every input element.
/// `reference` optionally replaces op for the numeric side (surrogate check).
inline double check_point(const Builder& op, const std::vector<Tensor<D>>& inputs, Rng& rng,
                          const Builder* reference = nullptr) {
  Tape<D> tape;
  std::vector<Var<D>> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  const Var<D> out = op(tape, vars);
  const Tensor<D> r = uniform_tensor(out.shape(), -1.0, 1.0, rng);
  tape.backward(out, r);

  const Builder& numeric_op = reference ? *reference : op;
  auto f = [&](const std::vector<Tensor<D>>& at) {
    Tape<D> t2;
    std::vector<Var<D>> v2;
    for (const auto& t : at) v2.push_back(t2.constant(t));
    return dot(numeric_op(t2, v2).value(), r);
  };
  double worst = 0.0;
  std::vector<Tensor<D>> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<D>& g = tape.grad(vars[k]);
    for (std::size_t e = 0; e < inputs[k].size(); ++e) {
      const double x0 = inputs[k][e];
      probe[k][e] = x0 + kFdStep;
      const double fp = f(probe);
      probe[k][e] = x0 - kFdStep;
      const double fm = f(probe);
      probe[k][e] = x0;
      const double analytic = g.empty() ? 0.0 : g[e];
      worst = std::max(worst, relative_error(analytic, (fp - fm) / (2 * kFdStep)));
    }
  }
  return worst;
}

/// Shape with random small extents.
inline Shape small_shape(Rng& rng, std::size_t max_c = 3, bool even = false) {
  std::uniform_int_distribution<std::size_t> c(1, max_c), hw(1, 3);
  const std::size_t k = even ? 2 : 1;
  return Shape{std::uniform_int_distribution<std::size_t>(1, 2)(rng), c(rng), k * hw(rng) + (even ? 0 : 1),
               k * hw(rng) + (even ? 0 : 1)};
}

/// Worst relative error over sampled parameter elements for a scalar loss.
/// `loss` must be deterministic; it is re-evaluated for each perturbation.
inline double check_params(const std::function<double(bool)>& loss, const std::vector<Parameter<D>*>& params,
                           int samples, Rng& rng) {
  for (auto* p : params) p->zero_grad();
  loss(true);
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  std::size_t total = 0;
  for (auto* p : params) total += p->value.size();
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  for (int i = 0; i < samples; ++i) {
    std::size_t flat = pick(rng);
    std::size_t pi = 0;
    while (flat >= params[pi]->value.size()) flat -= params[pi++]->value.size();
    picks.emplace_back(pi, flat);
  }
  double worst = 0.0;
  for (auto [pi, e] : picks) {
    auto& v = params[pi]->value;
    const double x0 = v[e];
    v[e] = x0 + kFdStep;
    const double fp = loss(false);
    v[e] = x0 - kFdStep;
    const double fm = loss(false);
    v[e] = x0;
    worst = std::max(worst, relative_error(params[pi]->grad[e], (fp - fm) / (2 * kFdStep)));
  }
  return worst;
}

}  // namespace detail

/// Checks every primitive in kPrimitives (one entry each, in that order).
inline std::vector<GradcheckEntry> gradcheck_primitives(const GradcheckOptions& opt) {
  using detail::Builder;
  using detail::D;
  using detail::signed_tensor;
  using detail::small_shape;
  using detail::uniform_tensor;
  Rng rng(opt.seed);
  std::vector<GradcheckEntry> out;
  for (Op op : kPrimitives) {
    double worst = 0.0;
    for (int p = 0; p < opt.points; ++p) {
      Shape s = small_shape(rng);
      std::vector<Tensor<D>> in;
      Builder b;
      const Builder* ref = nullptr;
      Builder surrogate;
      switch (op) {
        case Op::kConv2d: {
          std::uniform_int_distribution<int> kpick(0, 1);
          const std::size_t k = kpick(rng) ? 3 : 1;
          const std::size_t oc = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
          in = {uniform_tensor(s, -1, 1, rng), uniform_tensor(Shape{oc, s.c, k, k}, -1, 1, rng),
                uniform_tensor(Shape{1, oc, 1, 1}, -1, 1, rng)};
          b = [k](Tape<D>&, const std::vector<Var<D>>& v) { return conv2d(v[0], v[1], v[2], (k - 1) / 2); };
          break;
        }
        case Op::kAdd:
          in = {uniform_tensor(s, -1, 1, rng), uniform_tensor(s, -1, 1, rng)};
          b = [](Tape<D>&, const std::vector<Var<D>>& v) { return v[0] + v[1]; };
          break;
        case Op::kSub:
          in = {uniform_tensor(s, -1, 1, rng), uniform_tensor(s, -1, 1, rng)};
          b = [](Tape<D>&, const std::vector<Var<D>>& v) { return v[0] - v[1]; };
          break;
        case Op::kMul:
          in = {uniform_tensor(s, -2, 2, rng), uniform_tensor(s, -2, 2, rng)};
          b = [](Tape<D>&, const std::vector<Var<D>>& v) { return v[0] * v[1]; };
          break;
        case Op::kExp:
          in = {uniform_tensor(s, -2, 2, rng)};
          b = [](Tape<D>&, const std::vector<Var<D>>& v) { return exp(v[0]); };
          break;
        case Op::kSigmoid:
          in = {uniform_tensor(s, -4, 4, rng)};
          b = [](Tape<D>&, const std::vector<Var<D>>& v) { return sigmoid(v[0]); };
          break;
        case Op::kLeakyRelu:
          in = {signed_tensor(s, 0.01, 2, rng)};
          b = [](Tape<D>&, const std::vector<Var<D>>& v) { return leaky_relu(v[0], kLeakySlope); };
          break;
        case Op::kScale:
          in = {uniform_tensor(s, -1, 1, rng)};
          b = [](Tape<D>&, const std::vector<Var<D>>& v) { return scale(v[0], -1.7); };
          break;
        case Op::kShift:
          in = {uniform_tensor(s, -1, 1, rng)};
          b = [](Tape<D>&, const std::vector<Var<D>>& v) { return shift(v[0], 0.3); };
          break;
        case Op::kAbs:
          in = {signed_tensor(s, 0.01, 2, rng)};
          b = [](Tape<D>&, const std::vector<Var<D>>& v) { return abs(v[0]); };
          break;
        case Op::kSqrt:
          in = {uniform_tensor(s, 0.05, 3, rng)};
          b = [](Tape<D>&, const std::vector<Var<D>>& v) { return sqrt(v[0]); };
          break;
        case Op::kConcat: {
          const std::size_t parts = std::uniform_int_distribution<std::size_t>(2, 3)(rng);
          for (std::size_t i = 0; i < parts; ++i) {
            Shape si = s;
            si.c = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
            in.push_back(uniform_tensor(si, -1, 1, rng));
          }
          b = [](Tape<D>&, const std::vector<Var<D>>& v) { return concat(std::span<const Var<D>>(v)); };
          break;
        }
        case Op::kSlice: {
          s.c = std::uniform_int_distribution<std::size_t>(2, 6)(rng);
          const std::size_t begin = std::uniform_int_distribution<std::size_t>(0, s.c - 1)(rng);
          const std::size_t count = std::uniform_int_distribution<std::size_t>(1, s.c - begin)(rng);
          in = {uniform_tensor(s, -1, 1, rng)};
          b = [begin, count](Tape<D>&, const std::vector<Var<D>>& v) { return slice(v[0], begin, count); };
          break;
        }
        case Op::kHaar:
          in = {uniform_tensor(small_shape(rng, 3, true), -1, 1, rng)};
          b = [](Tape<D>&, const std::vector<Var<D>>& v) { return haar(v[0]); };
          break;
        case Op::kHaarInverse: {
          Shape sh = small_shape(rng, 2, true);
          sh.c *= 4;
          in = {uniform_tensor(sh, -1, 1, rng)};
          b = [](Tape<D>&, const std::vector<Var<D>>& v) { return haar_inv(v[0]); };
          break;
        }
        case Op::kSum:
          in = {uniform_tensor(s, -1, 1, rng)};
          b = [](Tape<D>&, const std::vector<Var<D>>& v) { return sum(v[0]); };
          break;
        case Op::kMean:
          in = {uniform_tensor(s, -1, 1, rng)};
          b = [](Tape<D>&, const std::vector<Var<D>>& v) { return mean(v[0]); };
          break;
        case Op::kSumSq:
          in = {uniform_tensor(s, -1, 1, rng)};
          b = [](Tape<D>&, const std::vector<Var<D>>& v) { return sumsq(v[0]); };
          break;
        case Op::kQuantizeSte: {
          // The straight-through gradient is, by definition, the derivative of
          // clip(v, 0, 1); finite differences are taken on that surrogate.
          Tensor<D> t = uniform_tensor(s, -0.5, 1.5, rng);
          for (auto& v : t.data()) {
            if (std::abs(v) < 1e-3 || std::abs(v - 1) < 1e-3) v += 0.01;
          }
          in = {t};
          b = [](Tape<D>&, const std::vector<Var<D>>& v) { return quantize_ste(v[0]); };
          surrogate = [](Tape<D>& tape, const std::vector<Var<D>>& v) {
            Tensor<D> c = v[0].value();
            for (auto& e : c.data()) e = std::clamp(e, 0.0, 1.0);
            return tape.constant(c);
          };
          ref = &surrogate;
          break;
        }
        default:
          break;
      }
      worst = std::max(worst, detail::check_point(b, in, rng, ref));
    }
    out.push_back({std::string(op_name(op)), worst, kPrimitiveTolerance});
  }
  return out;
}

/// InvBlock forward and inverse, with respect to inputs and sampled weights.
inline GradcheckEntry gradcheck_inv_block(const GradcheckOptions& opt) {
  using detail::D;
  Rng rng(opt.seed + 1);
  double worst = 0.0;
  for (int p = 0; p < opt.composite_points; ++p) {
    InvBlock<D> block(5, 4, 1.0, rng);
    block.randomize(rng, 1.0);
    std::vector<Parameter<D>*> params;
    block.collect(params, nullptr, "b");
    const Tensor<D> h1 = detail::uniform_tensor(Shape{1, 3, 3, 4}, -1, 1, rng);
    const Tensor<D> h2 = detail::uniform_tensor(Shape{1, 5, 3, 4}, -1, 1, rng);
    for (bool inverse : {false, true}) {
      detail::Builder b = [&block, inverse](Tape<D>&, const std::vector<Var<D>>& v) {
        auto [a, c] = inverse ? block.inverse(v[0].tape(), v[0], v[1]) : block.forward(v[0].tape(), v[0], v[1]);
        return concat({a, c});
      };
      worst = std::max(worst, detail::check_point(b, {h1, h2}, rng));
      const Tensor<D> r = detail::uniform_tensor(Shape{1, 8, 3, 4}, -1, 1, rng);
      auto loss = [&](bool backprop) {
        Tape<D> tape;
        auto [a, c] = inverse ? block.inverse(tape, tape.constant(h1), tape.constant(h2))
                              : block.forward(tape, tape.constant(h1), tape.constant(h2));
        const Var<D> l = sum(concat({a, c}) * tape.constant(r));
        if (backprop) tape.backward(l);
        return l.value().item();
      };
      worst = std::max(worst, detail::check_params(loss, params, opt.param_samples, rng));
    }
  }
  return {"inv_block", worst, kCompositeTolerance};
}

/// Full forward then inverse through a tiny two-stage model.
inline GradcheckEntry gradcheck_model(const GradcheckOptions& opt) {
  using detail::D;
  Rng rng(opt.seed + 2);
  double worst = 0.0;
  for (int p = 0; p < opt.composite_points; ++p) {
    RescaleModel<D> model(ModelConfig{4, 1, 1, 4, 1.0}, rng);
    model.randomize(rng, 1.0);
    const Tensor<D> x = detail::uniform_tensor(Shape{1, 3, 4, 4}, 0, 1, rng);
    const Tensor<D> w = detail::uniform_tensor(model.latent_shape(x.shape()), -1, 1, rng);
    const Tensor<D> zhat = detail::uniform_tensor(model.z_shape(x.shape()), -0.5, 0.5, rng);
    const Tensor<D> r = detail::uniform_tensor(model.z_shape(x.shape()), -1, 1, rng);
    detail::Builder b = [&](Tape<D>& tape, const std::vector<Var<D>>& v) {
      auto [y, z] = model.forward(tape, v[0], v[1]);
      auto [xh, wh] = model.inverse(tape, y, z + v[2]);
      return sum(z * tape.constant(r)) + sumsq(xh) + sum(wh) + sum(y);
    };
    worst = std::max(worst, detail::check_point(b, {x, w, zhat}, rng));
    auto loss = [&](bool backprop) {
      Tape<D> tape;
      auto [y, z] = model.forward(tape, tape.constant(x), tape.constant(w));
      auto [xh, wh] = model.inverse(tape, y, tape.constant(zhat));
      const Var<D> l = sum(z * tape.constant(r)) + sumsq(xh) + sum(y);
      if (backprop) tape.backward(l);
      return l.value().item();
    };
    worst = std::max(worst, detail::check_params(loss, model.parameters(), opt.param_samples, rng));
  }
  return {"rescale_model", worst, kCompositeTolerance};
}

/// total_loss with every weight active and quantization off (rounding has no
/// finite-difference derivative), against sampled parameters.
inline GradcheckEntry gradcheck_total_loss(const GradcheckOptions& opt) {
  using detail::D;
  Rng rng(opt.seed + 3);
  double worst = 0.0;
  for (int p = 0; p < opt.composite_points; ++p) {
    RescaleModel<D> model(ModelConfig{2, 2, 1, 4, 1.0}, rng);
    model.randomize(rng, 1.0);
    const Tensor<D> x = detail::uniform_tensor(Shape{2, 3, 4, 4}, 0, 1, rng);
    const LossWeights weights = LossWeights::defaults(2);
    LatentOptions lat;
    lat.quantize = false;
    lat.zhat_mode = LatentMode::kGaussian;
    const Rng start = rng;
    auto loss = [&](bool backprop) {
      Rng local = start;
      Tape<D> tape;
      auto br = total_loss(tape, model, x, weights, lat, local);
      if (backprop) tape.backward(br.total);
      return br.total_value;
    };
    worst = std::max(worst, detail::check_params(loss, model.parameters(), opt.param_samples, rng));
  }
  return {"total_loss", worst, kCompositeTolerance};
}

inline GradcheckReport run_gradcheck(const GradcheckOptions& opt = {}) {
  GradcheckReport report;
  report.entries = gradcheck_primitives(opt);
  report.entries.push_back(gradcheck_inv_block(opt));
  report.entries.push_back(gradcheck_model(opt));
  report.entries.push_back(gradcheck_total_loss(opt));
  return report;
}

}  // namespace dlv
