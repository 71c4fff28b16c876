#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dlv/conv.hpp"
#include "dlv/tensor.hpp"
#include "dlv/wavelet.hpp"

namespace dlv {

/// Closed set of primitives the tape can record and differentiate.
enum class Op : std::uint8_t {
  kLeaf,
  kParam,
  kConv2d,
  kAdd,
  kSub,
  kMul,
  kExp,
  kSigmoid,
  kLeakyRelu,
  kScale,
  kShift,
  kAbs,
  kSqrt,
  kConcat,
  kSlice,
  kHaar,
  kHaarInverse,
  kSum,
  kMean,
  kSumSq,
  kQuantizeSte,
};

inline constexpr std::array<Op, 19> kPrimitives = {
    Op::kConv2d, Op::kAdd,    Op::kSub,   Op::kMul,         Op::kExp,  Op::kSigmoid, Op::kLeakyRelu,
    Op::kScale,  Op::kShift,  Op::kAbs,   Op::kSqrt,        Op::kConcat, Op::kSlice, Op::kHaar,
    Op::kHaarInverse, Op::kSum, Op::kMean, Op::kSumSq, Op::kQuantizeSte};

constexpr std::string_view op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kParam: return "param";
    case Op::kConv2d: return "conv2d";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kExp: return "exp";
    case Op::kSigmoid: return "sigmoid";
    case Op::kLeakyRelu: return "leaky_relu";
    case Op::kScale: return "scale";
    case Op::kShift: return "shift";
    case Op::kAbs: return "abs";
    case Op::kSqrt: return "sqrt";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kHaar: return "haar_forward";
    case Op::kHaarInverse: return "haar_inverse";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kSumSq: return "sumsq";
    case Op::kQuantizeSte: return "quantize_ste";
  }
  return "?";
}

/// Test hook: when set, backward multiplies the input gradients of this op by
/// 1.01. Used to confirm the gradient checker notices a broken derivative.
inline std::optional<Op>& gradient_fault() {
  static std::optional<Op> fault;
  return fault;
}

namespace detail {
inline std::uint64_t next_parameter_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}
}  // namespace detail

template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  std::uint64_t id = 0;

  Parameter() = default;
  explicit Parameter(Tensor<T> v)
      : value(std::move(v)), grad(Tensor<T>::zeros(value.shape())), id(detail::next_parameter_id()) {}

  // A copy is a distinct parameter and gets its own id.
  Parameter(const Parameter& o) : value(o.value), grad(o.grad), id(detail::next_parameter_id()) {}
  Parameter& operator=(const Parameter& o) {
    value = o.value;
    grad = o.grad;
    id = detail::next_parameter_id();
    return *this;
  }
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  void zero_grad() { std::fill(grad.data().begin(), grad.data().end(), T(0)); }
};

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t index) : tape_(tape), index_(index) {}

  const Tensor<T>& value() const { return tape_->value(index_); }
  const Shape& shape() const { return value().shape(); }
  Tape<T>& tape() const { return *tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Records primitive applications in execution order; nodes are appended only
/// after their inputs, so the node list is already topologically sorted.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives gradient.
  Var<T> constant(Tensor<T> value) { return push_leaf(std::move(value), false); }

  /// Leaf whose gradient is kept and readable through grad() after backward.
  Var<T> variable(Tensor<T> value) { return push_leaf(std::move(value), true); }

  /// Leaf bound to a Parameter; backward accumulates into param.grad. A
  /// parameter watched twice on one tape resolves to the same node.
  Var<T> watch(Parameter<T>& param) {
    if (auto it = watched_.find(param.id); it != watched_.end()) return Var<T>(this, it->second);
    Node n;
    n.op = Op::kParam;
    n.value = param.value;
    n.param = &param;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    watched_.emplace(param.id, nodes_.size() - 1);
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> apply(Op op, std::initializer_list<Var<T>> inputs, double attr = 0.0, std::size_t begin = 0,
               std::size_t count = 0) {
    std::vector<Var<T>> v(inputs);
    return apply(op, std::span<const Var<T>>(v), attr, begin, count);
  }

  Var<T> apply(Op op, std::span<const Var<T>> inputs, double attr = 0.0, std::size_t begin = 0,
               std::size_t count = 0) {
    Node n;
    n.op = op;
    n.attr = attr;
    n.begin = begin;
    n.count = count;
    n.inputs.reserve(inputs.size());
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw std::logic_error("Tape::apply: input recorded on another tape");
      n.inputs.push_back(in.index());
      n.needs_grad = n.needs_grad || nodes_[in.index()].needs_grad;
    }
    n.value = compute(n);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  const Tensor<T>& value(std::size_t i) const { return nodes_[i].value; }
  std::size_t size() const { return nodes_.size(); }
  Op op_at(std::size_t i) const { return nodes_[i].op; }

  /// Gradient of the last backward() loss with respect to a leaf. Empty if the
  /// leaf did not receive gradient; interior gradients are released during the sweep.
  const Tensor<T>& grad(const Var<T>& v) const {
    static const Tensor<T> kEmpty;
    return v.index() < grads_.size() ? grads_[v.index()] : kEmpty;
  }

  /// Reverse sweep from a scalar loss. Parameter gradients accumulate (+=).
  void backward(const Var<T>& loss) {
    if (&loss.tape() != this) throw std::logic_error("Tape::backward: loss recorded on another tape");
    if (!loss.value().is_scalar()) {
      throw ShapeError("backward: loss must be a scalar, got " + loss.shape().str());
    }
    backward(loss, Tensor<T>::scalar(T(1)));
  }

  /// Reverse sweep seeded with an explicit output gradient (vector-Jacobian product).
  void backward(const Var<T>& out, Tensor<T> seed) {
    if (&out.tape() != this) throw std::logic_error("Tape::backward: output recorded on another tape");
    require_same_shape("backward", seed.shape(), out.shape());
    grads_.assign(nodes_.size(), Tensor<T>());
    grads_[out.index()] = std::move(seed);
    for (std::size_t i = out.index() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (grads_[i].empty() || !n.needs_grad) continue;
      if (n.op == Op::kParam) {
        auto& pg = n.param->grad;
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += grads_[i][k];
        continue;
      }
      if (n.op == Op::kLeaf) continue;
      propagate(i);
      grads_[i] = Tensor<T>();
    }
  }

  /// Recomputes every recorded primitive from its recorded inputs and reports
  /// whether each result matches the saved activation bit for bit.
  bool replay_matches() const {
    for (const auto& n : nodes_) {
      if (n.op == Op::kLeaf || n.op == Op::kParam) continue;
      if (!(compute(n) == n.value)) return false;
    }
    return true;
  }

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::vector<std::size_t> inputs;
    double attr = 0.0;
    std::size_t begin = 0;
    std::size_t count = 0;
    Tensor<T> value;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
  };

  Var<T> push_leaf(Tensor<T> value, bool needs_grad) {
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  const Tensor<T>& in(const Node& n, std::size_t k) const { return nodes_[n.inputs[k]].value; }

  template <typename F>
  static Tensor<T> map(const Tensor<T>& a, F f) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
    return out;
  }

  template <typename F>
  static Tensor<T> zip(const char* name, const Tensor<T>& a, const Tensor<T>& b, F f) {
    require_same_shape(name, a.shape(), b.shape());
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }

  static T quantize(T v) {
    const T q = std::round(v * T(255)) / T(255);
    return std::clamp(q, T(0), T(1));
  }

  Tensor<T> compute(const Node& n) const {
    const T c = static_cast<T>(n.attr);
    switch (n.op) {
      case Op::kLeaf:
      case Op::kParam:
        return n.value;
      case Op::kConv2d: {
        const auto& k = in(n, 1);
        const std::size_t expected = (k.shape().h - 1) / 2;
        if (n.begin != expected) {
          throw ShapeError("conv2d: padding " + std::to_string(n.begin) +
                           " does not preserve size for kernel " + k.shape().str());
        }
        return conv2d_forward(in(n, 0), k, in(n, 2));
      }
      case Op::kAdd: return zip("add", in(n, 0), in(n, 1), [](T a, T b) { return a + b; });
      case Op::kSub: return zip("sub", in(n, 0), in(n, 1), [](T a, T b) { return a - b; });
      case Op::kMul: return zip("mul", in(n, 0), in(n, 1), [](T a, T b) { return a * b; });
      case Op::kExp: return map(in(n, 0), [](T a) { return std::exp(a); });
      case Op::kSigmoid: return map(in(n, 0), [](T a) { return T(1) / (T(1) + std::exp(-a)); });
      case Op::kLeakyRelu: return map(in(n, 0), [c](T a) { return a >= T(0) ? a : c * a; });
      case Op::kScale: return map(in(n, 0), [c](T a) { return c * a; });
      case Op::kShift: return map(in(n, 0), [c](T a) { return a + c; });
      case Op::kAbs: return map(in(n, 0), [](T a) { return std::abs(a); });
      case Op::kSqrt: return map(in(n, 0), [](T a) { return std::sqrt(a); });
      case Op::kConcat: {
        std::vector<const Tensor<T>*> parts;
        for (auto idx : n.inputs) parts.push_back(&nodes_[idx].value);
        return concat_channels<T>(std::span<const Tensor<T>* const>(parts));
      }
      case Op::kSlice: return slice_channels(in(n, 0), n.begin, n.count);
      case Op::kHaar: return haar_forward(in(n, 0));
      case Op::kHaarInverse: return haar_inverse(in(n, 0));
      case Op::kSum: return Tensor<T>::scalar(static_cast<T>(sum_all(in(n, 0))));
      case Op::kMean: return Tensor<T>::scalar(static_cast<T>(mean_all(in(n, 0))));
      case Op::kSumSq: return Tensor<T>::scalar(static_cast<T>(sumsq_all(in(n, 0))));
      case Op::kQuantizeSte: return map(in(n, 0), quantize);
    }
    throw std::logic_error("Tape::compute: unknown op");
  }

  void accumulate(std::size_t target, const Tensor<T>& g) {
    if (!nodes_[target].needs_grad) return;
    Tensor<T>& dst = grads_[target];
    if (dst.empty()) {
      dst = g;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

  template <typename F>
  Tensor<T> scaled_by(const Tensor<T>& g, const Tensor<T>& a, F f) const {
    Tensor<T> out(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i] * f(a[i], i);
    return out;
  }

  void propagate(std::size_t i) {
    const Node& n = nodes_[i];
    const Tensor<T> g = gradient_fault() == n.op ? map(grads_[i], [](T v) { return v * T(1.01); })
                                                  : grads_[i];
    const T c = static_cast<T>(n.attr);
    auto needs = [&](std::size_t k) { return nodes_[n.inputs[k]].needs_grad; };
    switch (n.op) {
      case Op::kLeaf:
      case Op::kParam:
        return;
      case Op::kConv2d: {
        Tensor<T> gi, gk, gb;
        if (needs(1) || needs(2)) {
          gk = Tensor<T>::zeros(in(n, 1).shape());
          gb = Tensor<T>::zeros(in(n, 2).shape());
        }
        conv2d_backward(g, in(n, 0), in(n, 1), needs(0) ? &gi : nullptr, gk.empty() ? nullptr : &gk,
                        gb.empty() ? nullptr : &gb);
        if (needs(0)) accumulate(n.inputs[0], gi);
        if (!gk.empty()) {
          accumulate(n.inputs[1], gk);
          accumulate(n.inputs[2], gb);
        }
        return;
      }
      case Op::kAdd:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], g);
        return;
      case Op::kSub:
        accumulate(n.inputs[0], g);
        if (needs(1)) accumulate(n.inputs[1], map(g, [](T v) { return -v; }));
        return;
      case Op::kMul:
        if (needs(0)) accumulate(n.inputs[0], scaled_by(g, in(n, 1), [](T b, std::size_t) { return b; }));
        if (needs(1)) accumulate(n.inputs[1], scaled_by(g, in(n, 0), [](T a, std::size_t) { return a; }));
        return;
      case Op::kExp:
        accumulate(n.inputs[0], scaled_by(g, n.value, [](T e, std::size_t) { return e; }));
        return;
      case Op::kSigmoid:
        accumulate(n.inputs[0], scaled_by(g, n.value, [](T s, std::size_t) { return s * (T(1) - s); }));
        return;
      case Op::kLeakyRelu:
        accumulate(n.inputs[0], scaled_by(g, in(n, 0), [c](T a, std::size_t) { return a >= T(0) ? T(1) : c; }));
        return;
      case Op::kScale:
        accumulate(n.inputs[0], map(g, [c](T v) { return c * v; }));
        return;
      case Op::kShift:
        accumulate(n.inputs[0], g);
        return;
      case Op::kAbs:
        accumulate(n.inputs[0], scaled_by(g, in(n, 0), [](T a, std::size_t) {
                     return a > T(0) ? T(1) : (a < T(0) ? T(-1) : T(0));
                   }));
        return;
      case Op::kSqrt:
        // Subgradient 0 at the origin: an all-identical sample set has zero spread.
        accumulate(n.inputs[0], scaled_by(g, n.value, [](T r, std::size_t) {
                     return r > T(0) ? T(0.5) / r : T(0);
                   }));
        return;
      case Op::kConcat: {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const std::size_t ch = in(n, k).shape().c;
          if (!in(n, k).empty() && needs(k)) accumulate(n.inputs[k], slice_channels(g, offset, ch));
          offset += in(n, k).empty() ? 0 : ch;
        }
        return;
      }
      case Op::kSlice: {
        Tensor<T> full = Tensor<T>::zeros(in(n, 0).shape());
        const Shape s = full.shape();
        const std::size_t len = n.count * s.plane();
        for (std::size_t b = 0; b < s.n; ++b) std::copy_n(g.channel(b, 0), len, full.channel(b, n.begin));
        accumulate(n.inputs[0], full);
        return;
      }
      case Op::kHaar:
        accumulate(n.inputs[0], haar_inverse(g));
        return;
      case Op::kHaarInverse:
        accumulate(n.inputs[0], haar_forward(g));
        return;
      case Op::kSum:
        accumulate(n.inputs[0], Tensor<T>(in(n, 0).shape(), g.item()));
        return;
      case Op::kMean:
        accumulate(n.inputs[0],
                   Tensor<T>(in(n, 0).shape(), g.item() / static_cast<T>(in(n, 0).size())));
        return;
      case Op::kSumSq: {
        const T s = g.item();
        accumulate(n.inputs[0], map(in(n, 0), [s](T a) { return T(2) * a * s; }));
        return;
      }
      case Op::kQuantizeSte:
        // Straight-through inside [0, 1], blocked where the clip is active.
        accumulate(n.inputs[0], scaled_by(g, in(n, 0), [](T a, std::size_t) {
                     return (a >= T(0) && a <= T(1)) ? T(1) : T(0);
                   }));
        return;
    }
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  std::unordered_map<std::uint64_t, std::size_t> watched_;
};

// ---------------------------------------------------------------------------
// Primitive wrappers

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias, std::size_t pad) {
  return x.tape().apply(Op::kConv2d, {x, kernel, bias}, 0.0, pad);
}

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return a.tape().apply(Op::kAdd, {a, b}); }
template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return a.tape().apply(Op::kSub, {a, b}); }
template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) { return a.tape().apply(Op::kMul, {a, b}); }

template <typename T>
Var<T> exp(const Var<T>& a) { return a.tape().apply(Op::kExp, {a}); }
template <typename T>
Var<T> sigmoid(const Var<T>& a) { return a.tape().apply(Op::kSigmoid, {a}); }
template <typename T>
Var<T> leaky_relu(const Var<T>& a, double slope) { return a.tape().apply(Op::kLeakyRelu, {a}, slope); }
template <typename T>
Var<T> scale(const Var<T>& a, double c) { return a.tape().apply(Op::kScale, {a}, c); }
template <typename T>
Var<T> shift(const Var<T>& a, double c) { return a.tape().apply(Op::kShift, {a}, c); }
template <typename T>
Var<T> abs(const Var<T>& a) { return a.tape().apply(Op::kAbs, {a}); }
template <typename T>
Var<T> sqrt(const Var<T>& a) { return a.tape().apply(Op::kSqrt, {a}); }

template <typename T>
Var<T> concat(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  return parts.front().tape().apply(Op::kConcat, parts);
}
template <typename T>
Var<T> concat(std::initializer_list<Var<T>> parts) {
  std::vector<Var<T>> v(parts);
  return concat(std::span<const Var<T>>(v));
}

template <typename T>
Var<T> slice(const Var<T>& a, std::size_t begin, std::size_t count) {
  return a.tape().apply(Op::kSlice, {a}, 0.0, begin, count);
}

template <typename T>
Var<T> haar(const Var<T>& a) { return a.tape().apply(Op::kHaar, {a}); }
template <typename T>
Var<T> haar_inv(const Var<T>& a) { return a.tape().apply(Op::kHaarInverse, {a}); }

template <typename T>
Var<T> sum(const Var<T>& a) { return a.tape().apply(Op::kSum, {a}); }
template <typename T>
Var<T> mean(const Var<T>& a) { return a.tape().apply(Op::kMean, {a}); }
template <typename T>
Var<T> sumsq(const Var<T>& a) { return a.tape().apply(Op::kSumSq, {a}); }

/// clip(round(255 y) / 255, 0, 1) forward; identity gradient inside [0, 1].
template <typename T>
Var<T> quantize_ste(const Var<T>& a) { return a.tape().apply(Op::kQuantizeSte, {a}); }

}  // namespace dlv
