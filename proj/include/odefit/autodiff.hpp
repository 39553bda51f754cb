#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

// Reverse-mode automatic differentiation over scalars.
//
// Every differentiable quantity is a Value recorded on a Tape. Local partial
// derivatives are computed at record time, so the backward sweep is a single
// reverse pass over the node list that is independent of the primitive kinds.
// Constants (Value built from a plain double) are not recorded and always
// have gradient zero.
//
// A tape is single-writer. Distinct tapes may be used concurrently from
// different threads.

namespace odefit::ad {

class Tape;

enum class Op : std::uint8_t {
  Leaf, Add, Sub, Mul, Div, Neg, PowConst, Sqrt, Exp, Ln, Sin, Cos,
  Tanh, Sigmoid, Relu, Abs, Min, Max, Dot
};

class Value {
 public:
  Value() = default;
  Value(double v) : v_(v) {}  // NOLINT: implicit by design, constants are Values
  double value() const { return v_; }
  bool is_const() const { return id_ < 0; }
  std::int32_t node_id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Value(double v, std::int32_t id, Tape* t) : v_(v), id_(id), tape_(t) {}
  double v_ = 0.0;
  std::int32_t id_ = -1;
  Tape* tape_ = nullptr;
};

// Gradient of one output with respect to every node on the tape.
// Nodes the output does not depend on, and constants, report zero.
class Gradients {
 public:
  explicit Gradients(std::vector<double> g) : g_(std::move(g)) {}
  double wrt(const Value& v) const {
    if (v.is_const()) return 0.0;
    return g_[static_cast<std::size_t>(v.node_id())];
  }
  double wrt_node(std::int32_t id) const { return g_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return g_.size(); }

 private:
  std::vector<double> g_;
};

class Tape {
 public:
  Value leaf(double v) {
    nodes_.push_back({Op::Leaf, static_cast<std::uint32_t>(args_.size()), 0});
    return Value(v, static_cast<std::int32_t>(nodes_.size() - 1), this);
  }

  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    args_.clear();
  }

  Value record1(Op op, double v, std::int32_t a, double pa) {
    nodes_.push_back({op, static_cast<std::uint32_t>(args_.size()), 1});
    args_.push_back({a, pa});
    return Value(v, static_cast<std::int32_t>(nodes_.size() - 1), this);
  }

  Value record2(Op op, double v, std::int32_t a, double pa, std::int32_t b, double pb) {
    nodes_.push_back({op, static_cast<std::uint32_t>(args_.size()), 2});
    args_.push_back({a, pa});
    args_.push_back({b, pb});
    return Value(v, static_cast<std::int32_t>(nodes_.size() - 1), this);
  }

  // Fused affine combination: bias + w_h.h + w_x.x, where w_h, w_x and bias
  // are tape values, h are tape values and x are plain constants. Records one
  // node instead of one per multiply-add; the hot path of the recurrent cell.
  Value dot_mixed(std::span<const Value> w_h, std::span<const Value> h,
                  std::span<const Value> w_x, std::span<const double> x,
                  const Value& bias);

  Gradients backward(const Value& out) const {
    const double seed = 1.0;
    return backward(std::span<const Value>(&out, 1), std::span<const double>(&seed, 1));
  }

  // Reverse accumulation from several outputs at once, each scaled by its
  // seed. Visits each node exactly once.
  Gradients backward(std::span<const Value> outs, std::span<const double> seeds) const {
    std::vector<double> g(nodes_.size(), 0.0);
    for (std::size_t i = 0; i < outs.size(); ++i) {
      if (outs[i].is_const()) continue;
      if (outs[i].tape() != this) throw std::logic_error("backward: output from another tape");
      g[static_cast<std::size_t>(outs[i].node_id())] += seeds[i];
    }
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      const double gi = g[i];
      if (gi == 0.0) continue;
      const Node& n = nodes_[i];
      const Arg* a = args_.data() + n.arg_begin;
      for (std::uint32_t k = 0; k < n.arg_count; ++k)
        g[static_cast<std::size_t>(a[k].id)] += a[k].partial * gi;
    }
    return Gradients(std::move(g));
  }

 private:
  struct Node {
    Op op;
    std::uint32_t arg_begin;
    std::uint32_t arg_count;
  };
  struct Arg {
    std::int32_t id;
    double partial;
  };
  std::vector<Node> nodes_;
  std::vector<Arg> args_;
};

namespace detail {

inline Tape* tape_of(const Value& a, const Value& b) {
  Tape* t = a.tape() ? a.tape() : b.tape();
  if (a.tape() && b.tape() && a.tape() != b.tape())
    throw std::logic_error("operands recorded on different tapes");
  return t;
}

}  // namespace detail

// --- arithmetic -------------------------------------------------------------

inline Value operator+(const Value& a, const Value& b) {
  Tape* t = detail::tape_of(a, b);
  const double v = a.value() + b.value();
  if (!t) return Value(v);
  if (a.is_const()) return t->record1(Op::Add, v, b.node_id(), 1.0);
  if (b.is_const()) return t->record1(Op::Add, v, a.node_id(), 1.0);
  return t->record2(Op::Add, v, a.node_id(), 1.0, b.node_id(), 1.0);
}

inline Value operator-(const Value& a, const Value& b) {
  Tape* t = detail::tape_of(a, b);
  const double v = a.value() - b.value();
  if (!t) return Value(v);
  if (a.is_const()) return t->record1(Op::Sub, v, b.node_id(), -1.0);
  if (b.is_const()) return t->record1(Op::Sub, v, a.node_id(), 1.0);
  return t->record2(Op::Sub, v, a.node_id(), 1.0, b.node_id(), -1.0);
}

inline Value operator*(const Value& a, const Value& b) {
  Tape* t = detail::tape_of(a, b);
  const double v = a.value() * b.value();
  if (!t) return Value(v);
  if (a.is_const()) return t->record1(Op::Mul, v, b.node_id(), a.value());
  if (b.is_const()) return t->record1(Op::Mul, v, a.node_id(), b.value());
  return t->record2(Op::Mul, v, a.node_id(), b.value(), b.node_id(), a.value());
}

inline Value operator/(const Value& a, const Value& b) {
  if (b.value() == 0.0) throw std::domain_error("autodiff: division by zero");
  Tape* t = detail::tape_of(a, b);
  const double v = a.value() / b.value();
  if (!t) return Value(v);
  const double inv = 1.0 / b.value();
  if (a.is_const()) return t->record1(Op::Div, v, b.node_id(), -v * inv);
  if (b.is_const()) return t->record1(Op::Div, v, a.node_id(), inv);
  return t->record2(Op::Div, v, a.node_id(), inv, b.node_id(), -v * inv);
}

inline Value operator-(const Value& a) {
  if (a.is_const()) return Value(-a.value());
  return a.tape()->record1(Op::Neg, -a.value(), a.node_id(), -1.0);
}

inline Value& operator+=(Value& a, const Value& b) { a = a + b; return a; }
inline Value& operator-=(Value& a, const Value& b) { a = a - b; return a; }
inline Value& operator*=(Value& a, const Value& b) { a = a * b; return a; }

// --- unary primitives -------------------------------------------------------

inline Value sqrt(const Value& a) {
  if (a.value() < 0.0) throw std::domain_error("autodiff: sqrt of negative value");
  const double v = std::sqrt(a.value());
  if (a.is_const()) return Value(v);
  // derivative at exactly zero would be infinite; callers clamp beforehand
  const double p = v > 0.0 ? 0.5 / v : 0.0;
  return a.tape()->record1(Op::Sqrt, v, a.node_id(), p);
}

inline Value exp(const Value& a) {
  const double v = std::exp(a.value());
  if (a.is_const()) return Value(v);
  return a.tape()->record1(Op::Exp, v, a.node_id(), v);
}

inline Value ln(const Value& a) {
  if (a.value() <= 0.0) throw std::domain_error("autodiff: ln of non-positive value");
  const double v = std::log(a.value());
  if (a.is_const()) return Value(v);
  return a.tape()->record1(Op::Ln, v, a.node_id(), 1.0 / a.value());
}

inline Value sin(const Value& a) {
  const double v = std::sin(a.value());
  if (a.is_const()) return Value(v);
  return a.tape()->record1(Op::Sin, v, a.node_id(), std::cos(a.value()));
}

inline Value cos(const Value& a) {
  const double v = std::cos(a.value());
  if (a.is_const()) return Value(v);
  return a.tape()->record1(Op::Cos, v, a.node_id(), -std::sin(a.value()));
}

inline Value tanh(const Value& a) {
  const double v = std::tanh(a.value());
  if (a.is_const()) return Value(v);
  return a.tape()->record1(Op::Tanh, v, a.node_id(), 1.0 - v * v);
}

inline Value sigmoid(const Value& a) {
  const double v = 1.0 / (1.0 + std::exp(-a.value()));
  if (a.is_const()) return Value(v);
  return a.tape()->record1(Op::Sigmoid, v, a.node_id(), v * (1.0 - v));
}

// Subgradient at zero is zero.
inline Value relu(const Value& a) {
  const double v = a.value() > 0.0 ? a.value() : 0.0;
  if (a.is_const()) return Value(v);
  return a.tape()->record1(Op::Relu, v, a.node_id(), a.value() > 0.0 ? 1.0 : 0.0);
}

inline Value abs(const Value& a) {
  const double v = std::abs(a.value());
  if (a.is_const()) return Value(v);
  const double p = a.value() > 0.0 ? 1.0 : (a.value() < 0.0 ? -1.0 : 0.0);
  return a.tape()->record1(Op::Abs, v, a.node_id(), p);
}

inline Value pow_const(const Value& a, double p) {
  const double x = a.value();
  if (x < 0.0 && p != std::floor(p))
    throw std::domain_error("autodiff: pow_const of negative base with non-integer exponent");
  if (x == 0.0 && p < 1.0)
    throw std::domain_error("autodiff: pow_const derivative unbounded at zero");
  const double v = std::pow(x, p);
  if (a.is_const()) return Value(v);
  const double d = (x == 0.0) ? (p == 1.0 ? 1.0 : 0.0) : p * std::pow(x, p - 1.0);
  return a.tape()->record1(Op::PowConst, v, a.node_id(), d);
}

// Ties route the gradient to the first argument.
inline Value min(const Value& a, const Value& b) {
  Tape* t = detail::tape_of(a, b);
  const bool first = a.value() <= b.value();
  const double v = first ? a.value() : b.value();
  if (!t) return Value(v);
  const Value& win = first ? a : b;
  if (win.is_const()) {
    const Value& lose = first ? b : a;
    return t->record1(Op::Min, v, lose.node_id(), 0.0);
  }
  return t->record1(Op::Min, v, win.node_id(), 1.0);
}

inline Value max(const Value& a, const Value& b) {
  Tape* t = detail::tape_of(a, b);
  const bool first = a.value() >= b.value();
  const double v = first ? a.value() : b.value();
  if (!t) return Value(v);
  const Value& win = first ? a : b;
  if (win.is_const()) {
    const Value& lose = first ? b : a;
    return t->record1(Op::Max, v, lose.node_id(), 0.0);
  }
  return t->record1(Op::Max, v, win.node_id(), 1.0);
}

// --- double overloads so numeric code can be written once and instantiated
// --- for both plain doubles (simulation) and tape values (training)

inline double value_of(double v) { return v; }
inline double value_of(const Value& v) { return v.value(); }

inline double sqrt(double a) {
  if (a < 0.0) throw std::domain_error("sqrt of negative value");
  return std::sqrt(a);
}
inline double exp(double a) { return std::exp(a); }
inline double ln(double a) {
  if (a <= 0.0) throw std::domain_error("ln of non-positive value");
  return std::log(a);
}
inline double sin(double a) { return std::sin(a); }
inline double cos(double a) { return std::cos(a); }
inline double tanh(double a) { return std::tanh(a); }
inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }
inline double relu(double a) { return a > 0.0 ? a : 0.0; }
inline double abs(double a) { return std::abs(a); }
inline double pow_const(double a, double p) { return std::pow(a, p); }
inline double min(double a, double b) { return a <= b ? a : b; }
inline double max(double a, double b) { return a >= b ? a : b; }

// --- gradient checking ------------------------------------------------------

// Scalar function of n inputs, evaluated on a caller-provided tape with the
// inputs already registered as leaves.
using CheckedFn = std::function<Value(Tape&, std::span<const Value>)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  int worst_coord = -1;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

// Compares reverse-mode gradients against central finite differences with
// step h. Relative error per coordinate is
//   |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
GradCheckReport grad_check(const CheckedFn& f, std::span<const double> x, double h);

}  // namespace odefit::ad
