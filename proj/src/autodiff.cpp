#include "odefit/autodiff.hpp"

namespace odefit::ad {

Value Tape::dot_mixed(std::span<const Value> w_h, std::span<const Value> h,
                      std::span<const Value> w_x, std::span<const double> x,
                      const Value& bias) {
  if (w_h.size() != h.size() || w_x.size() != x.size())
    throw std::logic_error("dot_mixed: size mismatch");

  double v = bias.value();
  const std::uint32_t begin = static_cast<std::uint32_t>(args_.size());
  // Each tape-valued factor contributes one argument; constants contribute
  // only to the value.
  for (std::size_t i = 0; i < w_h.size(); ++i) {
    const double wv = w_h[i].value(), hv = h[i].value();
    v += wv * hv;
    if (!w_h[i].is_const()) args_.push_back({w_h[i].node_id(), hv});
    if (!h[i].is_const()) args_.push_back({h[i].node_id(), wv});
  }
  for (std::size_t i = 0; i < w_x.size(); ++i) {
    v += w_x[i].value() * x[i];
    if (!w_x[i].is_const()) args_.push_back({w_x[i].node_id(), x[i]});
  }
  if (!bias.is_const()) args_.push_back({bias.node_id(), 1.0});

  const std::uint32_t count = static_cast<std::uint32_t>(args_.size()) - begin;
  if (count == 0) {  // all inputs constant
    args_.resize(begin);
    return Value(v);
  }
  nodes_.push_back({Op::Dot, begin, count});
  return Value(v, static_cast<std::int32_t>(nodes_.size() - 1), this);
}

GradCheckReport grad_check(const CheckedFn& f, std::span<const double> x, double h) {
  const std::size_t n = x.size();

  Tape tape;
  std::vector<Value> leaves;
  leaves.reserve(n);
  for (double xi : x) leaves.push_back(tape.leaf(xi));
  const Value out = f(tape, leaves);
  const Gradients g = tape.backward(out);

  GradCheckReport rep;
  rep.analytic.resize(n);
  rep.numeric.resize(n);
  for (std::size_t i = 0; i < n; ++i) rep.analytic[i] = g.wrt(leaves[i]);

  std::vector<double> xp(x.begin(), x.end());
  for (std::size_t i = 0; i < n; ++i) {
    auto eval = [&](double xi) {
      Tape t;
      std::vector<Value> lv;
      lv.reserve(n);
      const double keep = xp[i];
      xp[i] = xi;
      for (double v : xp) lv.push_back(t.leaf(v));
      const double r = f(t, lv).value();
      xp[i] = keep;
      return r;
    };
    rep.numeric[i] = (eval(x[i] + h) - eval(x[i] - h)) / (2.0 * h);
    const double a = rep.analytic[i], m = rep.numeric[i];
    const double rel = std::abs(a - m) / ad::max(1e-8, std::abs(a) + std::abs(m));
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_coord = static_cast<int>(i);
    }
  }
  return rep;
}

}  // namespace odefit::ad
