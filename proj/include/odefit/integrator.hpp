#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "odefit/autodiff.hpp"
#include "odefit/dynamics.hpp"

// Differentiable fixed-step RK4 rollout of any registered system under
// interpolated forcing. The step is clamped at dt = min(0.03, 1/fps) and the
// rollout runs for min(500, T) steps.

namespace odefit::sim {

constexpr int kMaxRolloutSteps = 500;
constexpr double kMaxDt = 0.03;

struct Trajectory {
  std::vector<double> timestamps;  // seconds, strictly increasing
  std::vector<double> states;      // row-major, samples() x state_dim
  std::vector<double> forcing;     // optional, samples() x forcing_dim
  int state_dim = 0;
  int forcing_dim = 0;
  double fps = 0.0;

  std::size_t samples() const { return timestamps.size(); }
  double state(std::size_t row, int col) const {
    return states[row * static_cast<std::size_t>(state_dim) + static_cast<std::size_t>(col)];
  }
};

// Raised when an RK4 stage or state goes non-finite; carries the step index
// and the offending state component.
class RolloutError : public std::runtime_error {
 public:
  RolloutError(int step, int component, const std::string& what_stage)
      : std::runtime_error("rollout diverged at step " + std::to_string(step) +
                           ", component " + std::to_string(component) + " (" + what_stage + ")"),
        step(step),
        component(component) {}
  int step;
  int component;
};

inline double rollout_dt(double fps) {
  if (!(fps > 0.0)) throw std::invalid_argument("rollout: fps must be positive");
  return ad::min(kMaxDt, 1.0 / fps);
}

inline int rollout_steps(int sample_count) {
  if (sample_count < 1) throw std::invalid_argument("rollout: sample count must be >= 1");
  return sample_count < kMaxRolloutSteps ? sample_count : kMaxRolloutSteps;
}

// Soft clamp theta_i <- max(eps, theta_i); keeps parameters strictly positive
// while staying differentiable away from the clamp.
template <class T>
std::vector<T> clamp_theta(std::span<const T> theta) {
  std::vector<T> out;
  out.reserve(theta.size());
  for (const T& th : theta) out.push_back(ad::max(th, T(dyn::kThetaClampEps)));
  return out;
}

namespace detail {

template <class T>
void check_finite(std::span<const T> v, int step, const char* stage) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(ad::value_of(v[i]))) throw RolloutError(step, static_cast<int>(i), stage);
}

}  // namespace detail

// One classical RK4 step with midpoint forcing. Expects theta already
// clamped. Every stage is checked for finiteness so stiff blowups are
// diagnosed at the stage where they appear.
template <class T>
void rk4_step(const dyn::SystemSpec& sys, std::span<const T> x,
              std::span<const T> u_t, std::span<const T> u_half, std::span<const T> u_next,
              double dt, std::span<const T> theta, double t, std::span<T> out,
              int step_index = -1) {
  if (!(dt > 0.0)) throw std::invalid_argument("rk4_step: dt must be positive");
  const std::size_t d = x.size();
  std::vector<T> k1(d), k2(d), k3(d), k4(d), tmp(d);

  dyn::rhs<T>(sys, x, u_t, theta, t, k1);
  detail::check_finite<T>(k1, step_index, "k1");

  for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + (0.5 * dt) * k1[i];
  dyn::rhs<T>(sys, tmp, u_half, theta, t + 0.5 * dt, k2);
  detail::check_finite<T>(k2, step_index, "k2");

  for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + (0.5 * dt) * k2[i];
  dyn::rhs<T>(sys, tmp, u_half, theta, t + 0.5 * dt, k3);
  detail::check_finite<T>(k3, step_index, "k3");

  for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + dt * k3[i];
  dyn::rhs<T>(sys, tmp, u_next, theta, t + dt, k4);
  detail::check_finite<T>(k4, step_index, "k4");

  for (std::size_t i = 0; i < d; ++i)
    out[i] = x[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  // absorbing non-negative states (e.g. fluid height) may overshoot past
  // zero by the local truncation error; project them back
  if (!sys.clamp_nonnegative.empty())
    for (std::size_t i = 0; i < d; ++i)
      if (sys.clamp_nonnegative[i]) out[i] = ad::max(out[i], T(0.0));
  detail::check_finite<T>(std::span<const T>(out.data(), out.size()), step_index, "state");
}

// Rollout over min(500, sample_count) steps of size min(0.03, 1/fps).
// `u_at(t, out)` fills the forcing vector at an arbitrary time; grid and
// mid-step forcing are sampled through it. Returns the state at t0 and after
// every step, flattened row-major ((steps+1) x D).
template <class T, class ForcingFn>
std::vector<T> rollout(const dyn::SystemSpec& sys, std::span<const T> x0, ForcingFn&& u_at,
                       std::span<const T> theta, int sample_count, double fps, double t0 = 0.0) {
  if (static_cast<int>(x0.size()) != sys.state_dim)
    throw std::invalid_argument("rollout: x0 dimension mismatch");
  const double dt = rollout_dt(fps);
  const int steps = rollout_steps(sample_count);
  const std::size_t d = static_cast<std::size_t>(sys.state_dim);
  const std::size_t f = static_cast<std::size_t>(sys.forcing_dim);

  const std::vector<T> theta_c = clamp_theta<T>(theta);

  std::vector<T> out((static_cast<std::size_t>(steps) + 1) * d);
  for (std::size_t i = 0; i < d; ++i) out[i] = x0[i];

  std::vector<T> u_t(f), u_half(f), u_next(f);
  u_at(t0, std::span<T>(u_t));
  for (int k = 0; k < steps; ++k) {
    const double t = t0 + k * dt;
    u_at(t + 0.5 * dt, std::span<T>(u_half));
    u_at(t + dt, std::span<T>(u_next));
    std::span<const T> x(out.data() + static_cast<std::size_t>(k) * d, d);
    std::span<T> nx(out.data() + (static_cast<std::size_t>(k) + 1) * d, d);
    rk4_step<T>(sys, x, u_t, u_half, u_next, dt, theta_c, t, nx, k);
    std::swap(u_t, u_next);
  }
  return out;
}

// Adapts a sampled ForcingSignal (or its absence) to the rollout callback.
struct InterpForcing {
  const dyn::ForcingSignal* signal = nullptr;  // may be null when forcing_dim == 0
  void operator()(double t, std::span<double> out) const {
    if (out.empty()) return;
    if (!signal) throw std::invalid_argument("rollout: system needs forcing but none given");
    signal->interpolate(t, out);
  }
};

// Double-precision convenience wrapper producing a timestamped Trajectory
// (used by simulation and synthesis; training uses the templated form).
Trajectory rollout_trajectory(const dyn::SystemSpec& sys, std::span<const double> x0,
                              const dyn::ForcingSignal* forcing, std::span<const double> theta,
                              int sample_count, double fps, double t0 = 0.0);

}  // namespace odefit::sim
