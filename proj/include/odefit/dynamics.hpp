#pragma once

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "odefit/autodiff.hpp"

// Registry of parametric ODE systems: right-hand sides, parameter metadata
// and measurement masks. Right-hand sides are pure functions, written once
// and instantiated for plain doubles (simulation) and tape values (training).

namespace odefit::dyn {

constexpr double kGravity = 9.81;       // m/s^2, fixed inside the physics
constexpr double kThetaClampEps = 1e-4; // soft clamp floor for parameters

enum class SystemId {
  Pendulum, Torricelli, Led, SlidingBlock, FreeFall, Rover, Rotor,
  LotkaVolterra, Lorenz
};

struct SystemSpec {
  SystemId id{};
  std::string name;
  int state_dim = 0;
  int forcing_dim = 0;
  std::vector<std::string> state_names;
  std::vector<std::string> param_names;
  std::vector<std::string> param_units;
  std::vector<double> theta_nominal;
  std::vector<double> lower_bounds;
  std::vector<double> upper_bounds;
  std::vector<bool> measured;            // diagonal of the measurement mask
  std::vector<bool> offset_calibrated;   // per-state: learn a constant offset
  std::vector<bool> clamp_nonnegative;   // project state to >= 0 after each step
  std::map<std::string, double> fixed;   // fixed known constants
  std::vector<double> default_x0;

  int param_count() const { return static_cast<int>(param_names.size()); }
  double fixed_at(const std::string& key) const {
    auto it = fixed.find(key);
    if (it == fixed.end()) throw std::logic_error(name + ": missing fixed constant " + key);
    return it->second;
  }
};

// Throws std::invalid_argument when a spec violates its invariants
// (bounds ordering, empty mask, dimension mismatches).
void validate(const SystemSpec& spec);

// Known system names: pendulum, torricelli, led, sliding_block, free_fall,
// rover, rotor, lotka_volterra, lorenz.
const SystemSpec& registry_lookup(const std::string& name);
std::vector<std::string> registry_names();

// Piecewise-linear exogenous forcing, clamped to its endpoints outside the
// sampled range.
struct ForcingSignal {
  std::vector<double> timestamps;
  std::vector<double> values;  // row-major, one row of `width` per timestamp
  int width = 0;

  void validate() const;
  std::size_t samples() const { return timestamps.size(); }
  // Linear interpolation at time t into out[0..width).
  void interpolate(double t, std::span<double> out) const;
};

namespace detail {

// sign(v) smoothed as tanh(v/0.01) so gradients exist at rest.
template <class T>
T smooth_sign(const T& v) {
  using ad::tanh;
  return tanh(v * (1.0 / 0.01));
}

// |z| smoothed as z*tanh(z/0.1).
template <class T>
T smooth_abs(const T& z) {
  using ad::tanh;
  return z * tanh(z * (1.0 / 0.1));
}

}  // namespace detail

// dx/dt = f(x, u; theta). Dimensions must match the spec; theta is used as
// given (soft clamping happens in the integrator).
template <class T>
void rhs(const SystemSpec& s, std::span<const T> x, std::span<const T> u,
         std::span<const T> theta, double t, std::span<T> dxdt) {
  (void)t;
  if (static_cast<int>(x.size()) != s.state_dim ||
      static_cast<int>(dxdt.size()) != s.state_dim)
    throw std::invalid_argument(s.name + ": state dimension mismatch");
  if (static_cast<int>(u.size()) != s.forcing_dim)
    throw std::invalid_argument(s.name + ": forcing dimension mismatch");
  if (static_cast<int>(theta.size()) != s.param_count())
    throw std::invalid_argument(s.name + ": parameter dimension mismatch");

  using ad::cos;
  using ad::sin;
  using ad::sqrt;
  using ad::tanh;

  switch (s.id) {
    case SystemId::Pendulum: {
      // x = [angle, angular velocity], theta = [L, tau]
      const T& ang = x[0];
      const T& w = x[1];
      const T& L = theta[0];
      const T& tau = theta[1];
      dxdt[0] = w;
      dxdt[1] = -(kGravity / L) * sin(ang) - (tau / L) * w;
      break;
    }
    case SystemId::Torricelli: {
      // dh/dt = -K sqrt(h); tank empty is an absorbing state with zero
      // derivative, which also keeps sqrt off its singular point.
      const T& h = x[0];
      const T& K = theta[0];
      if (ad::value_of(h) <= 0.0) {
        dxdt[0] = T(0.0) * K;  // keeps theta on the tape with zero gradient
      } else {
        dxdt[0] = -K * sqrt(h);
      }
      break;
    }
    case SystemId::Led: {
      dxdt[0] = -theta[0] * x[0];
      break;
    }
    case SystemId::SlidingBlock: {
      // x = [v], theta = [alpha (rad), mu]
      const T& alpha = theta[0];
      const T& mu = theta[1];
      dxdt[0] = kGravity * sin(alpha) - mu * kGravity * cos(alpha);
      break;
    }
    case SystemId::FreeFall: {
      // dv/dt = g - k v^2 sign(v), drag coefficient fixed-known
      const double k = s.fixed_at("k_drag");
      const T& v = x[0];
      dxdt[0] = theta[0] - k * v * v * detail::smooth_sign(v);
      break;
    }
    case SystemId::Rover: {
      // x = [x_m, y_m, psi, v] with (x_m, y_m) the tracked marker offset by
      // the arm lengths (a, b) from the axle center; u = [w_r, w_l, power].
      // theta = [a, b, r, m, cm]
      const double W = s.fixed_at("wheelbase");
      const double k_m = s.fixed_at("k_motor");
      const double k_f = s.fixed_at("k_friction");
      const double c_d = s.fixed_at("c_drag");
      const T& a = theta[0];
      const T& b = theta[1];
      const T& r = theta[2];
      const T& m = theta[3];
      const T& cm = theta[4];
      const T& psi = x[2];
      const T& v = x[3];
      const T psi_dot = r * (u[0] - u[1]) * (1.0 / W);
      const T f_motor = (k_m / r) * u[2];
      // load transfer during turns raises the rolling-resistance term
      const T f_fric = k_f * m * kGravity * detail::smooth_sign(v) *
                       (1.0 + (cm * (1.0 / W)) * detail::smooth_abs(v * psi_dot) * (1.0 / kGravity));
      const T f_drag = c_d * v * v * detail::smooth_sign(v);
      const T cp = cos(psi), sp = sin(psi);
      dxdt[0] = v * cp - psi_dot * (a * sp + b * cp);
      dxdt[1] = v * sp + psi_dot * (a * cp - b * sp);
      dxdt[2] = psi_dot;
      dxdt[3] = (f_motor - f_fric - f_drag) / m;
      break;
    }
    case SystemId::Rotor: {
      // Second-order rotor response rewritten as two first-order states,
      // with thrust and torque carried as auxiliary states so they can be
      // measured: d(k w^2)/dt = 2 k w wdot.
      // x = [w, wdot, thrust, torque], u = [command],
      // theta = [k_thrust, k_torque, k_p, tau2]
      const double zeta = s.fixed_at("zeta");
      const T& w = x[0];
      const T& wdot = x[1];
      const T& k_th = theta[0];
      const T& k_to = theta[1];
      const T& k_p = theta[2];
      const T& tau2 = theta[3];
      dxdt[0] = wdot;
      dxdt[1] = (k_p * u[0] - w - 2.0 * zeta * tau2 * wdot) / (tau2 * tau2);
      dxdt[2] = 2.0 * k_th * w * wdot;
      dxdt[3] = 2.0 * k_to * w * wdot;
      break;
    }
    case SystemId::LotkaVolterra: {
      // theta = [alpha, beta, delta, gamma]
      const T& px = x[0];
      const T& py = x[1];
      dxdt[0] = theta[0] * px - theta[1] * px * py;
      dxdt[1] = theta[2] * px * py - theta[3] * py;
      break;
    }
    case SystemId::Lorenz: {
      // theta = [sigma, rho, beta]
      const T& xx = x[0];
      const T& yy = x[1];
      const T& zz = x[2];
      dxdt[0] = theta[0] * (yy - xx);
      dxdt[1] = xx * (theta[1] - zz) - yy;
      dxdt[2] = xx * yy - theta[2] * zz;
      break;
    }
  }
}

// Straight-line/differential-drive wheel kinematics: axle speed and yaw rate
// from wheel speeds. Used by tests and scenario builders; the rover ODE above
// derives its yaw rate from the same relation.
inline void rover_kinematics(double r, double wheelbase, double w_r, double w_l,
                             double& v, double& psi_dot) {
  v = r * (w_r + w_l) / 2.0;
  psi_dot = r * (w_r - w_l) / wheelbase;
}

// Serializes the registry (name, dimensions, nominals, bounds, mask, fixed
// constants) as JSON so specs can be inspected or overridden from run configs.
std::string registry_json();

// Builds a spec from a JSON object. Must carry "kind" naming a registered
// system; any of nominals/bounds/mask/fixed/default_x0 may be overridden.
SystemSpec spec_from_json(const std::string& json_text);

}  // namespace odefit::dyn
