#include <cmath>
#include <vector>

#include "doctest.h"
#include "odefit/dynamics.hpp"
#include "odefit/integrator.hpp"

using namespace odefit;
using ad::Tape;
using ad::Value;
using dyn::registry_lookup;

namespace {

struct NoForcing {
  template <class T>
  void operator()(double, std::span<T>) const {}
};

}  // namespace

TEST_SUITE_BEGIN("integrator");

TEST_CASE("constant dynamics keep the state fixed") {
  const auto& s = registry_lookup("led");
  std::vector<double> x = {0.7}, nx(1), u;
  const std::vector<double> th = {0.0};  // zero decay rate: rhs == 0
  sim::rk4_step<double>(s, x, u, u, u, 0.1, th, 0.0, nx);
  CHECK(nx[0] == 0.7);
}

TEST_CASE("one RK4 step of dx/dt = x matches the hand-evaluated tableau") {
  // k1=1, k2=1.05, k3=1.0525, k4=1.10525 -> 1.1051708333...
  const auto& s = registry_lookup("led");
  std::vector<double> x = {1.0}, nx(1), u;
  const std::vector<double> th = {-1.0};  // dI/dt = +I
  sim::rk4_step<double>(s, x, u, u, u, 0.1, th, 0.0, nx);
  CHECK(nx[0] == doctest::Approx(1.0 + 0.1 / 6.0 * (1.0 + 2.0 * 1.05 + 2.0 * 1.0525 + 1.10525))
                     .epsilon(1e-15));
  CHECK(nx[0] == doctest::Approx(std::exp(0.1)).epsilon(1e-7));
}

TEST_CASE("LED decay tracks the analytic exponential to 1e-8") {
  const auto& s = registry_lookup("led");
  std::vector<double> x = {1.0}, nx(1), u;
  const std::vector<double> th = {1.0};
  const double dt = 0.01;
  for (int k = 0; k < 100; ++k) {
    sim::rk4_step<double>(s, x, u, u, u, dt, th, k * dt, nx, k);
    x = nx;
  }
  CHECK(std::abs(x[0] - std::exp(-1.0)) < 1e-8);
}

TEST_CASE("rollout clamps step count and dt") {
  CHECK(sim::rollout_steps(800) == 500);
  CHECK(sim::rollout_dt(30.0) == doctest::Approx(0.03));
  CHECK(sim::rollout_steps(100) == 100);
  CHECK(sim::rollout_dt(60.0) == doctest::Approx(1.0 / 60.0));

  const auto& s = registry_lookup("led");
  const std::vector<double> x0 = {1.0}, th = {0.5};
  const auto tr = sim::rollout_trajectory(s, x0, nullptr, th, 800, 30.0);
  CHECK(tr.samples() == 501);  // includes initial state
  CHECK(tr.timestamps[1] - tr.timestamps[0] == doctest::Approx(0.03));
  CHECK(tr.timestamps.back() == doctest::Approx(500 * 0.03));
}

TEST_CASE("small-angle pendulum period matches 2*pi*sqrt(L/g) within 1%") {
  const auto& s = registry_lookup("pendulum");
  const std::vector<double> th = {1.0, 1e-8};  // tau ~ 0 (clamp floor is 1e-4)
  std::vector<double> x = {0.05, 0.0}, nx(2), u;
  const double dt = 0.001;
  // the spacing between consecutive positive-going zero crossings is one period
  double prev = x[0];
  double t1 = -1.0, t2 = -1.0;
  for (int k = 1; k < 20000; ++k) {
    sim::rk4_step<double>(s, x, u, u, u, dt, th, k * dt, nx, k);
    if (prev < 0.0 && nx[0] >= 0.0) {
      if (t1 < 0.0)
        t1 = k * dt;
      else {
        t2 = k * dt;
        break;
      }
    }
    prev = nx[0];
    x = nx;
  }
  REQUIRE(t2 > 0.0);
  CHECK(t2 - t1 == doctest::Approx(2.0 * M_PI * std::sqrt(1.0 / dyn::kGravity)).epsilon(0.01));
}

TEST_CASE("global error on the damped pendulum shrinks at fourth order") {
  const auto& s = registry_lookup("pendulum");
  const std::vector<double> th = {0.9, 0.05};
  const double horizon = 2.0;

  auto final_angle = [&](double dt) {
    std::vector<double> x = {0.6, 0.0}, nx(2), u;
    const int steps = static_cast<int>(std::round(horizon / dt));
    for (int k = 0; k < steps; ++k) {
      sim::rk4_step<double>(s, x, u, u, u, dt, th, k * dt, nx, k);
      x = nx;
    }
    return x[0];
  };

  const double ref = final_angle(1e-4);
  const double e1 = std::abs(final_angle(0.02) - ref);
  const double e2 = std::abs(final_angle(0.01) - ref);
  const double e3 = std::abs(final_angle(0.005) - ref);
  const double r1 = std::log2(e1 / e2);
  const double r2 = std::log2(e2 / e3);
  CHECK(r1 > 3.7);
  CHECK(r1 < 4.3);
  CHECK(r2 > 3.7);
  CHECK(r2 < 4.3);
}

TEST_CASE("conservative pendulum rollback returns to the initial state") {
  const auto& s = registry_lookup("pendulum");
  const std::vector<double> th = {1.0, 1e-8};
  const double dt = 0.001;
  const int steps = 1000;
  std::vector<double> x = {0.4, 0.0}, nx(2), u;
  for (int k = 0; k < steps; ++k) {
    sim::rk4_step<double>(s, x, u, u, u, dt, th, k * dt, nx, k);
    x = nx;
  }
  // reverse time by flipping the velocity and integrating forward again
  x[1] = -x[1];
  for (int k = 0; k < steps; ++k) {
    sim::rk4_step<double>(s, x, u, u, u, dt, th, k * dt, nx, k);
    x = nx;
  }
  CHECK(std::abs(x[0] - 0.4) < 1e-6);
  CHECK(std::abs(-x[1] - 0.0) < 1e-6);
}

TEST_CASE("tape rollout gradients match finite differences for every system") {
  for (const auto& name : dyn::registry_names()) {
    CAPTURE(name);
    const auto& s = registry_lookup(name);
    std::vector<double> theta = s.theta_nominal;
    std::vector<double> x0 = s.default_x0;
    if (name == "pendulum") x0 = {0.4, 0.0};
    if (name == "free_fall") x0 = {1.0};
    if (name == "rotor") x0 = {0.5, 0.0, 0.275, 0.325};

    dyn::ForcingSignal forcing;
    const bool forced = s.forcing_dim > 0;
    if (forced) {
      forcing.width = s.forcing_dim;
      forcing.timestamps = {0.0, 5.0};
      forcing.values.assign(2 * static_cast<std::size_t>(s.forcing_dim), 1.0);
      if (name == "rover")
        forcing.values = {10.0, 9.0, 10.0, 12.0, 11.0, 12.0};
    }

    const int samples = 20;
    const double fps = 30.0;
    const std::size_t d = static_cast<std::size_t>(s.state_dim);

    auto final_sum = [&](std::span<const double> th) {
      const auto flat =
          sim::rollout<double>(s, x0, sim::InterpForcing{forced ? &forcing : nullptr}, th, samples, fps);
      double acc = 0.0;
      for (std::size_t i = 0; i < d; ++i) acc += flat[flat.size() - d + i];
      return acc;
    };

    Tape tape;
    std::vector<Value> th_leaves;
    for (double v : theta) th_leaves.push_back(tape.leaf(v));
    std::vector<Value> x0v(x0.begin(), x0.end());
    auto u_at = [&](double t, std::span<Value> out) {
      if (out.empty()) return;
      std::vector<double> tmp(out.size());
      forcing.interpolate(t, tmp);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = Value(tmp[i]);
    };
    const auto flat = sim::rollout<Value>(s, x0v, u_at, th_leaves, samples, fps);
    Value out(0.0);
    for (std::size_t i = 0; i < d; ++i) out += flat[flat.size() - d + i];
    const auto grads = tape.backward(out);

    for (std::size_t p = 0; p < theta.size(); ++p) {
      const double h = 1e-6 * std::max(1.0, std::abs(theta[p]));
      std::vector<double> tp = theta, tm = theta;
      tp[p] += h;
      tm[p] -= h;
      const double fd = (final_sum(tp) - final_sum(tm)) / (2.0 * h);
      const double an = grads.wrt(th_leaves[p]);
      const double rel = std::abs(an - fd) / std::max(1e-8, std::abs(an) + std::abs(fd));
      CAPTURE(s.param_names[p]);
      CHECK(rel < 1e-4);
    }
  }
}

TEST_CASE("non-finite states abort with step and component diagnostics") {
  // a rotor time constant far below the step size makes fixed-step RK4
  // unstable: the state grows without bound and overflows to inf
  const auto& s = registry_lookup("rotor");
  const std::vector<double> x0 = {0.1, 0.0, 0.0, 0.0};
  const std::vector<double> th = {1.1, 1.3, 0.91, 0.002};
  auto u_at = [](double, std::span<double> out) { out[0] = 1.0; };
  bool thrown = false;
  try {
    (void)sim::rollout<double>(s, x0, u_at, th, 500, 30.0);
  } catch (const sim::RolloutError& e) {
    thrown = true;
    CHECK(e.step >= 0);
    CHECK(e.component >= 0);
  }
  CHECK(thrown);
}

TEST_CASE("rollout validates inputs") {
  const auto& s = registry_lookup("led");
  const std::vector<double> x0 = {1.0}, th = {1.0};
  CHECK_THROWS_AS((void)sim::rollout<double>(s, x0, NoForcing{}, th, 10, 0.0),
                  std::invalid_argument);
  const std::vector<double> bad_x0 = {1.0, 2.0};
  CHECK_THROWS_AS((void)sim::rollout<double>(s, bad_x0, NoForcing{}, th, 10, 30.0),
                  std::invalid_argument);
}

TEST_SUITE_END();
