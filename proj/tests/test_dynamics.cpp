#include <cmath>
#include <vector>

#include "doctest.h"
#include "odefit/dynamics.hpp"
#include "odefit/integrator.hpp"

using namespace odefit;
using dyn::registry_lookup;
using dyn::rhs;

namespace {

std::vector<double> eval_rhs(const dyn::SystemSpec& s, std::vector<double> x,
                             std::vector<double> u, std::vector<double> theta, double t = 0.0) {
  std::vector<double> out(x.size());
  rhs<double>(s, x, u, theta, t, out);
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("dynamics");

TEST_CASE("pendulum equilibrium and quarter-swing") {
  const auto& s = registry_lookup("pendulum");
  CHECK(eval_rhs(s, {0.0, 0.0}, {}, {1.0, 0.1}) == std::vector<double>{0.0, 0.0});

  const auto d = eval_rhs(s, {M_PI / 2.0, 0.0}, {}, {1.0, 0.0});
  CHECK(d[0] == doctest::Approx(0.0));
  CHECK(d[1] == doctest::Approx(-9.81));
}

TEST_CASE("led decay: gamma=2, I=0.5 gives dI/dt=-1") {
  const auto& s = registry_lookup("led");
  CHECK(eval_rhs(s, {0.5}, {}, {2.0})[0] == doctest::Approx(-1.0));
}

TEST_CASE("torricelli: K=0.01, h=0.04 gives dh/dt=-0.002; empty tank absorbs") {
  const auto& s = registry_lookup("torricelli");
  CHECK(eval_rhs(s, {0.04}, {}, {0.01})[0] == doctest::Approx(-0.002));
  CHECK(eval_rhs(s, {0.0}, {}, {0.01})[0] == 0.0);
  CHECK(eval_rhs(s, {-1e-9}, {}, {0.01})[0] == 0.0);
}

TEST_CASE("sliding block: 30 degrees, mu=0.2") {
  const auto& s = registry_lookup("sliding_block");
  const double a = eval_rhs(s, {0.0}, {}, {30.0 * M_PI / 180.0, 0.2})[0];
  CHECK(a == doctest::Approx(3.2058).epsilon(1e-4));
}

TEST_CASE("rover kinematics: equal wheel speeds drive straight") {
  double v = 0.0, psi_dot = 1.0;
  dyn::rover_kinematics(0.2, 0.32, 10.0, 10.0, v, psi_dot);
  CHECK(v == doctest::Approx(2.0));
  CHECK(psi_dot == doctest::Approx(0.0));

  // the rover ODE derives its yaw rate from the same relation
  const auto& s = registry_lookup("rover");
  auto th = s.theta_nominal;
  const auto d = eval_rhs(s, {0.0, 0.0, 0.0, 0.0}, {10.0, 10.0, 0.0}, th);
  CHECK(d[2] == doctest::Approx(0.0));
}

TEST_CASE("rotor steady state: w = k_p * u has zero acceleration") {
  const auto& s = registry_lookup("rotor");
  const std::vector<double> th = s.theta_nominal;  // k_th, k_to, k_p, tau2
  const double u = 2.0;
  const double w_ss = th[2] * u;
  const auto d = eval_rhs(s, {w_ss, 0.0, th[0] * w_ss * w_ss, th[1] * w_ss * w_ss}, {u}, th);
  for (double di : d) CHECK(di == doctest::Approx(0.0));
}

TEST_CASE("registry dimensions and masks") {
  const auto& p = registry_lookup("pendulum");
  CHECK(p.state_dim == 2);
  CHECK(p.param_count() == 2);
  CHECK(p.measured == std::vector<bool>{true, false});

  const auto& led = registry_lookup("led");
  CHECK(led.state_dim == 1);
  CHECK(led.param_count() == 1);

  const auto& lor = registry_lookup("lorenz");
  CHECK(lor.state_dim == 3);
  CHECK(lor.param_count() == 3);
  CHECK(lor.param_names == std::vector<std::string>{"sigma", "rho", "beta"});

  CHECK_THROWS_AS((void)registry_lookup("not_a_system"), std::invalid_argument);
}

TEST_CASE("registry invariants: bounds bracket nominals") {
  for (const auto& name : dyn::registry_names()) {
    const auto& s = registry_lookup(name);
    for (int i = 0; i < s.param_count(); ++i) {
      CHECK(s.lower_bounds[i] > 0.0);
      CHECK(s.lower_bounds[i] < s.theta_nominal[i]);
      CHECK(s.theta_nominal[i] < s.upper_bounds[i]);
    }
    CHECK(std::count(s.measured.begin(), s.measured.end(), true) >= 1);
  }
}

TEST_CASE("rhs is pure and ignores the measurement mask") {
  auto s = registry_lookup("pendulum");
  const auto a = eval_rhs(s, {0.3, -0.2}, {}, {0.9, 0.05});
  const auto b = eval_rhs(s, {0.3, -0.2}, {}, {0.9, 0.05});
  CHECK(a == b);
  s.measured = {false, true};  // mask only affects the loss
  CHECK(eval_rhs(s, {0.3, -0.2}, {}, {0.9, 0.05}) == a);
}

TEST_CASE("dimension mismatches are rejected") {
  const auto& s = registry_lookup("pendulum");
  std::vector<double> out(2);
  std::vector<double> x1 = {0.1};
  std::vector<double> th = {0.9, 0.05};
  CHECK_THROWS_AS(rhs<double>(s, x1, {}, th, 0.0, out), std::invalid_argument);
  std::vector<double> x2 = {0.1, 0.0};
  std::vector<double> th1 = {0.9};
  CHECK_THROWS_AS(rhs<double>(s, x2, {}, th1, 0.0, out), std::invalid_argument);
}

TEST_CASE("torricelli trajectory is non-increasing and never negative") {
  const auto& s = registry_lookup("torricelli");
  const std::vector<double> x0 = {0.04};
  const std::vector<double> th = {0.03};
  // run far past the emptying time (2*sqrt(h0)/K = 13.3 s)
  std::vector<double> x = x0;
  std::vector<double> nx(1);
  const double dt = 0.01;
  std::vector<double> u;
  double prev = x[0];
  for (int k = 0; k < 2000; ++k) {
    sim::rk4_step<double>(s, x, u, u, u, dt, th, k * dt, nx, k);
    CHECK(nx[0] <= prev + 1e-15);
    CHECK(nx[0] >= 0.0);
    prev = nx[0];
    x = nx;
  }
  CHECK(x[0] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("damped pendulum loses mechanical energy along RK4 trajectories") {
  const auto& s = registry_lookup("pendulum");
  const double L = 0.9, tau = 0.08;
  const std::vector<double> th = {L, tau};
  std::vector<double> x = {0.6, 0.0}, nx(2);
  std::vector<double> u;
  const double dt = 0.01;
  auto energy = [&](const std::vector<double>& st) {
    return 0.5 * L * L * st[1] * st[1] + dyn::kGravity * L * (1.0 - std::cos(st[0]));
  };
  double e_prev = energy(x);
  for (int k = 0; k < 1500; ++k) {
    sim::rk4_step<double>(s, x, u, u, u, dt, th, k * dt, nx, k);
    const double e = energy(nx);
    CHECK(e <= e_prev + 1e-9);
    e_prev = e;
    x = nx;
  }
}

TEST_CASE("forcing interpolation clamps to endpoints") {
  dyn::ForcingSignal f;
  f.width = 2;
  f.timestamps = {0.0, 1.0, 3.0};
  f.values = {0.0, 10.0, 1.0, 20.0, 3.0, 40.0};
  f.validate();

  std::vector<double> out(2);
  f.interpolate(-1.0, out);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 10.0);
  f.interpolate(5.0, out);
  CHECK(out[0] == 3.0);
  CHECK(out[1] == 40.0);
  f.interpolate(2.0, out);
  CHECK(out[0] == doctest::Approx(2.0));
  CHECK(out[1] == doctest::Approx(30.0));

  dyn::ForcingSignal bad = f;
  bad.timestamps[1] = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("registry json round trip with overrides") {
  const std::string dump = dyn::registry_json();
  CHECK(dump.find("pendulum") != std::string::npos);
  CHECK(dump.find("theta_nominal") != std::string::npos);

  const auto custom = dyn::spec_from_json(
      R"({"kind":"pendulum","name":"short_pendulum","theta_nominal":[0.45,0.05]})");
  CHECK(custom.name == "short_pendulum");
  CHECK(custom.theta_nominal[0] == doctest::Approx(0.45));
  CHECK(custom.id == dyn::SystemId::Pendulum);

  CHECK_THROWS(dyn::spec_from_json(R"({"kind":"pendulum","theta_nominal":[9.0,0.05]})"));
}

TEST_CASE("free fall approaches terminal velocity from rest") {
  const auto& s = registry_lookup("free_fall");
  const std::vector<double> th = {9.8};
  const double k = s.fixed_at("k_drag");
  std::vector<double> x = {0.0}, nx(1);
  std::vector<double> u;
  for (int i = 0; i < 4000; ++i) {
    sim::rk4_step<double>(s, x, u, u, u, 0.01, th, i * 0.01, nx, i);
    x = nx;
  }
  CHECK(x[0] == doctest::Approx(std::sqrt(9.8 / k)).epsilon(1e-3));
}

TEST_SUITE_END();
