#include <cmath>
#include <cstdio>
#include <vector>

#include "doctest.h"
#include "odefit/ltcnet.hpp"
#include "odefit/rng.hpp"

using namespace odefit;
using ad::Tape;
using ad::Value;

namespace {

std::vector<double> zero_input() { return std::vector<double>(net::kInputDim, 0.0); }

// Plain-double forward of (unfold over `steps` inputs -> readout -> denormalize
// -> sum of squares). Used as the finite-difference oracle.
double forward_scalar(const net::LtcModel& m, std::span<const double> w,
                      const std::vector<std::vector<double>>& inputs, double dt_cell,
                      std::span<const double> nominal) {
  const std::size_t hd = static_cast<std::size_t>(m.hidden);
  std::vector<double> h(hd, 0.0);
  std::vector<double> hidden_seq;
  for (const auto& x : inputs) {
    net::ltc_unfold_d(m, w, h, x, dt_cell);
    hidden_seq.insert(hidden_seq.end(), h.begin(), h.end());
  }
  const auto ro = net::readout_d(m, w, hidden_seq, static_cast<int>(inputs.size()));
  double acc = 0.0;
  for (std::size_t k = 0; k < ro.theta_bar.size(); ++k) {
    const double th = net::denormalize_one(ro.theta_bar[k], nominal[k]);
    acc += th * th;
  }
  for (double c : ro.calib) acc += 0.5 * c * c;
  return acc;
}

}  // namespace

TEST_SUITE_BEGIN("ltcnet");

TEST_CASE("zero drive gain turns the cell into a pure leak") {
  Rng rng(42);
  net::LtcModel m = net::init_model(2, 0, rng);
  for (int i = 0; i < m.hidden; ++i) m.w[m.off_gain() + static_cast<std::size_t>(i)] = 0.0;

  std::vector<double> h(static_cast<std::size_t>(m.hidden));
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = (i % 2 == 0) ? 0.8 : -0.5;
  const auto x = zero_input();

  std::vector<double> prev = h;
  for (int t = 0; t < 50; ++t) {
    net::ltc_unfold_d(m, m.w, h, x, 0.05);
    for (std::size_t i = 0; i < h.size(); ++i) {
      CHECK(std::abs(h[i]) <= std::abs(prev[i]) + 1e-15);
      CHECK(h[i] * prev[i] >= 0.0);  // no sign flips, monotone shrink
    }
    prev = h;
  }
  for (double v : h) CHECK(std::abs(v) < 0.8);
}

TEST_CASE("h = 0 with zero gain is a fixed point") {
  Rng rng(43);
  net::LtcModel m = net::init_model(1, 0, rng);
  for (int i = 0; i < m.hidden; ++i) m.w[m.off_gain() + static_cast<std::size_t>(i)] = 0.0;
  std::vector<double> h(static_cast<std::size_t>(m.hidden), 0.0);
  const auto x = zero_input();
  for (int t = 0; t < 20; ++t) net::ltc_unfold_d(m, m.w, h, x, 0.05);
  for (double v : h) CHECK(v == 0.0);
}

TEST_CASE("fused update keeps hidden states bounded under random inputs") {
  Rng rng(4242);
  net::LtcModel m = net::init_model(2, 1, rng);
  const double max_gain = [&] {
    double g = 0.0;
    for (int i = 0; i < m.hidden; ++i)
      g = std::max(g, std::abs(m.w[m.off_gain() + static_cast<std::size_t>(i)]));
    return g;
  }();

  std::vector<double> h(static_cast<std::size_t>(m.hidden), 0.0);
  std::vector<double> x(net::kInputDim);
  const double h0_max = 0.0;
  double observed = 0.0;
  for (int t = 0; t < 10000; ++t) {
    for (auto& v : x) v = rng.uniform(-0.1, 0.1);  // ||x|| <= 1
    net::ltc_unfold_d(m, m.w, h, x, 0.07);
    for (double v : h) observed = std::max(observed, std::abs(v));
  }
  CHECK(observed <= max_gain + h0_max + 1e-12);
}

TEST_CASE("readout of a constant hidden sequence equals the single-step readout") {
  Rng rng(7);
  net::LtcModel m = net::init_model(3, 2, rng);
  const std::size_t hd = static_cast<std::size_t>(m.hidden);
  std::vector<double> h(hd);
  for (auto& v : h) v = rng.uniform(-1, 1);

  std::vector<double> seq1 = h;
  std::vector<double> seq5;
  for (int t = 0; t < 5; ++t) seq5.insert(seq5.end(), h.begin(), h.end());

  const auto r1 = net::readout_d(m, m.w, seq1, 1);
  const auto r5 = net::readout_d(m, m.w, seq5, 5);
  for (std::size_t k = 0; k < r1.theta_bar.size(); ++k)
    CHECK(r5.theta_bar[k] == doctest::Approx(r1.theta_bar[k]).epsilon(1e-14));
  for (std::size_t c = 0; c < r1.calib.size(); ++c)
    CHECK(r5.calib[c] == doctest::Approx(r1.calib[c]).epsilon(1e-14));
}

TEST_CASE("zero readout weights give theta_bar = 0.5 and calib = 0") {
  Rng rng(8);
  net::LtcModel m = net::init_model(2, 2, rng);
  std::fill(m.w.begin() + static_cast<long>(m.off_w_param()), m.w.end(), 0.0);
  std::vector<double> seq(static_cast<std::size_t>(m.hidden) * 3, 0.4);
  const auto r = net::readout_d(m, m.w, seq, 3);
  for (double tb : r.theta_bar) CHECK(tb == doctest::Approx(0.5));
  for (double c : r.calib) CHECK(c == 0.0);
}

TEST_CASE("temporal averaging is permutation invariant") {
  Rng rng(9);
  net::LtcModel m = net::init_model(2, 1, rng);
  const std::size_t hd = static_cast<std::size_t>(m.hidden);
  std::vector<double> seq(hd * 4);
  for (auto& v : seq) v = rng.uniform(-1, 1);

  std::vector<double> perm(seq.size());
  const int order[4] = {2, 0, 3, 1};
  for (int t = 0; t < 4; ++t)
    std::copy(seq.begin() + order[t] * static_cast<long>(hd),
              seq.begin() + (order[t] + 1) * static_cast<long>(hd),
              perm.begin() + t * static_cast<long>(hd));

  const auto a = net::readout_d(m, m.w, seq, 4);
  const auto b = net::readout_d(m, m.w, perm, 4);
  for (std::size_t k = 0; k < a.theta_bar.size(); ++k)
    CHECK(a.theta_bar[k] == doctest::Approx(b.theta_bar[k]).epsilon(1e-13));
}

TEST_CASE("denormalization midpoint, extremes, and the worked example") {
  CHECK(net::denormalize_one(0.5, 0.90) == 0.90);
  CHECK(net::denormalize_one(0.0, 2.0) == doctest::Approx(1.475 * 2.0));
  CHECK(net::denormalize_one(1.0, 2.0) == doctest::Approx(0.525 * 2.0));
  CHECK(net::denormalize_one(0.5211, 0.90) == doctest::Approx(0.882).epsilon(2e-4));
}

TEST_CASE("denormalization is strictly decreasing and spans [0.525, 1.475]*nominal") {
  const double nom = 1.3;
  double prev = net::denormalize_one(0.0, nom);
  CHECK(prev == doctest::Approx(1.475 * nom));
  for (int i = 1; i <= 1000; ++i) {
    const double tb = static_cast<double>(i) / 1000.0;
    const double th = net::denormalize_one(tb, nom);
    CHECK(th < prev);
    CHECK(th >= 0.525 * nom - 1e-12);
    CHECK(th <= 1.475 * nom + 1e-12);
    prev = th;
  }
}

TEST_CASE("tape forward equals the double forward") {
  Rng rng(11);
  net::LtcModel m = net::init_model(2, 1, rng);
  const std::vector<double> nominal = {0.9, 0.05};

  std::vector<std::vector<double>> inputs;
  for (int t = 0; t < 4; ++t) {
    std::vector<double> x(net::kInputDim, 0.0);
    x[0] = std::sin(0.3 * t);
    x[1] = std::cos(0.3 * t);
    inputs.push_back(x);
  }
  const double dt_cell = 0.02;

  Tape tape;
  const auto tm = net::stage(tape, m);
  std::vector<Value> h(static_cast<std::size_t>(m.hidden), Value(0.0));
  std::vector<Value> hidden_seq;
  for (const auto& x : inputs) {
    h = net::ltc_unfold(tape, tm, h, x, dt_cell);
    hidden_seq.insert(hidden_seq.end(), h.begin(), h.end());
  }
  const auto ro = net::readout(tape, tm, hidden_seq, static_cast<int>(inputs.size()), {}, m.dropout_p);
  const auto th = net::denormalize(ro.theta_bar, nominal);

  std::vector<double> hd(static_cast<std::size_t>(m.hidden), 0.0);
  std::vector<double> seq_d;
  for (const auto& x : inputs) {
    net::ltc_unfold_d(m, m.w, hd, x, dt_cell);
    seq_d.insert(seq_d.end(), hd.begin(), hd.end());
  }
  const auto ro_d = net::readout_d(m, m.w, seq_d, static_cast<int>(inputs.size()));

  for (std::size_t k = 0; k < ro.theta_bar.size(); ++k) {
    CHECK(ro.theta_bar[k].value() == doctest::Approx(ro_d.theta_bar[k]).epsilon(1e-14));
    CHECK(th[k].value() ==
          doctest::Approx(net::denormalize_one(ro_d.theta_bar[k], nominal[k])).epsilon(1e-14));
  }
  for (std::size_t c = 0; c < ro.calib.size(); ++c)
    CHECK(ro.calib[c].value() == doctest::Approx(ro_d.calib[c]).epsilon(1e-14));
}

TEST_CASE("loss gradient through unfold+readout+denormalize matches finite differences") {
  Rng rng(13);
  net::LtcModel m = net::init_model(2, 1, rng);
  const std::vector<double> nominal = {0.9, 0.05};
  std::vector<std::vector<double>> inputs;
  for (int t = 0; t < 3; ++t) {
    std::vector<double> x(net::kInputDim, 0.0);
    for (int j = 0; j < 5; ++j) x[static_cast<std::size_t>(j)] = std::sin(0.2 * (t + j));
    inputs.push_back(x);
  }
  const double dt_cell = 0.03;

  Tape tape;
  const auto tm = net::stage(tape, m);
  std::vector<Value> h(static_cast<std::size_t>(m.hidden), Value(0.0));
  std::vector<Value> hidden_seq;
  for (const auto& x : inputs) {
    h = net::ltc_unfold(tape, tm, h, x, dt_cell);
    hidden_seq.insert(hidden_seq.end(), h.begin(), h.end());
  }
  const auto ro = net::readout(tape, tm, hidden_seq, static_cast<int>(inputs.size()), {}, m.dropout_p);
  const auto th = net::denormalize(ro.theta_bar, nominal);
  Value loss(0.0);
  for (const auto& t : th) loss += t * t;
  for (const auto& c : ro.calib) loss += 0.5 * c * c;
  const auto grads = tape.backward(loss);

  // spot-check a deterministic subset of weights against central differences
  Rng pick(1);
  std::vector<double> w = m.w;
  for (int rep = 0; rep < 150; ++rep) {
    const std::size_t i = static_cast<std::size_t>(pick.below(w.size()));
    const double h_fd = 1e-5 * std::max(1.0, std::abs(w[i]));
    const double keep = w[i];
    w[i] = keep + h_fd;
    const double fp = forward_scalar(m, w, inputs, dt_cell, nominal);
    w[i] = keep - h_fd;
    const double fm = forward_scalar(m, w, inputs, dt_cell, nominal);
    w[i] = keep;
    const double fd = (fp - fm) / (2.0 * h_fd);
    const double an = grads.wrt_node(static_cast<std::int32_t>(i));
    const double rel = std::abs(an - fd) / std::max(1e-8, std::abs(an) + std::abs(fd));
    CAPTURE(i);
    CHECK(rel < 1e-4);
  }
}

TEST_CASE("checkpoints reload bit-exactly") {
  Rng rng(123);
  net::LtcModel m = net::init_model(3, 2, rng);
  const std::string path = "test_checkpoint.bin";
  net::save_checkpoint(path, m, 987654321u, 42);

  std::uint64_t seed = 0;
  int epoch = -1;
  const net::LtcModel r = net::load_checkpoint(path, &seed, &epoch);
  CHECK(seed == 987654321u);
  CHECK(epoch == 42);
  CHECK(r.hidden == m.hidden);
  CHECK(r.input == m.input);
  CHECK(r.n_param == m.n_param);
  CHECK(r.n_calib == m.n_calib);
  REQUIRE(r.w.size() == m.w.size());
  for (std::size_t i = 0; i < m.w.size(); ++i) CHECK(r.w[i] == m.w[i]);
  std::remove(path.c_str());
}

TEST_CASE("tau stays positive through the log parameterization") {
  Rng rng(5);
  net::LtcModel m = net::init_model(1, 0, rng);
  // even after aggressive negative updates, exp keeps tau > 0
  for (int i = 0; i < m.hidden; ++i) m.w[m.off_log_tau() + static_cast<std::size_t>(i)] = -50.0;
  Tape tape;
  const auto tm = net::stage(tape, m);
  for (const auto& it : tm.inv_tau) CHECK(it.value() > 0.0);
}

TEST_SUITE_END();
