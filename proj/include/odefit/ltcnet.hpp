#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "odefit/autodiff.hpp"
#include "odefit/rng.hpp"

// Liquid time-constant recurrent cell with a dense readout head. The cell
// integrates   dh_i/dt = -h_i (1/tau_i + f_i) + f_i A_i   with an
// input-dependent gate f_i, using fused semi-implicit sub-steps that keep
// hidden states bounded for positive tau. The readout maps hidden states to
// sigmoid-normalized parameter estimates plus non-negative (ReLU) calibration
// invariants, averaged over time.

namespace odefit::net {

constexpr int kHiddenDim = 64;
constexpr int kInputDim = 100;
constexpr int kOdeUnfolds = 6;
constexpr double kFusedEps = 1e-8;
constexpr double kDenormSpan = 95.0 / 100.0;

// All trainable weights live in one flat array so the optimizer and the
// gradient accumulation can treat the model as a single vector. Section
// offsets are fixed by (hidden, input, n_param, n_calib).
struct LtcModel {
  int hidden = kHiddenDim;
  int input = kInputDim;
  int n_param = 0;  // K sigmoid outputs
  int n_calib = 0;  // C ReLU outputs
  double dropout_p = 0.3;
  std::vector<double> w;

  // section offsets into w
  std::size_t off_w_rec() const { return 0; }
  std::size_t off_w_in() const { return off_w_rec() + static_cast<std::size_t>(hidden) * hidden; }
  std::size_t off_bias() const { return off_w_in() + static_cast<std::size_t>(hidden) * input; }
  std::size_t off_gain() const { return off_bias() + static_cast<std::size_t>(hidden); }
  std::size_t off_log_tau() const { return off_gain() + static_cast<std::size_t>(hidden); }
  std::size_t off_w_param() const { return off_log_tau() + static_cast<std::size_t>(hidden); }
  std::size_t off_b_param() const { return off_w_param() + static_cast<std::size_t>(n_param) * hidden; }
  std::size_t off_w_calib() const { return off_b_param() + static_cast<std::size_t>(n_param); }
  std::size_t off_b_calib() const { return off_w_calib() + static_cast<std::size_t>(n_calib) * hidden; }
  std::size_t weight_count() const { return off_b_calib() + static_cast<std::size_t>(n_calib); }

  double* b_calib() { return w.data() + off_b_calib(); }
};

// Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, tau drawn in [0.5, 2.0]
// and stored as log-parameters so it stays positive under gradient steps.
LtcModel init_model(int n_param, int n_calib, Rng& rng);

// --- checkpoint io (flat key -> array, bit-exact reload) ---------------------

void save_checkpoint(const std::string& path, const LtcModel& model,
                     std::uint64_t seed, int epoch);
LtcModel load_checkpoint(const std::string& path, std::uint64_t* seed_out = nullptr,
                         int* epoch_out = nullptr);

// --- tape forward -----------------------------------------------------------

// Model weights registered as tape leaves. Staging must happen on a fresh
// tape: leaf node ids then equal the flat weight indices, which is what maps
// gradients back to the weight vector.
struct TapedModel {
  const LtcModel* model = nullptr;
  std::vector<ad::Value> w;        // leaves, same layout as LtcModel::w
  std::vector<ad::Value> inv_tau;  // exp(-log_tau), cached per staging

  std::span<const ad::Value> w_rec_row(int i) const {
    return {w.data() + model->off_w_rec() + static_cast<std::size_t>(i) * model->hidden,
            static_cast<std::size_t>(model->hidden)};
  }
  std::span<const ad::Value> w_in_row(int i) const {
    return {w.data() + model->off_w_in() + static_cast<std::size_t>(i) * model->input,
            static_cast<std::size_t>(model->input)};
  }
};

TapedModel stage(ad::Tape& tape, const LtcModel& model);

// One inter-sample update: kOdeUnfolds fused semi-implicit sub-steps of size
// dt_cell = interval / kOdeUnfolds. x_in holds the (already normalized)
// network input for this sample. Throws on non-finite hidden states.
std::vector<ad::Value> ltc_unfold(ad::Tape& tape, const TapedModel& tm,
                                  std::span<const ad::Value> h,
                                  std::span<const double> x_in, double dt_cell);

struct Readout {
  std::vector<ad::Value> theta_bar;  // K values in (0,1)
  std::vector<ad::Value> calib;      // C values >= 0
};

// Per-timestep readout averaged over the sequence. `dropout` holds one byte
// per (timestep, unit); pass empty for inference (no dropout).
Readout readout(ad::Tape& tape, const TapedModel& tm,
                std::span<const ad::Value> hidden_seq, int timesteps,
                std::span<const std::uint8_t> dropout, double dropout_p);

// Eq-style denormalization: theta_k = (1 + (0.5 - theta_bar_k) * 0.95) * nominal_k.
// Strictly decreasing in theta_bar; the output covers [0.525, 1.475]*nominal.
std::vector<ad::Value> denormalize(std::span<const ad::Value> theta_bar,
                                   std::span<const double> nominal);
inline double denormalize_one(double theta_bar, double nominal) {
  return (1.0 + (0.5 - theta_bar) * kDenormSpan) * nominal;
}

// --- plain double forward (inference, finite-difference oracles) -------------

void ltc_unfold_d(const LtcModel& m, std::span<const double> w, std::span<double> h,
                  std::span<const double> x_in, double dt_cell);

struct ReadoutD {
  std::vector<double> theta_bar;
  std::vector<double> calib;
};

// Inference readout (dropout disabled) over a hidden sequence laid out
// (timesteps x hidden).
ReadoutD readout_d(const LtcModel& m, std::span<const double> w,
                   std::span<const double> hidden_seq, int timesteps);

}  // namespace odefit::net
