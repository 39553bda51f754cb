#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "odefit/dynamics.hpp"
#include "odefit/ingest.hpp"
#include "odefit/integrator.hpp"
#include "odefit/ltcnet.hpp"
#include "odefit/objective.hpp"
#include "odefit/rng.hpp"

// End-to-end training: the network reads windows of the spatially-encoded
// observations, its averaged readout is denormalized into physical
// parameters, a differentiable rollout replays the system, and the
// trajectory mismatch drives AdamW under a cosine warm-restart schedule.
//
// The per-window forward/backward work inside a batch is independent; the
// batch gradient kernel runs it either serially or across OpenMP threads.
// Both paths reduce per-window gradients in window order and are
// bit-identical.

namespace odefit::train {

struct TrainConfig {
  int window = 16;
  int stride = 1;
  int batch = 32;
  int patience = 40;           // epochs without trajectory-loss improvement
  double lr = 5e-3;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int cosine_t0 = 10;
  int cosine_t_mult = 2;
  double lr_min = 1e-6;
  double dropout = 0.3;
  std::uint64_t seed = 42;
  int max_epochs = 500;
  double lambda_param = 1.0;
  loss::PenaltyWeights penalty;
  bool parallel = true;  // OpenMP batch kernel; false selects the serial reference
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --- building blocks ----------------------------------------------------------

// Start indices of length-`window` windows, stride apart. Throws when the
// series is shorter than one window.
std::vector<int> make_windows(int series_len, int window, int stride);

struct Zscore {
  std::vector<double> mean, stddev;
  std::vector<bool> degenerate;  // stddev below 1e-8, replaced by 1
};

Zscore zscore_fit(std::span<const double> data, int width);
std::vector<double> zscore_apply(std::span<const double> data, const Zscore& z);
std::vector<double> zscore_invert(std::span<const double> data, const Zscore& z);

// Warm-restart cosine schedule with cycle lengths T0, T0*mult, ...
double cosine_lr(int epoch, const TrainConfig& cfg);

struct AdamState {
  std::vector<double> m, v;
  long step = 0;
};

// Decoupled weight decay: w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + wd * w).
void adamw_step(std::span<double> weights, std::span<const double> grads, AdamState& state,
                const TrainConfig& cfg, double lr);

// --- fit problem ----------------------------------------------------------------

// Calibration-head slot layout: constant offsets for flagged measured
// channels, initial values for unmeasured channels, and the audio prior when
// it is learned rather than supplied.
struct CalibSlots {
  std::vector<int> offset_slot;  // per state, -1 when none
  std::vector<int> x0_slot;      // per state, -1 when none
  int alpha_slot = -1;
  int beta_slot = -1;
  int count = 0;
  std::vector<std::string> names;
};

struct FitInputs {
  ingest::AlignedFeatures features;  // network view of the observations
  std::vector<double> obs_t;         // native observation grid
  std::vector<double> obs_states;    // obs_t.size() x D, NaN where unmeasured
  double fps = 0.0;
  dyn::ForcingSignal forcing;        // known forcing channels (width 0 = none)
  std::vector<double> audio_t;       // tone series for the learnable prior
  std::vector<double> audio_peak;
  std::vector<int> audio_forcing_channels;  // forcing channels fed by audio speed
};

struct FitOptions {
  std::vector<double> nominal_override;  // empty keeps the registry nominals
  bool learn_audio_prior = false;
  ingest::AudioPrior audio_prior;        // fixed values, or bias init when learned
  std::map<std::string, double> calib_init;  // slot name -> readout bias init
};

// Everything the training loop needs, precomputed: z-scored network inputs,
// observations interpolated onto the rollout grid, slot layout.
struct FitProblem {
  const dyn::SystemSpec* system = nullptr;
  std::vector<double> nominal;
  CalibSlots slots;

  std::vector<double> net_inputs;  // kSpatialSamples x kInputDim, z-scored
  Zscore input_scaling;
  double dt_cell = 0.0;

  int t_sim = 0;
  double dt = 0.0;
  double t0 = 0.0;
  std::vector<double> obs_grid;  // (t_sim+1) x D on the rollout grid

  dyn::ForcingSignal forcing;  // fixed channels (width == system->forcing_dim or 0)
  bool learn_audio_prior = false;
  ingest::AudioPrior audio_prior;
  std::vector<double> audio_t, audio_peak;
  std::vector<int> audio_forcing_channels;
};

FitProblem build_problem(const dyn::SystemSpec& system, const FitInputs& inputs,
                         const FitOptions& options);

// --- training --------------------------------------------------------------------

struct BatchResult {
  loss::LossBreakdown loss;
  std::vector<double> grad;  // d total / d weight, flat model layout
};

// One optimizer step's worth of gradient over the given windows. Pass 1 runs
// the plain-double forward per window to obtain the batch-mean readout;
// the rollout loss and its seed gradients live on a small master tape; pass 2
// re-records each window on its own tape and back-propagates the seeds into
// weight gradients, reduced in window order.
BatchResult batch_gradient(const net::LtcModel& model, const FitProblem& problem,
                           std::span<const int> window_starts,
                           std::span<const std::uint8_t> dropout_masks, const TrainConfig& cfg);

struct Evaluation {
  std::vector<double> theta_bar;
  std::vector<double> theta_hat;
  std::vector<double> calib;
  loss::LossBreakdown loss;
};

// Dropout-free readout over all windows followed by a double-precision
// rollout; the quantity tracked for early stopping and reporting.
Evaluation evaluate(const net::LtcModel& model, const FitProblem& problem,
                    const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_total = 0.0;  // mean over batch steps
  double traj = 0.0;         // evaluation losses
  double penalty = 0.0;
  double total = 0.0;
};

struct EstimateReport {
  std::vector<std::string> param_names;
  std::vector<double> theta_hat;
  std::vector<double> theta_bar;
  std::vector<std::string> calib_names;
  std::vector<double> calib_hat;
  std::vector<EpochStats> curve;
  std::uint64_t seed = 0;
  int epochs_run = 0;
  int best_epoch = -1;
  double best_traj = 0.0;
  double wall_seconds = 0.0;
  net::LtcModel best_model;
};

EstimateReport train(const dyn::SystemSpec& system, const FitInputs& inputs,
                     const FitOptions& options, const TrainConfig& cfg);

}  // namespace odefit::train
