#include "odefit/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace odefit::train {

namespace {

constexpr double kAlphaFloor = 1e-3;  // guards the learnable audio prior inversion

double interp1(std::span<const double> t, std::span<const double> v, double at) {
  if (at <= t.front()) return v.front();
  if (at >= t.back()) return v.back();
  const auto it = std::upper_bound(t.begin(), t.end(), at);
  const std::size_t hi = static_cast<std::size_t>(it - t.begin());
  const std::size_t lo = hi - 1;
  const double f = (at - t[lo]) / (t[hi] - t[lo]);
  return (1.0 - f) * v[lo] + f * v[hi];
}

}  // namespace

// --- building blocks --------------------------------------------------------

std::vector<int> make_windows(int series_len, int window, int stride) {
  if (window < 1 || stride < 1) throw std::invalid_argument("make_windows: bad window/stride");
  if (series_len < window)
    throw std::invalid_argument("make_windows: series shorter than one window (" +
                                std::to_string(series_len) + " < " + std::to_string(window) + ")");
  std::vector<int> starts;
  for (int s = 0; s + window <= series_len; s += stride) starts.push_back(s);
  return starts;
}

Zscore zscore_fit(std::span<const double> data, int width) {
  const std::size_t w = static_cast<std::size_t>(width);
  const std::size_t rows = data.size() / w;
  Zscore z;
  z.mean.assign(w, 0.0);
  z.stddev.assign(w, 1.0);
  z.degenerate.assign(w, false);
  if (rows == 0) return z;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) z.mean[c] += data[r * w + c];
  for (std::size_t c = 0; c < w; ++c) z.mean[c] /= static_cast<double>(rows);
  std::vector<double> var(w, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double d = data[r * w + c] - z.mean[c];
      var[c] += d * d;
    }
  for (std::size_t c = 0; c < w; ++c) {
    const double sd = std::sqrt(var[c] / static_cast<double>(rows));
    if (sd < 1e-8) {
      z.degenerate[c] = true;  // constant channel, standardized to zero
      z.stddev[c] = 1.0;
    } else {
      z.stddev[c] = sd;
    }
  }
  return z;
}

std::vector<double> zscore_apply(std::span<const double> data, const Zscore& z) {
  const std::size_t w = z.mean.size();
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t c = i % w;
    out[i] = (data[i] - z.mean[c]) / z.stddev[c];
  }
  return out;
}

std::vector<double> zscore_invert(std::span<const double> data, const Zscore& z) {
  const std::size_t w = z.mean.size();
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t c = i % w;
    out[i] = data[i] * z.stddev[c] + z.mean[c];
  }
  return out;
}

double cosine_lr(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("cosine_lr: negative epoch");
  long cycle_len = cfg.cosine_t0;
  long e = epoch;
  while (e >= cycle_len) {
    e -= cycle_len;
    cycle_len *= cfg.cosine_t_mult;
    if (cycle_len <= 0) throw std::invalid_argument("cosine_lr: bad cycle multiplier");
  }
  const double frac = static_cast<double>(e) / static_cast<double>(cycle_len);
  return cfg.lr_min + (cfg.lr - cfg.lr_min) * 0.5 * (1.0 + std::cos(M_PI * frac));
}

void adamw_step(std::span<double> weights, std::span<const double> grads, AdamState& state,
                const TrainConfig& cfg, double lr) {
  const std::size_t n = weights.size();
  if (grads.size() != n) throw std::invalid_argument("adamw_step: shape mismatch");
  if (state.m.size() != n) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
    state.step = 0;
  }
  state.step += 1;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    weights[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.adam_eps) + cfg.weight_decay * weights[i]);
  }
}

// --- fit problem --------------------------------------------------------------

namespace {

CalibSlots build_slots(const dyn::SystemSpec& sys, const FitOptions& opt) {
  CalibSlots s;
  const int d = sys.state_dim;
  s.offset_slot.assign(static_cast<std::size_t>(d), -1);
  s.x0_slot.assign(static_cast<std::size_t>(d), -1);
  for (int i = 0; i < d; ++i) {
    const std::size_t ii = static_cast<std::size_t>(i);
    if (sys.measured[ii] && sys.offset_calibrated[ii]) {
      s.offset_slot[ii] = s.count++;
      s.names.push_back("offset_" + sys.state_names[ii]);
    }
  }
  for (int i = 0; i < d; ++i) {
    const std::size_t ii = static_cast<std::size_t>(i);
    if (!sys.measured[ii]) {
      s.x0_slot[ii] = s.count++;
      s.names.push_back("x0_" + sys.state_names[ii]);
    }
  }
  if (opt.learn_audio_prior) {
    s.alpha_slot = s.count++;
    s.names.push_back("audio_alpha");
    s.beta_slot = s.count++;
    s.names.push_back("audio_beta");
  }
  return s;
}

}  // namespace

FitProblem build_problem(const dyn::SystemSpec& system, const FitInputs& inputs,
                         const FitOptions& options) {
  FitProblem p;
  p.system = &system;
  p.nominal = options.nominal_override.empty() ? system.theta_nominal : options.nominal_override;
  if (static_cast<int>(p.nominal.size()) != system.param_count())
    throw std::invalid_argument("build_problem: nominal override size mismatch");
  p.slots = build_slots(system, options);

  const std::size_t d = static_cast<std::size_t>(system.state_dim);
  const std::size_t t_obs = inputs.obs_t.size();
  if (t_obs < 2) throw std::invalid_argument("build_problem: need at least two observations");
  if (inputs.obs_states.size() != t_obs * d)
    throw std::invalid_argument("build_problem: observation size mismatch");

  // network inputs: z-scored spatial encoding, embedded left-aligned into the
  // fixed-width input vector
  const int fw = inputs.features.width();
  if (fw <= 0 || fw > net::kInputDim)
    throw std::invalid_argument("build_problem: feature width must be in [1, input_dim]");
  if (inputs.features.encoded.size() !=
      static_cast<std::size_t>(ingest::kSpatialSamples) * static_cast<std::size_t>(fw))
    throw std::invalid_argument("build_problem: encoded feature size mismatch");
  p.input_scaling = zscore_fit(inputs.features.encoded, fw);
  const auto scaled = zscore_apply(inputs.features.encoded, p.input_scaling);
  p.net_inputs.assign(static_cast<std::size_t>(ingest::kSpatialSamples) * net::kInputDim, 0.0);
  for (int k = 0; k < ingest::kSpatialSamples; ++k)
    for (int c = 0; c < fw; ++c)
      p.net_inputs[static_cast<std::size_t>(k) * net::kInputDim + static_cast<std::size_t>(c)] =
          scaled[static_cast<std::size_t>(k) * static_cast<std::size_t>(fw) +
                 static_cast<std::size_t>(c)];

  const double feat_span = inputs.features.timestamps.back() - inputs.features.timestamps.front();
  if (!(feat_span > 0.0)) throw std::invalid_argument("build_problem: degenerate feature span");
  p.dt_cell = feat_span / (ingest::kSpatialSamples - 1) / net::kOdeUnfolds;

  // rollout grid and the observations interpolated onto it
  const double fps = inputs.fps > 0.0 ? inputs.fps : inputs.features.fps;
  p.t_sim = sim::rollout_steps(static_cast<int>(t_obs)) ;
  p.dt = sim::rollout_dt(fps);
  p.t0 = inputs.obs_t.front();
  p.obs_grid.assign((static_cast<std::size_t>(p.t_sim) + 1) * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    if (!system.measured[i]) continue;
    std::vector<double> col(t_obs);
    for (std::size_t k = 0; k < t_obs; ++k) {
      col[k] = inputs.obs_states[k * d + i];
      if (!std::isfinite(col[k]))
        throw std::invalid_argument("build_problem: non-finite observation on measured channel " +
                                    system.state_names[i]);
    }
    for (int k = 0; k <= p.t_sim; ++k)
      p.obs_grid[static_cast<std::size_t>(k) * d + i] = interp1(inputs.obs_t, col, p.t0 + k * p.dt);
  }

  // forcing: fixed channels now, audio channels either baked in (fixed prior)
  // or left symbolic (learned prior)
  p.learn_audio_prior = options.learn_audio_prior;
  p.audio_prior = options.audio_prior;
  p.audio_t = inputs.audio_t;
  p.audio_peak = inputs.audio_peak;
  p.audio_forcing_channels = inputs.audio_forcing_channels;
  for (int ch : p.audio_forcing_channels)
    if (ch < 0 || ch >= system.forcing_dim)
      throw std::invalid_argument("build_problem: audio forcing channel out of range");
  if (!p.audio_forcing_channels.empty() && p.audio_t.size() < 2)
    throw std::invalid_argument("build_problem: audio forcing requested without a tone series");

  if (system.forcing_dim > 0) {
    if (inputs.forcing.width == 0) {
      p.forcing.width = system.forcing_dim;
      p.forcing.timestamps = {p.t0, p.t0 + p.t_sim * p.dt + 1.0};
      p.forcing.values.assign(2 * static_cast<std::size_t>(system.forcing_dim), 0.0);
    } else {
      if (inputs.forcing.width != system.forcing_dim)
        throw std::invalid_argument("build_problem: forcing width mismatch");
      inputs.forcing.validate();
      p.forcing = inputs.forcing;
    }
    if (!p.learn_audio_prior && !p.audio_forcing_channels.empty()) {
      if (p.audio_prior.alpha == 0.0)
        throw std::invalid_argument("build_problem: fixed audio prior requires alpha != 0");
      // bake the audio-derived speed into the forcing signal on the tone grid
      const auto speed = ingest::apply_audio_prior(p.audio_peak, p.audio_prior);
      dyn::ForcingSignal merged;
      merged.width = system.forcing_dim;
      merged.timestamps = p.audio_t;
      merged.values.assign(p.audio_t.size() * static_cast<std::size_t>(system.forcing_dim), 0.0);
      std::vector<double> row(static_cast<std::size_t>(system.forcing_dim));
      for (std::size_t k = 0; k < p.audio_t.size(); ++k) {
        p.forcing.interpolate(p.audio_t[k], row);
        for (int ch : p.audio_forcing_channels) row[static_cast<std::size_t>(ch)] = speed[k];
        std::copy(row.begin(), row.end(),
                  merged.values.begin() +
                      static_cast<long>(k * static_cast<std::size_t>(system.forcing_dim)));
      }
      p.forcing = std::move(merged);
    }
  }
  return p;
}

// --- forward passes -------------------------------------------------------------

namespace {

struct WindowOut {
  std::vector<double> theta_bar;
  std::vector<double> calib;
};

// Plain-double window forward with the training dropout mask.
WindowOut window_forward_d(const net::LtcModel& m, const FitProblem& p, int start,
                           std::span<const std::uint8_t> mask, const TrainConfig& cfg) {
  const std::size_t hd = static_cast<std::size_t>(m.hidden);
  std::vector<double> h(hd, 0.0);
  std::vector<double> seq(static_cast<std::size_t>(cfg.window) * hd);
  for (int t = 0; t < cfg.window; ++t) {
    std::span<const double> x(
        p.net_inputs.data() + static_cast<std::size_t>(start + t) * net::kInputDim,
        net::kInputDim);
    net::ltc_unfold_d(m, m.w, h, x, p.dt_cell);
    std::copy(h.begin(), h.end(),
              seq.begin() + static_cast<long>(static_cast<std::size_t>(t) * hd));
  }

  WindowOut out;
  out.theta_bar.assign(static_cast<std::size_t>(m.n_param), 0.0);
  out.calib.assign(static_cast<std::size_t>(m.n_calib), 0.0);
  const bool use_dropout = !mask.empty();
  const double keep_scale = 1.0 / (1.0 - m.dropout_p);
  const double inv_t = 1.0 / static_cast<double>(cfg.window);
  std::vector<double> hdrop(hd);
  for (int t = 0; t < cfg.window; ++t) {
    const std::size_t base = static_cast<std::size_t>(t) * hd;
    for (std::size_t i = 0; i < hd; ++i)
      hdrop[i] = use_dropout ? (mask[base + i] ? seq[base + i] * keep_scale : 0.0) : seq[base + i];
    for (int k = 0; k < m.n_param; ++k) {
      const double* row = m.w.data() + m.off_w_param() + static_cast<std::size_t>(k) * hd;
      double z = m.w[m.off_b_param() + static_cast<std::size_t>(k)];
      for (std::size_t j = 0; j < hd; ++j) z += row[j] * hdrop[j];
      out.theta_bar[static_cast<std::size_t>(k)] += inv_t / (1.0 + std::exp(-z));
    }
    for (int c = 0; c < m.n_calib; ++c) {
      const double* row = m.w.data() + m.off_w_calib() + static_cast<std::size_t>(c) * hd;
      double z = m.w[m.off_b_calib() + static_cast<std::size_t>(c)];
      for (std::size_t j = 0; j < hd; ++j) z += row[j] * hdrop[j];
      out.calib[static_cast<std::size_t>(c)] += inv_t * (z > 0.0 ? z : 0.0);
    }
  }
  return out;
}

// Taped window forward; returns the readout Values for backward seeding.
net::Readout window_forward_tape(ad::Tape& tape, const net::TapedModel& tm, const FitProblem& p,
                                 int start, std::span<const std::uint8_t> mask,
                                 const TrainConfig& cfg) {
  const net::LtcModel& m = *tm.model;
  std::vector<ad::Value> h(static_cast<std::size_t>(m.hidden), ad::Value(0.0));
  std::vector<ad::Value> seq;
  seq.reserve(static_cast<std::size_t>(cfg.window) * static_cast<std::size_t>(m.hidden));
  for (int t = 0; t < cfg.window; ++t) {
    std::span<const double> x(
        p.net_inputs.data() + static_cast<std::size_t>(start + t) * net::kInputDim,
        net::kInputDim);
    h = net::ltc_unfold(tape, tm, h, x, p.dt_cell);
    seq.insert(seq.end(), h.begin(), h.end());
  }
  return net::readout(tape, tm, seq, cfg.window, mask, m.dropout_p);
}

// Loss on top of the (batch-mean) readout: denormalize, assemble the initial
// state and forcing from the calibration slots, roll the physics out, and
// compare on the rollout grid. Written once for doubles and tape values.
template <class T>
void master_loss(const FitProblem& p, std::span<const T> theta_bar, std::span<const T> calib,
                 const TrainConfig& cfg, T& traj_out, T& penalty_out, T& total_out) {
  const dyn::SystemSpec& sys = *p.system;
  const std::size_t d = static_cast<std::size_t>(sys.state_dim);

  std::vector<T> theta;
  theta.reserve(theta_bar.size());
  for (std::size_t k = 0; k < theta_bar.size(); ++k)
    theta.push_back((1.0 + (0.5 - theta_bar[k]) * net::kDenormSpan) * p.nominal[k]);

  penalty_out = loss::param_penalty<T>(theta, sys.lower_bounds, sys.upper_bounds, cfg.penalty);

  std::vector<T> gamma(d, T(0.0));
  for (std::size_t i = 0; i < d; ++i)
    if (p.slots.offset_slot[i] >= 0)
      gamma[i] = calib[static_cast<std::size_t>(p.slots.offset_slot[i])];

  // initial state: calibrated first observation for measured channels,
  // calibration slots (or defaults) for hidden ones
  std::vector<T> x0(d, T(0.0));
  for (std::size_t i = 0; i < d; ++i) {
    if (sys.measured[i]) {
      x0[i] = T(p.obs_grid[i]) - gamma[i];
    } else if (p.slots.x0_slot[i] >= 0) {
      x0[i] = calib[static_cast<std::size_t>(p.slots.x0_slot[i])];
    } else {
      x0[i] = T(sys.default_x0[i]);
    }
  }

  T inv_alpha(0.0), beta(0.0);
  if (p.learn_audio_prior && !p.audio_forcing_channels.empty()) {
    const T alpha = ad::max(calib[static_cast<std::size_t>(p.slots.alpha_slot)], T(kAlphaFloor));
    inv_alpha = 1.0 / alpha;
    beta = calib[static_cast<std::size_t>(p.slots.beta_slot)];
  }
  std::vector<double> fixed_row(static_cast<std::size_t>(sys.forcing_dim));
  auto u_at = [&](double t, std::span<T> out) {
    if (out.empty()) return;
    p.forcing.interpolate(t, fixed_row);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = T(fixed_row[c]);
    if (p.learn_audio_prior)
      for (int ch : p.audio_forcing_channels) {
        const double tone = interp1(p.audio_t, p.audio_peak, t);
        out[static_cast<std::size_t>(ch)] = (T(tone) - beta) * inv_alpha;
      }
  };

  const std::vector<T> flat = sim::rollout<T>(sys, x0, u_at, theta, p.t_sim, 1.0 / p.dt, p.t0);

  // compare rows 1..t_sim (the initial row is pinned to the observation)
  std::span<const double> obs(p.obs_grid.data() + d, static_cast<std::size_t>(p.t_sim) * d);
  std::span<const T> simulated(flat.data() + d, static_cast<std::size_t>(p.t_sim) * d);
  traj_out = loss::traj_loss<T>(obs, simulated, sys.measured, gamma, p.t_sim, sys.state_dim);
  total_out = traj_out + cfg.lambda_param * penalty_out;
}

}  // namespace

// --- batch gradient ---------------------------------------------------------------

BatchResult batch_gradient(const net::LtcModel& model, const FitProblem& problem,
                           std::span<const int> window_starts,
                           std::span<const std::uint8_t> dropout_masks, const TrainConfig& cfg) {
  const std::size_t b = window_starts.size();
  const std::size_t hd = static_cast<std::size_t>(model.hidden);
  const std::size_t mask_stride = static_cast<std::size_t>(cfg.window) * hd;
  if (dropout_masks.size() != b * mask_stride)
    throw std::invalid_argument("batch_gradient: dropout mask size mismatch");
  const std::size_t kk = static_cast<std::size_t>(model.n_param);
  const std::size_t cc = static_cast<std::size_t>(model.n_calib);

  // pass 1: plain-double forwards give the batch-mean readout
  std::vector<WindowOut> outs(b);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (cfg.parallel)
#endif
  for (long wi = 0; wi < static_cast<long>(b); ++wi) {
    outs[static_cast<std::size_t>(wi)] = window_forward_d(
        model, problem, window_starts[static_cast<std::size_t>(wi)],
        dropout_masks.subspan(static_cast<std::size_t>(wi) * mask_stride, mask_stride), cfg);
  }
  std::vector<double> mu_theta(kk, 0.0), mu_calib(cc, 0.0);
  for (const auto& o : outs) {
    for (std::size_t k = 0; k < kk; ++k) mu_theta[k] += o.theta_bar[k];
    for (std::size_t c = 0; c < cc; ++c) mu_calib[c] += o.calib[c];
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  for (auto& v : mu_theta) v *= inv_b;
  for (auto& v : mu_calib) v *= inv_b;

  // master pass: loss of the mean readout, gradients w.r.t. the means
  ad::Tape master;
  std::vector<ad::Value> mu_leaves;
  mu_leaves.reserve(kk + cc);
  for (double v : mu_theta) mu_leaves.push_back(master.leaf(v));
  for (double v : mu_calib) mu_leaves.push_back(master.leaf(v));
  ad::Value traj(0.0), penalty(0.0), total(0.0);
  master_loss<ad::Value>(problem, std::span<const ad::Value>(mu_leaves.data(), kk),
                         std::span<const ad::Value>(mu_leaves.data() + kk, cc), cfg, traj,
                         penalty, total);
  const ad::Gradients mg = master.backward(total);
  std::vector<double> seeds(kk + cc);
  for (std::size_t j = 0; j < kk + cc; ++j) seeds[j] = mg.wrt(mu_leaves[j]) * inv_b;

  BatchResult result;
  result.loss = loss::total_loss(traj.value(), penalty.value(), cfg.lambda_param);
  result.grad.assign(model.w.size(), 0.0);

  // pass 2: re-record each window and pull the seeds back to the weights
  std::vector<std::vector<double>> wgrads(b);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (cfg.parallel)
#endif
  for (long wi = 0; wi < static_cast<long>(b); ++wi) {
    static thread_local ad::Tape tape;
    tape.clear();
    const net::TapedModel tm = net::stage(tape, model);
    const net::Readout ro = window_forward_tape(
        tape, tm, problem, window_starts[static_cast<std::size_t>(wi)],
        dropout_masks.subspan(static_cast<std::size_t>(wi) * mask_stride, mask_stride), cfg);
    std::vector<ad::Value> outs_v;
    outs_v.reserve(kk + cc);
    outs_v.insert(outs_v.end(), ro.theta_bar.begin(), ro.theta_bar.end());
    outs_v.insert(outs_v.end(), ro.calib.begin(), ro.calib.end());
    const ad::Gradients g = tape.backward(outs_v, seeds);
    auto& dst = wgrads[static_cast<std::size_t>(wi)];
    dst.resize(model.w.size());
    for (std::size_t i = 0; i < model.w.size(); ++i)
      dst[i] = g.wrt_node(static_cast<std::int32_t>(i));
  }
  // reduce in window order so thread count never changes the result
  for (std::size_t wi = 0; wi < b; ++wi)
    for (std::size_t i = 0; i < result.grad.size(); ++i) result.grad[i] += wgrads[wi][i];
  return result;
}

// --- evaluation ---------------------------------------------------------------------

Evaluation evaluate(const net::LtcModel& model, const FitProblem& problem,
                    const TrainConfig& cfg) {
  const auto starts = make_windows(ingest::kSpatialSamples, cfg.window, cfg.stride);
  const std::size_t kk = static_cast<std::size_t>(model.n_param);
  const std::size_t cc = static_cast<std::size_t>(model.n_calib);

  Evaluation ev;
  ev.theta_bar.assign(kk, 0.0);
  ev.calib.assign(cc, 0.0);
  for (int s : starts) {
    const WindowOut o = window_forward_d(model, problem, s, {}, cfg);
    for (std::size_t k = 0; k < kk; ++k) ev.theta_bar[k] += o.theta_bar[k];
    for (std::size_t c = 0; c < cc; ++c) ev.calib[c] += o.calib[c];
  }
  const double inv = 1.0 / static_cast<double>(starts.size());
  for (auto& v : ev.theta_bar) v *= inv;
  for (auto& v : ev.calib) v *= inv;

  double traj = 0.0, penalty = 0.0, total = 0.0;
  master_loss<double>(problem, ev.theta_bar, ev.calib, cfg, traj, penalty, total);
  ev.loss = loss::total_loss(traj, penalty, cfg.lambda_param);

  ev.theta_hat.resize(kk);
  for (std::size_t k = 0; k < kk; ++k)
    ev.theta_hat[k] = net::denormalize_one(ev.theta_bar[k], problem.nominal[k]);
  return ev;
}

// --- training loop --------------------------------------------------------------------

EstimateReport train(const dyn::SystemSpec& system, const FitInputs& inputs,
                     const FitOptions& options, const TrainConfig& cfg) {
  const auto t_start = std::chrono::steady_clock::now();
  const FitProblem problem = build_problem(system, inputs, options);

  Rng rng(cfg.seed);
  net::LtcModel model = net::init_model(system.param_count(), problem.slots.count, rng);
  model.dropout_p = cfg.dropout;

  // seed calibration biases: offsets at zero, hidden initial states at the
  // registry defaults, audio prior at its datasheet values
  for (int c = 0; c < problem.slots.count; ++c) {
    const std::string& name = problem.slots.names[static_cast<std::size_t>(c)];
    double init = 0.0;
    for (int i = 0; i < system.state_dim; ++i)
      if (problem.slots.x0_slot[static_cast<std::size_t>(i)] == c)
        init = std::max(0.0, system.default_x0[static_cast<std::size_t>(i)]);
    if (c == problem.slots.alpha_slot) init = options.audio_prior.alpha;
    if (c == problem.slots.beta_slot) init = options.audio_prior.beta;
    if (auto it = options.calib_init.find(name); it != options.calib_init.end()) init = it->second;
    model.b_calib()[c] = init;
  }

  const auto window_starts = make_windows(ingest::kSpatialSamples, cfg.window, cfg.stride);
  const std::size_t mask_stride =
      static_cast<std::size_t>(cfg.window) * static_cast<std::size_t>(model.hidden);

  EstimateReport report;
  report.param_names = system.param_names;
  report.calib_names = problem.slots.names;
  report.seed = cfg.seed;

  AdamState adam;
  double best_traj = std::numeric_limits<double>::infinity();
  int best_epoch = -1, since_improve = 0, nonfinite_streak = 0;
  net::LtcModel best_model = model;

  auto note_nonfinite = [&](const std::string& what) {
    if (++nonfinite_streak >= 2)
      throw DivergenceError("training diverged: " + what + " (non-finite loss twice in a row)");
  };

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg);
    std::vector<int> order = window_starts;
    rng.shuffle(order);

    double epoch_total = 0.0;
    int steps = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t bsz =
          std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), order.size() - at);
      std::span<const int> chunk(order.data() + at, bsz);
      // dropout masks are drawn up front so thread scheduling cannot
      // influence the random stream
      std::vector<std::uint8_t> masks(bsz * mask_stride);
      for (auto& m : masks) m = rng.uniform() >= cfg.dropout ? 1 : 0;

      try {
        const BatchResult res = batch_gradient(model, problem, chunk, masks, cfg);
        if (!std::isfinite(res.loss.total)) {
          note_nonfinite("batch loss");
          continue;
        }
        bool grads_ok = true;
        for (double g : res.grad)
          if (!std::isfinite(g)) {
            grads_ok = false;
            break;
          }
        if (!grads_ok) {
          note_nonfinite("batch gradient");  // skip the update, count the strike
          continue;
        }
        nonfinite_streak = 0;
        adamw_step(model.w, res.grad, adam, cfg, lr);
        epoch_total += res.loss.total;
        ++steps;
      } catch (const sim::RolloutError& e) {
        note_nonfinite(e.what());
      }
    }

    EpochStats st;
    st.epoch = epoch;
    st.lr = lr;
    st.train_total = steps > 0 ? epoch_total / steps : std::numeric_limits<double>::quiet_NaN();
    try {
      const Evaluation ev = evaluate(model, problem, cfg);
      st.traj = ev.loss.traj;
      st.penalty = ev.loss.param_penalty;
      st.total = ev.loss.total;
      if (!std::isfinite(ev.loss.total))
        note_nonfinite("evaluation loss");
      else
        nonfinite_streak = 0;
    } catch (const sim::RolloutError& e) {
      st.traj = st.penalty = st.total = std::numeric_limits<double>::quiet_NaN();
      note_nonfinite(e.what());
    }
    report.curve.push_back(st);
    report.epochs_run = epoch + 1;

    if (std::isfinite(st.traj) && st.traj < best_traj) {
      best_traj = st.traj;
      best_epoch = epoch;
      best_model = model;
      since_improve = 0;
    } else {
      ++since_improve;
    }
    if (since_improve >= cfg.patience) break;
  }

  if (best_epoch < 0) throw DivergenceError("training never produced a finite evaluation loss");

  const Evaluation best_ev = evaluate(best_model, problem, cfg);
  report.theta_bar = best_ev.theta_bar;
  report.theta_hat = best_ev.theta_hat;
  report.calib_hat = best_ev.calib;
  report.best_epoch = best_epoch;
  report.best_traj = best_traj;
  report.best_model = best_model;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

}  // namespace odefit::train
