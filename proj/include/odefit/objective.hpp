#pragma once

#include <span>
#include <vector>
#include <stdexcept>
#include <vector>

#include "odefit/autodiff.hpp"

// Physics-informed loss: calibrated trajectory discrepancy over measured
// channels, ReLU penalties for bound violations, and their weighted total.
// Losses never see ground-truth parameters; learning is driven entirely by
// the simulation mismatch.

namespace odefit::loss {

struct LossBreakdown {
  double traj = 0.0;
  double param_penalty = 0.0;
  double total = 0.0;
  double lambda_param = 1.0;
};

struct PenaltyWeights {
  double positivity = 10.0;
  double lower = 10.0;
  double upper = 10.0;
};

// sum_i M_ii * (1/T) * sum_t (measured_i(t) - gamma_i - simulated_i(t))^2
// `measured` holds plain observations (T x D row-major); only masked channels
// are read. `gamma` supplies one offset per state (zero Values for channels
// that need no calibration).
template <class T>
T traj_loss(std::span<const double> measured, std::span<const T> simulated,
            const std::vector<bool>& mask, std::span<const T> gamma, int samples, int state_dim) {
  const std::size_t d = static_cast<std::size_t>(state_dim);
  const std::size_t n = static_cast<std::size_t>(samples);
  if (measured.size() != n * d || simulated.size() != n * d)
    throw std::invalid_argument("traj_loss: trajectory length mismatch");
  if (mask.size() != d || gamma.size() != d)
    throw std::invalid_argument("traj_loss: mask/gamma size mismatch");

  T total(0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < d; ++i) {
    if (!mask[i]) continue;
    T acc(0.0);
    for (std::size_t t = 0; t < n; ++t) {
      const T r = measured[t * d + i] - gamma[i] - simulated[t * d + i];
      acc += r * r;
    }
    total += inv_n * acc;
  }
  return total;
}

// sum_i w_p ReLU(-theta_i) + w_l ReLU(l_i - theta_i) + w_up ReLU(theta_i - up_i).
// Zero on the feasible box, piecewise-linear and convex outside it.
template <class T>
T param_penalty(std::span<const T> theta, std::span<const double> lower,
                std::span<const double> upper, const PenaltyWeights& w) {
  if (theta.size() != lower.size() || theta.size() != upper.size())
    throw std::invalid_argument("param_penalty: bounds size mismatch");
  T total(0.0);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    total += w.positivity * ad::relu(-theta[i]);
    total += w.lower * ad::relu(lower[i] - theta[i]);
    total += w.upper * ad::relu(theta[i] - upper[i]);
  }
  return total;
}

inline LossBreakdown total_loss(double traj, double penalty, double lambda_param) {
  if (lambda_param < 0.0) throw std::invalid_argument("total_loss: lambda_param must be >= 0");
  LossBreakdown b;
  b.traj = traj;
  b.param_penalty = penalty;
  b.lambda_param = lambda_param;
  b.total = traj + lambda_param * penalty;
  return b;
}

}  // namespace odefit::loss
