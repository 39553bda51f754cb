#include "odefit/integrator.hpp"

namespace odefit::sim {

Trajectory rollout_trajectory(const dyn::SystemSpec& sys, std::span<const double> x0,
                              const dyn::ForcingSignal* forcing, std::span<const double> theta,
                              int sample_count, double fps, double t0) {
  const std::vector<double> flat =
      rollout<double>(sys, x0, InterpForcing{forcing}, theta, sample_count, fps, t0);
  const double dt = rollout_dt(fps);
  const std::size_t d = static_cast<std::size_t>(sys.state_dim);
  const std::size_t rows = flat.size() / d;

  Trajectory tr;
  tr.state_dim = sys.state_dim;
  tr.forcing_dim = sys.forcing_dim;
  tr.fps = fps;
  tr.timestamps.resize(rows);
  tr.states = flat;
  if (sys.forcing_dim > 0) tr.forcing.resize(rows * static_cast<std::size_t>(sys.forcing_dim));
  for (std::size_t k = 0; k < rows; ++k) {
    tr.timestamps[k] = t0 + static_cast<double>(k) * dt;
    if (sys.forcing_dim > 0) {
      std::span<double> row(tr.forcing.data() + k * static_cast<std::size_t>(sys.forcing_dim),
                            static_cast<std::size_t>(sys.forcing_dim));
      InterpForcing{forcing}(tr.timestamps[k], row);
    }
  }
  return tr;
}

}  // namespace odefit::sim
