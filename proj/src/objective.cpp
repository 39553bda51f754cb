#include "odefit/objective.hpp"

// Header-only templates; explicit instantiations keep the common scalar
// variants out of every translation unit.

namespace odefit::loss {

template double traj_loss<double>(std::span<const double>, std::span<const double>,
                                  const std::vector<bool>&, std::span<const double>, int, int);
template ad::Value traj_loss<ad::Value>(std::span<const double>, std::span<const ad::Value>,
                                        const std::vector<bool>&, std::span<const ad::Value>, int, int);
template double param_penalty<double>(std::span<const double>, std::span<const double>,
                                      std::span<const double>, const PenaltyWeights&);
template ad::Value param_penalty<ad::Value>(std::span<const ad::Value>, std::span<const double>,
                                            std::span<const double>, const PenaltyWeights&);

}  // namespace odefit::loss
