#pragma once

#include <vector>

#include "ngfn/common.hpp"

namespace ngfn {

// Noise schedule for a diffusion chain with reversed time indexing:
// state time t runs from 0 (pure noise) to T (clean data), and the
// diffusion time is s = T - t. alpha_bar[s] is the cumulative signal
// coefficient at diffusion time s, so alpha_bar[0] == 1 exactly and the
// sequence decreases strictly towards alpha_bar[T] (the noisiest level).
//
// The per-transition noising kernel from state t+1 down to state t is
//   q(x_t | x_{t+1}) = N(sqrt(r_t) x_{t+1}, (1 - r_t) I),
//   r_t = alpha_bar[T-t] / alpha_bar[T-t-1],
// and sigma[t] = sqrt(1 - r_t) doubles as the (fixed) standard deviation of
// the learned denoising policy at transition t.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha_bar;  // size T+1, indexed by diffusion time s
  std::vector<double> sigma;      // size T, indexed by transition t

  // Per-step variance beta_s linear in s between the two endpoints.
  static NoiseSchedule linear_beta(int T, double beta_min, double beta_max);

  // alpha_bar at state time t (diffusion time T-t).
  double abar_state(int t) const { return alpha_bar[static_cast<size_t>(T - t)]; }

  // Squared mean coefficient of the noising kernel at transition t.
  double ratio(int t) const {
    return alpha_bar[static_cast<size_t>(T - t)] / alpha_bar[static_cast<size_t>(T - t - 1)];
  }

  // Throws ConfigError when any structural invariant is violated.
  void validate() const;
};

}  // namespace ngfn
