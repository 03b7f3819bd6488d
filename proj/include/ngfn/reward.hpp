#pragma once

#include <vector>

#include "ngfn/common.hpp"
#include "ngfn/rng.hpp"

namespace ngfn {

enum class RewardKind { kGaussianMixture, kRing, kQuadraticWell };

// Smooth positive reward over the evaluation box [-4, 4]^d.
//
//   gaussian-mixture: R(x) = sum_i w_i exp(-|x - m_i|^2 / (2 s_i^2)) + floor
//   ring:             R(x) = exp(-(|x| - radius)^2 / (2 s^2)) + floor
//   quadratic-well:   log R(x) = -well_a |x - m|^2  (exp form, positive as is;
//                     the additive floor is not applied to this kind so the
//                     log-gradient is exactly -2 well_a (x - m))
struct RewardSpec {
  RewardKind kind = RewardKind::kGaussianMixture;
  int dim = 1;
  std::vector<Vec> means;            // mixture modes / well center
  std::vector<double> scales;        // per-mode scales / ring width
  std::vector<double> mode_weights;  // relative mode masses
  double radius = 2.0;               // ring radius
  double well_a = 1.0;               // quadratic well curvature
  double floor = 1e-4;               // relative to the unit mode peak

  void validate() const;
};

double log_reward(const RewardSpec& spec, const Vec& x);
double reward(const RewardSpec& spec, const Vec& x);

// Analytic gradient of log R.
Vec log_reward_grad(const RewardSpec& spec, const Vec& x);

// Analytic Hessian of log R (used only when losses differentiate through the
// reward-gradient factor).
Mat log_reward_hess(const RewardSpec& spec, const Vec& x);

// Monte Carlo estimate of E[grad log R(x + eps)], eps ~ N(0, c I), averaged
// over n draws. c = 0 returns the exact gradient and draws nothing.
Vec smoothed_log_reward_grad(const RewardSpec& spec, const Vec& x, double c, int n, Rng& rng);

}  // namespace ngfn
