#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ngfn/common.hpp"
#include "ngfn/mdp.hpp"
#include "ngfn/mlp.hpp"
#include "ngfn/reward.hpp"
#include "ngfn/schedule.hpp"

namespace ngfn {

// One evaluation row of a training run. export_metrics writes these as CSV
// with the fixed column order
//   step,mean_reward,diversity,prior_distance,target_tv,terminal_g_norm,
//   loss_fwd,loss_rev,loss_terminal,loss_reg
struct MetricsRecord {
  long step = 0;
  double mean_reward = 0.0;
  double diversity = 0.0;
  double prior_distance = 0.0;
  double target_tv = 0.0;
  double terminal_g_norm = 0.0;
  double loss_fwd = 0.0;
  double loss_rev = 0.0;
  double loss_terminal = 0.0;
  double loss_reg = 0.0;
};

// Terminal samples of n policy rollouts; sample i uses seed_mix({seed, i}),
// so results are identical for any thread count.
std::vector<Vec> sample_terminals(const Policy& policy, const NoiseSchedule& schedule, int dim,
                                  long n, std::uint64_t seed);

// Average reward over the batch. Throws ConfigError on an empty batch.
double mean_reward(const std::vector<Vec>& samples, const RewardSpec& spec);

// Mean per-coordinate population variance of the batch; translation
// invariant, zero for identical samples.
double diversity(const std::vector<Vec>& samples);

// Energy distance between two sample sets,
//   2 E|A - B| - E|A - A'| - E|B - B'|
// as the V-statistic over all pairs. Symmetric; exactly zero for identical
// sets. Stands in for a feature-space distribution distance at this scale.
double prior_distance(const std::vector<Vec>& a, const std::vector<Vec>& b);

// Mean ||g_phi(x, T)|| over the batch, the terminal residual of the
// forward-looking flow parameterization.
double mean_terminal_g_norm(const Mlp& g_phi, const std::vector<Vec>& samples);

// Mean ||beta grad log R(x)|| over the batch, the reference scale for the
// terminal residual (gamma_T = 1).
double mean_reward_grad_norm(const RewardSpec& spec, double beta,
                             const std::vector<Vec>& samples);

// Uniform-cell density table over the box [-4, 4]^dim, dim in {1, 2}.
// 1D uses 200 bins, 2D 50 bins per axis (cell index ix * bins + iy).
struct GridOracle {
  int dim = 1;
  int bins = 200;
  double lo = -4.0;
  double hi = 4.0;
  std::vector<double> density;  // bins^dim entries, nonnegative, sums to 1

  int n_cells() const;
  double cell_width() const { return (hi - lo) / bins; }
  // Cell containing x, -1 when x lies outside the box; the upper box edge is
  // folded into the last cell.
  int cell_of(const Vec& x) const;
  Vec center_of(int cell) const;
  void validate() const;  // shape, nonnegativity, sum within 1e-9 of 1
};

GridOracle make_grid(int dim);

// Normalized histogram of the samples that land inside the box. Throws
// NumericalError when no sample does.
GridOracle histogram_oracle(const std::vector<Vec>& samples, int dim);

// Cell-center quadrature of R(x)^beta, normalized. The target for sampling
// proportional to a pure reward power.
GridOracle reward_power_oracle(const RewardSpec& spec, double beta, int dim);

// Histogram of n_dense pretrained terminal samples, reweighted cellwise by
// R(center)^beta and renormalized: the brute-force target for finetuning
// toward R^beta times the pretrained distribution. Requires n_dense >= 1e5.
GridOracle build_target_oracle(const Policy& pretrained, const RewardSpec& spec, double beta,
                               const NoiseSchedule& schedule, int dim, long n_dense,
                               std::uint64_t seed);

// Total variation between the sample histogram and the oracle. Sample mass
// outside the box counts fully toward the distance, so the result stays in
// [0, 1].
double target_tv(const std::vector<Vec>& samples, const GridOracle& oracle);

// Total variation between two tables of identical shape.
double tv_between(const GridOracle& a, const GridOracle& b);

// Writes the CSV described on MetricsRecord; %.17g formatting makes the
// round-trip through import_metrics exact. Throws IoError on write failure
// and ConfigError on non-finite fields.
void export_metrics(const std::vector<MetricsRecord>& records, const std::string& path);
std::vector<MetricsRecord> import_metrics(const std::string& path);

}  // namespace ngfn
