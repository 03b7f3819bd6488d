#pragma once

#include <string>
#include <vector>

#include "ngfn/common.hpp"
#include "ngfn/mdp.hpp"
#include "ngfn/reward.hpp"
#include "ngfn/rng.hpp"
#include "ngfn/schedule.hpp"
#include "ngfn/tape.hpp"

namespace ngfn {

// Every finetuning method the trainer can dispatch to. The first two are the
// gradient-informed balance losses; the rest are comparison baselines.
enum class FinetuneMethod {
  kResGradDb,
  kGradDb,
  kDagDb,
  kResDb,
  kDdpo,
  kRefl,
  kDraftK,
  kDraftLv,
};

// Throws ConfigError for unknown names.
FinetuneMethod parse_finetune_method(const std::string& name);
const char* finetune_method_name(FinetuneMethod m);

struct BaselineConfig {
  FinetuneMethod method = FinetuneMethod::kDdpo;
  double clip_ratio = 0.2;  // ddpo trust region half-width
  double stop_lo = 0.7;     // refl stop window, fractions of T
  double stop_hi = 0.98;
  int k = 1;  // draft re-roll depth

  // 0 < stop_lo <= stop_hi < 1, k >= 1, clip_ratio > 0.
  void validate() const;
};

// Batch rewards mapped to mean-zero, unit-variance advantages. Zero variance
// (including a single sample) yields all zeros. Invariant to shifting or
// positively rescaling the rewards.
Vec normalized_advantages(const Vec& rewards);

// Clipped importance-ratio policy-gradient surrogate, minimized:
//   -mean_{i,t} min(rho_{i,t} A_i, clip(rho_{i,t}, 1 -+ eps) A_i)
// with per-transition ratios of Gaussian step densities. ddpo_loss computes
// A = normalized_advantages of the terminal rewards; the *_with_advantages
// forms take A directly (one entry per trajectory).
double ddpo_loss(const Policy& policy, const Policy& behavior,
                 const std::vector<Trajectory>& trajectories, const RewardSpec& reward,
                 const BaselineConfig& config, const NoiseSchedule& schedule);
double ddpo_loss_with_advantages(const Policy& policy, const Policy& behavior,
                                 const std::vector<Trajectory>& trajectories,
                                 const Vec& advantages, const BaselineConfig& config,
                                 const NoiseSchedule& schedule);
ad::Var ddpo_loss_node(ad::Tape& tape, const Policy& policy, const Policy& behavior,
                       const std::vector<Trajectory>& trajectories, const RewardSpec& reward,
                       const BaselineConfig& config, const NoiseSchedule& schedule);
ad::Var ddpo_loss_with_advantages_node(ad::Tape& tape, const Policy& policy,
                                       const Policy& behavior,
                                       const std::vector<Trajectory>& trajectories,
                                       const Vec& advantages, const BaselineConfig& config,
                                       const NoiseSchedule& schedule);

// Integer stop step drawn uniformly from [ceil(stop_lo T), floor(stop_hi T)].
// Throws ConfigError when the window rounds to empty.
int refl_stop_step(const BaselineConfig& config, int T, Rng& rng);

// -log R(x_hat(x_t)) with x_t taken from the trajectory as a constant; the
// gradient flows only through the one-step clean prediction.
double refl_loss_at(const Policy& policy, const Trajectory& traj, const RewardSpec& reward,
                    const NoiseSchedule& schedule, int t);
ad::Var refl_loss_at_node(ad::Tape& tape, const Policy& policy, const Trajectory& traj,
                          const RewardSpec& reward, const NoiseSchedule& schedule, int t);

double refl_loss(const Policy& policy, const Trajectory& traj, const RewardSpec& reward,
                 const BaselineConfig& config, const NoiseSchedule& schedule, Rng& rng);
ad::Var refl_loss_node(ad::Tape& tape, const Policy& policy, const Trajectory& traj,
                       const RewardSpec& reward, const BaselineConfig& config,
                       const NoiseSchedule& schedule, Rng& rng);

enum class DraftVariant { kPlain, kLv };

// Re-rolls the last k steps differentiably from the trajectory's x_{T-k}
// (held constant) with fresh noise scaled by the policy's own stddev, then
// returns -log R(x_T'). The lv variant appends one differentiable
// noising-denoising round trip, x' ~ q(. | x_T') then one more policy step,
// before the reward. Noise draw order: k step noises, then (lv only) the
// noising draw and the extra step draw.
double draft_loss(const Policy& policy, const Trajectory& traj, const RewardSpec& reward, int k,
                  DraftVariant variant, Rng& rng, const NoiseSchedule& schedule);
ad::Var draft_loss_node(ad::Tape& tape, const Policy& policy, const Trajectory& traj,
                        const RewardSpec& reward, int k, DraftVariant variant, Rng& rng,
                        const NoiseSchedule& schedule);

}  // namespace ngfn
