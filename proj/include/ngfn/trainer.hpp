#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ngfn/baselines.hpp"
#include "ngfn/metrics.hpp"
#include "ngfn/mlp.hpp"
#include "ngfn/objectives.hpp"
#include "ngfn/parallel.hpp"

namespace ngfn {

// Samplable Gaussian mixture playing the role of the pretraining data
// distribution. scale 0 collapses a mode to a point mass.
struct DatasetSpec {
  int dim = 1;
  std::vector<Vec> means;
  std::vector<double> scales;        // per-mode isotropic stddev
  std::vector<double> mode_weights;  // relative, renormalized on use
  void validate() const;
  Vec sample(Rng& rng) const;
};

struct PretrainConfig {
  long steps = 20000;
  int batch = 128;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

// Denoising pretraining with the noise-prediction target,
//   E_{x0, t, xi} | net(sqrt(abar_t) x0 + sqrt(1 - abar_t) xi, t) - xi |^2,
// t uniform over {0..T-1} with unit time weighting. Trains net in place.
// Throws NumericalError carrying the step index once the batch loss
// exceeds 1e6.
void pretrain(Mlp& net, const DatasetSpec& dataset, const NoiseSchedule& schedule,
              const PretrainConfig& cfg);

// Analytic density table of the dataset mixture over the evaluation box.
// Each mode contributes exactly its normalized weight: continuous modes by
// cell-center quadrature renormalized within the box, point masses (scale 0)
// by placing the whole weight in the containing cell. The reference for
// judging how well a pretrained sampler reproduces its data.
GridOracle dataset_oracle(const DatasetSpec& dataset, int dim);

// Stratified transition subsample. {0..T-2} is split into ceil(fraction*T)-1
// near-equal consecutive intervals, one index is drawn uniformly per interval
// with weight = interval length, and T-1 always enters with weight 1. The
// weighted sum over the selection is an unbiased estimator of the plain sum
// over all T transitions, and the weights total T, except in the degenerate
// ceil(fraction*T) = 1 case where only T-1 is selected. Throws ConfigError
// when fraction*T < 1.
std::vector<SelectedTransition> subsample_transitions(int T, double fraction, Rng& rng);

struct FinetuneConfig {
  FinetuneMethod method = FinetuneMethod::kResGradDb;
  LossWeights weights;
  BaselineConfig baseline;  // knobs for ddpo / refl / draft
  int n_traj_per_epoch = 64;
  int grad_accum_steps = 4;      // micro-batching structure; gradients are
                                 // averaged per update window either way
  int update_every_n_traj = 32;  // window size between parameter updates
  double subsample_fraction = 0.1;
  long epochs = 100;     // absolute epoch target: a resumed state trains
                         // until state.epoch reaches this count
  long eval_every = 10;  // epochs between metric rows; the final epoch and
                         // the initial state are always evaluated
  std::uint64_t seed = 1;
  double lr_policy = 1e-4;
  double lr_flow = 1e-3;
  double g_init_scale = 1e-2;  // final_scale of the flow head at init
  bool on_policy = false;      // balance losses train on the fresh batch
                               // instead of the previous epoch's
  int eval_batch = 64;         // diversity / prior-distance batch
  long eval_samples = 10000;   // reward / TV sample count
  void validate() const;
};

// Everything the finetuning loop mutates. policy is theta, prev_policy the
// theta of the immediately preceding update (the drift-regularizer anchor),
// pretrained the frozen starting parameters (residual anchor and prior
// reference). g_phi is the flow head: out_dim 1 for the scalar balance
// methods, out_dim = dim for the gradient ones. correction is empty unless
// weights.use_correction.
struct FinetuneState {
  Mlp policy;
  Mlp prev_policy;
  Mlp pretrained;
  Mlp g_phi;
  Mlp correction;
  Adam opt_policy, opt_flow, opt_correction;
  std::vector<Trajectory> prev_batch, curr_batch;
  long epoch = 0;
  long updates = 0;
};

// Copies the starting policy, builds the flow (and correction) heads, sizes
// the optimizers and samples the initial previous-epoch batch with the
// starting policy.
FinetuneState init_finetune(const Mlp& start_policy, const FinetuneConfig& cfg,
                            const NoiseSchedule& schedule);

struct EpochStats {
  LossParts mean_parts;  // per-trajectory means (per-window for ddpo)
  long n_updates = 0;
};

// One pass of the finetuning loop: samples the fresh batch with the current
// policy, accumulates per-trajectory gradients of the selected objective over
// the training batch, updates parameters every update_every_n_traj
// trajectories (copying policy into prev_policy right before each update),
// then swaps the batches. ddpo consumes whole windows at once so its
// advantage normalization sees the batch. Throws NumericalError on a
// non-finite loss.
EpochStats finetune_epoch(FinetuneState& state, const FinetuneConfig& cfg,
                          const NoiseSchedule& schedule, const RewardSpec& reward);

// Metric row for the current state. Terminal samples use a seed derived from
// the epoch, shared with the pretrained-policy reference batch so the prior
// distance of an untouched policy is exactly zero. target may be null, which
// leaves target_tv at 0.
MetricsRecord evaluate(const FinetuneState& state, const FinetuneConfig& cfg,
                       const NoiseSchedule& schedule, const RewardSpec& reward,
                       const GridOracle* target, const LossParts& parts);

struct RunHooks {
  // Called at every evaluation point and once more if an epoch dies with a
  // numerical error (with the pre-throw state).
  std::function<void(const FinetuneState&, long epoch)> on_checkpoint;
};

// Orchestrates epochs and periodic evaluation until state.epoch reaches
// cfg.epochs; returns one metric row for the starting state plus one per
// evaluation point. The evaluation cadence is anchored at epoch 0, so a
// state resumed from a checkpoint written at an evaluation point continues
// on the same grid as the uninterrupted run. Deterministic in cfg.seed.
std::vector<MetricsRecord> run_finetune(FinetuneState& state, const FinetuneConfig& cfg,
                                        const NoiseSchedule& schedule, const RewardSpec& reward,
                                        const GridOracle* target = nullptr,
                                        const RunHooks& hooks = {});

}  // namespace ngfn
