#pragma once

#include <functional>
#include <vector>

#include "ngfn/mdp.hpp"
#include "ngfn/reward.hpp"

namespace ngfn {

// Direction of differentiation for scores and the matching losses:
// forward differentiates log densities in x_{t+1}, reverse in x_t.
enum class Direction { kForward, kReverse };

enum class GammaMode { kAlphaBar, kOne };

struct LossWeights {
  double beta = 1.0;   // reward exponent
  double w_f = 1.0;    // forward-direction loss weight
  double w_b = 1.0;    // reverse-direction loss weight
  GammaMode gamma_mode = GammaMode::kAlphaBar;  // reward-gradient attenuation
  double lambda_reg = 0.0;  // weight of the output-drift regularizer
  double eta = 1.0;         // prior strength in residual scores
  bool second_order = false;  // differentiate through reward-gradient terms
  bool use_correction = false;  // add the learned pair-input correction term
  double smooth_c = 2e-3;  // reward-gradient smoothing variance
  int smooth_n = 3;        // smoothing sample count

  // Attenuation at state time t; equals 1 at t = T in both modes.
  double gamma(int t, const NoiseSchedule& schedule) const {
    return gamma_mode == GammaMode::kAlphaBar ? schedule.abar_state(t) : 1.0;
  }
  void validate() const;
};

// Score field evaluated at a state: x, t -> vector. `node` may be empty, in
// which case the tape form falls back to a constant (exact for score fields
// without trainable parameters).
struct FlowScoreFn {
  std::function<Vec(const Vec&, int)> eval;
  std::function<ad::Var(ad::Tape&, const Vec&, int)> node;
  ad::Var as_node(ad::Tape& tape, const Vec& x, int t) const {
    return node ? node(tape, x, t) : tape.constant(eval(x, t));
  }
};

// Scalar log-flow: x, t -> double.
struct ScalarFlowFn {
  std::function<double(const Vec&, int)> eval;
  std::function<ad::Var(ad::Tape&, const Vec&, int)> node;
  ad::Var as_node(ad::Tape& tape, const Vec& x, int t) const {
    return node ? node(tape, x, t) : tape.constant_scalar(eval(x, t));
  }
};

double log_normal_density(const Vec& y, const Vec& mean, double std);

// --- scores ---------------------------------------------------------------

// Gradient of log P_F(x_{t+1} | x_t):
//   forward: (mu - x_{t+1}) / sigma^2
//   reverse: (d mu / d x_t)^T (x_{t+1} - mu) / sigma^2
Vec policy_score(Direction dir, const Policy& policy, const Transition& tr,
                 const NoiseSchedule& schedule);
ad::Var policy_score_node(ad::Tape& tape, Direction dir, const Policy& policy,
                          const Transition& tr, const NoiseSchedule& schedule);

// Gradient of the fixed noising kernel log q(x_t | x_{t+1}); parameter-free.
Vec backward_score(Direction dir, const Transition& tr, const NoiseSchedule& schedule);

// grad log P_F - eta * grad log P_F^# in the given direction.
Vec residual_policy_score(Direction dir, const Policy& policy, const Policy& pretrained,
                          const Transition& tr, const NoiseSchedule& schedule, double eta);
ad::Var residual_policy_score_node(ad::Tape& tape, Direction dir, const Policy& policy,
                                   const Policy& pretrained, const Transition& tr,
                                   const NoiseSchedule& schedule, double eta);

// Flow-score parameterization around the reward gradient at the predicted
// clean data:
//   beta * gamma_t * (d x_hat / d x)^T grad log R(x_hat(x)) + g_phi(x, t).
// The reward factor uses the smoothed gradient; rng feeds the smoothing
// draws. Unless weights.second_order is set, the reward term enters the tape
// form as a parameter-constant.
Vec fl_flow_score(const Mlp& g_phi, const Policy& policy, const DiffusionState& state,
                  const NoiseSchedule& schedule, const RewardSpec& reward,
                  const LossWeights& weights, Rng& rng);
ad::Var fl_flow_score_node(ad::Tape& tape, const Mlp& g_phi, const Policy& policy,
                           const DiffusionState& state, const NoiseSchedule& schedule,
                           const RewardSpec& reward, const LossWeights& weights, Rng& rng);

// --- losses ----------------------------------------------------------------

// Score-level detailed-balance mismatch against a flow score field:
//   forward: | ps_f - bs_f - flow(x_{t+1}, t+1) |^2
//   reverse: | ps_r - bs_r + flow(x_t, t) |^2
double loss_grad_db(Direction dir, const Policy& policy, const FlowScoreFn& flow,
                    const Transition& tr, const NoiseSchedule& schedule);
ad::Var loss_grad_db_node(ad::Tape& tape, Direction dir, const Policy& policy,
                          const FlowScoreFn& flow, const Transition& tr,
                          const NoiseSchedule& schedule);

// Terminal constraint | flow(x_T, T) - beta grad log R(x_T) |^2.
double loss_grad_db_terminal(const FlowScoreFn& flow, const Vec& x_terminal,
                             const RewardSpec& reward, double beta, int T);
ad::Var loss_grad_db_terminal_node(ad::Tape& tape, const FlowScoreFn& flow,
                                   const Vec& x_terminal, const RewardSpec& reward,
                                   double beta, int T);

// Residual variant against a residual flow score field:
//   forward: | rps_f - rflow(x_{t+1}, t+1) |^2
//   reverse: | rps_r + rflow(x_t, t) |^2
double loss_res_grad_db(Direction dir, const Policy& policy, const Policy& pretrained,
                        const FlowScoreFn& rflow, const Transition& tr,
                        const NoiseSchedule& schedule, double eta);
ad::Var loss_res_grad_db_node(ad::Tape& tape, Direction dir, const Policy& policy,
                              const Policy& pretrained, const FlowScoreFn& rflow,
                              const Transition& tr, const NoiseSchedule& schedule, double eta);

// Terminal constraint of the flow-score parameterization, |g_phi(x_T, T)|^2.
double loss_terminal_fl(const Mlp& g_phi, const Vec& x_terminal, int T);
ad::Var loss_terminal_fl_node(ad::Tape& tape, const Mlp& g_phi, const Vec& x_terminal, int T);

// Adjacent-step consistency of residual scores at the shared state x_mid:
//   | rps_fwd(x_t -> x_mid) + rps_rev(x_mid -> x_top) |^2.
double loss_bidirectional(const Policy& policy, const Policy& pretrained, const Vec& x_t,
                          const Vec& x_mid, const Vec& x_top, int t,
                          const NoiseSchedule& schedule, double eta);
ad::Var loss_bidirectional_node(ad::Tape& tape, const Policy& policy, const Policy& pretrained,
                                const Vec& x_t, const Vec& x_mid, const Vec& x_top, int t,
                                const NoiseSchedule& schedule, double eta);

// Log-space detailed balance with the scalar flow parameterization
//   log F(x, t) = beta log R(x_hat(x)) + sflow(x, t).
// plain:    (log P_F + log F(x_t) - log P_B - log F(x_{t+1}))^2
// residual: (log P_F - log P_F^# - beta log R(x_hat(x_{t+1})) - sflow(x_{t+1}))^2
// The reward terms stay live in the tape form; they are first-order in the
// policy, unlike the score-level reward factor of fl_flow_score.
enum class DbFlVariant { kPlain, kResidual };
double loss_db_fl(const Policy& policy, const Policy* pretrained, const ScalarFlowFn& sflow,
                  const Transition& tr, const NoiseSchedule& schedule, const RewardSpec& reward,
                  double beta, DbFlVariant variant);
ad::Var loss_db_fl_node(ad::Tape& tape, const Policy& policy, const Policy* pretrained,
                        const ScalarFlowFn& sflow, const Transition& tr,
                        const NoiseSchedule& schedule, const RewardSpec& reward, double beta,
                        DbFlVariant variant);

// Drift penalty | eps(x) - eps_prev(x) |^2 between the current policy and the
// snapshot from the previous update.
double output_regularization(const Policy& policy, const Policy& prev_policy, const Vec& x, int t);
ad::Var output_regularization_node(ad::Tape& tape, const Policy& policy,
                                   const Policy& prev_policy, const Vec& x, int t);

// Residual loss with the learned pair-input correction added in the
// differentiated argument.
double corrected_residual_loss(Direction dir, const Policy& policy, const Policy& pretrained,
                               const FlowScoreFn& rflow, const Mlp& correction,
                               const Transition& tr, const NoiseSchedule& schedule, double eta);
ad::Var corrected_residual_loss_node(ad::Tape& tape, Direction dir, const Policy& policy,
                                     const Policy& pretrained, const FlowScoreFn& rflow,
                                     const Mlp& correction, const Transition& tr,
                                     const NoiseSchedule& schedule, double eta);

// --- trajectory-level objective ---------------------------------------------

struct SelectedTransition {
  int t = 0;
  double weight = 1.0;  // inverse inclusion probability of the stratum
};

struct LossParts {
  double fwd = 0.0, rev = 0.0, terminal = 0.0, reg = 0.0;
  double total() const { return fwd + rev + terminal + reg; }
};

struct LossPartsNode {
  ad::Var fwd, rev, terminal, reg, total;
};

// Weighted per-transition losses over the selected strata plus the terminal
// flow constraint plus the drift regularizer. `pretrained == nullptr` trains
// the full (non-residual) balance conditions; otherwise the residual ones.
// When `correction` is non-null the residual losses carry the learned
// correction term. selected_transitions must include T-1.
LossParts total_finetune_loss(const Policy& policy, const Policy* pretrained, const Mlp& g_phi,
                              const Mlp* correction, const Trajectory& traj,
                              const std::vector<SelectedTransition>& selected,
                              const NoiseSchedule& schedule, const RewardSpec& reward,
                              const LossWeights& weights, const Policy* prev_policy, Rng& rng);
LossPartsNode total_finetune_loss_node(ad::Tape& tape, const Policy& policy,
                                       const Policy* pretrained, const Mlp& g_phi,
                                       const Mlp* correction, const Trajectory& traj,
                                       const std::vector<SelectedTransition>& selected,
                                       const NoiseSchedule& schedule, const RewardSpec& reward,
                                       const LossWeights& weights, const Policy* prev_policy,
                                       Rng& rng);

// --- diagnostics -------------------------------------------------------------

struct FisherGap {
  double fisher = 0.0;     // MC mean of the directly assembled integrand
  double half_loss = 0.0;  // MC mean of 0.5 * forward balance loss
  double max_abs_gap = 0.0;
};

// Samples x_{t+1} ~ P_F(. | x_t) n times and evaluates both routes on the
// same draws.
FisherGap fisher_divergence_gap(const Policy& policy, const FlowScoreFn& flow, const Vec& x_t,
                                int t, int n, const NoiseSchedule& schedule, Rng& rng);

// | sum_t (log P_F - log P_F^#) + rflow_log(x_0, 0) - beta log R(x_T) |.
double relative_tb_residual(const Policy& policy, const Policy& pretrained,
                            const ScalarFlowFn& rflow_log, const Trajectory& traj,
                            const RewardSpec& reward, double beta, const NoiseSchedule& schedule);

}  // namespace ngfn
