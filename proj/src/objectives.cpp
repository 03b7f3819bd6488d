#include "ngfn/objectives.hpp"

#include <cmath>

namespace ngfn {

void LossWeights::validate() const {
  if (!(beta >= 0.0)) throw ConfigError("weights: beta must be >= 0");
  if (w_f < 0.0 || w_b < 0.0) throw ConfigError("weights: direction weights must be >= 0");
  if (lambda_reg < 0.0) throw ConfigError("weights: lambda_reg must be >= 0");
  if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("weights: eta must lie in (0, 1]");
  if (smooth_c < 0.0) throw ConfigError("weights: smooth_c must be >= 0");
  if (smooth_n < 1) throw ConfigError("weights: smooth_n must be >= 1");
}

double log_normal_density(const Vec& y, const Vec& mean, double std) {
  const double var = std * std;
  return -(y - mean).squaredNorm() / (2.0 * var) -
         0.5 * static_cast<double>(y.size()) * std::log(2.0 * M_PI * var);
}

// --- scores ---------------------------------------------------------------

Vec policy_score(Direction dir, const Policy& policy, const Transition& tr,
                 const NoiseSchedule& schedule) {
  const GaussParams p = forward_policy_params(policy, tr.x_t, tr.t, schedule);
  const double var = p.std * p.std;
  if (dir == Direction::kForward) return (p.mean - tr.x_next) / var;
  const Vec w = (tr.x_next - p.mean) / var;
  const double a = schedule.abar_state(tr.t);
  const double r = schedule.ratio(tr.t);
  return (w - ((1.0 - r) / std::sqrt(1.0 - a)) * policy.eps_vjp(tr.x_t, tr.t, w)) / std::sqrt(r);
}

ad::Var policy_score_node(ad::Tape& tape, Direction dir, const Policy& policy,
                          const Transition& tr, const NoiseSchedule& schedule) {
  ad::Var x = tape.constant(tr.x_t);
  ad::Var mu = policy_mean_node(tape, policy, x, tr.t, schedule);
  const double std = policy.stddev(tr.t);
  const double inv_var = 1.0 / (std * std);
  if (dir == Direction::kForward) {
    return tape.scale(tape.sub(mu, tape.constant(tr.x_next)), inv_var);
  }
  ad::Var w = tape.scale(tape.sub(tape.constant(tr.x_next), mu), inv_var);
  const double a = schedule.abar_state(tr.t);
  const double r = schedule.ratio(tr.t);
  ad::Var jw = policy.eps_vjp_node(tape, x, tr.t, w);
  return tape.scale(tape.sub(w, tape.scale(jw, (1.0 - r) / std::sqrt(1.0 - a))),
                    1.0 / std::sqrt(r));
}

Vec backward_score(Direction dir, const Transition& tr, const NoiseSchedule& schedule) {
  const double r = schedule.ratio(tr.t);
  const double root_r = std::sqrt(r);
  const Vec resid = (tr.x_t - root_r * tr.x_next) / (1.0 - r);
  return dir == Direction::kForward ? Vec(root_r * resid) : Vec(-resid);
}

Vec residual_policy_score(Direction dir, const Policy& policy, const Policy& pretrained,
                          const Transition& tr, const NoiseSchedule& schedule, double eta) {
  return policy_score(dir, policy, tr, schedule) -
         eta * policy_score(dir, pretrained, tr, schedule);
}

ad::Var residual_policy_score_node(ad::Tape& tape, Direction dir, const Policy& policy,
                                   const Policy& pretrained, const Transition& tr,
                                   const NoiseSchedule& schedule, double eta) {
  ad::Var live = policy_score_node(tape, dir, policy, tr, schedule);
  ad::Var frozen = tape.constant(Vec(eta * policy_score(dir, pretrained, tr, schedule)));
  return tape.sub(live, frozen);
}

// --- flow-score parameterization -------------------------------------------

namespace {

// beta * gamma_t * (d x_hat / d x)^T smoothed grad log R(x_hat(x)); the part
// of the flow score that carries no trainable parameters of its own.
Vec fl_reward_term(const Policy& policy, const Vec& x, int t, const NoiseSchedule& schedule,
                   const RewardSpec& reward, const LossWeights& weights, Rng& rng) {
  const double coeff = weights.beta * weights.gamma(t, schedule);
  const Vec x_hat = predict_clean(policy, x, t, schedule);
  const Vec sg = smoothed_log_reward_grad(reward, x_hat, weights.smooth_c, weights.smooth_n, rng);
  if (t == schedule.T) return coeff * sg;
  const double a = schedule.abar_state(t);
  return (coeff / std::sqrt(a)) * (sg - std::sqrt(1.0 - a) * policy.eps_vjp(x, t, sg));
}

// Same quantity as a live graph; draws smoothing noise in the same order as
// the plain evaluation above.
ad::Var fl_reward_term_node(ad::Tape& tape, const Policy& policy, const Vec& x, int t,
                            const NoiseSchedule& schedule, const RewardSpec& reward,
                            const LossWeights& weights, Rng& rng) {
  const double coeff = weights.beta * weights.gamma(t, schedule);
  ad::Var x_node = tape.constant(x);
  ad::Var x_hat = predict_clean_node(tape, policy, x_node, t, schedule);
  auto reward_grad_at = [&](ad::Var point) {
    Mat value = log_reward_grad(reward, tape.val(point));
    return tape.custom(point, value, [reward](const Mat& in, const Mat& g) -> Mat {
      return log_reward_hess(reward, in) * g;
    });
  };
  ad::Var sg;
  if (weights.smooth_c == 0.0) {
    sg = reward_grad_at(x_hat);
  } else {
    const double sd = std::sqrt(weights.smooth_c);
    for (int i = 0; i < weights.smooth_n; ++i) {
      ad::Var pert = tape.add(x_hat, tape.constant(Vec(sd * rng.normal_vec(static_cast<int>(x.size())))));
      ad::Var gi = reward_grad_at(pert);
      sg = sg.valid() ? tape.add(sg, gi) : gi;
    }
    sg = tape.scale(sg, 1.0 / weights.smooth_n);
  }
  if (t == schedule.T) return tape.scale(sg, coeff);
  const double a = schedule.abar_state(t);
  ad::Var jv = policy.eps_vjp_node(tape, x_node, t, sg);
  return tape.scale(tape.sub(sg, tape.scale(jv, std::sqrt(1.0 - a))), coeff / std::sqrt(a));
}

}  // namespace

Vec fl_flow_score(const Mlp& g_phi, const Policy& policy, const DiffusionState& state,
                  const NoiseSchedule& schedule, const RewardSpec& reward,
                  const LossWeights& weights, Rng& rng) {
  return fl_reward_term(policy, state.x, state.t, schedule, reward, weights, rng) +
         g_phi.forward(state.x, state.t);
}

ad::Var fl_flow_score_node(ad::Tape& tape, const Mlp& g_phi, const Policy& policy,
                           const DiffusionState& state, const NoiseSchedule& schedule,
                           const RewardSpec& reward, const LossWeights& weights, Rng& rng) {
  ad::Var reward_part =
      weights.second_order
          ? fl_reward_term_node(tape, policy, state.x, state.t, schedule, reward, weights, rng)
          : tape.constant(fl_reward_term(policy, state.x, state.t, schedule, reward, weights, rng));
  return tape.add(reward_part, g_phi.forward_node(tape, state.x, state.t));
}

// --- losses -----------------------------------------------------------------

double loss_grad_db(Direction dir, const Policy& policy, const FlowScoreFn& flow,
                    const Transition& tr, const NoiseSchedule& schedule) {
  const Vec ps = policy_score(dir, policy, tr, schedule);
  const Vec bs = backward_score(dir, tr, schedule);
  if (dir == Direction::kForward) {
    return (ps - bs - flow.eval(tr.x_next, tr.t + 1)).squaredNorm();
  }
  return (ps - bs + flow.eval(tr.x_t, tr.t)).squaredNorm();
}

ad::Var loss_grad_db_node(ad::Tape& tape, Direction dir, const Policy& policy,
                          const FlowScoreFn& flow, const Transition& tr,
                          const NoiseSchedule& schedule) {
  ad::Var ps = policy_score_node(tape, dir, policy, tr, schedule);
  ad::Var bs = tape.constant(backward_score(dir, tr, schedule));
  ad::Var resid;
  if (dir == Direction::kForward) {
    resid = tape.sub(tape.sub(ps, bs), flow.as_node(tape, tr.x_next, tr.t + 1));
  } else {
    resid = tape.add(tape.sub(ps, bs), flow.as_node(tape, tr.x_t, tr.t));
  }
  return tape.sqnorm(resid);
}

double loss_grad_db_terminal(const FlowScoreFn& flow, const Vec& x_terminal,
                             const RewardSpec& reward, double beta, int T) {
  return (flow.eval(x_terminal, T) - beta * log_reward_grad(reward, x_terminal)).squaredNorm();
}

ad::Var loss_grad_db_terminal_node(ad::Tape& tape, const FlowScoreFn& flow,
                                   const Vec& x_terminal, const RewardSpec& reward, double beta,
                                   int T) {
  ad::Var target = tape.constant(Vec(beta * log_reward_grad(reward, x_terminal)));
  return tape.sqnorm(tape.sub(flow.as_node(tape, x_terminal, T), target));
}

double loss_res_grad_db(Direction dir, const Policy& policy, const Policy& pretrained,
                        const FlowScoreFn& rflow, const Transition& tr,
                        const NoiseSchedule& schedule, double eta) {
  const Vec rps = residual_policy_score(dir, policy, pretrained, tr, schedule, eta);
  if (dir == Direction::kForward) {
    return (rps - rflow.eval(tr.x_next, tr.t + 1)).squaredNorm();
  }
  return (rps + rflow.eval(tr.x_t, tr.t)).squaredNorm();
}

ad::Var loss_res_grad_db_node(ad::Tape& tape, Direction dir, const Policy& policy,
                              const Policy& pretrained, const FlowScoreFn& rflow,
                              const Transition& tr, const NoiseSchedule& schedule, double eta) {
  ad::Var rps = residual_policy_score_node(tape, dir, policy, pretrained, tr, schedule, eta);
  ad::Var resid;
  if (dir == Direction::kForward) {
    resid = tape.sub(rps, rflow.as_node(tape, tr.x_next, tr.t + 1));
  } else {
    resid = tape.add(rps, rflow.as_node(tape, tr.x_t, tr.t));
  }
  return tape.sqnorm(resid);
}

double loss_terminal_fl(const Mlp& g_phi, const Vec& x_terminal, int T) {
  return g_phi.forward(x_terminal, T).squaredNorm();
}

ad::Var loss_terminal_fl_node(ad::Tape& tape, const Mlp& g_phi, const Vec& x_terminal, int T) {
  return tape.sqnorm(g_phi.forward_node(tape, x_terminal, T));
}

double loss_bidirectional(const Policy& policy, const Policy& pretrained, const Vec& x_t,
                          const Vec& x_mid, const Vec& x_top, int t,
                          const NoiseSchedule& schedule, double eta) {
  const Transition lo{x_t, x_mid, t};
  const Transition hi{x_mid, x_top, t + 1};
  const Vec fwd = residual_policy_score(Direction::kForward, policy, pretrained, lo, schedule, eta);
  const Vec rev = residual_policy_score(Direction::kReverse, policy, pretrained, hi, schedule, eta);
  return (fwd + rev).squaredNorm();
}

ad::Var loss_bidirectional_node(ad::Tape& tape, const Policy& policy, const Policy& pretrained,
                                const Vec& x_t, const Vec& x_mid, const Vec& x_top, int t,
                                const NoiseSchedule& schedule, double eta) {
  const Transition lo{x_t, x_mid, t};
  const Transition hi{x_mid, x_top, t + 1};
  ad::Var fwd = residual_policy_score_node(tape, Direction::kForward, policy, pretrained, lo,
                                           schedule, eta);
  ad::Var rev = residual_policy_score_node(tape, Direction::kReverse, policy, pretrained, hi,
                                           schedule, eta);
  return tape.sqnorm(tape.add(fwd, rev));
}

namespace {

double scalar_fl_log_flow(const Policy& policy, const ScalarFlowFn& sflow, const Vec& x, int t,
                          const NoiseSchedule& schedule, const RewardSpec& reward, double beta) {
  return beta * log_reward(reward, predict_clean(policy, x, t, schedule)) + sflow.eval(x, t);
}

// beta log R(x_hat(x, t)) as a live node; first-order in the policy, so it
// stays differentiable even in the default mode.
ad::Var scaled_log_reward_at_clean_node(ad::Tape& tape, const Policy& policy, const Vec& x,
                                        int t, const NoiseSchedule& schedule,
                                        const RewardSpec& reward, double beta) {
  ad::Var x_hat = predict_clean_node(tape, policy, tape.constant(x), t, schedule);
  Mat value(1, 1);
  value(0, 0) = log_reward(reward, tape.val(x_hat));
  ad::Var lr = tape.custom(x_hat, value, [reward](const Mat& in, const Mat& g) -> Mat {
    return g(0, 0) * log_reward_grad(reward, in);
  });
  return tape.scale(lr, beta);
}

}  // namespace

double loss_db_fl(const Policy& policy, const Policy* pretrained, const ScalarFlowFn& sflow,
                  const Transition& tr, const NoiseSchedule& schedule, const RewardSpec& reward,
                  double beta, DbFlVariant variant) {
  const GaussParams pf = forward_policy_params(policy, tr.x_t, tr.t, schedule);
  const double log_pf = log_normal_density(tr.x_next, pf.mean, pf.std);
  double delta = 0.0;
  if (variant == DbFlVariant::kPlain) {
    const GaussParams pb = backward_policy_params(tr.x_next, tr.t, schedule);
    const double log_pb = log_normal_density(tr.x_t, pb.mean, pb.std);
    delta = log_pf +
            scalar_fl_log_flow(policy, sflow, tr.x_t, tr.t, schedule, reward, beta) - log_pb -
            scalar_fl_log_flow(policy, sflow, tr.x_next, tr.t + 1, schedule, reward, beta);
  } else {
    if (pretrained == nullptr) throw ConfigError("loss_db_fl: residual variant needs a pretrained policy");
    const GaussParams pp = forward_policy_params(*pretrained, tr.x_t, tr.t, schedule);
    const double log_pp = log_normal_density(tr.x_next, pp.mean, pp.std);
    delta = (log_pf - log_pp) -
            beta * log_reward(reward, predict_clean(policy, tr.x_next, tr.t + 1, schedule)) -
            sflow.eval(tr.x_next, tr.t + 1);
  }
  return delta * delta;
}

ad::Var loss_db_fl_node(ad::Tape& tape, const Policy& policy, const Policy* pretrained,
                        const ScalarFlowFn& sflow, const Transition& tr,
                        const NoiseSchedule& schedule, const RewardSpec& reward, double beta,
                        DbFlVariant variant) {
  ad::Var x = tape.constant(tr.x_t);
  ad::Var mu = policy_mean_node(tape, policy, x, tr.t, schedule);
  const double std = policy.stddev(tr.t);
  const double var = std * std;
  const double d = static_cast<double>(tr.x_t.size());
  ad::Var log_pf = tape.add(
      tape.scale(tape.sqnorm(tape.sub(tape.constant(tr.x_next), mu)), -1.0 / (2.0 * var)),
      tape.constant_scalar(-0.5 * d * std::log(2.0 * M_PI * var)));
  ad::Var delta;
  if (variant == DbFlVariant::kPlain) {
    const GaussParams pb = backward_policy_params(tr.x_next, tr.t, schedule);
    const double log_pb = log_normal_density(tr.x_t, pb.mean, pb.std);
    ad::Var lr_t =
        scaled_log_reward_at_clean_node(tape, policy, tr.x_t, tr.t, schedule, reward, beta);
    ad::Var lr_next = scaled_log_reward_at_clean_node(tape, policy, tr.x_next, tr.t + 1,
                                                      schedule, reward, beta);
    ad::Var lhs = tape.add(log_pf, tape.add(lr_t, sflow.as_node(tape, tr.x_t, tr.t)));
    ad::Var rhs = tape.add(tape.add(tape.constant_scalar(log_pb), lr_next),
                           sflow.as_node(tape, tr.x_next, tr.t + 1));
    delta = tape.sub(lhs, rhs);
  } else {
    if (pretrained == nullptr) throw ConfigError("loss_db_fl: residual variant needs a pretrained policy");
    const GaussParams pp = forward_policy_params(*pretrained, tr.x_t, tr.t, schedule);
    const double log_pp = log_normal_density(tr.x_next, pp.mean, pp.std);
    ad::Var lr_next = scaled_log_reward_at_clean_node(tape, policy, tr.x_next, tr.t + 1,
                                                      schedule, reward, beta);
    delta = tape.sub(tape.sub(tape.sub(log_pf, tape.constant_scalar(log_pp)), lr_next),
                     sflow.as_node(tape, tr.x_next, tr.t + 1));
  }
  return tape.cmul(delta, delta);
}

double output_regularization(const Policy& policy, const Policy& prev_policy, const Vec& x,
                             int t) {
  return (policy.eps(x, t) - prev_policy.eps(x, t)).squaredNorm();
}

ad::Var output_regularization_node(ad::Tape& tape, const Policy& policy,
                                   const Policy& prev_policy, const Vec& x, int t) {
  ad::Var live = policy.eps_node(tape, tape.constant(x), t);
  return tape.sqnorm(tape.sub(live, tape.constant(prev_policy.eps(x, t))));
}

namespace {

// Gradient of the scalar correction h(x_t, x_{t+1}, t) in one argument.
// The pair is concatenated as [x_t; x_{t+1}] on the correction net's input.
Vec correction_grad(const Mlp& correction, const Vec& x_t, const Vec& x_next, int t,
                    Direction dir) {
  const int d = static_cast<int>(x_t.size());
  Vec pair(2 * d);
  pair.head(d) = x_t;
  pair.tail(d) = x_next;
  const Vec g = correction.vjp_input(pair, t, Vec::Ones(1));
  return dir == Direction::kForward ? Vec(g.tail(d)) : Vec(g.head(d));
}

ad::Var correction_grad_node(ad::Tape& tape, const Mlp& correction, const Vec& x_t,
                             const Vec& x_next, int t, Direction dir) {
  const int d = static_cast<int>(x_t.size());
  ad::Var pair = tape.concat(tape.constant(x_t), tape.constant(x_next));
  ad::Var g = correction.vjp_input_node(tape, pair, t, tape.constant(Vec::Ones(1)));
  return dir == Direction::kForward ? tape.slice(g, d, d) : tape.slice(g, 0, d);
}

}  // namespace

double corrected_residual_loss(Direction dir, const Policy& policy, const Policy& pretrained,
                               const FlowScoreFn& rflow, const Mlp& correction,
                               const Transition& tr, const NoiseSchedule& schedule, double eta) {
  const Vec rps = residual_policy_score(dir, policy, pretrained, tr, schedule, eta);
  const Vec h_grad = correction_grad(correction, tr.x_t, tr.x_next, tr.t, dir);
  if (dir == Direction::kForward) {
    return (rps - rflow.eval(tr.x_next, tr.t + 1) + h_grad).squaredNorm();
  }
  return (rps + rflow.eval(tr.x_t, tr.t) + h_grad).squaredNorm();
}

ad::Var corrected_residual_loss_node(ad::Tape& tape, Direction dir, const Policy& policy,
                                     const Policy& pretrained, const FlowScoreFn& rflow,
                                     const Mlp& correction, const Transition& tr,
                                     const NoiseSchedule& schedule, double eta) {
  ad::Var rps = residual_policy_score_node(tape, dir, policy, pretrained, tr, schedule, eta);
  ad::Var h_grad = correction_grad_node(tape, correction, tr.x_t, tr.x_next, tr.t, dir);
  ad::Var resid;
  if (dir == Direction::kForward) {
    resid = tape.add(tape.sub(rps, rflow.as_node(tape, tr.x_next, tr.t + 1)), h_grad);
  } else {
    resid = tape.add(tape.add(rps, rflow.as_node(tape, tr.x_t, tr.t)), h_grad);
  }
  return tape.sqnorm(resid);
}

// --- trajectory-level objective ----------------------------------------------

namespace {

void check_selected(const std::vector<SelectedTransition>& selected, int T) {
  if (selected.empty()) throw ConfigError("total loss: selected transitions must be nonempty");
  bool has_last = false;
  for (const SelectedTransition& s : selected) {
    if (s.t < 0 || s.t >= T) throw ConfigError("total loss: selected transition out of range");
    if (!(s.weight > 0.0)) throw ConfigError("total loss: selection weights must be positive");
    has_last = has_last || (s.t == T - 1);
  }
  if (!has_last) throw ConfigError("total loss: selection must include the final transition");
}

}  // namespace

LossPartsNode total_finetune_loss_node(ad::Tape& tape, const Policy& policy,
                                       const Policy* pretrained, const Mlp& g_phi,
                                       const Mlp* correction, const Trajectory& traj,
                                       const std::vector<SelectedTransition>& selected,
                                       const NoiseSchedule& schedule, const RewardSpec& reward,
                                       const LossWeights& weights, const Policy* prev_policy,
                                       Rng& rng) {
  weights.validate();
  check_selected(selected, schedule.T);
  if (correction != nullptr && pretrained == nullptr) {
    throw ConfigError("total loss: correction term requires the residual form");
  }

  FlowScoreFn flow{
      .eval = [&](const Vec& x, int t) {
        return fl_flow_score(g_phi, policy, {x, t}, schedule, reward, weights, rng);
      },
      .node = [&](ad::Tape& tp, const Vec& x, int t) {
        return fl_flow_score_node(tp, g_phi, policy, {x, t}, schedule, reward, weights, rng);
      }};

  LossPartsNode parts;
  parts.fwd = tape.constant_scalar(0.0);
  parts.rev = tape.constant_scalar(0.0);
  parts.reg = tape.constant_scalar(0.0);
  for (const SelectedTransition& sel : selected) {
    const Transition tr{traj.states[static_cast<size_t>(sel.t)],
                        traj.states[static_cast<size_t>(sel.t + 1)], sel.t};
    if (weights.w_f > 0.0) {
      ad::Var l =
          pretrained == nullptr
              ? loss_grad_db_node(tape, Direction::kForward, policy, flow, tr, schedule)
              : (correction != nullptr
                     ? corrected_residual_loss_node(tape, Direction::kForward, policy, *pretrained,
                                                    flow, *correction, tr, schedule, weights.eta)
                     : loss_res_grad_db_node(tape, Direction::kForward, policy, *pretrained, flow,
                                             tr, schedule, weights.eta));
      parts.fwd = tape.add(parts.fwd, tape.scale(l, sel.weight * weights.w_f));
    }
    if (weights.w_b > 0.0) {
      ad::Var l =
          pretrained == nullptr
              ? loss_grad_db_node(tape, Direction::kReverse, policy, flow, tr, schedule)
              : (correction != nullptr
                     ? corrected_residual_loss_node(tape, Direction::kReverse, policy, *pretrained,
                                                    flow, *correction, tr, schedule, weights.eta)
                     : loss_res_grad_db_node(tape, Direction::kReverse, policy, *pretrained, flow,
                                             tr, schedule, weights.eta));
      parts.rev = tape.add(parts.rev, tape.scale(l, sel.weight * weights.w_b));
    }
    if (weights.lambda_reg > 0.0 && prev_policy != nullptr) {
      ad::Var l = output_regularization_node(tape, policy, *prev_policy, tr.x_t, tr.t);
      parts.reg = tape.add(parts.reg, tape.scale(l, sel.weight * weights.lambda_reg));
    }
  }
  parts.terminal = loss_terminal_fl_node(tape, g_phi, traj.states.back(), schedule.T);
  parts.total = tape.add(tape.add(parts.fwd, parts.rev), tape.add(parts.terminal, parts.reg));
  return parts;
}

LossParts total_finetune_loss(const Policy& policy, const Policy* pretrained, const Mlp& g_phi,
                              const Mlp* correction, const Trajectory& traj,
                              const std::vector<SelectedTransition>& selected,
                              const NoiseSchedule& schedule, const RewardSpec& reward,
                              const LossWeights& weights, const Policy* prev_policy, Rng& rng) {
  ad::Tape tape;
  const LossPartsNode n =
      total_finetune_loss_node(tape, policy, pretrained, g_phi, correction, traj, selected,
                               schedule, reward, weights, prev_policy, rng);
  return {tape.scalar(n.fwd), tape.scalar(n.rev), tape.scalar(n.terminal), tape.scalar(n.reg)};
}

// --- diagnostics ---------------------------------------------------------------

FisherGap fisher_divergence_gap(const Policy& policy, const FlowScoreFn& flow, const Vec& x_t,
                                int t, int n, const NoiseSchedule& schedule, Rng& rng) {
  if (n < 1) throw ConfigError("fisher gap: need at least one sample");
  const GaussParams p = forward_policy_params(policy, x_t, t, schedule);
  const double var = p.std * p.std;
  FisherGap out;
  for (int i = 0; i < n; ++i) {
    const Vec x_next = p.mean + p.std * rng.normal_vec(static_cast<int>(x_t.size()));
    const Transition tr{x_t, x_next, t};
    // Route 1: score of P_F against the score of P_B F(x_{t+1}) assembled directly.
    const Vec score_pf = (p.mean - x_next) / var;
    const Vec score_q =
        backward_score(Direction::kForward, tr, schedule) + flow.eval(x_next, t + 1);
    const double lhs = 0.5 * (score_pf - score_q).squaredNorm();
    // Route 2: half the forward balance loss.
    const double rhs = 0.5 * loss_grad_db(Direction::kForward, policy, flow, tr, schedule);
    out.fisher += lhs;
    out.half_loss += rhs;
    out.max_abs_gap = std::max(out.max_abs_gap, std::abs(lhs - rhs));
  }
  out.fisher /= n;
  out.half_loss /= n;
  return out;
}

double relative_tb_residual(const Policy& policy, const Policy& pretrained,
                            const ScalarFlowFn& rflow_log, const Trajectory& traj,
                            const RewardSpec& reward, double beta, const NoiseSchedule& schedule) {
  double acc = rflow_log.eval(traj.states[0], 0);
  for (int t = 0; t < schedule.T; ++t) {
    const Vec& x = traj.states[static_cast<size_t>(t)];
    const Vec& x_next = traj.states[static_cast<size_t>(t + 1)];
    const GaussParams pf = forward_policy_params(policy, x, t, schedule);
    const GaussParams pp = forward_policy_params(pretrained, x, t, schedule);
    acc += log_normal_density(x_next, pf.mean, pf.std) -
           log_normal_density(x_next, pp.mean, pp.std);
  }
  acc -= beta * log_reward(reward, traj.states.back());
  return std::abs(acc);
}

}  // namespace ngfn
