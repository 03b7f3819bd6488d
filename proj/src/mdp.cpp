#include "ngfn/mdp.hpp"

#include <cmath>

namespace ngfn {

ad::Var Policy::eps_node(ad::Tape& tape, ad::Var x_node, int t) const {
  return tape.constant(eps(tape.val(x_node), t));
}

ad::Var Policy::eps_vjp_node(ad::Tape& tape, ad::Var x_node, int t, ad::Var cot) const {
  return tape.constant(eps_vjp(tape.val(x_node), t, tape.val(cot)));
}

Vec initial_sample(int dim, Rng& rng) { return rng.normal_vec(dim); }

GaussParams backward_policy_params(const Vec& x_next, int t, const NoiseSchedule& schedule) {
  const double r = schedule.ratio(t);
  return {std::sqrt(r) * x_next, std::sqrt(1.0 - r)};
}

GaussParams marginal_noising(const Vec& x_terminal, int t, const NoiseSchedule& schedule) {
  const double a = schedule.abar_state(t);
  return {std::sqrt(a) * x_terminal, std::sqrt(1.0 - a)};
}

Vec predict_clean(const Policy& policy, const Vec& x, int t, const NoiseSchedule& schedule) {
  if (t == schedule.T) return x;
  const double a = schedule.abar_state(t);
  return (x - std::sqrt(1.0 - a) * policy.eps(x, t)) / std::sqrt(a);
}

GaussParams back_project(const Vec& x_hat, const Vec& x_from, int t_next,
                         const NoiseSchedule& schedule) {
  const int t = t_next - 1;
  const double a = schedule.abar_state(t);
  const double ap = schedule.abar_state(t_next);
  const double r = schedule.ratio(t);
  Vec mean = (std::sqrt(ap) * (1.0 - r) * x_hat + std::sqrt(r) * (1.0 - ap) * x_from) / (1.0 - a);
  return {std::move(mean), schedule.sigma[static_cast<size_t>(t)]};
}

GaussParams forward_policy_params(const Policy& policy, const Vec& x, int t,
                                  const NoiseSchedule& schedule) {
  const double a = schedule.abar_state(t);
  const double r = schedule.ratio(t);
  const Vec e = policy.eps(x, t);
  if (!all_finite(e)) throw NumericalError("policy produced non-finite noise prediction", t);
  Vec mean = (x - ((1.0 - r) / std::sqrt(1.0 - a)) * e) / std::sqrt(r);
  if (!all_finite(mean)) throw NumericalError("policy step mean is non-finite", t);
  return {std::move(mean), policy.stddev(t)};
}

Trajectory sample_trajectory(const Policy& policy, const NoiseSchedule& schedule, int dim,
                             std::uint64_t seed) {
  Trajectory traj;
  traj.seed = seed;
  traj.states.resize(static_cast<size_t>(schedule.T) + 1);
  Rng rng(seed);
  traj.states[0] = initial_sample(dim, rng);
  for (int t = 0; t < schedule.T; ++t) {
    const GaussParams p = forward_policy_params(policy, traj.states[static_cast<size_t>(t)], t, schedule);
    traj.states[static_cast<size_t>(t + 1)] = p.mean + p.std * rng.normal_vec(dim);
  }
  return traj;
}

ad::Var policy_mean_node(ad::Tape& tape, const Policy& policy, ad::Var x_node, int t,
                         const NoiseSchedule& schedule) {
  const double a = schedule.abar_state(t);
  const double r = schedule.ratio(t);
  ad::Var e = policy.eps_node(tape, x_node, t);
  ad::Var scaled = tape.scale(e, (1.0 - r) / std::sqrt(1.0 - a));
  return tape.scale(tape.sub(x_node, scaled), 1.0 / std::sqrt(r));
}

ad::Var predict_clean_node(ad::Tape& tape, const Policy& policy, ad::Var x_node, int t,
                           const NoiseSchedule& schedule) {
  if (t == schedule.T) return x_node;
  const double a = schedule.abar_state(t);
  ad::Var e = policy.eps_node(tape, x_node, t);
  return tape.scale(tape.sub(x_node, tape.scale(e, std::sqrt(1.0 - a))), 1.0 / std::sqrt(a));
}

}  // namespace ngfn
