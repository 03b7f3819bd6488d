#pragma once

#include <cstdint>
#include <vector>

#include "ngfn/common.hpp"
#include "ngfn/mlp.hpp"
#include "ngfn/rng.hpp"
#include "ngfn/schedule.hpp"
#include "ngfn/tape.hpp"

namespace ngfn {

struct DiffusionState {
  Vec x;
  int t = 0;  // 0 = noise end, T = data end
};

// One sampler step x_t -> x_{t+1}, 0 <= t < T.
struct Transition {
  Vec x_t;
  Vec x_next;
  int t = 0;
};

struct Trajectory {
  std::vector<Vec> states;  // size T+1
  std::uint64_t seed = 0;
};

struct GaussParams {
  Vec mean;
  double std = 0.0;
};

// Gaussian denoising policy, parameterized by its noise prediction.
// The step mean is recovered from eps through the shared inversion
//   mu(x, t) = (x - ((1 - r_t) / sqrt(1 - a)) eps(x, t)) / sqrt(r_t),
// a = alpha_bar[T - t], so analytic policies and network policies share all
// downstream formulas (clean-data prediction included). The per-step standard
// deviation is the policy's own; network policies take it from the schedule.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual int dim() const = 0;
  virtual Vec eps(const Vec& x, int t) const = 0;
  // (d eps / d x)^T cot
  virtual Vec eps_vjp(const Vec& x, int t, const Vec& cot) const = 0;
  virtual double stddev(int t) const = 0;

  // Tape forms; the default implementations wrap the plain evaluations as
  // constants, which is exact for parameter-free policies.
  virtual ad::Var eps_node(ad::Tape& tape, ad::Var x_node, int t) const;
  virtual ad::Var eps_vjp_node(ad::Tape& tape, ad::Var x_node, int t, ad::Var cot) const;
};

// Policy backed by a noise-prediction network; stddev comes from the schedule.
class NetPolicy : public Policy {
 public:
  NetPolicy(const Mlp& net, const NoiseSchedule& schedule) : net_(&net), sched_(&schedule) {}
  int dim() const override { return net_->spec().in_dim; }
  Vec eps(const Vec& x, int t) const override { return net_->forward(x, t); }
  Vec eps_vjp(const Vec& x, int t, const Vec& cot) const override {
    return net_->vjp_input(x, t, cot);
  }
  double stddev(int t) const override { return sched_->sigma[static_cast<size_t>(t)]; }
  ad::Var eps_node(ad::Tape& tape, ad::Var x_node, int t) const override {
    return net_->forward_node(tape, x_node, t);
  }
  ad::Var eps_vjp_node(ad::Tape& tape, ad::Var x_node, int t, ad::Var cot) const override {
    return net_->vjp_input_node(tape, x_node, t, cot);
  }
  const Mlp& net() const { return *net_; }

 private:
  const Mlp* net_;
  const NoiseSchedule* sched_;
};

// Standard normal start of the chain.
Vec initial_sample(int dim, Rng& rng);

// Noising kernel q(x_t | x_{t+1}) at transition t.
GaussParams backward_policy_params(const Vec& x_next, int t, const NoiseSchedule& schedule);

// Closed-form noising marginal q(x_t | x_T).
GaussParams marginal_noising(const Vec& x_terminal, int t, const NoiseSchedule& schedule);

// Clean-data prediction from the policy's noise prediction; identity at t = T.
Vec predict_clean(const Policy& policy, const Vec& x, int t, const NoiseSchedule& schedule);

// Denoising-step parameters expressed through the predicted clean data:
//   mean = [sqrt(a') (1 - r) x_hat + sqrt(r) (1 - a') x_from] / (1 - a)
// with a = abar at the source state and a' at the target state. `x_from` is
// the transition source; the noise direction is not recoverable from x_hat
// alone, so back-projection takes the pair.
GaussParams back_project(const Vec& x_hat, const Vec& x_from, int t_next,
                         const NoiseSchedule& schedule);

// Denoising-step parameters straight from the noise prediction at (x, t).
// Algebraically identical to back_project(predict_clean(...), x, t+1, ...).
GaussParams forward_policy_params(const Policy& policy, const Vec& x, int t,
                                  const NoiseSchedule& schedule);

// Rolls the policy from the standard-normal start to x_T; all randomness is
// drawn from `seed`, which the trajectory records.
Trajectory sample_trajectory(const Policy& policy, const NoiseSchedule& schedule, int dim,
                             std::uint64_t seed);

// Tape forms used inside losses. The input may itself be a graph node so
// reward-chasing baselines can differentiate through sampled steps.
ad::Var policy_mean_node(ad::Tape& tape, const Policy& policy, ad::Var x_node, int t,
                         const NoiseSchedule& schedule);
ad::Var predict_clean_node(ad::Tape& tape, const Policy& policy, ad::Var x_node, int t,
                           const NoiseSchedule& schedule);

}  // namespace ngfn
