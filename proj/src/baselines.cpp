#include "ngfn/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ngfn {
namespace {

constexpr double kPi = 3.14159265358979323846;

double gauss_logp(const Vec& x, const Vec& mean, double std) {
  const double d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2.0 * kPi * std * std) -
         (x - mean).squaredNorm() / (2.0 * std * std);
}

// log N(x_next; mu_node, std^2 I) with x_next held constant.
ad::Var gauss_logp_node(ad::Tape& tape, const Vec& x_next, ad::Var mu, double std) {
  const double d = static_cast<double>(x_next.size());
  ad::Var sq = tape.sqnorm(tape.sub(tape.constant(x_next), mu));
  return tape.add(tape.scale(sq, -0.5 / (std * std)),
                  tape.constant_scalar(-0.5 * d * std::log(2.0 * kPi * std * std)));
}

// log R as a scalar node with the analytic reward gradient as its vjp. The
// spec is captured by value: backward() may run after the caller's reference
// expires.
ad::Var log_reward_node(ad::Tape& tape, const RewardSpec& reward, ad::Var x) {
  Mat value(1, 1);
  value(0, 0) = log_reward(reward, tape.val(x));
  return tape.custom(x, value, [reward](const Mat& in, const Mat& g) -> Mat {
    return g(0, 0) * log_reward_grad(reward, in);
  });
}

Vec terminal_rewards(const std::vector<Trajectory>& trajectories, const RewardSpec& spec) {
  Vec r(static_cast<int>(trajectories.size()));
  for (int i = 0; i < r.size(); ++i) {
    r[i] = reward(spec, trajectories[static_cast<size_t>(i)].states.back());
  }
  return r;
}

void check_trajectories(const std::vector<Trajectory>& trajectories, const NoiseSchedule& s,
                        const Vec& advantages) {
  if (trajectories.empty()) throw ConfigError("ddpo_loss: empty trajectory batch");
  if (advantages.size() != static_cast<int>(trajectories.size())) {
    throw ConfigError("ddpo_loss: one advantage per trajectory required");
  }
  for (const auto& traj : trajectories) {
    if (static_cast<int>(traj.states.size()) != s.T + 1) {
      throw ConfigError("ddpo_loss: trajectory length does not match schedule");
    }
  }
}

}  // namespace

Vec normalized_advantages(const Vec& rewards) {
  const int n = static_cast<int>(rewards.size());
  if (n < 2) return Vec::Zero(n);
  const double mean = rewards.mean();
  const double var = (rewards.array() - mean).square().sum() / n;
  // Identical rewards can leave rounding dust in var; treat that as zero too.
  if (var <= 1e-24 * (1.0 + mean * mean)) return Vec::Zero(n);
  return ((rewards.array() - mean) / std::sqrt(var)).matrix();
}

FinetuneMethod parse_finetune_method(const std::string& name) {
  if (name == "res_grad_db") return FinetuneMethod::kResGradDb;
  if (name == "grad_db") return FinetuneMethod::kGradDb;
  if (name == "dag_db") return FinetuneMethod::kDagDb;
  if (name == "res_db") return FinetuneMethod::kResDb;
  if (name == "ddpo") return FinetuneMethod::kDdpo;
  if (name == "refl") return FinetuneMethod::kRefl;
  if (name == "draft_k") return FinetuneMethod::kDraftK;
  if (name == "draft_lv") return FinetuneMethod::kDraftLv;
  throw ConfigError("unknown finetune method: " + name);
}

const char* finetune_method_name(FinetuneMethod m) {
  switch (m) {
    case FinetuneMethod::kResGradDb: return "res_grad_db";
    case FinetuneMethod::kGradDb: return "grad_db";
    case FinetuneMethod::kDagDb: return "dag_db";
    case FinetuneMethod::kResDb: return "res_db";
    case FinetuneMethod::kDdpo: return "ddpo";
    case FinetuneMethod::kRefl: return "refl";
    case FinetuneMethod::kDraftK: return "draft_k";
    case FinetuneMethod::kDraftLv: return "draft_lv";
  }
  throw ConfigError("unknown finetune method enum value");
}

void BaselineConfig::validate() const {
  if (!(clip_ratio > 0.0)) throw ConfigError("clip_ratio must be > 0");
  if (!(stop_lo > 0.0 && stop_lo <= stop_hi && stop_hi < 1.0)) {
    throw ConfigError("stop window must satisfy 0 < lo <= hi < 1");
  }
  if (k < 1) throw ConfigError("draft depth k must be >= 1");
}

double ddpo_loss(const Policy& policy, const Policy& behavior,
                 const std::vector<Trajectory>& trajectories, const RewardSpec& reward,
                 const BaselineConfig& config, const NoiseSchedule& schedule) {
  return ddpo_loss_with_advantages(policy, behavior, trajectories,
                                   normalized_advantages(terminal_rewards(trajectories, reward)),
                                   config, schedule);
}

double ddpo_loss_with_advantages(const Policy& policy, const Policy& behavior,
                                 const std::vector<Trajectory>& trajectories,
                                 const Vec& adv, const BaselineConfig& config,
                                 const NoiseSchedule& schedule) {
  config.validate();
  check_trajectories(trajectories, schedule, adv);
  double total = 0.0;
  int count = 0;
  for (int i = 0; i < static_cast<int>(trajectories.size()); ++i) {
    const auto& states = trajectories[static_cast<size_t>(i)].states;
    for (int t = 0; t < schedule.T; ++t) {
      const Vec& x_t = states[static_cast<size_t>(t)];
      const Vec& x_next = states[static_cast<size_t>(t + 1)];
      const double logp = gauss_logp(x_next, forward_policy_params(policy, x_t, t, schedule).mean,
                                     policy.stddev(t));
      const double logp_b = gauss_logp(
          x_next, forward_policy_params(behavior, x_t, t, schedule).mean, behavior.stddev(t));
      const double rho = std::exp(logp - logp_b);
      const double clipped = std::clamp(rho, 1.0 - config.clip_ratio, 1.0 + config.clip_ratio);
      total += std::min(rho * adv[i], clipped * adv[i]);
      ++count;
    }
  }
  return -total / count;
}

ad::Var ddpo_loss_node(ad::Tape& tape, const Policy& policy, const Policy& behavior,
                       const std::vector<Trajectory>& trajectories, const RewardSpec& reward,
                       const BaselineConfig& config, const NoiseSchedule& schedule) {
  return ddpo_loss_with_advantages_node(
      tape, policy, behavior, trajectories,
      normalized_advantages(terminal_rewards(trajectories, reward)), config, schedule);
}

ad::Var ddpo_loss_with_advantages_node(ad::Tape& tape, const Policy& policy,
                                       const Policy& behavior,
                                       const std::vector<Trajectory>& trajectories,
                                       const Vec& adv, const BaselineConfig& config,
                                       const NoiseSchedule& schedule) {
  config.validate();
  check_trajectories(trajectories, schedule, adv);
  ad::Var total = tape.constant_scalar(0.0);
  int count = 0;
  for (int i = 0; i < static_cast<int>(trajectories.size()); ++i) {
    const auto& states = trajectories[static_cast<size_t>(i)].states;
    for (int t = 0; t < schedule.T; ++t) {
      const Vec& x_t = states[static_cast<size_t>(t)];
      const Vec& x_next = states[static_cast<size_t>(t + 1)];
      ad::Var mu = policy_mean_node(tape, policy, tape.constant(x_t), t, schedule);
      ad::Var logp = gauss_logp_node(tape, x_next, mu, policy.stddev(t));
      const double logp_b = gauss_logp(
          x_next, forward_policy_params(behavior, x_t, t, schedule).mean, behavior.stddev(t));
      ad::Var ratio = tape.exp_scalar(tape.sub(logp, tape.constant_scalar(logp_b)));
      const double rho = tape.scalar(ratio);
      const double clipped = std::clamp(rho, 1.0 - config.clip_ratio, 1.0 + config.clip_ratio);
      // min() picks a branch by value; ties go to the live ratio branch so the
      // interior of the clip band keeps its gradient.
      ad::Var term = rho * adv[i] <= clipped * adv[i] ? tape.scale(ratio, adv[i])
                                                      : tape.constant_scalar(clipped * adv[i]);
      total = tape.add(total, term);
      ++count;
    }
  }
  return tape.scale(total, -1.0 / count);
}

int refl_stop_step(const BaselineConfig& config, int T, Rng& rng) {
  config.validate();
  const int lo = std::max(1, static_cast<int>(std::ceil(config.stop_lo * T)));
  const int hi = std::min(T - 1, static_cast<int>(std::floor(config.stop_hi * T)));
  if (lo > hi) throw ConfigError("refl stop window is empty for this schedule");
  return rng.uniform_int(lo, hi);
}

double refl_loss_at(const Policy& policy, const Trajectory& traj, const RewardSpec& reward,
                    const NoiseSchedule& schedule, int t) {
  const Vec x_hat = predict_clean(policy, traj.states[static_cast<size_t>(t)], t, schedule);
  return -log_reward(reward, x_hat);
}

ad::Var refl_loss_at_node(ad::Tape& tape, const Policy& policy, const Trajectory& traj,
                          const RewardSpec& reward, const NoiseSchedule& schedule, int t) {
  ad::Var x_hat = predict_clean_node(
      tape, policy, tape.constant(traj.states[static_cast<size_t>(t)]), t, schedule);
  return tape.scale(log_reward_node(tape, reward, x_hat), -1.0);
}

double refl_loss(const Policy& policy, const Trajectory& traj, const RewardSpec& reward,
                 const BaselineConfig& config, const NoiseSchedule& schedule, Rng& rng) {
  return refl_loss_at(policy, traj, reward, schedule, refl_stop_step(config, schedule.T, rng));
}

ad::Var refl_loss_node(ad::Tape& tape, const Policy& policy, const Trajectory& traj,
                       const RewardSpec& reward, const BaselineConfig& config,
                       const NoiseSchedule& schedule, Rng& rng) {
  return refl_loss_at_node(tape, policy, traj, reward, schedule,
                           refl_stop_step(config, schedule.T, rng));
}

double draft_loss(const Policy& policy, const Trajectory& traj, const RewardSpec& reward, int k,
                  DraftVariant variant, Rng& rng, const NoiseSchedule& schedule) {
  if (k < 1 || k > schedule.T) throw ConfigError("draft depth k out of range");
  const int d = policy.dim();
  Vec x = traj.states[static_cast<size_t>(schedule.T - k)];
  for (int t = schedule.T - k; t < schedule.T; ++t) {
    const Vec mu = forward_policy_params(policy, x, t, schedule).mean;
    x = mu + policy.stddev(t) * rng.normal_vec(d);
  }
  if (variant == DraftVariant::kLv) {
    const GaussParams noised = backward_policy_params(x, schedule.T - 1, schedule);
    const Vec y = noised.mean + noised.std * rng.normal_vec(d);
    const Vec mu = forward_policy_params(policy, y, schedule.T - 1, schedule).mean;
    x = mu + policy.stddev(schedule.T - 1) * rng.normal_vec(d);
  }
  return -log_reward(reward, x);
}

ad::Var draft_loss_node(ad::Tape& tape, const Policy& policy, const Trajectory& traj,
                        const RewardSpec& reward, int k, DraftVariant variant, Rng& rng,
                        const NoiseSchedule& schedule) {
  if (k < 1 || k > schedule.T) throw ConfigError("draft depth k out of range");
  const int d = policy.dim();
  ad::Var x = tape.constant(traj.states[static_cast<size_t>(schedule.T - k)]);
  for (int t = schedule.T - k; t < schedule.T; ++t) {
    ad::Var mu = policy_mean_node(tape, policy, x, t, schedule);
    x = tape.add(mu, tape.constant((policy.stddev(t) * rng.normal_vec(d)).eval()));
  }
  if (variant == DraftVariant::kLv) {
    const int t = schedule.T - 1;
    const double std_b = std::sqrt(1.0 - schedule.ratio(t));
    ad::Var y = tape.add(tape.scale(x, std::sqrt(schedule.ratio(t))),
                         tape.constant((std_b * rng.normal_vec(d)).eval()));
    ad::Var mu = policy_mean_node(tape, policy, y, t, schedule);
    x = tape.add(mu, tape.constant((policy.stddev(t) * rng.normal_vec(d)).eval()));
  }
  return tape.scale(log_reward_node(tape, reward, x), -1.0);
}

}  // namespace ngfn
