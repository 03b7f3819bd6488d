#include "support/oracle.hpp"

#include <cmath>

#include "ngfn/reward.hpp"

namespace ngfn::test {

double GaussChain::log_marginal(const Vec& x, int t) const {
  const double a = abar(t);
  const double w = state_var(t);
  const Vec mean = std::sqrt(a) * m;
  return -(x - mean).squaredNorm() / (2.0 * w) -
         0.5 * static_cast<double>(x.size()) * std::log(2.0 * M_PI * w);
}

Vec GaussChain::marginal_score(const Vec& x, int t) const {
  const double a = abar(t);
  return -(x - std::sqrt(a) * m) / state_var(t);
}

Vec GaussChain::step_mean(const Vec& x, int t) const {
  const double r = sched->ratio(t);
  const double a_next = abar(t + 1);
  const double w = state_var(t);
  const double w_next = state_var(t + 1);
  return (std::sqrt(r) * w_next * x + (1.0 - r) * std::sqrt(a_next) * m) / w;
}

double GaussChain::step_std(int t) const {
  const double r = sched->ratio(t);
  return std::sqrt((1.0 - r) * state_var(t + 1) / state_var(t));
}

Vec GaussChain::clean_mean(const Vec& x, int t) const {
  const double a = abar(t);
  const double w = state_var(t);
  return (std::sqrt(a) * v * x + (1.0 - a) * m) / w;
}

Vec GaussOraclePolicy::eps(const Vec& x, int t) const {
  const double a = chain_.abar(t);
  return std::sqrt(1.0 - a) * (x - std::sqrt(a) * chain_.m) / chain_.state_var(t);
}

Vec GaussOraclePolicy::eps_vjp(const Vec& x, int t, const Vec& cot) const {
  (void)x;
  const double a = chain_.abar(t);
  return (std::sqrt(1.0 - a) / chain_.state_var(t)) * cot;
}

GaussChain tilt_by_quadratic_reward(const GaussChain& prior, const Vec& m_r, double well_a,
                                    double beta) {
  const double c = beta * well_a;
  if (c == 0.0) return prior;
  GaussChain out;
  out.sched = prior.sched;
  out.v = prior.v / (1.0 + 2.0 * c * prior.v);
  out.m = out.v * (prior.m / prior.v + 2.0 * c * m_r);
  // log of \int N(x; m, v I) exp(-c |x - m_r|^2) dx, one Gaussian-product
  // convolution per dimension.
  const double d = static_cast<double>(prior.m.size());
  const double conv_var = prior.v + 1.0 / (2.0 * c);
  const double log_z = 0.5 * d * std::log(M_PI / c) -
                       (prior.m - m_r).squaredNorm() / (2.0 * conv_var) -
                       0.5 * d * std::log(2.0 * M_PI * conv_var);
  out.log_mass = prior.log_mass + log_z;
  return out;
}

FlowScoreFn flow_score_of(const GaussChain& chain) {
  return {.eval = [chain](const Vec& x, int t) { return chain.marginal_score(x, t); },
          .node = nullptr};
}

FlowScoreFn residual_flow_score_of(const GaussChain& tilted, const GaussChain& prior) {
  return {.eval =
              [tilted, prior](const Vec& x, int t) {
                return Vec(tilted.marginal_score(x, t) - prior.marginal_score(x, t));
              },
          .node = nullptr};
}

ScalarFlowFn residual_log_flow_of(const GaussChain& tilted, const GaussChain& prior) {
  return {.eval = [tilted, prior](const Vec& x,
                                  int t) { return tilted.log_flow(x, t) - prior.log_flow(x, t); },
          .node = nullptr};
}

ScalarFlowFn db_fl_scalar_flow_of(const GaussChain& tilted, const RewardSpec& reward,
                                  double beta) {
  return {.eval =
              [tilted, reward, beta](const Vec& x, int t) {
                return tilted.log_flow(x, t) -
                       beta * log_reward(reward, tilted.clean_mean(x, t));
              },
          .node = nullptr};
}

}  // namespace ngfn::test
