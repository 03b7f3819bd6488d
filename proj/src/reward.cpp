#include "ngfn/reward.hpp"

#include <cmath>

namespace ngfn {
namespace {

// Mixture sufficient statistics shared by value/gradient/Hessian.
struct MixtureEval {
  double total = 0.0;            // sum_i w_i e_i + floor
  std::vector<double> we;        // w_i e_i
  std::vector<Vec> comp_grad;    // g_i = -(x - m_i) / s_i^2
};

MixtureEval eval_mixture(const RewardSpec& spec, const Vec& x) {
  MixtureEval m;
  m.total = spec.floor;
  m.we.reserve(spec.means.size());
  m.comp_grad.reserve(spec.means.size());
  for (size_t i = 0; i < spec.means.size(); ++i) {
    const double s2 = spec.scales[i] * spec.scales[i];
    const Vec d = x - spec.means[i];
    const double e = std::exp(-d.squaredNorm() / (2.0 * s2));
    m.we.push_back(spec.mode_weights[i] * e);
    m.total += m.we.back();
    m.comp_grad.push_back(-d / s2);
  }
  return m;
}

}  // namespace

void RewardSpec::validate() const {
  if (dim < 1 || dim > 2) throw ConfigError("reward: dim must be 1 or 2");
  switch (kind) {
    case RewardKind::kGaussianMixture:
      if (means.empty()) throw ConfigError("reward: mixture needs at least one mode");
      if (scales.size() != means.size() || mode_weights.size() != means.size()) {
        throw ConfigError("reward: means/scales/weights must have matching lengths");
      }
      for (const Vec& mu : means) {
        if (mu.size() != dim) throw ConfigError("reward: mode mean has wrong dimension");
      }
      for (double s : scales) {
        if (!(s > 0.0)) throw ConfigError("reward: mode scales must be positive");
      }
      for (double w : mode_weights) {
        if (!(w > 0.0)) throw ConfigError("reward: mode weights must be positive");
      }
      if (!(floor > 0.0)) throw ConfigError("reward: floor must be positive");
      break;
    case RewardKind::kRing:
      if (!(radius > 0.0)) throw ConfigError("reward: ring radius must be positive");
      if (scales.size() != 1 || !(scales[0] > 0.0)) {
        throw ConfigError("reward: ring needs one positive scale");
      }
      if (!(floor > 0.0)) throw ConfigError("reward: floor must be positive");
      break;
    case RewardKind::kQuadraticWell:
      if (means.size() != 1 || means[0].size() != dim) {
        throw ConfigError("reward: quadratic well needs one center of the right dimension");
      }
      if (!(well_a > 0.0)) throw ConfigError("reward: well curvature must be positive");
      break;
  }
}

double log_reward(const RewardSpec& spec, const Vec& x) {
  switch (spec.kind) {
    case RewardKind::kGaussianMixture:
      return std::log(eval_mixture(spec, x).total);
    case RewardKind::kRing: {
      const double n = x.norm();
      const double dr = n - spec.radius;
      const double e = std::exp(-dr * dr / (2.0 * spec.scales[0] * spec.scales[0]));
      return std::log(e + spec.floor);
    }
    case RewardKind::kQuadraticWell:
      return -spec.well_a * (x - spec.means[0]).squaredNorm();
  }
  throw ConfigError("reward: unknown kind");
}

double reward(const RewardSpec& spec, const Vec& x) { return std::exp(log_reward(spec, x)); }

Vec log_reward_grad(const RewardSpec& spec, const Vec& x) {
  switch (spec.kind) {
    case RewardKind::kGaussianMixture: {
      const MixtureEval m = eval_mixture(spec, x);
      Vec g = Vec::Zero(x.size());
      for (size_t i = 0; i < m.we.size(); ++i) g += m.we[i] * m.comp_grad[i];
      return g / m.total;
    }
    case RewardKind::kRing: {
      const double n = x.norm();
      if (n < 1e-12) return Vec::Zero(x.size());  // cone point; symmetric choice
      const double s2 = spec.scales[0] * spec.scales[0];
      const double dr = n - spec.radius;
      const double e = std::exp(-dr * dr / (2.0 * s2));
      const double p = e / (e + spec.floor);
      return (-p * dr / s2) * (x / n);
    }
    case RewardKind::kQuadraticWell:
      return -2.0 * spec.well_a * (x - spec.means[0]);
  }
  throw ConfigError("reward: unknown kind");
}

Mat log_reward_hess(const RewardSpec& spec, const Vec& x) {
  const int d = static_cast<int>(x.size());
  switch (spec.kind) {
    case RewardKind::kGaussianMixture: {
      const MixtureEval m = eval_mixture(spec, x);
      // H = (sum_i w_i e_i (g_i g_i^T - I/s_i^2)) / S - (N/S)(N/S)^T, N = sum w_i e_i g_i
      Mat h = Mat::Zero(d, d);
      Vec nsum = Vec::Zero(d);
      for (size_t i = 0; i < m.we.size(); ++i) {
        const double s2 = spec.scales[i] * spec.scales[i];
        h += m.we[i] * (m.comp_grad[i] * m.comp_grad[i].transpose() - Mat::Identity(d, d) / s2);
        nsum += m.we[i] * m.comp_grad[i];
      }
      h /= m.total;
      const Vec g = nsum / m.total;
      return h - g * g.transpose();
    }
    case RewardKind::kRing: {
      const double n = x.norm();
      if (n < 1e-12) return Mat::Zero(d, d);
      const double s2 = spec.scales[0] * spec.scales[0];
      const double dr = n - spec.radius;
      const double e = std::exp(-dr * dr / (2.0 * s2));
      const double p = e / (e + spec.floor);
      const Vec u = x / n;
      const Mat uu = u * u.transpose();
      // grad q = dr/s2 u with q = dr^2/(2 s2); hess q = uu/s2 + dr (I-uu)/(s2 n)
      const Vec gq = (dr / s2) * u;
      const Mat hq = uu / s2 + (dr / (s2 * n)) * (Mat::Identity(d, d) - uu);
      return p * (1.0 - p) * gq * gq.transpose() - p * hq;
    }
    case RewardKind::kQuadraticWell:
      return -2.0 * spec.well_a * Mat::Identity(d, d);
  }
  throw ConfigError("reward: unknown kind");
}

Vec smoothed_log_reward_grad(const RewardSpec& spec, const Vec& x, double c, int n, Rng& rng) {
  if (c < 0.0) throw ConfigError("reward: smoothing variance must be >= 0");
  if (c == 0.0) return log_reward_grad(spec, x);
  if (n < 1) throw ConfigError("reward: smoothing needs at least one sample");
  const double sd = std::sqrt(c);
  Vec acc = Vec::Zero(x.size());
  for (int i = 0; i < n; ++i) {
    acc += log_reward_grad(spec, x + sd * rng.normal_vec(static_cast<int>(x.size())));
  }
  return acc / static_cast<double>(n);
}

}  // namespace ngfn
