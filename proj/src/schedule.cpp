#include "ngfn/schedule.hpp"

#include <cmath>

namespace ngfn {

NoiseSchedule NoiseSchedule::linear_beta(int T, double beta_min, double beta_max) {
  if (T < 1) throw ConfigError("schedule: T must be >= 1");
  if (!(beta_min > 0.0) || !(beta_max < 1.0) || beta_min > beta_max) {
    throw ConfigError("schedule: need 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule sched;
  sched.T = T;
  sched.alpha_bar.resize(static_cast<size_t>(T) + 1);
  sched.alpha_bar[0] = 1.0;
  for (int s = 1; s <= T; ++s) {
    const double frac = (T > 1) ? static_cast<double>(s - 1) / (T - 1) : 0.0;
    const double beta = beta_min + (beta_max - beta_min) * frac;
    sched.alpha_bar[static_cast<size_t>(s)] = sched.alpha_bar[static_cast<size_t>(s - 1)] * (1.0 - beta);
  }
  sched.sigma.resize(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) sched.sigma[static_cast<size_t>(t)] = std::sqrt(1.0 - sched.ratio(t));
  sched.validate();
  return sched;
}

void NoiseSchedule::validate() const {
  if (T < 1) throw ConfigError("schedule: T must be >= 1");
  if (alpha_bar.size() != static_cast<size_t>(T) + 1) {
    throw ConfigError("schedule: alpha_bar must have T+1 entries");
  }
  if (alpha_bar[0] != 1.0) throw ConfigError("schedule: alpha_bar[0] must equal 1 exactly");
  for (int s = 1; s <= T; ++s) {
    const double a = alpha_bar[static_cast<size_t>(s)];
    if (!(a > 0.0 && a <= 1.0)) throw ConfigError("schedule: alpha_bar values must lie in (0, 1]");
    if (!(a < alpha_bar[static_cast<size_t>(s - 1)])) {
      throw ConfigError("schedule: alpha_bar must decrease strictly");
    }
  }
  if (sigma.size() != static_cast<size_t>(T)) throw ConfigError("schedule: sigma must have T entries");
  for (int t = 0; t < T; ++t) {
    if (!(sigma[static_cast<size_t>(t)] > 0.0)) {
      throw ConfigError("schedule: sigma must be positive at every transition");
    }
  }
}

}  // namespace ngfn
