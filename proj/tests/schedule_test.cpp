#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ngfn/common.hpp"
#include "ngfn/schedule.hpp"
#include "support/testutil.hpp"

using namespace ngfn;

TEST_CASE("linear_beta builds a valid schedule") {
  const auto s = NoiseSchedule::linear_beta(20, 0.02, 0.4);
  s.validate();
  CHECK(s.T == 20);
  CHECK(s.alpha_bar.size() == 21);
  CHECK(s.sigma.size() == 20);
  CHECK(s.alpha_bar[0] == 1.0);
  for (int i = 1; i <= 20; ++i) {
    CHECK(s.alpha_bar[i] < s.alpha_bar[i - 1]);
    CHECK(s.alpha_bar[i] > 0.0);
  }
}

TEST_CASE("per-step beta interpolates the endpoints") {
  const auto s = NoiseSchedule::linear_beta(10, 0.05, 0.3);
  // beta_s = 1 - alpha_bar[s]/alpha_bar[s-1]
  const double beta_1 = 1.0 - s.alpha_bar[1] / s.alpha_bar[0];
  const double beta_T = 1.0 - s.alpha_bar[10] / s.alpha_bar[9];
  CHECK(beta_1 == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(beta_T == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("state-time accessors invert the s indexing") {
  const auto s = NoiseSchedule::linear_beta(8, 0.02, 0.4);
  CHECK(s.abar_state(8) == 1.0);                 // clean end
  CHECK(s.abar_state(0) == s.alpha_bar[8]);      // noisiest
  for (int t = 0; t < 8; ++t) {
    CHECK(s.ratio(t) ==
          doctest::Approx(s.abar_state(t) / s.abar_state(t + 1)).epsilon(1e-15));
    CHECK(s.sigma[t] == doctest::Approx(std::sqrt(1.0 - s.ratio(t))).epsilon(1e-15));
    CHECK(s.ratio(t) > 0.0);
    CHECK(s.ratio(t) < 1.0);
  }
}

TEST_CASE("validate rejects malformed schedules") {
  auto good = NoiseSchedule::linear_beta(5, 0.02, 0.4);
  good.validate();

  auto bad = good;
  bad.alpha_bar[0] = 0.999999;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = good;
  bad.alpha_bar[3] = bad.alpha_bar[2];  // not strictly decreasing
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = good;
  bad.alpha_bar[5] = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = good;
  bad.sigma[2] = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = good;
  bad.sigma.pop_back();
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = good;
  bad.T = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("random test schedules are valid by construction") {
  Rng rng(31);
  for (int i = 0; i < 20; ++i) {
    const auto s = ngfn::test::random_schedule(rng);
    CHECK(s.T >= 2);
    CHECK_NOTHROW(s.validate());
  }
}
