#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "ngfn/rng.hpp"

using namespace ngfn;

TEST_CASE("same seed reproduces the stream") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.uniform() == b.uniform());
    CHECK(a.normal() == b.normal());
    CHECK(a.uniform_int(-5, 17) == b.uniform_int(-5, 17));
  }
}

TEST_CASE("seed_mix separates tags, indices and order") {
  const auto s1 = seed_mix({42, kSeedTrajectory, 0});
  const auto s2 = seed_mix({42, kSeedTrajectory, 1});
  const auto s3 = seed_mix({42, kSeedEval, 0});
  const auto s4 = seed_mix({42, 0, kSeedTrajectory});
  CHECK(s1 != s2);
  CHECK(s1 != s3);
  CHECK(s1 != s4);
  CHECK(seed_mix({42, kSeedTrajectory, 0}) == s1);
}

TEST_CASE("uniform stays in [0,1) and is not degenerate") {
  Rng r(7);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("uniform_int covers the inclusive range") {
  Rng r(9);
  std::set<int> seen;
  for (int i = 0; i < 2000; ++i) {
    const int v = r.uniform_int(3, 7);
    CHECK(v >= 3);
    CHECK(v <= 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 5);
  for (int i = 0; i < 100; ++i) CHECK(r.uniform_int(4, 4) == 4);
}

TEST_CASE("normal moments are roughly standard") {
  Rng r(11);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}

TEST_CASE("normal_vec equals repeated normal draws") {
  Rng a(5), b(5);
  const Vec v = a.normal_vec(6);
  for (int i = 0; i < 6; ++i) CHECK(v(i) == b.normal());
}
