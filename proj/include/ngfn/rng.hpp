#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "ngfn/common.hpp"

namespace ngfn {

// Stream tags used to derive independent substreams from one master seed.
// Every stochastic call site seeds a fresh Rng from (master, tag, indices...),
// which makes runs reproducible bit-for-bit regardless of thread count and
// lets a resumed run continue the exact same random sequence.
enum : std::uint64_t {
  kSeedInit = 1,
  kSeedTrajectory = 2,
  kSeedPretrainBatch = 3,
  kSeedSubsample = 4,
  kSeedSmoothing = 5,
  kSeedEval = 6,
  kSeedOracle = 7,
  kSeedBaseline = 8,
  kSeedData = 9,
};

std::uint64_t splitmix64(std::uint64_t& state);

// Order-sensitive fold of the parts through splitmix64.
std::uint64_t seed_mix(std::initializer_list<std::uint64_t> parts);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // Inclusive range.
  int uniform_int(int lo, int hi);

  double normal();
  Vec normal_vec(int n);

  std::uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ngfn
