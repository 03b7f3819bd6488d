#include "ngfn/rng.hpp"

#include <cmath>

namespace ngfn {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t seed_mix(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t state = 0x632be59bd9b4e019ULL;
  std::uint64_t out = 0;
  for (std::uint64_t p : parts) {
    state ^= p + 0x9e3779b97f4a7c15ULL + (state << 6) + (state >> 2);
    out = splitmix64(state);
  }
  return out;
}

int Rng::uniform_int(int lo, int hi) {
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  // Rejection-free multiply-shift; bias is negligible for span << 2^64.
  const std::uint64_t r = eng_();
  return lo + static_cast<int>((static_cast<unsigned __int128>(r) * span) >> 64);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u is kept away from 0 so the log stays finite.
  double u = 0.0;
  do {
    u = uniform();
  } while (u <= 0.0);
  const double v = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u));
  const double angle = 2.0 * M_PI * v;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Vec Rng::normal_vec(int n) {
  Vec out(n);
  for (int i = 0; i < n; ++i) out[i] = normal();
  return out;
}

}  // namespace ngfn
