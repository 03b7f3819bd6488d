#pragma once

#include <cmath>
#include <functional>

#include "ngfn/common.hpp"

namespace ngfn::test {

// Central differences. Step defaults tuned for double precision on the
// smooth functions in this project: O(h^2) truncation with h ~ 1e-5 leaves
// ~1e-10 truncation error and ~1e-6 cancellation noise on O(1) values, which
// the gradient-check tolerances (1e-4 relative) absorb comfortably.

inline double fd_partial(const std::function<double(const Vec&)>& f, Vec x, int i,
                         double h = 1e-5) {
  const double x0 = x(i);
  x(i) = x0 + h;
  const double hi = f(x);
  x(i) = x0 - h;
  const double lo = f(x);
  x(i) = x0;
  return (hi - lo) / (2.0 * h);
}

inline Vec fd_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-5) {
  Vec g(x.size());
  for (int i = 0; i < x.size(); ++i) g(i) = fd_partial(f, x, i, h);
  return g;
}

// Gradient w.r.t. a flat parameter vector that `f` reads by reference.
// Restores the parameters on exit.
inline Vec fd_grad_params(Vec& params, const std::function<double()>& f, double h = 1e-5) {
  Vec g(params.size());
  for (int i = 0; i < params.size(); ++i) {
    const double p0 = params(i);
    params(i) = p0 + h;
    const double hi = f();
    params(i) = p0 - h;
    const double lo = f();
    params(i) = p0;
    g(i) = (hi - lo) / (2.0 * h);
  }
  return g;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline double rel_err(const Vec& a, const Vec& b) {
  return (a - b).norm() / std::max(1.0, std::max(a.norm(), b.norm()));
}

}  // namespace ngfn::test
