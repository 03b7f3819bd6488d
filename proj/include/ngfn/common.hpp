#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace ngfn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Raised for invalid configuration values or malformed inputs.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a computation produces non-finite values or diverges.
// `step` carries the offending step index when one is known, else -1.
struct NumericalError : std::runtime_error {
  int step = -1;
  explicit NumericalError(const std::string& what, int step_index = -1)
      : std::runtime_error(what), step(step_index) {}
};

// Raised for checkpoint/file format problems.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

inline bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace ngfn
