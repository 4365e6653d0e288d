#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace gridcert {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Row-wise slack demanded of the strict inequality in the angle condition.
inline constexpr double kStrictMargin = 1e-9;

/// Malformed or inconsistent user input (case files, flags, scenario files).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure failed: divergence, instability, non-decay.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A trajectory left the synchronous region (a line angle crossed the limit).
class SynchronismLost : public NumericalError {
 public:
  SynchronismLost(const std::string& what, double time)
      : NumericalError(what), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace gridcert
