#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <utility>

namespace bbps {

/// Latent states and velocities are dense d x N matrices: one spatial
/// coordinate per row, one time step per column.
using StateMatrix = Eigen::MatrixXd;
using VelocityMatrix = Eigen::MatrixXd;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Invalid configuration, parameters, or precondition violations.
/// The command-line driver maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values or other numerical failure while running.
/// The command-line driver maps this to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failure inside a sampler run, carrying the state at the moment
/// of the abort so drivers can write a snapshot for post-mortems.
class NumericalAbort : public NumericalError {
 public:
  NumericalAbort(const std::string& what, Matrix x, Matrix v, double time)
      : NumericalError(what), x(std::move(x)), v(std::move(v)), time(time) {}

  Matrix x, v;
  double time = 0.0;
};

/// {a}^+ = max(a, 0), the positive part used throughout the event rates.
inline double positive_part(double a) { return a > 0.0 ? a : 0.0; }

}  // namespace bbps
