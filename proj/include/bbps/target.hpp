#pragma once

#include <cmath>
#include <sstream>
#include <string>

#include "bbps/blocking.hpp"
#include "bbps/common.hpp"

namespace bbps {

/// Hooks a target can advertise.  The samplers use them to pick thinning
/// bounds (quadratic and log-concave potentials admit tight closed-form
/// bounds) and to build factor decompositions for the local sampler.
struct TargetTraits {
  bool quadratic = false;    // U is a quadratic form in vec(x)
  bool log_concave = false;  // U is convex along every line
  bool has_factors = false;  // U splits into column-local factors
};

/// A smoothing target on d x N latent state matrices, specified through its
/// potential U (negative log density up to a constant) and gradient.
///
/// Implementations must be pure: const methods are called concurrently from
/// worker threads and may not mutate shared state.
class TargetModel {
 public:
  virtual ~TargetModel() = default;

  virtual int d() const = 0;
  virtual int N() const = 0;
  virtual TargetTraits traits() const = 0;
  virtual std::string name() const = 0;

  /// U(x); throws NumericalError naming the offending term when a
  /// non-finite value appears.
  virtual double potential(const StateMatrix& x) const = 0;

  /// Full gradient of U; out is resized to d x N.
  virtual void gradient(const StateMatrix& x, Matrix& out) const = 0;

  /// Gradient restricted to block b; out is resized to b.rows() x b.cols().
  /// The default computes the full gradient and restricts; models with
  /// local structure override it to touch only nearby columns.
  virtual void block_gradient(const StateMatrix& x, const Block& b,
                              Matrix& out) const {
    Matrix full;
    gradient(x, full);
    out = full.block(b.i - 1, b.l - 1, b.rows(), b.cols());
  }

  /// Factor decomposition U = sum_n U_n where U_n touches columns
  /// support(n) only.  Valid for n in 1..factor_count() when
  /// traits().has_factors; the base class rejects the calls.
  virtual int factor_count() const {
    throw ConfigError(name() + " does not expose a factor decomposition");
  }
  virtual Block factor_support(int n) const {
    (void)n;
    throw ConfigError(name() + " does not expose a factor decomposition");
  }
  virtual double factor_potential(int n, const StateMatrix& x) const {
    (void)n;
    (void)x;
    throw ConfigError(name() + " does not expose a factor decomposition");
  }
  /// Gradient of factor n with respect to its own support; out is resized
  /// to the support shape.
  virtual void factor_gradient(int n, const StateMatrix& x, Matrix& out) const {
    (void)n;
    (void)x;
    (void)out;
    throw ConfigError(name() + " does not expose a factor decomposition");
  }

  /// Convenience wrappers returning fresh matrices.
  Matrix gradient(const StateMatrix& x) const {
    Matrix g;
    gradient(x, g);
    return g;
  }
  Matrix block_gradient(const StateMatrix& x, const Block& b) const {
    Matrix g;
    block_gradient(x, b, g);
    return g;
  }

 protected:
  void check_state_shape(const StateMatrix& x) const {
    if (x.rows() != d() || x.cols() != N()) {
      std::ostringstream msg;
      msg << name() << " expects a " << d() << " x " << N() << " state, got "
          << x.rows() << " x " << x.cols();
      throw ConfigError(msg.str());
    }
  }

  void check_finite_term(double value, const char* what, int n) const {
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << name() << ": non-finite " << what << " at time index " << n;
      throw NumericalError(msg.str());
    }
  }
};

/// U(x) = ||x||_F^2 / 2: independent standard normal coordinates.  The
/// simplest target with known moments; used as a reference in tests and
/// self-checks.
class IsotropicGaussian : public TargetModel {
 public:
  using TargetModel::block_gradient;
  using TargetModel::gradient;

  IsotropicGaussian(int d, int N) : d_(d), N_(N) {
    if (d < 1 || N < 1) throw ConfigError("IsotropicGaussian needs d, N >= 1");
  }

  int d() const override { return d_; }
  int N() const override { return N_; }
  std::string name() const override { return "isotropic_gaussian"; }

  TargetTraits traits() const override {
    return TargetTraits{.quadratic = true, .log_concave = true,
                        .has_factors = true};
  }

  double potential(const StateMatrix& x) const override {
    check_state_shape(x);
    const double u = 0.5 * x.squaredNorm();
    check_finite_term(u, "potential", 0);
    return u;
  }

  void gradient(const StateMatrix& x, Matrix& out) const override {
    check_state_shape(x);
    out = x;
  }

  void block_gradient(const StateMatrix& x, const Block& b,
                      Matrix& out) const override {
    check_state_shape(x);
    out = restrict_to(x, b);
  }

  int factor_count() const override { return N_; }

  Block factor_support(int n) const override {
    check_factor_index(n);
    // One factor per column; factors n >= 2 nominally reach back one column
    // so the factor graph has the same chain shape as the state-space models.
    return Block{n, 1, d_, n == 1 ? 1 : n - 1, n};
  }

  double factor_potential(int n, const StateMatrix& x) const override {
    check_factor_index(n);
    check_state_shape(x);
    return 0.5 * x.col(n - 1).squaredNorm();
  }

  void factor_gradient(int n, const StateMatrix& x, Matrix& out) const override {
    check_factor_index(n);
    check_state_shape(x);
    const Block s = factor_support(n);
    out.setZero(s.rows(), s.cols());
    out.col(s.cols() - 1) = x.col(n - 1);
  }

 private:
  void check_factor_index(int n) const {
    if (n < 1 || n > N_)
      throw ConfigError("factor index out of range for isotropic_gaussian");
  }

  int d_, N_;
};

}  // namespace bbps
