#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "bbps/common.hpp"
#include "bbps/target.hpp"

namespace bbps {

/// Squared-exponential spatial kernel kern(i, j) = exp(-|i-j|^2 / (2 sigma2))
/// normalised per row, A_ij = kern(i, j) / (psi + sum_l kern(i, l)), so each
/// row sums to strictly less than one and the autoregression is stable.
inline Matrix ar_transition_matrix(int d, double sigma2, double psi) {
  if (d < 1) throw ConfigError("transition matrix needs d >= 1");
  if (sigma2 <= 0.0) throw ConfigError("kernel variance sigma2 must be positive");
  if (psi <= 0.0) throw ConfigError("kernel ridge psi must be positive");
  Matrix kern(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      const double delta = i - j;
      kern(i, j) = std::exp(-delta * delta / (2.0 * sigma2));
    }
  Matrix a(d, d);
  for (int i = 0; i < d; ++i) a.row(i) = kern.row(i) / (psi + kern.row(i).sum());
  return a;
}

/// Linear-Gaussian state-space smoothing target:
///
///   x_1 ~ N(0, I),   x_n = A x_{n-1} + eta_n,   y_n = x_n + eps_n,
///
/// with standard normal noises, observed y fixed.  The potential is the
/// negative log of the smoothing density p(x | y) up to a constant:
///
///   U(x) = ||x_1||^2 / 2 + sum_{n>=2} ||x_n - A x_{n-1}||^2 / 2
///        + sum_n ||x_n - y_n||^2 / 2.
///
/// The potential is quadratic, so vec(x) is Gaussian with the banded
/// precision assembled by dense_precision() below; both Kalman smoothing
/// and dense linear algebra give closed-form checks.
class ArGaussianModel : public TargetModel {
 public:
  using TargetModel::block_gradient;
  using TargetModel::gradient;

  ArGaussianModel(Matrix transition, Matrix observations)
      : a_(std::move(transition)), y_(std::move(observations)) {
    if (a_.rows() != a_.cols())
      throw ConfigError("AR transition matrix must be square");
    if (y_.rows() != a_.rows())
      throw ConfigError("AR observations must have d rows");
    if (y_.cols() < 1) throw ConfigError("AR needs at least one observation");
    at_ = a_.transpose();
  }

  int d() const override { return static_cast<int>(y_.rows()); }
  int N() const override { return static_cast<int>(y_.cols()); }
  std::string name() const override { return "ar_gaussian"; }
  const Matrix& transition() const { return a_; }
  const Matrix& observations() const { return y_; }

  TargetTraits traits() const override {
    return TargetTraits{.quadratic = true, .log_concave = true,
                        .has_factors = true};
  }

  double potential(const StateMatrix& x) const override {
    check_state_shape(x);
    double u = 0.5 * x.col(0).squaredNorm();
    for (int n = 1; n < N(); ++n) {
      u += 0.5 * (x.col(n) - a_ * x.col(n - 1)).squaredNorm();
      check_finite_term(u, "transition term", n + 1);
    }
    for (int n = 0; n < N(); ++n) {
      u += 0.5 * (x.col(n) - y_.col(n)).squaredNorm();
      check_finite_term(u, "observation term", n + 1);
    }
    return u;
  }

  void gradient(const StateMatrix& x, Matrix& out) const override {
    check_state_shape(x);
    out.resize(d(), N());
    column_gradient(x, 1, N(), out);
  }

  void block_gradient(const StateMatrix& x, const Block& b,
                      Matrix& out) const override {
    check_state_shape(x);
    if (b.rows() == d()) {
      out.resize(d(), b.cols());
      column_gradient(x, b.l, b.m, out);
      return;
    }
    Matrix cols(d(), b.cols());
    column_gradient(x, b.l, b.m, cols);
    out = cols.middleRows(b.i - 1, b.rows());
  }

  int factor_count() const override { return N(); }

  /// Factor n carries the transition into column n plus the observation of
  /// column n; factor 1 also carries the initial prior.
  Block factor_support(int n) const override {
    check_factor_index(n);
    return Block{n, 1, d(), n == 1 ? 1 : n - 1, n};
  }

  double factor_potential(int n, const StateMatrix& x) const override {
    check_factor_index(n);
    check_state_shape(x);
    double u = 0.5 * (x.col(n - 1) - y_.col(n - 1)).squaredNorm();
    if (n == 1)
      u += 0.5 * x.col(0).squaredNorm();
    else
      u += 0.5 * (x.col(n - 1) - a_ * x.col(n - 2)).squaredNorm();
    check_finite_term(u, "factor potential", n);
    return u;
  }

  void factor_gradient(int n, const StateMatrix& x, Matrix& out) const override {
    check_factor_index(n);
    check_state_shape(x);
    const Block s = factor_support(n);
    out.resize(s.rows(), s.cols());
    if (n == 1) {
      out.col(0) = x.col(0) + (x.col(0) - y_.col(0));
    } else {
      const Vector r = x.col(n - 1) - a_ * x.col(n - 2);
      out.col(0) = -(at_ * r);
      out.col(1) = r + (x.col(n - 1) - y_.col(n - 1));
    }
  }

 private:
  /// Gradient columns lo..hi (1-based inclusive) written into out, which
  /// must have hi - lo + 1 columns.  Column n of the gradient is
  ///
  ///   [n = 1] x_1 + [n >= 2] (x_n - A x_{n-1})
  ///   - [n < N] A^T (x_{n+1} - A x_n) + (x_n - y_n),
  ///
  /// so only columns lo-1..hi+1 of x are read.  The three pieces are applied
  /// as whole column ranges so wide requests run as matrix products instead
  /// of per-column loops.
  void column_gradient(const StateMatrix& x, int lo, int hi, Matrix& out) const {
    const int c0 = lo - 1, c1 = hi - 1;  // 0-based column range
    const int k = hi - lo + 1;
    out.noalias() = x.middleCols(c0, k) - y_.middleCols(c0, k);
    if (c0 == 0) out.col(0) += x.col(0);
    const int t0 = std::max(c0, 1);  // columns with a predecessor
    if (const int tk = c1 - t0 + 1; tk > 0)
      out.middleCols(t0 - c0, tk) +=
          x.middleCols(t0, tk) - a_ * x.middleCols(t0 - 1, tk);
    const int u1 = std::min(c1, N() - 2);  // columns with a successor
    if (const int uk = u1 - c0 + 1; uk > 0)
      out.middleCols(0, uk) -=
          at_ * (x.middleCols(c0 + 1, uk) - a_ * x.middleCols(c0, uk));
  }

  void check_factor_index(int n) const {
    if (n < 1 || n > N())
      throw ConfigError("factor index out of range for ar_gaussian");
  }

  Matrix a_, y_;
  Matrix at_;
};

/// AR model with the kernel-built transition for given dimensions.
inline ArGaussianModel make_ar_model(double sigma2, double psi,
                                     Matrix observations) {
  const int d = static_cast<int>(observations.rows());
  return ArGaussianModel(ar_transition_matrix(d, sigma2, psi),
                         std::move(observations));
}

}  // namespace bbps
