#pragma once

#include <vector>

#include "bbps/ar_model.hpp"
#include "bbps/common.hpp"
#include "bbps/rng.hpp"

namespace bbps {

/// Marginal smoothing distributions p(x_n | y_1..N) of a linear-Gaussian
/// state-space model.
struct SmootherResult {
  Matrix mean;                // d x N
  std::vector<Matrix> cov;    // N marginal covariances, each d x d
};

/// Kalman filter followed by a Rauch-Tung-Striebel backward pass for the
/// AR target (x_1 ~ N(0, I), unit transition and observation noise,
/// identity observation map).  O(N d^3), exact.
inline SmootherResult kalman_smooth(const ArGaussianModel& model) {
  const int d = model.d();
  const int n = model.N();
  const Matrix& a = model.transition();
  const Matrix& y = model.observations();
  const Matrix eye = Matrix::Identity(d, d);

  std::vector<Vector> mean_pred(n), mean_filt(n);
  std::vector<Matrix> cov_pred(n), cov_filt(n);
  Vector mp = Vector::Zero(d);
  Matrix pp = eye;  // prior of x_1
  for (int k = 0; k < n; ++k) {
    mean_pred[k] = mp;
    cov_pred[k] = pp;
    // Observation update with y_k = x_k + eps, Cov(eps) = I.
    const Matrix s = pp + eye;
    const Matrix gain = s.llt().solve(pp).transpose();  // pp * s^-1
    mean_filt[k] = mp + gain * (y.col(k) - mp);
    cov_filt[k] = pp - gain * pp;
    if (k + 1 < n) {
      mp = a * mean_filt[k];
      pp = a * cov_filt[k] * a.transpose() + eye;
    }
  }

  SmootherResult out;
  out.mean.resize(d, n);
  out.cov.resize(n);
  out.mean.col(n - 1) = mean_filt[n - 1];
  out.cov[n - 1] = cov_filt[n - 1];
  for (int k = n - 2; k >= 0; --k) {
    const Matrix gain =
        cov_pred[k + 1].llt().solve(a * cov_filt[k]).transpose();
    out.mean.col(k) =
        mean_filt[k] + gain * (out.mean.col(k + 1) - mean_pred[k + 1]);
    out.cov[k] = cov_filt[k] +
                 gain * (out.cov[k + 1] - cov_pred[k + 1]) * gain.transpose();
  }
  return out;
}

/// The AR smoothing posterior assembled as one dense Gaussian on vec(x)
/// (column-major: coordinate (k, n) sits at index (n-1) d + k - 1).
/// Independent of the Kalman machinery, so the two can cross-check.
class GaussianPosterior {
 public:
  GaussianPosterior(int d, int n, Matrix precision, Vector shift)
      : d_(d), n_(n), precision_(std::move(precision)), shift_(std::move(shift)),
        llt_(precision_) {
    if (llt_.info() != Eigen::Success)
      throw NumericalError("dense posterior precision is not positive definite");
    const Vector mean_vec = llt_.solve(shift_);
    mean_ = Eigen::Map<const Matrix>(mean_vec.data(), d_, n_);
    covariance_ = llt_.solve(Matrix::Identity(d_ * n_, d_ * n_));
  }

  int d() const { return d_; }
  int N() const { return n_; }
  const Matrix& precision() const { return precision_; }
  const Vector& shift() const { return shift_; }
  const Matrix& mean() const { return mean_; }
  const Matrix& covariance() const { return covariance_; }

  Matrix marginal_cov(int n) const {
    return covariance_.block((n - 1) * d_, (n - 1) * d_, d_, d_);
  }

  /// Potential x'Px/2 - b'x; equals the model potential up to a constant.
  double potential(const StateMatrix& x) const {
    const Eigen::Map<const Vector> v(x.data(), d_ * n_);
    return 0.5 * v.dot(precision_ * v) - shift_.dot(v);
  }

  /// Gradient P x - b reshaped to d x N.
  Matrix gradient(const StateMatrix& x) const {
    const Eigen::Map<const Vector> v(x.data(), d_ * n_);
    const Vector g = precision_ * v - shift_;
    return Eigen::Map<const Matrix>(g.data(), d_, n_);
  }

  /// Exact draw: mean + L^-T z with P = L L^T and z standard normal.
  StateMatrix sample(Rng& rng) const {
    Vector z(d_ * n_);
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
    const Vector x = llt_.matrixU().solve(z);
    return mean_ + Eigen::Map<const Matrix>(x.data(), d_, n_);
  }

 private:
  int d_, n_;
  Matrix precision_;
  Vector shift_;
  Eigen::LLT<Matrix> llt_;
  Matrix mean_;
  Matrix covariance_;
};

/// Assemble the banded precision of the AR smoothing posterior directly
/// from the model definition:
///   diagonal block n:   I (observation) + I (prior or transition in)
///                       + A^T A when a transition leaves n,
///   off-diagonal (n, n+1): -A^T,
///   shift: vec(y).
inline GaussianPosterior dense_gaussian_posterior(const ArGaussianModel& model) {
  const int d = model.d();
  const int n = model.N();
  const Matrix& a = model.transition();
  const Matrix ata = a.transpose() * a;
  const Matrix eye = Matrix::Identity(d, d);
  Matrix prec = Matrix::Zero(d * n, d * n);
  for (int k = 0; k < n; ++k) {
    Matrix diag = 2.0 * eye;  // observation + (prior or incoming transition)
    if (k + 1 < n) diag += ata;
    prec.block(k * d, k * d, d, d) = diag;
    if (k + 1 < n) {
      prec.block(k * d, (k + 1) * d, d, d) = -a.transpose();
      prec.block((k + 1) * d, k * d, d, d) = -a;
    }
  }
  const Eigen::Map<const Vector> b(model.observations().data(), d * n);
  return GaussianPosterior(d, n, std::move(prec), b);
}

}  // namespace bbps
