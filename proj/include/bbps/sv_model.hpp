#pragma once

#include <cmath>
#include <utility>

#include "bbps/common.hpp"
#include "bbps/target.hpp"

namespace bbps {

/// Parameters of the stochastic volatility smoothing target.  The latent
/// log-volatilities follow a diagonal vector autoregression and the returns
/// are heavy-tailed through per-time variance mixing weights gamma_n:
///
///   x_{n+1} = diag(alpha) x_n + eta_n,
///   y_n     = gamma_n^{-1/2} diag(exp(x_n / 2)) eps_n,
///
/// with (eta_n, eps_n) jointly Gaussian: Cov(eta) = sigma_eta,
/// Cov(eps) = sigma_eps and the leverage cross-covariance
/// E[eta eps^T] = sigma_rho.  Conditioning on gamma and rescaling the
/// returns to y^g_n = sqrt(gamma_n) y_n makes the model Gaussian in the
/// noises, and the smoothing potential factorises over time.
struct SvConfig {
  Vector alpha;      // size d, each entry in (-1, 1)
  Matrix sigma_eta;  // d x d, SPD
  Matrix sigma_eps;  // d x d, SPD
  Matrix sigma_rho;  // d x d cross-covariance (zero = no leverage)
  double nu = 15.0;  // chi-square-like df of the mixing weights
};

/// Default volatility-noise covariance: standard deviation 0.2 with
/// cross-correlation 0.7 between every pair of assets.
inline Matrix sv_default_sigma_eta(int d) {
  Matrix s = Matrix::Constant(d, d, 0.2 * 0.2 * 0.7);
  s.diagonal().setConstant(0.2 * 0.2);
  return s;
}

/// Default leverage cross-covariance: -0.4 on the diagonal, -0.3 off it.
inline Matrix sv_default_sigma_rho(int d) {
  Matrix s = Matrix::Constant(d, d, -0.3);
  s.diagonal().setConstant(-0.4);
  return s;
}

/// Sample covariance of the columns of y (denominator N - 1).
inline Matrix empirical_covariance(const Matrix& y) {
  if (y.cols() < 2)
    throw ConfigError("empirical covariance needs at least two columns");
  const Vector mean = y.rowwise().mean();
  const Matrix centered = y.colwise() - mean;
  return centered * centered.transpose() / static_cast<double>(y.cols() - 1);
}

/// Smoothing target p(x | y, gamma) for the stochastic volatility model.
///
/// With w_n(x) = exp(-x_n / 2) .* y^g_n (the implied eps_n), S = sigma_eps^-1
/// and R = sigma_rho sigma_eps^-1, the potential is
///
///   U(x) = x_1' Sigma_1^-1 x_1 / 2
///        + sum_{n>=2} (x_n - mu_n)' Sigma_c^-1 (x_n - mu_n) / 2
///        + sum_n [ w_n' S w_n / 2 + 1' x_n / 2 ],
///
/// where mu_n = alpha .* x_{n-1} + R w_{n-1}, Sigma_c is the Schur
/// complement sigma_eta - R sigma_rho', and Sigma_1 the stationary
/// covariance of the autoregression.  The potential is neither quadratic
/// nor log-concave, so the samplers fall back to guarded empirical
/// thinning bounds for it.
class StochVolModel : public TargetModel {
 public:
  using TargetModel::block_gradient;
  using TargetModel::gradient;

  StochVolModel(SvConfig config, Matrix y, Vector gamma)
      : cfg_(std::move(config)), y_(std::move(y)), gamma_(std::move(gamma)) {
    const int d = static_cast<int>(y_.rows());
    const int n = static_cast<int>(y_.cols());
    if (d < 1 || n < 1) throw ConfigError("stoch_vol needs d, N >= 1");
    if (cfg_.alpha.size() != d)
      throw ConfigError("stoch_vol: alpha must have one entry per asset");
    if ((cfg_.alpha.array().abs() >= 1.0).any())
      throw ConfigError(
          "stoch_vol: every alpha entry must lie in (-1, 1) so the "
          "autoregression has a stationary law");
    if (gamma_.size() != n)
      throw ConfigError("stoch_vol: gamma must have one entry per time step");
    if ((gamma_.array() <= 0.0).any())
      throw ConfigError("stoch_vol: mixing weights gamma must be positive");
    if (cfg_.nu <= 0.0)
      throw ConfigError("stoch_vol: nu must be positive");
    require_spd(cfg_.sigma_eta, d, "sigma_eta");
    require_spd(cfg_.sigma_eps, d, "sigma_eps");
    if (cfg_.sigma_rho.rows() != d || cfg_.sigma_rho.cols() != d)
      throw ConfigError("stoch_vol: sigma_rho must be d x d");

    s_ = cfg_.sigma_eps.llt().solve(Matrix::Identity(d, d));
    r_ = cfg_.sigma_rho * s_;
    sigma_cond_ = cfg_.sigma_eta - r_ * cfg_.sigma_rho.transpose();
    {
      Eigen::LLT<Matrix> llt(sigma_cond_);
      if (llt.info() != Eigen::Success)
        throw ConfigError(
            "stoch_vol: Schur complement sigma_eta - sigma_rho sigma_eps^-1 "
            "sigma_rho' is not positive definite; shrink the leverage "
            "covariance sigma_rho");
      cond_inv_ = llt.solve(Matrix::Identity(d, d));
    }
    // Stationary covariance of the diagonal autoregression:
    // Sigma_1[k,l] = sigma_eta[k,l] / (1 - alpha_k alpha_l).
    sigma1_ = cfg_.sigma_eta.array() /
              (1.0 - (cfg_.alpha * cfg_.alpha.transpose()).array());
    {
      Eigen::LLT<Matrix> llt(sigma1_);
      if (llt.info() != Eigen::Success)
        throw ConfigError(
            "stoch_vol: stationary initial covariance is not positive "
            "definite");
      sigma1_inv_ = llt.solve(Matrix::Identity(d, d));
    }
    yg_ = y_ * gamma_.array().sqrt().matrix().asDiagonal();
    rt_ = r_.transpose();
  }

  int d() const override { return static_cast<int>(y_.rows()); }
  int N() const override { return static_cast<int>(y_.cols()); }
  std::string name() const override { return "stoch_vol"; }
  const SvConfig& config() const { return cfg_; }
  const Matrix& observations() const { return y_; }
  const Vector& mixing_weights() const { return gamma_; }

  TargetTraits traits() const override {
    return TargetTraits{.quadratic = false, .log_concave = false,
                        .has_factors = true};
  }

  double potential(const StateMatrix& x) const override {
    check_state_shape(x);
    double u = 0.5 * x.col(0).dot(sigma1_inv_ * x.col(0));
    check_finite_term(u, "initial term", 1);
    Vector w_prev = implied_eps(x, 0);
    for (int n = 0; n < N(); ++n) {
      const Vector w = n == 0 ? w_prev : implied_eps(x, n);
      if (n >= 1) {
        const Vector resid = x.col(n) - cfg_.alpha.cwiseProduct(x.col(n - 1)) -
                             r_ * w_prev;
        u += 0.5 * resid.dot(cond_inv_ * resid);
        check_finite_term(u, "transition term", n + 1);
      }
      u += 0.5 * w.dot(s_ * w) + 0.5 * x.col(n).sum();
      check_finite_term(u, "observation term", n + 1);
      w_prev = w;
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

  Block factor_support(int n) const override {
    check_factor_index(n);
    return Block{n, 1, d(), n == 1 ? 1 : n - 1, n};
  }

  double factor_potential(int n, const StateMatrix& x) const override {
    check_factor_index(n);
    check_state_shape(x);
    const int c = n - 1;
    double u = 0.0;
    if (n == 1) {
      u += 0.5 * x.col(0).dot(sigma1_inv_ * x.col(0));
    } else {
      const Vector resid = x.col(c) - cfg_.alpha.cwiseProduct(x.col(c - 1)) -
                           r_ * implied_eps(x, c - 1);
      u += 0.5 * resid.dot(cond_inv_ * resid);
    }
    const Vector w = implied_eps(x, c);
    u += 0.5 * w.dot(s_ * w) + 0.5 * x.col(c).sum();
    check_finite_term(u, "factor potential", n);
    return u;
  }

  void factor_gradient(int n, const StateMatrix& x, Matrix& out) const override {
    check_factor_index(n);
    check_state_shape(x);
    const Block sup = factor_support(n);
    out.resize(sup.rows(), sup.cols());
    const int c = n - 1;
    const Vector w = implied_eps(x, c);
    const Vector obs_grad =
        Vector::Constant(d(), 0.5) - 0.5 * w.cwiseProduct(s_ * w);
    if (n == 1) {
      out.col(0) = sigma1_inv_ * x.col(0) + obs_grad;
      return;
    }
    const Vector w_prev = implied_eps(x, c - 1);
    const Vector resid =
        x.col(c) - cfg_.alpha.cwiseProduct(x.col(c - 1)) - r_ * w_prev;
    const Vector rr = cond_inv_ * resid;
    out.col(0) = -cfg_.alpha.cwiseProduct(rr) +
                 0.5 * w_prev.cwiseProduct(rt_ * rr);
    out.col(1) = rr + obs_grad;
  }

 private:
  /// eps_n implied by the state: w_n = exp(-x_n / 2) .* y^g_n.
  Vector implied_eps(const StateMatrix& x, int c) const {
    return (-0.5 * x.col(c).array()).exp() * yg_.col(c).array();
  }

  /// Gradient columns lo..hi (1-based), reading x columns lo-1..hi+1.
  ///
  /// Per 0-based column c the gradient is
  ///
  ///   1/2 - W_c .* (S W_c) / 2
  ///   + [c = 0] Sigma_1^-1 x_0 + [c >= 1] C^-1 r_c
  ///   + [c < N-1] ( -alpha .* (C^-1 r_{c+1})
  ///                 + W_c .* (R' C^-1 r_{c+1}) / 2 ),
  ///
  /// with W_c = exp(-x_c/2) .* y^g_c, r_c = x_c - alpha .* x_{c-1} - R W_{c-1}
  /// and C the conditional transition covariance.  Everything is assembled
  /// over whole column ranges, so the exponentials vectorise and the d x d
  /// solves become matrix products over the strip.
  void column_gradient(const StateMatrix& x, int lo, int hi, Matrix& out) const {
    const int c0 = lo - 1, c1 = hi - 1;  // 0-based output column range
    const int k = hi - lo + 1;
    const auto alpha = cfg_.alpha.array();

    // Implied noises over the columns any term below reads.
    const int w0 = std::max(c0 - 1, 0);
    const int kw = c1 - w0 + 1;
    Matrix w(d(), kw);
    w.array() = (-0.5 * x.middleCols(w0, kw).array()).exp() *
                yg_.middleCols(w0, kw).array();
    const Matrix sw = s_ * w;

    // Scaled transition residuals C^-1 r_c for every c this range touches.
    const int r0 = std::max(c0, 1);
    const int r1 = std::min(c1 + 1, N() - 1);
    const int kr = r1 - r0 + 1;
    Matrix rr;
    if (kr > 0) {
      Matrix resid = x.middleCols(r0, kr);
      resid.array() -= x.middleCols(r0 - 1, kr).array().colwise() * alpha;
      resid.noalias() -= r_ * w.middleCols(r0 - 1 - w0, kr);
      rr.noalias() = cond_inv_ * resid;
    }

    out.array() = 0.5 - 0.5 * w.middleCols(c0 - w0, k).array() *
                            sw.middleCols(c0 - w0, k).array();
    if (c0 == 0) out.col(0) += sigma1_inv_ * x.col(0);
    if (const int tk = c1 - r0 + 1; tk > 0)
      out.middleCols(r0 - c0, tk) += rr.middleCols(0, tk);
    const int u1 = std::min(c1, N() - 2);  // columns with a successor
    if (const int uk = u1 - c0 + 1; uk > 0) {
      const auto rn = rr.middleCols(c0 + 1 - r0, uk);
      out.middleCols(0, uk).array() +=
          -(rn.array().colwise() * alpha) +
          0.5 * w.middleCols(c0 - w0, uk).array() * (rt_ * rn).array();
    }
  }

  static void require_spd(const Matrix& m, int d, const char* what) {
    if (m.rows() != d || m.cols() != d)
      throw ConfigError(std::string("stoch_vol: ") + what + " must be d x d");
    if (!m.isApprox(m.transpose(), 1e-10))
      throw ConfigError(std::string("stoch_vol: ") + what +
                        " must be symmetric");
    if (Eigen::LLT<Matrix>(m).info() != Eigen::Success)
      throw ConfigError(std::string("stoch_vol: ") + what +
                        " is not positive definite");
  }

  void check_factor_index(int n) const {
    if (n < 1 || n > N())
      throw ConfigError("factor index out of range for stoch_vol");
  }

  SvConfig cfg_;
  Matrix y_;
  Vector gamma_;
  Matrix s_, r_, rt_, sigma_cond_, cond_inv_, sigma1_, sigma1_inv_;
  Matrix yg_;
};

/// Model with the default parameterisation: common autoregression
/// coefficient alpha, default volatility and leverage covariances, and the
/// empirical covariance of the observed returns as sigma_eps.
inline StochVolModel make_sv_model(const Matrix& y, const Vector& gamma,
                                   double alpha = 0.99, double nu = 15.0) {
  const int d = static_cast<int>(y.rows());
  SvConfig cfg;
  cfg.alpha = Vector::Constant(d, alpha);
  cfg.sigma_eta = sv_default_sigma_eta(d);
  cfg.sigma_eps = empirical_covariance(y);
  cfg.sigma_rho = sv_default_sigma_rho(d);
  cfg.nu = nu;
  return StochVolModel(std::move(cfg), y, gamma);
}

}  // namespace bbps
