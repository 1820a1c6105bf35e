#pragma once

#include <utility>

#include "bbps/ar_model.hpp"
#include "bbps/common.hpp"
#include "bbps/rng.hpp"
#include "bbps/sv_model.hpp"

namespace bbps {

/// A simulated data set: the latent path that generated the observations is
/// kept so experiments can report errors against it.
struct SimulatedData {
  Matrix x;      // latent states, d x N
  Matrix y;      // observations, d x N
  Vector gamma;  // variance mixing weights (ones for the Gaussian models)
};

/// Draw from the AR data-generating process: a warm-up state x_0 ~ N(0, I)
/// followed by x_n = A x_{n-1} + s eta_n and y_n = x_n + s eps_n with
/// standard normal noises scaled by noise_scale.  noise_scale = 0 gives the
/// deterministic kernel-smoothed path y_n = A^n x_0, handy for tests.
inline SimulatedData simulate_ar_data(const Matrix& transition, int n,
                                      std::uint64_t seed,
                                      double noise_scale = 1.0) {
  const int d = static_cast<int>(transition.rows());
  if (transition.rows() != transition.cols())
    throw ConfigError("simulate_ar_data: transition matrix must be square");
  if (n < 1) throw ConfigError("simulate_ar_data: need N >= 1");
  if (noise_scale < 0.0)
    throw ConfigError("simulate_ar_data: noise scale must be >= 0");

  Rng rng(seed);
  SimulatedData out;
  out.x.resize(d, n);
  out.y.resize(d, n);
  out.gamma = Vector::Ones(n);
  Vector state(d);
  for (int k = 0; k < d; ++k) state(k) = rng.normal();  // x_0
  for (int c = 0; c < n; ++c) {
    Vector eta(d), eps(d);
    for (int k = 0; k < d; ++k) eta(k) = rng.normal();
    for (int k = 0; k < d; ++k) eps(k) = rng.normal();
    state = transition * state + noise_scale * eta;
    out.x.col(c) = state;
    out.y.col(c) = state + noise_scale * eps;
  }
  return out;
}

inline SimulatedData simulate_ar_data(int d, int n, double sigma2, double psi,
                                      std::uint64_t seed,
                                      double noise_scale = 1.0) {
  return simulate_ar_data(ar_transition_matrix(d, sigma2, psi), n, seed,
                          noise_scale);
}

/// Generative parameter set for simulating stochastic volatility data.
/// Volatility noise and leverage use the model defaults; the return
/// covariance uses per-asset standard deviation 3 with cross-correlation
/// 0.3.  The return scale is chosen so that both this joint noise
/// covariance and the Schur complement of a model fitted to the simulated
/// returns (whose empirical covariance comes out larger still) are safely
/// positive definite under the strong default leverage.
inline SvConfig sv_simulation_config(int d, double alpha = 0.99,
                                     double nu = 15.0) {
  if (d < 1) throw ConfigError("sv_simulation_config: need d >= 1");
  SvConfig cfg;
  cfg.alpha = Vector::Constant(d, alpha);
  cfg.sigma_eta = sv_default_sigma_eta(d);
  cfg.sigma_rho = sv_default_sigma_rho(d);
  cfg.sigma_eps = Matrix::Constant(d, d, 3.0 * 3.0 * 0.3);
  cfg.sigma_eps.diagonal().setConstant(3.0 * 3.0);
  cfg.nu = nu;
  return cfg;
}

/// Draw from the stochastic volatility data-generating process.  The mixing
/// weights gamma_n ~ Gamma(nu/2, nu/2) are drawn first, then the initial
/// state from the stationary law, then one jointly-Gaussian (eta_n, eps_n)
/// pair per step, so the draw sequence is pinned for reproducibility.
inline SimulatedData simulate_sv_data(const SvConfig& cfg, int n,
                                      std::uint64_t seed) {
  const int d = static_cast<int>(cfg.alpha.size());
  if (n < 1) throw ConfigError("simulate_sv_data: need N >= 1");

  // Joint noise covariance [[sigma_eta, sigma_rho], [sigma_rho', sigma_eps]].
  Matrix joint(2 * d, 2 * d);
  joint.topLeftCorner(d, d) = cfg.sigma_eta;
  joint.topRightCorner(d, d) = cfg.sigma_rho;
  joint.bottomLeftCorner(d, d) = cfg.sigma_rho.transpose();
  joint.bottomRightCorner(d, d) = cfg.sigma_eps;
  Eigen::LLT<Matrix> joint_llt(joint);
  if (joint_llt.info() != Eigen::Success)
    throw ConfigError(
        "simulate_sv_data: joint noise covariance is not positive definite; "
        "the leverage covariance sigma_rho is too strong for the given "
        "sigma_eta and sigma_eps");
  const Matrix joint_chol = joint_llt.matrixL();

  // Stationary initial covariance of the diagonal autoregression.
  Matrix sigma1 = cfg.sigma_eta.array() /
                  (1.0 - (cfg.alpha * cfg.alpha.transpose()).array());
  Eigen::LLT<Matrix> sigma1_llt(sigma1);
  if (sigma1_llt.info() != Eigen::Success)
    throw ConfigError(
        "simulate_sv_data: stationary initial covariance is not positive "
        "definite");

  Rng rng(seed);
  SimulatedData out;
  out.x.resize(d, n);
  out.y.resize(d, n);
  out.gamma.resize(n);
  for (int c = 0; c < n; ++c)
    out.gamma(c) = rng.gamma(0.5 * cfg.nu) / (0.5 * cfg.nu);

  Vector z(d);
  for (int k = 0; k < d; ++k) z(k) = rng.normal();
  Vector state = Matrix(sigma1_llt.matrixL()) * z;

  Vector zz(2 * d);
  for (int c = 0; c < n; ++c) {
    out.x.col(c) = state;
    for (int k = 0; k < 2 * d; ++k) zz(k) = rng.normal();
    const Vector noise = joint_chol * zz;
    const Vector eta = noise.head(d);
    const Vector eps = noise.tail(d);
    out.y.col(c) = (0.5 * state.array()).exp() * eps.array() /
                   std::sqrt(out.gamma(c));
    state = cfg.alpha.cwiseProduct(state) + eta;
  }
  return out;
}

}  // namespace bbps
