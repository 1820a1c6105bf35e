#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "bbps/common.hpp"
#include "bbps/target.hpp"
#include "bbps/trajectory.hpp"

namespace bbps {

/// Evenly spaced samples of selected coordinates of a trajectory.
struct SampleSeries {
  double delta = 0.0;   // spacing in sampler time
  double start_time = 0.0;  // time of the first retained sample
  double sampler_time = 0.0;  // span the retained samples cover
  double wall_clock = 0.0;    // wall time of the full run (incl. burn-in)
  std::vector<std::pair<int, int>> coords;  // 1-based (row, column)
  Matrix values;  // one row per coordinate, one column per sample

  long n_samples() const { return values.cols(); }
  int n_coords() const { return static_cast<int>(coords.size()); }
};

/// Sample the trajectory at t = 0, delta, 2 delta, ..., up to total_time.
/// At an event time the post-event state is reported (the path is taken
/// right-continuous).  coords empty means every coordinate.  A trajectory
/// shorter than one interval yields the single sample at time 0.
inline SampleSeries discretize(const Trajectory& traj, double delta,
                               std::vector<std::pair<int, int>> coords = {}) {
  if (delta <= 0.0) throw ConfigError("discretize: delta must be positive");
  if (coords.empty()) {
    for (int c = 1; c <= traj.N; ++c)
      for (int r = 1; r <= traj.d; ++r) coords.emplace_back(r, c);
  }
  for (const auto& [r, c] : coords)
    if (r < 1 || r > traj.d || c < 1 || c > traj.N)
      throw ConfigError("discretize: tracked coordinate out of range");

  const long n =
      static_cast<long>(std::floor(traj.total_time / delta + 1e-9)) + 1;
  SampleSeries out;
  out.delta = delta;
  out.start_time = 0.0;
  out.sampler_time = static_cast<double>(n - 1) * delta;
  out.wall_clock = traj.stats.wall_clock_seconds;
  out.coords = std::move(coords);
  out.values.resize(static_cast<int>(out.coords.size()), n);
  TrajectoryCursor cursor(traj);
  for (long k = 0; k < n; ++k) {
    const StateMatrix x = cursor.state_at(static_cast<double>(k) * delta);
    for (std::size_t j = 0; j < out.coords.size(); ++j)
      out.values(static_cast<int>(j), k) =
          x(out.coords[j].first - 1, out.coords[j].second - 1);
  }
  return out;
}

/// Velocity entries at the sample times, pooled over all coordinates; used
/// by the invariance checks on the velocity marginal.
inline std::vector<double> discretize_velocities(const Trajectory& traj,
                                                 double delta) {
  if (delta <= 0.0) throw ConfigError("discretize: delta must be positive");
  const long n =
      static_cast<long>(std::floor(traj.total_time / delta + 1e-9)) + 1;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n) * traj.d * traj.N);
  TrajectoryCursor cursor(traj);
  for (long k = 0; k < n; ++k) {
    const VelocityMatrix& v = cursor.velocity_at(static_cast<double>(k) * delta);
    out.insert(out.end(), v.data(), v.data() + v.size());
  }
  return out;
}

/// Drop the first `count` samples (burn-in).
inline SampleSeries drop_burn_in_samples(const SampleSeries& s, long count) {
  if (count < 0) throw ConfigError("burn-in sample count must be >= 0");
  if (count >= s.n_samples())
    throw ConfigError("burn-in would discard every sample");
  SampleSeries out;
  out.delta = s.delta;
  out.start_time = s.start_time + static_cast<double>(count) * s.delta;
  out.sampler_time = s.sampler_time - static_cast<double>(count) * s.delta;
  out.wall_clock = s.wall_clock;
  out.coords = s.coords;
  out.values = s.values.rightCols(s.n_samples() - count);
  return out;
}

/// Drop the leading fraction of the samples (burn-in), rounding down.
inline SampleSeries drop_burn_in(const SampleSeries& s, double fraction) {
  if (fraction < 0.0 || fraction >= 1.0)
    throw ConfigError("burn-in fraction must lie in [0, 1)");
  return drop_burn_in_samples(
      s, static_cast<long>(std::floor(fraction * s.n_samples())));
}

/// Effective sample size per coordinate via the initial-positive-sequence
/// rule: sum autocorrelation pairs while they stay positive.  The
/// integrated time is floored at 1, so ESS never exceeds the sample count;
/// a constant series reports ESS 1 and is flagged.
struct EssResult {
  Vector ess;          // per tracked coordinate
  Vector ess_per_sec;  // ess / wall-clock seconds of the run
  std::vector<int> degenerate;  // 1-based indices of constant coordinates
  double min() const { return ess.minCoeff(); }
  double median() const {
    std::vector<double> v(ess.data(), ess.data() + ess.size());
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
};

inline EssResult ess(const SampleSeries& s) {
  const long n = s.n_samples();
  if (n < 100) throw ConfigError("ess needs at least 100 samples");
  EssResult out;
  out.ess.resize(s.n_coords());
  out.ess_per_sec.resize(s.n_coords());
  for (int j = 0; j < s.n_coords(); ++j) {
    const auto row = s.values.row(j);
    const double mean = row.mean();
    const Eigen::ArrayXd centered = row.array() - mean;
    const double var = centered.square().sum() / static_cast<double>(n);
    if (var <= 1e-300) {
      out.ess(j) = 1.0;
      out.degenerate.push_back(j + 1);
      out.ess_per_sec(j) = s.wall_clock > 0.0 ? 1.0 / s.wall_clock : 0.0;
      continue;
    }
    auto rho = [&](long lag) {
      double acc = 0.0;
      for (long k = 0; k + lag < n; ++k) acc += centered(k) * centered(k + lag);
      return acc / (static_cast<double>(n) * var);
    };
    double tau = -1.0;
    for (long m = 0; 2 * m + 1 < n; ++m) {
      const double pair = rho(2 * m) + rho(2 * m + 1);
      if (pair <= 0.0) break;
      tau += 2.0 * pair;
    }
    tau = std::max(tau, 1.0);
    out.ess(j) = static_cast<double>(n) / tau;
    out.ess_per_sec(j) = s.wall_clock > 0.0 ? out.ess(j) / s.wall_clock : 0.0;
  }
  return out;
}

/// Mean squared jump distance per coordinate at the series spacing.
inline Vector msjd(const SampleSeries& s) {
  const long n = s.n_samples();
  if (n < 2) throw ConfigError("msjd needs at least 2 samples");
  Vector out(s.n_coords());
  for (int j = 0; j < s.n_coords(); ++j) {
    double acc = 0.0;
    for (long k = 0; k + 1 < n; ++k) {
      const double step = s.values(j, k + 1) - s.values(j, k);
      acc += step * step;
    }
    out(j) = acc / static_cast<double>(n - 1);
  }
  return out;
}

/// Error of the running posterior-mean estimate against a reference mean,
/// averaged over the tracked coordinates, on a wall-clock x-axis.  The curve
/// is decimated to at most max_points entries (always keeping the last).
struct MseCurve {
  std::vector<double> cpu_seconds;
  std::vector<double> mse;
};

inline MseCurve mse_vs_time(const SampleSeries& s, const Vector& truth,
                            int max_points = 512) {
  const long n = s.n_samples();
  if (truth.size() != s.n_coords())
    throw ConfigError("mse_vs_time: truth must give one value per coordinate");
  if (n < 1) throw ConfigError("mse_vs_time needs samples");
  MseCurve out;
  const long stride = std::max<long>(1, n / max_points);
  Vector running = Vector::Zero(s.n_coords());
  for (long k = 0; k < n; ++k) {
    running += (s.values.col(k) - running) / static_cast<double>(k + 1);
    if ((k + 1) % stride == 0 || k + 1 == n) {
      out.cpu_seconds.push_back(s.wall_clock * static_cast<double>(k + 1) /
                                static_cast<double>(n));
      out.mse.push_back((running - truth).squaredNorm() /
                        static_cast<double>(s.n_coords()));
    }
  }
  return out;
}

namespace detail {

/// Biased-normalized ACF of a centered series.
inline Vector acf_of_centered(const Eigen::ArrayXd& centered, int max_lag) {
  const long n = centered.size();
  if (max_lag < 0 || 4L * max_lag >= n)
    throw ConfigError("acf: need max_lag < n_samples / 4");
  const double var = centered.square().sum();
  Vector out(max_lag + 1);
  if (var <= 1e-300) {
    out.setZero();
    out(0) = 1.0;
    return out;
  }
  for (int lag = 0; lag <= max_lag; ++lag) {
    double acc = 0.0;
    for (long k = 0; k + lag < n; ++k) acc += centered(k) * centered(k + lag);
    out(lag) = acc / var;
  }
  return out;
}

}  // namespace detail

/// Autocorrelation of one tracked coordinate up to max_lag (inclusive).
inline Vector acf(const SampleSeries& s, int coord_index, int max_lag) {
  if (coord_index < 1 || coord_index > s.n_coords())
    throw ConfigError("acf: coordinate index out of range");
  const auto row = s.values.row(coord_index - 1);
  return detail::acf_of_centered(row.array() - row.mean(), max_lag);
}

/// Autocorrelation of a scalar series (e.g. the energy trace).
inline Vector acf(const std::vector<double>& series, int max_lag) {
  const Eigen::Map<const Eigen::ArrayXd> values(
      series.data(), static_cast<Eigen::Index>(series.size()));
  return detail::acf_of_centered(values - values.mean(), max_lag);
}

/// Log-posterior up to its normalizing constant, -U(x(t_k)), along the
/// trajectory at spacing delta.
inline std::vector<double> energy_trace(const TargetModel& target,
                                        const Trajectory& traj, double delta) {
  if (delta <= 0.0) throw ConfigError("energy_trace: delta must be positive");
  const long n =
      static_cast<long>(std::floor(traj.total_time / delta + 1e-9)) + 1;
  std::vector<double> out;
  out.reserve(n);
  TrajectoryCursor cursor(traj);
  for (long k = 0; k < n; ++k)
    out.push_back(
        -target.potential(cursor.state_at(static_cast<double>(k) * delta)));
  return out;
}

/// Log-posterior values -U at the samples of a full-state series.
inline std::vector<double> energy_trace(const TargetModel& target,
                                        const SampleSeries& s) {
  if (s.n_coords() != target.d() * target.N())
    throw ConfigError(
        "energy_trace needs a series tracking every coordinate; use the "
        "trajectory overload otherwise");
  std::vector<double> out;
  out.reserve(s.n_samples());
  StateMatrix x(target.d(), target.N());
  for (long k = 0; k < s.n_samples(); ++k) {
    for (int j = 0; j < s.n_coords(); ++j)
      x(s.coords[j].first - 1, s.coords[j].second - 1) = s.values(j, k);
    out.push_back(-target.potential(x));
  }
  return out;
}

/// Counts and summary rates of the event log.
struct EventStats {
  long n_bounce = 0, n_reject = 0, n_refresh = 0, n_expiry = 0;
  long n_proposals = 0;
  long n_reflections = 0;
  long n_bound_violations = 0;
  double acceptance_rate = 0.0;      // bounces / proposals
  double proposals_per_window = 0.0;
  std::vector<double> mean_max_rate;  // per sub-strategy mean of the max rate
};

inline EventStats event_stats(const Trajectory& traj) {
  EventStats out;
  const TrajectoryStats& s = traj.stats;
  out.n_bounce = s.n_bounce;
  out.n_reject = s.n_reject;
  out.n_refresh = s.n_refresh;
  out.n_expiry = s.n_expiry;
  out.n_proposals = s.n_proposals;
  out.n_reflections = s.n_reflections;
  out.n_bound_violations = s.n_bound_violations;
  if (s.n_proposals > 0)
    out.acceptance_rate =
        static_cast<double>(s.n_bounce) / static_cast<double>(s.n_proposals);
  if (traj.total_time > 0.0 && s.theta > 0.0)
    out.proposals_per_window = static_cast<double>(s.n_proposals) * s.theta /
                               traj.total_time;
  for (double acc : s.lambda_hat_sum)
    out.mean_max_rate.push_back(
        s.lambda_hat_count > 0 ? acc / static_cast<double>(s.lambda_hat_count)
                               : 0.0);
  return out;
}

}  // namespace bbps
