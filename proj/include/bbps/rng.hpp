#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "bbps/common.hpp"

namespace bbps {

/// Random number generation for the samplers.
///
/// Two requirements shape this class:
///  1. identical seeds must give identical draws on every platform, and
///  2. the per-block accept/reject decisions of the even-odd sampler must
///     not depend on the order in which worker threads process blocks.
///
/// (1) rules out the std::distribution wrappers, whose outputs are
/// implementation defined; we draw raw 64-bit words from std::mt19937_64
/// (whose bit stream *is* pinned by the standard) and apply our own
/// transforms.  (2) is handled by counter_uniform(), which derives a uniform
/// deterministically from (seed, event index, block id) so that any thread
/// can compute "the" uniform for a given decision without touching shared
/// state.

namespace detail {

/// SplitMix64 finalizer: bijective avalanching mix of a 64-bit word.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Map a 64-bit word to (0, 1): top 53 bits, offset half a ulp so the
/// result is never exactly 0 (safe inside log).
inline double to_unit_interval(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  /// Uniform on (0, 1).
  double uniform() { return detail::to_unit_interval(raw()); }

  /// Exponential with the given rate; rate 0 yields +infinity (a clock
  /// that never rings), which the event loops rely on.
  double exponential(double rate) {
    if (rate <= 0.0) return std::numeric_limits<double>::infinity();
    return -std::log(uniform()) / rate;
  }

  /// Standard normal via Box-Muller; the second value of each pair is
  /// cached so the per-draw cost stays at one log/sqrt per two draws.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Gamma(shape, 1) via Marsaglia-Tsang squeeze (with the standard
  /// shape-boost for shape < 1).
  double gamma(double shape) {
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  /// Fill a matrix with independent standard normals (column-major order,
  /// so the draw sequence is part of the reproducibility contract).
  void fill_normal(Matrix& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = normal();
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// Uniform on (0, 1) determined purely by (seed, event, slot).  Used for the
/// per-block thinning decisions of the even-odd sampler: every block's
/// uniform is fixed once the event index is fixed, so fanning the blocks out
/// over any number of threads cannot change the trajectory.
inline double counter_uniform(std::uint64_t seed, std::uint64_t event,
                              std::uint64_t slot) {
  std::uint64_t h = detail::mix64(seed ^ 0x517cc1b727220a95ULL);
  h = detail::mix64(h ^ event);
  h = detail::mix64(h ^ slot);
  return detail::to_unit_interval(h);
}

}  // namespace bbps
