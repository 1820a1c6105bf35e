#pragma once

#include <algorithm>
#include <cmath>

#include "bbps/common.hpp"
#include "bbps/target.hpp"

namespace bbps {

/// Central-difference gradient of the target potential; the slow, assumption
/// free check the analytic gradients are tested against.
inline Matrix finite_diff_gradient(const TargetModel& target,
                                   const StateMatrix& x, double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  StateMatrix probe = x;
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      probe(r, c) = x(r, c) + h;
      const double up = target.potential(probe);
      probe(r, c) = x(r, c) - h;
      const double down = target.potential(probe);
      probe(r, c) = x(r, c);
      g(r, c) = (up - down) / (2.0 * h);
    }
  return g;
}

/// Largest relative error of the analytic gradient against central
/// differences; the scale is floored at 1 so near-zero entries compare
/// absolutely instead of blowing up the ratio.
inline double gradient_check(const TargetModel& target, const StateMatrix& x,
                             double h = 1e-5) {
  const Matrix analytic = target.gradient(x);
  const Matrix numeric = finite_diff_gradient(target, x, h);
  double worst = 0.0;
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double scale = std::max(1.0, std::abs(numeric(r, c)));
      worst =
          std::max(worst, std::abs(analytic(r, c) - numeric(r, c)) / scale);
    }
  return worst;
}

}  // namespace bbps
