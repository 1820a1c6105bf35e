#pragma once

#include <algorithm>
#include <vector>

#include "bbps/blocking.hpp"
#include "bbps/common.hpp"
#include "bbps/target.hpp"

namespace bbps {

/// A grouping of a target's elementary factors into clusters, each with a
/// rectangular support.  The local sampler treats every cluster as one
/// factor: its rate uses the cluster's own gradient (the sum of member
/// factor gradients), not the restricted gradient of the full potential,
/// which is what distinguishes it from the blocked samplers.
class FactorSet {
 public:
  /// One cluster per elementary factor.
  static FactorSet elementary(const TargetModel& target) {
    return FactorSet(target, 1);
  }

  /// Clusters of cluster_width consecutive elementary factors (the last
  /// cluster takes the remainder).  Merging factors trades locality for
  /// fewer, larger thinning units.
  static FactorSet grouped(const TargetModel& target, int cluster_width) {
    return FactorSet(target, cluster_width);
  }

  const TargetModel& target() const { return *target_; }
  int size() const { return static_cast<int>(members_.size()); }

  /// Union of the member factor supports of cluster f (1-based).
  const Block& support(int f) const { return supports_.at(f - 1); }

  /// The columns this cluster is responsible for, disjoint across clusters.
  /// Unlike the supports these do not overlap, so they give the natural
  /// "dimensions per unit" figure for reports.
  const Block& owned(int f) const { return owned_.at(f - 1); }

  /// Supports of all clusters as plain blocks (ids = cluster indices).
  const std::vector<Block>& supports() const { return supports_; }

  double potential(int f, const StateMatrix& x) const {
    double u = 0.0;
    for (int n : members_.at(f - 1)) u += target_->factor_potential(n, x);
    return u;
  }

  /// Sum of all cluster potentials; equals the target potential up to the
  /// constant the factorisation drops.
  double total_potential(const StateMatrix& x) const {
    double u = 0.0;
    for (int f = 1; f <= size(); ++f) u += potential(f, x);
    return u;
  }

  /// Gradient of cluster f with respect to its support; out is resized to
  /// the support shape.
  void gradient(int f, const StateMatrix& x, Matrix& out) const {
    const Block& sup = supports_.at(f - 1);
    out.setZero(sup.rows(), sup.cols());
    Matrix part;
    for (int n : members_.at(f - 1)) {
      const Block s = target_->factor_support(n);
      target_->factor_gradient(n, x, part);
      out.block(s.i - sup.i, s.l - sup.l, s.rows(), s.cols()) += part;
    }
  }

 private:
  FactorSet(const TargetModel& target, int cluster_width) : target_(&target) {
    if (!target.traits().has_factors)
      throw ConfigError(target.name() +
                        " does not expose a factor decomposition");
    if (cluster_width < 1)
      throw ConfigError("factor cluster width must be >= 1");
    const int count = target.factor_count();
    for (int lo = 1; lo <= count; lo += cluster_width) {
      const int hi = std::min(lo + cluster_width - 1, count);
      std::vector<int> member;
      Block sup = target.factor_support(lo);
      Block own = sup;
      own.l = own.m;  // elementary factor n owns its right-most column
      for (int n = lo; n <= hi; ++n) {
        member.push_back(n);
        const Block s = target.factor_support(n);
        sup.i = std::min(sup.i, s.i);
        sup.j = std::max(sup.j, s.j);
        sup.l = std::min(sup.l, s.l);
        sup.m = std::max(sup.m, s.m);
        own.m = std::max(own.m, s.m);
      }
      sup.id = static_cast<int>(supports_.size()) + 1;
      own.id = sup.id;
      members_.push_back(std::move(member));
      supports_.push_back(sup);
      owned_.push_back(own);
    }
  }

  const TargetModel* target_;
  std::vector<std::vector<int>> members_;
  std::vector<Block> supports_;
  std::vector<Block> owned_;
};

}  // namespace bbps
