#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bbps/blocking.hpp"
#include "bbps/common.hpp"

namespace bbps {

enum class EventKind {
  Bounce,       // at least one unit velocity reflected
  Reject,       // thinning proposal with no accepted reflection
  Refresh,      // full velocity redraw
  BoundExpiry,  // lookahead window ended; bounds recomputed
};

inline const char* event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::Bounce: return "bounce";
    case EventKind::Reject: return "reject";
    case EventKind::Refresh: return "refresh";
    case EventKind::BoundExpiry: return "bound_expiry";
  }
  return "?";
}

/// Velocity change attached to an event.  unit > 0 replaces that unit's
/// velocity sub-matrix; unit == 0 replaces the whole velocity matrix
/// (refreshments).
struct VelocityPatch {
  int unit = 0;
  Matrix value;
};

struct EventRecord {
  double time = 0.0;
  EventKind kind = EventKind::Bounce;
  int unit = 0;  // proposal target: unit id (per-unit clocks) or 0
  int sub = 0;   // sub-strategy index (even-odd sampler) or 0
  std::vector<VelocityPatch> patches;
  bool has_snapshot = false;
  Matrix x_snapshot, v_snapshot;  // state right after the event
};

struct TrajectoryStats {
  long n_bounce = 0;
  long n_reject = 0;
  long n_refresh = 0;
  long n_expiry = 0;
  long n_proposals = 0;          // bounce-clock firings
  long n_reflections = 0;        // accepted per-unit reflections
  long n_rate_evaluations = 0;
  long n_bound_violations = 0;   // observed rate above its bound
  double max_violation_ratio = 1.0;  // worst observed rate / bound
  double theta = 0.0;
  double refresh_rate = 0.0;
  double wall_clock_seconds = 0.0;
  int n_substrategies = 0;
  bool empirical_bounds = false;  // grid-estimated bounds carry bias risk
  std::vector<double> lambda_hat_sum;  // per sub-strategy, at window refreshes
  long lambda_hat_count = 0;
  std::vector<std::string> warnings;
};

/// A piecewise-linear sampler path stored as its initial state plus the
/// event log.  Between events every coordinate moves with velocity
/// phi(k, n) * v(k, n); the multiplicity phi and the unit rectangles are
/// stored so the path can be replayed exactly.
struct Trajectory {
  int d = 0, N = 0;
  double total_time = 0.0;
  Matrix phi;                // d x N coordinate multiplicities
  std::vector<Block> units;  // unit id u lives at units[u - 1]
  StateMatrix x0;
  VelocityMatrix v0;
  std::vector<EventRecord> events;
  TrajectoryStats stats;
};

/// Replays a trajectory in time order.  The chain state (x, v at the last
/// applied event) advances with exactly the same arithmetic the sampler
/// used — one fused multiply-add per coordinate per event interval — so
/// states at event times reproduce the sampler's bit for bit.  Queries
/// between events extrapolate from the last event without disturbing the
/// chain.
class TrajectoryCursor {
 public:
  explicit TrajectoryCursor(const Trajectory& traj) : traj_(&traj) { reset(); }

  void reset() {
    x_ = traj_->x0;
    v_ = traj_->v0;
    flow_ = traj_->phi.cwiseProduct(v_);
    time_ = 0.0;
    next_event_ = 0;
  }

  /// Apply all events with time <= t (so queries at an event time see the
  /// post-event velocity: the path is right-continuous in v).
  void advance_to(double t) {
    if (t < time_)
      throw ConfigError("trajectory cursor cannot move backwards; reset first");
    while (next_event_ < traj_->events.size() &&
           traj_->events[next_event_].time <= t) {
      const EventRecord& ev = traj_->events[next_event_];
      x_ += (ev.time - time_) * flow_;
      time_ = ev.time;
      apply_patches(ev);
      ++next_event_;
    }
  }

  /// State at time t >= current position (advances the chain through any
  /// intermediate events, then extrapolates).
  StateMatrix state_at(double t) {
    advance_to(t);
    return x_ + (t - time_) * flow_;
  }

  VelocityMatrix velocity_at(double t) {
    advance_to(t);
    return v_;
  }

  double chain_time() const { return time_; }
  const StateMatrix& chain_state() const { return x_; }
  const VelocityMatrix& chain_velocity() const { return v_; }
  const Matrix& chain_flow() const { return flow_; }

 private:
  void apply_patches(const EventRecord& ev) {
    for (const VelocityPatch& p : ev.patches) {
      if (p.unit == 0) {
        v_ = p.value;
        flow_ = traj_->phi.cwiseProduct(v_);
      } else {
        const Block& b = traj_->units.at(p.unit - 1);
        block_view(v_, b) = p.value;
        block_view(flow_, b) =
            block_view(traj_->phi, b).cwiseProduct(p.value);
      }
    }
  }

  const Trajectory* traj_;
  StateMatrix x_;
  VelocityMatrix v_;
  Matrix flow_;
  double time_ = 0.0;
  std::size_t next_event_ = 0;
};

/// Final state of a trajectory (position and velocity at total_time).
inline std::pair<StateMatrix, VelocityMatrix> final_state(const Trajectory& t) {
  TrajectoryCursor cursor(t);
  StateMatrix x = cursor.state_at(t.total_time);
  return {std::move(x), cursor.chain_velocity()};
}

}  // namespace bbps
