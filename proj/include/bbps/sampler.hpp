#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <sstream>
#include <vector>

#include "bbps/blocking.hpp"
#include "bbps/common.hpp"
#include "bbps/factors.hpp"
#include "bbps/rng.hpp"
#include "bbps/target.hpp"
#include "bbps/thread_pool.hpp"
#include "bbps/trajectory.hpp"

namespace bbps {

// ---------------------------------------------------------------------------
// Single-block operations
// ---------------------------------------------------------------------------

/// Event rate of block b: positive part of the Frobenius inner product
/// between the restricted gradient and the block velocity.
inline double block_rate(const TargetModel& target, const Block& b,
                         const StateMatrix& x, const VelocityMatrix& v) {
  const Matrix g = target.block_gradient(x, b);
  return positive_part((g.array() * block_view(v, b).array()).sum());
}

/// Reflect the block velocity in the hyperplane orthogonal to the restricted
/// gradient, leaving all other entries alone.  Throws when the gradient
/// vanishes on the block (no reflection direction exists).
inline VelocityMatrix reflect_block(const TargetModel& target, const Block& b,
                                    const StateMatrix& x,
                                    const VelocityMatrix& v) {
  const Matrix g = target.block_gradient(x, b);
  const double g2 = g.squaredNorm();
  if (g2 <= 0.0)
    throw ConfigError(
        "reflect_block: restricted gradient vanishes on the block, the "
        "reflection is undefined");
  VelocityMatrix out = v;
  const double inner = (g.array() * block_view(v, b).array()).sum();
  block_view(out, b) -= (2.0 * inner / g2) * g;
  return out;
}

// ---------------------------------------------------------------------------
// Thinning units
// ---------------------------------------------------------------------------

/// The samplers all run the same event loop over "units": rectangles with a
/// rate gradient.  Blocked samplers use strategy blocks with the restricted
/// gradient of the full potential and the cover multiplicity phi; the local
/// sampler uses factor-cluster supports with the cluster's own gradient and
/// phi identically one.
class UnitSystem {
 public:
  enum class Mode { Blocked, Factored };

  static UnitSystem blocked(const TargetModel& target,
                            const BlockingStrategy& strategy) {
    if (strategy.d() != target.d() || strategy.N() != target.N())
      throw ConfigError("blocking strategy shape does not match the target");
    UnitSystem u;
    u.mode_ = Mode::Blocked;
    u.target_ = &target;
    u.strategy_ = &strategy;
    u.rects_ = strategy.blocks();
    u.phi_ = strategy.phi();
    u.build_dependents(/*column_stencil=*/1, /*rows_couple=*/true);
    return u;
  }

  static UnitSystem factored(const TargetModel& target,
                             const FactorSet& factors) {
    if (&factors.target() != &target)
      throw ConfigError("factor set was built for a different target");
    UnitSystem u;
    u.mode_ = Mode::Factored;
    u.target_ = &target;
    u.factors_ = &factors;
    u.rects_ = factors.supports();
    u.phi_ = Matrix::Ones(target.d(), target.N());
    // A factor reads exactly its support, so invalidation stops at support
    // intersection.
    u.build_dependents(/*column_stencil=*/0, /*rows_couple=*/false);
    return u;
  }

  Mode mode() const { return mode_; }
  const TargetModel& target() const { return *target_; }
  int count() const { return static_cast<int>(rects_.size()); }
  const Block& rect(int u) const { return rects_.at(u - 1); }
  const std::vector<Block>& rects() const { return rects_; }
  const Matrix& phi() const { return phi_; }

  /// Units whose rate reads at least one coordinate of unit u's rectangle;
  /// their bounds must be refreshed whenever u's velocity changes.
  const std::vector<int>& dependents(int u) const {
    return dependents_.at(u - 1);
  }

  void gradient(const StateMatrix& x, int u, Matrix& out) const {
    if (mode_ == Mode::Blocked)
      target_->block_gradient(x, rects_[u - 1], out);
    else
      factors_->gradient(u, x, out);
  }

  /// Affine-rate bounds are exact for quadratic potentials.  For the local
  /// sampler they are also valid for log-concave factors: the flow restricted
  /// to a support equals the support velocity (phi = 1), so each factor rate
  /// is non-decreasing along the flow and the window endpoints dominate.
  /// Restricted gradients of merely log-concave potentials admit no such
  /// guarantee, so blocked samplers then fall back to guarded grid bounds.
  bool exact_endpoint_bounds() const {
    const TargetTraits tr = target_->traits();
    return tr.quadratic || (mode_ == Mode::Factored && tr.log_concave);
  }

 private:
  /// Unit b depends on unit a when a's rectangle meets b's gradient stencil:
  /// b's rectangle dilated by column_stencil columns, and spanning all rows
  /// when the potential couples rows (dense transition/noise matrices).
  void build_dependents(int column_stencil, bool rows_couple) {
    const int d = target_->d();
    const int n = target_->N();
    dependents_.resize(rects_.size());
    for (std::size_t bi = 0; bi < rects_.size(); ++bi) {
      Block stencil = rects_[bi];
      stencil.l = std::max(1, stencil.l - column_stencil);
      stencil.m = std::min(n, stencil.m + column_stencil);
      if (rows_couple) {
        stencil.i = 1;
        stencil.j = d;
      }
      for (std::size_t ai = 0; ai < rects_.size(); ++ai)
        if (rects_[ai].intersects(stencil))
          dependents_[ai].push_back(static_cast<int>(bi) + 1);
    }
  }

  Mode mode_ = Mode::Blocked;
  const TargetModel* target_ = nullptr;
  const BlockingStrategy* strategy_ = nullptr;
  const FactorSet* factors_ = nullptr;
  std::vector<Block> rects_;
  Matrix phi_;
  std::vector<std::vector<int>> dependents_;
};

// ---------------------------------------------------------------------------
// Thinning bounds
// ---------------------------------------------------------------------------

namespace bound_config {
/// Grid resolution and head-room of the guarded empirical bounds used when
/// no closed-form bound exists.
inline constexpr int kGridPoints = 16;
inline constexpr double kSafety = 1.5;
/// Relative slack before an observed rate above its bound counts as a
/// violation (absorbs accumulated round-off in the exact bounds).
inline constexpr double kViolationSlack = 1e-9;
}  // namespace bound_config

/// Per-unit constant bounds on the event rates over a lookahead window.
struct BoundSet {
  double window = 0.0;
  std::vector<double> bounds;     // dominating constant per unit
  std::vector<double> rates_now;  // signed rate values at window start
};

/// Bounds valid on [0, window) of flow started at (x, v), computed the same
/// way the samplers compute them internally: exact window-endpoint maxima
/// for affine rates, a safety-factored grid supremum otherwise.
inline BoundSet local_bounds(const UnitSystem& units, const StateMatrix& x,
                             const VelocityMatrix& v, double window) {
  if (window < 0.0) throw ConfigError("bound window must be >= 0");
  const Matrix flow = units.phi().cwiseProduct(v);
  BoundSet out;
  out.window = window;
  out.bounds.resize(units.count());
  out.rates_now.resize(units.count());
  Matrix grad;
  auto rate_at = [&](const StateMatrix& xs, int u) {
    units.gradient(xs, u, grad);
    return (grad.array() * block_view(v, units.rect(u)).array()).sum();
  };
  if (units.exact_endpoint_bounds()) {
    const StateMatrix x_end = x + window * flow;
    for (int u = 1; u <= units.count(); ++u) {
      const double a0 = rate_at(x, u);
      const double a1 = rate_at(x_end, u);
      out.rates_now[u - 1] = a0;
      out.bounds[u - 1] = std::max(positive_part(a0), positive_part(a1));
    }
  } else {
    for (int u = 1; u <= units.count(); ++u) {
      double amax = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < bound_config::kGridPoints; ++k) {
        const double s =
            window * k / static_cast<double>(bound_config::kGridPoints - 1);
        const StateMatrix xs = x + s * flow;
        const double a = rate_at(xs, u);
        if (k == 0) out.rates_now[u - 1] = a;
        amax = std::max(amax, a);
      }
      out.bounds[u - 1] = bound_config::kSafety * positive_part(amax);
    }
  }
  return out;
}

inline BoundSet local_bounds(const TargetModel& target,
                             const BlockingStrategy& strategy,
                             const StateMatrix& x, const VelocityMatrix& v,
                             double window) {
  return local_bounds(UnitSystem::blocked(target, strategy), x, v, window);
}

/// Largest block rate inside each sub-strategy at the given state; the
/// quantity whose stationary mean governs the even-odd sampler's thinning
/// efficiency.
inline std::vector<double> max_rates(const TargetModel& target,
                                     const BlockingStrategy& strategy,
                                     const Partition& partition,
                                     const StateMatrix& x,
                                     const VelocityMatrix& v) {
  std::vector<double> out;
  out.reserve(partition.groups.size());
  for (const auto& group : partition.groups) {
    double m = 0.0;
    for (int id : group)
      m = std::max(m, block_rate(target, strategy.block(id), x, v));
    out.push_back(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sampler options
// ---------------------------------------------------------------------------

enum class SamplerKind { Blocked, EvenOdd, Local };

inline const char* sampler_kind_name(SamplerKind k) {
  switch (k) {
    case SamplerKind::Blocked: return "bbps";
    case SamplerKind::EvenOdd: return "eobps";
    case SamplerKind::Local: return "local";
  }
  return "?";
}

struct SamplerOptions {
  double total_time = 1000.0;
  double refresh_rate = 1.0;  // 0 turns refreshment off (reducibility risk)
  double theta = 1.0;         // lookahead window of the bounding process
  std::uint64_t seed = 1;
  int parallelism = 1;        // worker threads for the even-odd fan-out
  long max_events = 0;        // stop after this many events (0 = run to time)
  bool unit_velocity_init = false;  // all-ones initial velocity instead of
                                    // standard normal entries
  bool record_events = true;        // keep the event log (off for tuning)
  int checkpoint_every = 1000;      // snapshot cadence in events (0 = never)
  StateMatrix x0;                   // empty = start from zeros
};

/// Trajectory plus the sampler's final chain state (kept directly so callers
/// do not need a replay just to continue a run).
struct SamplerRun {
  Trajectory trajectory;
  StateMatrix x_final;
  VelocityMatrix v_final;
};

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

namespace detail {

/// Shared event loop of the three samplers.  The loop alternates between
/// deterministic flow x += dt * (phi .* v) and three kinds of random times:
/// bounding-process proposals, refreshments, and window expiries.
///
/// Randomness is consumed in a pinned order — per iteration one exponential
/// for the proposal clock and one for the refreshment clock, then per event
/// the draws listed at each branch — so runs are reproducible byte for byte.
/// The even-odd fan-out takes its per-block uniforms from the counter stream
/// keyed by (seed, proposal index, block id), never from the sequential
/// engine stream, which is what keeps trajectories identical for every
/// parallelism setting.
class Engine {
 public:
  Engine(const UnitSystem& units, SamplerKind kind, const Partition* partition,
         const SamplerOptions& opts)
      : units_(units), kind_(kind), opts_(opts), rng_(opts.seed) {
    const TargetModel& target = units_.target();
    d_ = target.d();
    n_ = target.N();
    if (opts_.total_time <= 0.0)
      throw ConfigError("sampler total_time must be positive");
    if (opts_.theta <= 0.0)
      throw ConfigError("sampler lookahead theta must be positive");
    if (opts_.refresh_rate < 0.0)
      throw ConfigError("sampler refresh rate must be >= 0");
    if (opts_.parallelism < 1)
      throw ConfigError("sampler parallelism must be >= 1");

    // Sub-strategy layout: the even-odd sampler uses the partition groups,
    // the per-unit-clock samplers one group holding every unit.
    if (kind_ == SamplerKind::EvenOdd) {
      if (partition == nullptr)
        throw ConfigError("even-odd sampler needs a partition");
      sub_units_.assign(partition->groups.begin(), partition->groups.end());
    } else {
      sub_units_.emplace_back();
      for (int u = 1; u <= units_.count(); ++u) sub_units_[0].push_back(u);
    }

    bar_.assign(units_.count() + 1, 0.0);
    rate0_.assign(units_.count() + 1, 0.0);
    rate_tmp_.assign(units_.count() + 1, 0.0);
    amax_.assign(units_.count() + 1, 0.0);
    sub_max_.assign(sub_units_.size(), 0.0);
    grad_buf_.resize(units_.count() + 1);
    staged_.resize(units_.count() + 1);
    staged_flag_.assign(units_.count() + 1, 0);
    viol_ratio_.assign(units_.count() + 1, 0.0);
    in_refresh_list_.assign(units_.count() + 1, 0);
    exact_bounds_ = units_.exact_endpoint_bounds();
    if (kind_ == SamplerKind::EvenOdd && opts_.parallelism > 1)
      pool_ = std::make_unique<ThreadPool>(opts_.parallelism);
  }

  SamplerRun run() {
    try {
      return run_impl();
    } catch (const NumericalAbort&) {
      throw;
    } catch (const NumericalError& err) {
      // Attach the live state so drivers can dump a snapshot of the chain
      // at the moment the numerics went bad.
      throw NumericalAbort(err.what(), x_, v_, t_);
    }
  }

 private:
  SamplerRun run_impl() {
    init_state();
    Trajectory& traj = run_.trajectory;
    traj.d = d_;
    traj.N = n_;
    traj.total_time = opts_.total_time;
    traj.phi = units_.phi();
    traj.units = units_.rects();
    traj.x0 = x_;
    traj.v0 = v_;
    traj.stats.theta = opts_.theta;
    traj.stats.refresh_rate = opts_.refresh_rate;
    traj.stats.n_substrategies = static_cast<int>(sub_units_.size());
    traj.stats.empirical_bounds = !exact_bounds_;
    traj.stats.lambda_hat_sum.assign(sub_units_.size(), 0.0);
    if (opts_.refresh_rate == 0.0)
      traj.stats.warnings.push_back(
          "refresh rate is 0: without refreshments the sampler may fail to "
          "explore the whole state space");

    const auto wall_start = std::chrono::steady_clock::now();
    all_units_scratch_.clear();
    for (int u = 1; u <= units_.count(); ++u) all_units_scratch_.push_back(u);
    window_end_ = opts_.theta;
    refresh_bounds(all_units_scratch_, opts_.theta);
    accumulate_lambda_hat();

    const double total_time = opts_.total_time;
    bool truncated = false;
    while (true) {
      const double proposal_rate =
          kind_ == SamplerKind::EvenOdd ? sub_total() : total_bar_;
      const double tau_b = rng_.exponential(proposal_rate);
      const double tau_r = rng_.exponential(opts_.refresh_rate);
      const bool bounce = tau_b <= tau_r;
      double t_next = t_ + std::min(tau_b, tau_r);

      const double frontier = std::min(window_end_, total_time);
      if (!(t_next < frontier)) {  // also catches t_next = +inf
        advance_to(frontier);
        if (frontier == total_time) break;
        // Window expiry: recompute every bound for the next lookahead span.
        if (!x_.allFinite())
          throw NumericalError(
              "sampler state became non-finite at time " + std::to_string(t_));
        refresh_bounds(all_units_scratch_, opts_.theta);
        window_end_ += opts_.theta;
        traj.stats.n_expiry += 1;
        accumulate_lambda_hat();
        record(EventKind::BoundExpiry, 0, 0, {});
        if (event_budget_spent(traj, &truncated)) break;
        continue;
      }
      if (t_next <= t_)  // guard exact ties so event times stay increasing
        t_next = std::nextafter(t_, std::numeric_limits<double>::infinity());
      advance_to(t_next);

      if (!bounce) {
        rng_.fill_normal(v_);
        flow_ = units_.phi().cwiseProduct(v_);
        refresh_bounds(all_units_scratch_, window_end_ - t_);
        traj.stats.n_refresh += 1;
        record(EventKind::Refresh, 0, 0, {{0, v_}});
      } else {
        traj.stats.n_proposals += 1;
        if (kind_ == SamplerKind::EvenOdd)
          even_odd_proposal();
        else
          per_unit_proposal();
      }
      if (event_budget_spent(traj, &truncated)) break;
    }

    traj.stats.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      wall_start)
            .count();
    if (truncated) {
      traj.total_time = t_;
      traj.stats.warnings.push_back(
          "run stopped at the event budget before reaching total_time");
    }
    run_.x_final = x_;
    run_.v_final = v_;
    return std::move(run_);
  }

  void init_state() {
    if (opts_.x0.size() == 0) {
      x_ = StateMatrix::Zero(d_, n_);
    } else {
      if (opts_.x0.rows() != d_ || opts_.x0.cols() != n_)
        throw ConfigError("initial state shape does not match the target");
      x_ = opts_.x0;
    }
    v_.resize(d_, n_);
    if (opts_.unit_velocity_init)
      v_.setOnes();
    else
      rng_.fill_normal(v_);
    flow_ = units_.phi().cwiseProduct(v_);
    t_ = 0.0;
  }

  void advance_to(double t_next) {
    const double dt = t_next - t_;
    x_ += dt * flow_;
    t_ = t_next;
  }

  double sub_total() const {
    double s = 0.0;
    for (double m : sub_max_) s += m;
    return s;
  }

  /// Signed rate of unit u at state xs with the current velocity.
  double rate_value(const StateMatrix& xs, int u) {
    units_.gradient(xs, u, grad_buf_[u]);
    run_.trajectory.stats.n_rate_evaluations += 1;
    const double a = (grad_buf_[u].array() *
                      block_view(v_, units_.rect(u)).array())
                         .sum();
    if (!std::isfinite(a))
      throw NumericalError("non-finite event rate for unit " +
                           std::to_string(u) + " at time " +
                           std::to_string(t_));
    return a;
  }

  /// Rates of the given units at state xs with the current velocity, written
  /// into rate_tmp_.  Blocked units all restrict the same global gradient,
  /// so one full-row strip spanning their columns is evaluated and shared;
  /// factored units evaluate their own factor gradients one at a time.
  void unit_rates_at(const StateMatrix& xs, const std::vector<int>& ids) {
    if (units_.mode() != UnitSystem::Mode::Blocked || ids.size() <= 1) {
      for (int u : ids) rate_tmp_[u] = rate_value(xs, u);
      return;
    }
    int lmin = n_ + 1, mmax = 0;
    for (int u : ids) {
      lmin = std::min(lmin, units_.rect(u).l);
      mmax = std::max(mmax, units_.rect(u).m);
    }
    const Block strip{0, 1, d_, lmin, mmax};
    units_.target().block_gradient(xs, strip, strip_buf_);
    for (int u : ids) {
      const Block& b = units_.rect(u);
      const double a =
          (strip_buf_.block(b.i - 1, b.l - lmin, b.rows(), b.cols()).array() *
           block_view(v_, b).array())
              .sum();
      if (!std::isfinite(a))
        throw NumericalError("non-finite event rate for unit " +
                             std::to_string(u) + " at time " +
                             std::to_string(t_));
      rate_tmp_[u] = a;
    }
    run_.trajectory.stats.n_rate_evaluations += static_cast<long>(ids.size());
  }

  /// Recompute bounds of the given units for flow over [t, t + window).
  void refresh_bounds(const std::vector<int>& ids, double window) {
    if (exact_bounds_) {
      unit_rates_at(x_, ids);
      for (int u : ids) {
        rate0_[u] = rate_tmp_[u];
        bar_[u] = positive_part(rate_tmp_[u]);
      }
      scratch_state_ = x_ + window * flow_;
      unit_rates_at(scratch_state_, ids);
      for (int u : ids)
        bar_[u] = std::max(bar_[u], positive_part(rate_tmp_[u]));
    } else {
      for (int k = 0; k < bound_config::kGridPoints; ++k) {
        if (k == 0) {
          unit_rates_at(x_, ids);
          for (int u : ids) {
            rate0_[u] = rate_tmp_[u];
            amax_[u] = rate_tmp_[u];
          }
          continue;
        }
        const double s = window * k /
                         static_cast<double>(bound_config::kGridPoints - 1);
        scratch_state_ = x_ + s * flow_;
        unit_rates_at(scratch_state_, ids);
        for (int u : ids) amax_[u] = std::max(amax_[u], rate_tmp_[u]);
      }
      for (int u : ids)
        bar_[u] = escalation_ * bound_config::kSafety * positive_part(amax_[u]);
    }
    // Totals are rebuilt from scratch so they cannot drift.
    if (kind_ == SamplerKind::EvenOdd) {
      for (std::size_t s = 0; s < sub_units_.size(); ++s) {
        double m = 0.0;
        for (int u : sub_units_[s]) m = std::max(m, bar_[u]);
        sub_max_[s] = m;
      }
    } else {
      total_bar_ = 0.0;
      for (int u = 1; u <= units_.count(); ++u) total_bar_ += bar_[u];
    }
  }

  void accumulate_lambda_hat() {
    auto& stats = run_.trajectory.stats;
    for (std::size_t s = 0; s < sub_units_.size(); ++s) {
      double m = 0.0;
      for (int u : sub_units_[s]) m = std::max(m, positive_part(rate0_[u]));
      stats.lambda_hat_sum[s] += m;
    }
    stats.lambda_hat_count += 1;
  }

  void note_violation(double rate, double bound) {
    auto& stats = run_.trajectory.stats;
    if (bound <= 0.0 ||
        rate <= bound * (1.0 + bound_config::kViolationSlack))
      return;
    stats.n_bound_violations += 1;
    stats.max_violation_ratio = std::max(stats.max_violation_ratio,
                                         rate / bound);
    if (!exact_bounds_)  // widen future empirical bounds
      escalation_ = std::min(escalation_ * 1.5, 16.0);
  }

  /// Blocked and local samplers: one unit proposed per event, chosen with
  /// probability proportional to its bound.
  void per_unit_proposal() {
    auto& traj = run_.trajectory;
    const double pick = rng_.uniform() * total_bar_;
    int u = units_.count();
    double acc = 0.0;
    for (int k = 1; k <= units_.count(); ++k) {
      acc += bar_[k];
      if (pick < acc) {
        u = k;
        break;
      }
    }
    const double lambda = positive_part(rate_value(x_, u));
    note_violation(lambda, bar_[u]);
    const bool accept = rng_.uniform() * bar_[u] < lambda &&
                        grad_buf_[u].squaredNorm() > 0.0;
    if (!accept) {
      traj.stats.n_reject += 1;
      record(EventKind::Reject, u, 0, {});
      return;
    }
    stage_reflection(u);
    apply_staged(u);
    traj.stats.n_bounce += 1;
    traj.stats.n_reflections += 1;
    std::vector<VelocityPatch> patches;
    patches.push_back({u, staged_[u]});
    refresh_after_reflections({u});
    record(EventKind::Bounce, u, 0, std::move(patches));
  }

  /// Even-odd sampler: draw a sub-strategy proportional to its dominating
  /// bound, then give every one of its blocks an independent accept test at
  /// that common bound.  The per-block work has no shared mutable state and
  /// fans out across the pool.
  void even_odd_proposal() {
    auto& traj = run_.trajectory;
    const double pick = rng_.uniform() * sub_total();
    std::size_t sub = sub_units_.size() - 1;
    double acc = 0.0;
    for (std::size_t s = 0; s < sub_units_.size(); ++s) {
      acc += sub_max_[s];
      if (pick < acc) {
        sub = s;
        break;
      }
    }
    const std::vector<int>& members = sub_units_[sub];
    const double cap = sub_max_[sub];
    const std::uint64_t proposal_index =
        static_cast<std::uint64_t>(traj.stats.n_proposals);

    auto body = [&](long i) {
      const int u = members[static_cast<std::size_t>(i)];
      Matrix& g = grad_buf_[u];
      units_.gradient(x_, u, g);
      const double a =
          (g.array() * block_view(v_, units_.rect(u)).array()).sum();
      viol_ratio_[u] = a;
      staged_flag_[u] = 0;
      if (!std::isfinite(a)) return;  // surfaced after the join
      const double uu = counter_uniform(opts_.seed, proposal_index,
                                        static_cast<std::uint64_t>(u));
      if (uu * cap < positive_part(a) && g.squaredNorm() > 0.0) {
        stage_reflection(u);
        staged_flag_[u] = 1;
      }
    };
    const long count = static_cast<long>(members.size());
    if (pool_)
      pool_->parallel_for(count, body);
    else
      for (long i = 0; i < count; ++i) body(i);
    traj.stats.n_rate_evaluations += count;

    // Serial wrap-up in unit order keeps everything deterministic.
    std::vector<VelocityPatch> patches;
    std::vector<int> reflected;
    for (int u : members) {
      if (!std::isfinite(viol_ratio_[u]))
        throw NumericalError("non-finite event rate for unit " +
                             std::to_string(u) + " at time " +
                             std::to_string(t_));
      note_violation(positive_part(viol_ratio_[u]), cap);
      if (staged_flag_[u]) {
        apply_staged(u);
        patches.push_back({u, staged_[u]});
        reflected.push_back(u);
      }
    }
    if (reflected.empty()) {
      traj.stats.n_reject += 1;
      record(EventKind::Reject, 0, static_cast<int>(sub) + 1, {});
      return;
    }
    traj.stats.n_bounce += 1;
    traj.stats.n_reflections += static_cast<long>(reflected.size());
    refresh_after_reflections(reflected);
    record(EventKind::Bounce, 0, static_cast<int>(sub) + 1,
           std::move(patches));
  }

  /// New velocity for unit u from the gradient already in grad_buf_[u].
  void stage_reflection(int u) {
    const Matrix& g = grad_buf_[u];
    const Block& b = units_.rect(u);
    const double inner = (g.array() * block_view(v_, b).array()).sum();
    staged_[u] = block_view(v_, b);
    staged_[u] -= (2.0 * inner / g.squaredNorm()) * g;
  }

  void apply_staged(int u) {
    const Block& b = units_.rect(u);
    block_view(v_, b) = staged_[u];
    block_view(flow_, b) =
        block_view(units_.phi(), b).cwiseProduct(staged_[u]);
  }

  /// Refresh the bounds of every unit whose rate could have changed when
  /// the given units' velocities did, over the remaining window.
  void refresh_after_reflections(const std::vector<int>& reflected) {
    refresh_list_.clear();
    for (int u : reflected)
      for (int dep : units_.dependents(u))
        if (!in_refresh_list_[dep]) {
          in_refresh_list_[dep] = 1;
          refresh_list_.push_back(dep);
        }
    std::sort(refresh_list_.begin(), refresh_list_.end());
    refresh_bounds(refresh_list_, window_end_ - t_);
    for (int dep : refresh_list_) in_refresh_list_[dep] = 0;
  }

  void record(EventKind kind, int unit, int sub,
              std::vector<VelocityPatch> patches) {
    if (!opts_.record_events) return;
    auto& traj = run_.trajectory;
    EventRecord ev;
    ev.time = t_;
    ev.kind = kind;
    ev.unit = unit;
    ev.sub = sub;
    ev.patches = std::move(patches);
    if (opts_.checkpoint_every > 0 &&
        (traj.events.size() + 1) % static_cast<std::size_t>(
                                       opts_.checkpoint_every) ==
            0) {
      ev.has_snapshot = true;
      ev.x_snapshot = x_;
      ev.v_snapshot = v_;
    }
    traj.events.push_back(std::move(ev));
  }

  /// Events are counted from the stats so the budget also applies to runs
  /// that keep no event log; with logging on, the count equals the number of
  /// logged rows (one per proposal, refreshment, and window expiry).
  bool event_budget_spent(const Trajectory& traj, bool* truncated) const {
    if (opts_.max_events <= 0) return false;
    const long total =
        traj.stats.n_proposals + traj.stats.n_refresh + traj.stats.n_expiry;
    if (total < opts_.max_events) return false;
    *truncated = true;
    return true;
  }

  const UnitSystem& units_;
  SamplerKind kind_;
  SamplerOptions opts_;
  Rng rng_;
  int d_ = 0, n_ = 0;

  StateMatrix x_;
  VelocityMatrix v_;
  Matrix flow_;
  double t_ = 0.0;
  double window_end_ = 0.0;

  std::vector<std::vector<int>> sub_units_;
  std::vector<double> bar_, rate0_, rate_tmp_, amax_, sub_max_, viol_ratio_;
  double total_bar_ = 0.0;
  double escalation_ = 1.0;
  bool exact_bounds_ = true;
  std::vector<Matrix> grad_buf_, staged_;
  std::vector<char> staged_flag_, in_refresh_list_;
  std::vector<int> refresh_list_, all_units_scratch_;
  StateMatrix scratch_state_;
  Matrix strip_buf_;
  std::unique_ptr<ThreadPool> pool_;
  SamplerRun run_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Blocked sampler: per-block clocks with summed bounds, one reflection per
/// event, multiplicity-weighted flow.
inline SamplerRun simulate_bbps(const TargetModel& target,
                                const BlockingStrategy& strategy,
                                const SamplerOptions& opts) {
  const UnitSystem units = UnitSystem::blocked(target, strategy);
  return detail::Engine(units, SamplerKind::Blocked, nullptr, opts).run();
}

/// Even-odd sampler: one clock per sub-strategy at its dominating bound;
/// on each proposal every block of the drawn sub-strategy runs an
/// independent accept test, so the per-block work parallelises.
inline SamplerRun simulate_eobps(const TargetModel& target,
                                 const BlockingStrategy& strategy,
                                 const Partition& partition,
                                 const SamplerOptions& opts) {
  const PartitionCheck check = validate_partition(strategy, partition);
  if (!check.ok)
    throw ConfigError("even-odd sampler needs a valid partition: " +
                      check.describe());
  const UnitSystem units = UnitSystem::blocked(target, strategy);
  return detail::Engine(units, SamplerKind::EvenOdd, &partition, opts).run();
}

/// Local sampler over factor clusters: per-factor clocks and rates from the
/// factor's own gradient (no multiplicity weighting).
inline SamplerRun simulate_local_bps(const TargetModel& target,
                                     const FactorSet& factors,
                                     const SamplerOptions& opts) {
  const UnitSystem units = UnitSystem::factored(target, factors);
  return detail::Engine(units, SamplerKind::Local, nullptr, opts).run();
}

// ---------------------------------------------------------------------------
// Lookahead tuning
// ---------------------------------------------------------------------------

/// One step of the window tuning rule: aim at one bounding-process event
/// per window.  measured is the observed events-per-window figure; the
/// per-round correction is clamped to a factor of 8 to keep the iteration
/// stable when the measurement is noisy.
inline double theta_update(double theta, double measured_per_window) {
  const double m = std::clamp(measured_per_window, 0.125, 8.0);
  return std::clamp(theta / m, 1e-6, 1e6);
}

/// Whether a measured events-per-window figure counts as on target.
inline bool theta_on_target(double measured_per_window) {
  return measured_per_window >= 0.8 && measured_per_window <= 1.25;
}

struct ThetaTuning {
  double theta = 1.0;
  double measured_per_window = 0.0;
  int rounds = 0;
  bool converged = false;
  std::vector<double> theta_history, measured_history;
  StateMatrix x_final;  // warmed state of the last pilot round (empty if none)
};

/// Tune the lookahead window by short pilot runs: measure the realised
/// bounding-process events per window, rescale, repeat.  Each round aims at
/// windows_per_round lookahead windows at the current theta, so the
/// measurement noise stays the same across rounds, and continues from the
/// previous round's final state so it reflects the warmed-up chain.  Rounds
/// whose theta is still far too large produce events much faster than
/// windows, so every round additionally stops at events_per_round; the
/// measurement then uses the time the round actually covered.
/// partition/factors may be null except for the sampler kinds that need
/// them.
inline ThetaTuning tune_theta(const TargetModel& target,
                              const BlockingStrategy* strategy,
                              const Partition* partition,
                              const FactorSet* factors, SamplerKind kind,
                              SamplerOptions opts,
                              double windows_per_round = 200.0,
                              int max_rounds = 8,
                              long events_per_round = 50000) {
  if (windows_per_round < 1.0)
    throw ConfigError("tuning needs at least one window per round");
  if (events_per_round < 1)
    throw ConfigError("tuning needs a positive event budget per round");
  ThetaTuning out;
  out.theta = opts.theta;
  opts.record_events = false;
  opts.max_events = events_per_round;
  const std::uint64_t base_seed = opts.seed;
  for (int round = 0; round < max_rounds; ++round) {
    opts.theta = out.theta;
    opts.total_time = windows_per_round * out.theta;
    opts.seed = base_seed ^ detail::mix64(0x74756e65ULL +
                                          static_cast<std::uint64_t>(round));
    SamplerRun run;
    switch (kind) {
      case SamplerKind::Blocked:
        run = simulate_bbps(target, *strategy, opts);
        break;
      case SamplerKind::EvenOdd:
        run = simulate_eobps(target, *strategy, *partition, opts);
        break;
      case SamplerKind::Local:
        run = simulate_local_bps(target, *factors, opts);
        break;
    }
    opts.x0 = run.x_final;  // next round starts from the warmed state
    out.x_final = std::move(run.x_final);
    // total_time is the covered time, which is shorter than requested when
    // the round stopped at its event budget.
    const double windows_covered = run.trajectory.total_time / opts.theta;
    const double measured =
        run.trajectory.stats.n_proposals / windows_covered;
    out.rounds = round + 1;
    out.theta_history.push_back(out.theta);
    out.measured_history.push_back(measured);
    out.measured_per_window = measured;
    if (theta_on_target(measured)) {
      out.converged = true;
      // Centre the window on the measurement before stopping: the final
      // theta approximates the fixed point 1/rate instead of wherever the
      // iteration first entered the band, so re-tuning from a different
      // starting window lands at the same place up to measurement noise.
      out.theta = theta_update(out.theta, measured);
      break;
    }
    out.theta = theta_update(out.theta, measured);
  }
  return out;
}

}  // namespace bbps
