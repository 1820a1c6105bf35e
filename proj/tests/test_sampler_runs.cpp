#include <catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "bbps/ar_model.hpp"
#include "bbps/csv.hpp"
#include "bbps/data_sim.hpp"
#include "bbps/diagnostics.hpp"
#include "bbps/factors.hpp"
#include "bbps/kalman.hpp"
#include "bbps/rng.hpp"
#include "bbps/sampler.hpp"
#include "bbps/target.hpp"

using namespace bbps;

namespace {

ArGaussianModel chain_model(int d, int n, std::uint64_t data_seed) {
  const SimulatedData data = simulate_ar_data(d, n, 5.0, 0.1, data_seed);
  return make_ar_model(5.0, 0.1, data.y);
}

/// Isotropic potential whose gradient turns non-finite once the first
/// coordinate drifts past a threshold; triggers the engine's abort path.
class BlowupTarget : public IsotropicGaussian {
 public:
  using IsotropicGaussian::IsotropicGaussian;

  void gradient(const StateMatrix& x, Matrix& out) const override {
    IsotropicGaussian::gradient(x, out);
    if (std::abs(x(0, 0)) > 1.5)
      out(0, 0) = std::numeric_limits<double>::infinity();
  }
  void block_gradient(const StateMatrix& x, const Block& b,
                      Matrix& out) const override {
    IsotropicGaussian::block_gradient(x, b, out);
    if (std::abs(x(0, 0)) > 1.5 && b.contains(1, 1))
      out(0, 0) = std::numeric_limits<double>::infinity();
  }
};

}  // namespace

TEST_CASE("a run without events is pure flow") {
  const IsotropicGaussian target(2, 2);
  const BlockingStrategy strategy = make_grid_strategy(2, 2, 2, 2, 0, 0);
  SamplerOptions opts;
  opts.total_time = 1e-7;
  opts.seed = 5;
  opts.x0 = StateMatrix::Ones(2, 2);
  const SamplerRun run = simulate_bbps(target, strategy, opts);
  REQUIRE(run.trajectory.events.empty());
  const StateMatrix expect =
      run.trajectory.x0 +
      opts.total_time * run.trajectory.phi.cwiseProduct(run.trajectory.v0);
  CHECK((run.x_final - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("identical seeds give identical runs") {
  const ArGaussianModel model = chain_model(2, 6, 191);
  const BlockingStrategy strategy = make_grid_strategy(2, 6, 2, 2, 0, 1);
  SamplerOptions opts;
  opts.total_time = 50.0;
  opts.seed = 9;
  const SamplerRun a = simulate_bbps(model, strategy, opts);
  const SamplerRun b = simulate_bbps(model, strategy, opts);
  CHECK(a.x_final == b.x_final);
  CHECK(a.v_final == b.v_final);
  CHECK(events_csv(a.trajectory) == events_csv(b.trajectory));
  opts.seed = 10;
  const SamplerRun c = simulate_bbps(model, strategy, opts);
  CHECK(events_csv(a.trajectory) != events_csv(c.trajectory));
}

TEST_CASE("even-odd trajectories are independent of the thread count") {
  const ArGaussianModel model = chain_model(3, 24, 192);
  const BlockingStrategy strategy = make_grid_strategy(3, 24, 3, 6, 0, 2);
  const Partition partition = even_odd_partition(strategy);
  SamplerOptions opts;
  opts.total_time = 1e9;
  opts.max_events = 2000;
  opts.seed = 31;
  opts.parallelism = 1;
  const SamplerRun serial = simulate_eobps(model, strategy, partition, opts);
  opts.parallelism = 2;
  const SamplerRun threaded = simulate_eobps(model, strategy, partition, opts);
  CHECK(serial.x_final == threaded.x_final);
  CHECK(serial.v_final == threaded.v_final);
  CHECK(events_csv(serial.trajectory) == events_csv(threaded.trajectory));
}

TEST_CASE("event times increase strictly") {
  const ArGaussianModel model = chain_model(2, 8, 193);
  const BlockingStrategy strategy = make_grid_strategy(2, 8, 2, 2, 0, 1);
  SamplerOptions opts;
  opts.total_time = 30.0;
  opts.seed = 77;

  const auto check_run = [](const SamplerRun& run) {
    const auto& events = run.trajectory.events;
    for (std::size_t k = 1; k < events.size(); ++k)
      CHECK(events[k].time > events[k - 1].time);
    CHECK(run.trajectory.stats.n_bounce + run.trajectory.stats.n_reject ==
          run.trajectory.stats.n_proposals);
  };
  check_run(simulate_bbps(model, strategy, opts));
  check_run(simulate_eobps(model, strategy, even_odd_partition(strategy), opts));
  check_run(simulate_local_bps(model, FactorSet::grouped(model, 2), opts));
}

TEST_CASE("snapshots replay exactly") {
  const ArGaussianModel model = chain_model(2, 6, 194);
  const BlockingStrategy strategy = make_grid_strategy(2, 6, 2, 3, 0, 1);
  SamplerOptions opts;
  opts.total_time = 40.0;
  opts.seed = 13;
  opts.checkpoint_every = 50;
  const SamplerRun run = simulate_bbps(model, strategy, opts);

  TrajectoryCursor cursor(run.trajectory);
  int checked = 0;
  for (const EventRecord& ev : run.trajectory.events) {
    if (!ev.has_snapshot) continue;
    // state_at applies the event itself (right continuity), so the cursor
    // state must reproduce the engine's snapshot bit for bit.
    const StateMatrix x = cursor.state_at(ev.time);
    CHECK((x - ev.x_snapshot).cwiseAbs().maxCoeff() == 0.0);
    CHECK((cursor.chain_velocity() - ev.v_snapshot).cwiseAbs().maxCoeff() ==
          0.0);
    ++checked;
  }
  CHECK(checked >= 3);

  // The end of the replay is the engine's final state.
  const auto [x_end, v_end] = final_state(run.trajectory);
  CHECK((x_end - run.x_final).cwiseAbs().maxCoeff() == 0.0);
  CHECK((v_end - run.v_final).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("switching refreshment off is flagged") {
  const ArGaussianModel model = chain_model(2, 4, 195);
  const BlockingStrategy strategy = make_grid_strategy(2, 4, 2, 2, 0, 0);
  SamplerOptions opts;
  opts.total_time = 10.0;
  opts.refresh_rate = 0.0;
  const SamplerRun run = simulate_bbps(model, strategy, opts);
  CHECK(run.trajectory.stats.n_refresh == 0);
  bool flagged = false;
  for (const std::string& w : run.trajectory.stats.warnings)
    if (w.find("refresh") != std::string::npos) flagged = true;
  CHECK(flagged);
}

TEST_CASE("the event budget truncates the run with a warning") {
  const ArGaussianModel model = chain_model(2, 6, 196);
  const BlockingStrategy strategy = make_grid_strategy(2, 6, 2, 2, 0, 1);
  SamplerOptions opts;
  opts.total_time = 1e9;
  opts.max_events = 500;
  opts.seed = 3;
  const SamplerRun run = simulate_bbps(model, strategy, opts);
  CHECK(run.trajectory.total_time < opts.total_time);
  CHECK(run.trajectory.events.size() == 500);
  bool flagged = false;
  for (const std::string& w : run.trajectory.stats.warnings)
    if (w.find("event") != std::string::npos) flagged = true;
  CHECK(flagged);
}

TEST_CASE("exact bounds are never violated on a quadratic target") {
  const ArGaussianModel model = chain_model(2, 6, 197);
  const BlockingStrategy strategy = make_grid_strategy(2, 6, 2, 2, 0, 1);
  SamplerOptions opts;
  opts.total_time = 300.0;
  opts.seed = 21;
  const SamplerRun run = simulate_bbps(model, strategy, opts);
  CHECK(run.trajectory.stats.n_bound_violations == 0);
  CHECK(run.trajectory.stats.n_proposals > 100);
}

TEST_CASE("blocked sampling reproduces isotropic gaussian moments") {
  const IsotropicGaussian target(2, 2);
  const BlockingStrategy strategy = make_grid_strategy(2, 2, 2, 2, 0, 0);
  SamplerOptions opts;
  opts.total_time = 50000.0;
  opts.seed = 2024;
  opts.checkpoint_every = 5000;
  const SamplerRun run = simulate_bbps(target, strategy, opts);

  const SampleSeries kept = drop_burn_in(discretize(run.trajectory, 1.0), 0.1);
  const long n = kept.n_samples();
  const int batches = 50;
  const long width = n / batches;
  for (int j = 0; j < kept.n_coords(); ++j) {
    const double mean = kept.values.row(j).mean();
    // Batch-means standard error absorbs the autocorrelation of the path.
    double sq = 0.0;
    for (int b = 0; b < batches; ++b) {
      const double bm = kept.values.row(j).segment(b * width, width).mean();
      sq += (bm - mean) * (bm - mean);
    }
    const double se = std::sqrt(sq / (batches - 1.0) / batches);
    INFO("coordinate " << j << ": mean " << mean << " se " << se);
    CHECK(std::abs(mean - 0.0) <= 3.0 * se);
    const double var =
        kept.values.row(j).array().square().mean() - mean * mean;
    CHECK(var == Catch::Approx(1.0).epsilon(0.05));
  }

  // The velocity marginal stays standard normal along the run.
  const std::vector<double> vels =
      discretize_velocities(run.trajectory, 10.0);
  double vm = 0.0, vv = 0.0;
  for (double v : vels) vm += v;
  vm /= static_cast<double>(vels.size());
  for (double v : vels) vv += (v - vm) * (v - vm);
  vv /= static_cast<double>(vels.size() - 1);
  CHECK(std::abs(vm) < 0.05);
  CHECK(vv == Catch::Approx(1.0).epsilon(0.08));
}

TEST_CASE("numerical blowups abort with the state attached") {
  const BlowupTarget target(2, 2);
  const BlockingStrategy strategy = make_grid_strategy(2, 2, 2, 2, 0, 0);
  SamplerOptions opts;
  opts.total_time = 100.0;
  opts.seed = 8;
  opts.x0 = StateMatrix::Ones(2, 2);
  try {
    simulate_bbps(target, strategy, opts);
    FAIL("expected a numerical abort");
  } catch (const NumericalAbort& e) {
    CHECK(e.time >= 0.0);
    CHECK(e.x.rows() == 2);
    CHECK(e.x.cols() == 2);
    CHECK(e.v.rows() == 2);
    CHECK(std::string(e.what()).find("finite") != std::string::npos);
  }
}

TEST_CASE("window tuning lands in the acceptance band") {
  const ArGaussianModel model = chain_model(2, 6, 198);
  const BlockingStrategy strategy = make_grid_strategy(2, 6, 2, 2, 0, 1);
  SamplerOptions opts;
  opts.seed = 17;
  opts.theta = 1.0;
  const ThetaTuning tuned = tune_theta(model, &strategy, nullptr, nullptr,
                                       SamplerKind::Blocked, opts, 150.0);
  CHECK(tuned.converged);
  CHECK(theta_on_target(tuned.measured_per_window));
  CHECK(tuned.rounds <= 8);
  CHECK(tuned.x_final.rows() == 2);

  // Starting from double the window must land within 20% of the same theta.
  opts.theta = 2.0;
  const ThetaTuning doubled = tune_theta(model, &strategy, nullptr, nullptr,
                                         SamplerKind::Blocked, opts, 150.0);
  CHECK(doubled.converged);
  CHECK(std::abs(doubled.theta - tuned.theta) <= 0.2 * tuned.theta);
}

TEST_CASE("tuned local sampler matches the blocked band") {
  const ArGaussianModel model = chain_model(2, 8, 199);
  const FactorSet factors = FactorSet::grouped(model, 2);
  SamplerOptions opts;
  opts.seed = 23;
  const ThetaTuning tuned = tune_theta(model, nullptr, nullptr, &factors,
                                       SamplerKind::Local, opts, 150.0);
  CHECK(tuned.converged);
  CHECK(theta_on_target(tuned.measured_per_window));
}

TEST_CASE("blocked posterior matches the kalman smoother") {
  // The spec's workhorse example: d=2, N=5, overlapping width-2/overlap-1
  // temporal blocks.  A medium run keeps the test fast; the acceptance
  // binary runs the long version with tight tolerances.
  const SimulatedData data = simulate_ar_data(2, 5, 5.0, 0.1, 4);
  const ArGaussianModel model = make_ar_model(5.0, 0.1, data.y);
  const BlockingStrategy strategy = make_grid_strategy(2, 5, 2, 2, 0, 1);
  const SmootherResult oracle = kalman_smooth(model);

  SamplerOptions opts;
  opts.total_time = 8000.0;
  opts.seed = 404;
  opts.checkpoint_every = 2000;
  const SamplerRun run = simulate_bbps(model, strategy, opts);
  const SampleSeries kept =
      drop_burn_in(discretize(run.trajectory, 0.5), 0.25);

  const long n = kept.n_samples();
  const int batches = 40;
  const long width = n / batches;
  for (int j = 0; j < kept.n_coords(); ++j) {
    const auto [row, col] = kept.coords[j];
    const double mean = kept.values.row(j).mean();
    double sq = 0.0;
    for (int b = 0; b < batches; ++b) {
      const double bm = kept.values.row(j).segment(b * width, width).mean();
      sq += (bm - mean) * (bm - mean);
    }
    const double se = std::sqrt(sq / (batches - 1.0) / batches);
    const double target_mean = oracle.mean(row - 1, col - 1);
    INFO("coordinate (" << row << ", " << col << ")");
    CHECK(std::abs(mean - target_mean) <= 4.0 * se);
  }
}

TEST_CASE("even-odd and local samplers agree with the oracle too") {
  const SimulatedData data = simulate_ar_data(2, 6, 5.0, 0.1, 6);
  const ArGaussianModel model = make_ar_model(5.0, 0.1, data.y);
  const SmootherResult oracle = kalman_smooth(model);
  SamplerOptions opts;
  opts.total_time = 6000.0;
  opts.seed = 505;
  opts.checkpoint_every = 2000;

  const auto check_run = [&](const SamplerRun& run) {
    const SampleSeries kept =
        drop_burn_in(discretize(run.trajectory, 0.5), 0.25);
    const long n = kept.n_samples();
    const int batches = 40;
    const long width = n / batches;
    for (int j = 0; j < kept.n_coords(); ++j) {
      const auto [row, col] = kept.coords[j];
      const double mean = kept.values.row(j).mean();
      double sq = 0.0;
      for (int b = 0; b < batches; ++b) {
        const double bm = kept.values.row(j).segment(b * width, width).mean();
        sq += (bm - mean) * (bm - mean);
      }
      const double se = std::sqrt(sq / (batches - 1.0) / batches);
      INFO("coordinate (" << row << ", " << col << ")");
      CHECK(std::abs(mean - oracle.mean(row - 1, col - 1)) <= 4.0 * se);
    }
  };

  const BlockingStrategy strategy = make_grid_strategy(2, 6, 2, 2, 0, 1);
  check_run(simulate_eobps(model, strategy, even_odd_partition(strategy), opts));
  check_run(simulate_local_bps(model, FactorSet::elementary(model), opts));
}
