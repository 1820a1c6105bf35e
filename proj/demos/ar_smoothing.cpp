// Smoothing a linear-Gaussian state-space model with the three samplers and
// checking every posterior mean against the exact Kalman smoother.

#include <cstdio>

#include "bbps/bbps.hpp"

int main() {
  using namespace bbps;

  const int d = 3, n = 200;
  const SimulatedData data = simulate_ar_data(d, n, 5.0, 0.1, 7);
  const ArGaussianModel model = make_ar_model(5.0, 0.1, data.y);
  const SmootherResult oracle = kalman_smooth(model);

  const BlockingStrategy strategy = make_grid_strategy(d, n, d, 20, 0, 10);
  const Partition parity = even_odd_partition(strategy);
  const FactorSet factors = FactorSet::grouped(model, 20);

  SamplerOptions opts;
  opts.total_time = 2000.0;
  opts.refresh_rate = 1.0;
  opts.theta = 1.0;
  opts.seed = 42;

  struct Row {
    const char* name;
    SamplerRun run;
  };
  Row rows[] = {
      {"bbps", simulate_bbps(model, strategy, opts)},
      {"eobps", simulate_eobps(model, strategy, parity, opts)},
      {"local", simulate_local_bps(model, factors, opts)},
  };

  std::printf("%-6s %12s %12s %12s %10s\n", "name", "events", "max|err|",
              "ess/s med", "wall s");
  for (Row& row : rows) {
    const SampleSeries kept =
        drop_burn_in(discretize(row.run.trajectory, 1.0), 0.25);
    double worst = 0.0;
    for (int j = 0; j < kept.n_coords(); ++j) {
      const double mean = kept.values.row(j).mean();
      const double truth = oracle.mean(kept.coords[j].first - 1,
                                       kept.coords[j].second - 1);
      worst = std::max(worst, std::abs(mean - truth));
    }
    const EssResult esses = ess(kept);
    Vector essps = esses.ess_per_sec;
    std::sort(essps.data(), essps.data() + essps.size());
    std::printf("%-6s %12ld %12.4g %12.4g %10.2f\n", row.name,
                row.run.trajectory.stats.n_proposals, worst,
                essps(essps.size() / 2),
                row.run.trajectory.stats.wall_clock_seconds);
  }
  return 0;
}
