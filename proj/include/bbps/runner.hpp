#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bbps/ar_model.hpp"
#include "bbps/blocking.hpp"
#include "bbps/common.hpp"
#include "bbps/config.hpp"
#include "bbps/csv.hpp"
#include "bbps/data_sim.hpp"
#include "bbps/diagnostics.hpp"
#include "bbps/factors.hpp"
#include "bbps/finite_diff.hpp"
#include "bbps/kalman.hpp"
#include "bbps/sampler.hpp"
#include "bbps/strategy_json.hpp"
#include "bbps/sv_model.hpp"
#include "bbps/target.hpp"

namespace bbps {

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t fnv1a64(const unsigned char* data, std::size_t len,
                             std::uint64_t h) {
  for (std::size_t i = 0; i < len; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t hash_doubles(std::uint64_t h, const double* data,
                                  std::size_t count) {
  return fnv1a64(reinterpret_cast<const unsigned char*>(data),
                 sizeof(double) * count, h);
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace detail

/// A dataset in memory: observations, optional mixing weights, optional
/// generating latent path.  The content hash identifies the observation
/// side (y and gamma) so comparison reports can refuse to mix runs that
/// were smoothing different data.
struct Dataset {
  Matrix y;
  Vector gamma;   // size 0 = not applicable (defaults to ones in the model)
  Matrix x_true;  // size 0 = generating path unknown
  std::uint64_t hash = 0;
};

inline std::uint64_t dataset_content_hash(const Dataset& data) {
  std::uint64_t h = 1469598103934665603ULL;
  const std::int64_t shape[3] = {data.y.rows(), data.y.cols(),
                                 data.gamma.size()};
  h = detail::fnv1a64(reinterpret_cast<const unsigned char*>(shape),
                      sizeof shape, h);
  h = detail::hash_doubles(h, data.y.data(),
                           static_cast<std::size_t>(data.y.size()));
  h = detail::hash_doubles(h, data.gamma.data(),
                           static_cast<std::size_t>(data.gamma.size()));
  return h;
}

/// Simulate or load the dataset a model section describes.  The isotropic
/// target is standalone and yields an empty dataset.
inline Dataset prepare_dataset(const ModelConfig& m) {
  Dataset out;
  if (m.kind == "isotropic") {
    out.hash = dataset_content_hash(out);
    return out;
  }
  if (m.has_simulate) {
    if (m.kind == "ar") {
      SimulatedData sim =
          simulate_ar_data(m.simulate.d, m.simulate.N, m.sigma2, m.psi,
                           m.simulate.seed, m.simulate.noise_scale);
      out.y = std::move(sim.y);
      out.x_true = std::move(sim.x);
    } else {
      SimulatedData sim =
          simulate_sv_data(sv_simulation_config(m.simulate.d, m.alpha, m.nu),
                           m.simulate.N, m.simulate.seed);
      out.y = std::move(sim.y);
      out.gamma = std::move(sim.gamma);
      out.x_true = std::move(sim.x);
    }
  } else {
    out.y = read_matrix_csv(m.data.y);
    if (!m.data.gamma.empty()) {
      Matrix g = read_matrix_csv(m.data.gamma);
      if (g.rows() != 1 && g.cols() != 1)
        throw ConfigError("gamma file " + m.data.gamma +
                          " must hold a single row or column");
      out.gamma = g.rows() == 1 ? Vector(g.transpose()) : Vector(g);
      if (out.gamma.size() != out.y.cols())
        throw ConfigError("gamma file " + m.data.gamma + " has " +
                          std::to_string(out.gamma.size()) +
                          " entries but y has " + std::to_string(out.y.cols()) +
                          " columns");
    }
    if (!m.data.x_true.empty()) {
      out.x_true = read_matrix_csv(m.data.x_true);
      if (out.x_true.rows() != out.y.rows() ||
          out.x_true.cols() != out.y.cols())
        throw ConfigError("x_true file " + m.data.x_true +
                          " does not match the shape of y");
    }
  }
  out.hash = dataset_content_hash(out);
  return out;
}

/// Write the dataset files of a simulate-data command into dir:
/// y.csv always, gamma.csv and x_true.csv when the model provides them.
/// Returns the paths written.
inline std::vector<std::string> write_dataset_files(const std::string& dir,
                                                    const Dataset& data) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::string> written;
  const auto put = [&](const char* name, const Matrix& m) {
    const std::string path = (fs::path(dir) / name).string();
    write_matrix_csv(path, m);
    written.push_back(path);
  };
  put("y.csv", data.y);
  if (data.x_true.size() > 0) put("x_true.csv", data.x_true);
  if (data.gamma.size() > 0) put("gamma.csv", Matrix(data.gamma.transpose()));
  return written;
}

// ---------------------------------------------------------------------------
// Assembling the experiment
// ---------------------------------------------------------------------------

/// Everything a sampler run needs, built from a parsed config: the dataset,
/// the target, and exactly one of a blocking strategy (with a partition for
/// the even-odd sampler) or a factor decomposition.
struct ExperimentSetup {
  Dataset data;
  std::unique_ptr<TargetModel> model;
  std::optional<BlockingStrategy> strategy;
  std::optional<Partition> partition;
  std::optional<FactorSet> factors;
  SamplerKind kind = SamplerKind::Blocked;
  int n_units = 0;
  int dims_per_unit = 0;  // coordinates of the largest unit
  int n_substrategies = 1;
};

inline ExperimentSetup build_experiment(const ExperimentConfig& cfg) {
  ExperimentSetup s;
  s.data = prepare_dataset(cfg.model);

  if (cfg.model.kind == "ar") {
    s.model = std::make_unique<ArGaussianModel>(
        make_ar_model(cfg.model.sigma2, cfg.model.psi, s.data.y));
  } else if (cfg.model.kind == "sv") {
    const Vector gamma = s.data.gamma.size() > 0
                             ? s.data.gamma
                             : Vector::Ones(s.data.y.cols());
    s.model = std::make_unique<StochVolModel>(
        make_sv_model(s.data.y, gamma, cfg.model.alpha, cfg.model.nu));
  } else {
    s.model = std::make_unique<IsotropicGaussian>(cfg.model.d, cfg.model.N);
  }

  const int d = s.model->d();
  const int n = s.model->N();
  if (cfg.sampler.algorithm == "bbps")
    s.kind = SamplerKind::Blocked;
  else if (cfg.sampler.algorithm == "eobps")
    s.kind = SamplerKind::EvenOdd;
  else
    s.kind = SamplerKind::Local;

  if (cfg.strategy.kind == "factors") {
    s.factors = cfg.strategy.cluster_width == 1
                    ? FactorSet::elementary(*s.model)
                    : FactorSet::grouped(*s.model, cfg.strategy.cluster_width);
    s.n_units = s.factors->size();
    for (int f = 1; f <= s.factors->size(); ++f)
      s.dims_per_unit = std::max(
          s.dims_per_unit, static_cast<int>(s.factors->owned(f).size()));
    return s;
  }

  if (cfg.strategy.kind == "grid") {
    s.strategy = make_grid_strategy(d, n, cfg.strategy.spatial_width,
                                    cfg.strategy.temporal_width,
                                    cfg.strategy.spatial_overlap,
                                    cfg.strategy.temporal_overlap);
  } else {
    StrategyFile file = strategy_from_json_text(read_text_file(cfg.strategy.path));
    if (file.strategy.d() != d || file.strategy.N() != n)
      throw ConfigError("strategy file " + cfg.strategy.path + " is for a " +
                        std::to_string(file.strategy.d()) + " x " +
                        std::to_string(file.strategy.N()) +
                        " state but the data is " + std::to_string(d) + " x " +
                        std::to_string(n));
    s.strategy = std::move(file.strategy);
    if (file.has_partition) s.partition = std::move(file.partition);
  }

  if (s.kind == SamplerKind::EvenOdd && !s.partition)
    s.partition = even_odd_partition(*s.strategy);
  if (s.kind != SamplerKind::EvenOdd) s.partition.reset();

  s.n_units = static_cast<int>(s.strategy->blocks().size());
  for (const Block& b : s.strategy->blocks())
    s.dims_per_unit = std::max(s.dims_per_unit, static_cast<int>(b.size()));
  if (s.partition)
    s.n_substrategies = static_cast<int>(s.partition->groups.size());
  return s;
}

// ---------------------------------------------------------------------------
// Running an experiment end to end
// ---------------------------------------------------------------------------

/// Summary of one completed run; the same numbers land in metadata.json.
struct RunSummary {
  std::string output_dir;
  std::string algorithm;
  int d = 0, N = 0;
  std::uint64_t seed = 0;
  double theta_used = 0.0;
  bool theta_auto = false;
  ThetaTuning tuning;
  TrajectoryStats stats;
  EventStats events;
  long n_samples = 0, n_kept = 0;
  bool has_ess = false;
  double ess_min = 0.0, ess_median = 0.0;
  double ess_per_sec_min = 0.0, ess_per_sec_median = 0.0;
  double msjd_mean = 0.0;
  std::uint64_t dataset_hash = 0;
  int n_units = 0, dims_per_unit = 0, n_substrategies = 1;
  std::vector<std::string> warnings;
};

namespace detail {

inline nlohmann::json run_metadata_json(const ExperimentConfig& cfg,
                                        const RunSummary& s) {
  nlohmann::json j;
  j["schema"] = "bbps-run-metadata";
  j["version"] = kConfigVersion;
  j["algorithm"] = s.algorithm;
  j["d"] = s.d;
  j["N"] = s.N;
  j["seed"] = s.seed;
  j["theta"] = s.theta_used;
  if (s.theta_auto) {
    j["theta_tuning"] = {{"rounds", s.tuning.rounds},
                         {"measured_per_window", s.tuning.measured_per_window},
                         {"converged", s.tuning.converged}};
  }
  j["wall_clock_seconds"] = s.stats.wall_clock_seconds;
  j["violations"] = {{"count", s.stats.n_bound_violations},
                     {"max_ratio", s.stats.max_violation_ratio}};
  j["events"] = {{"proposals", s.events.n_proposals},
                 {"bounces", s.events.n_bounce},
                 {"rejects", s.events.n_reject},
                 {"refreshes", s.events.n_refresh},
                 {"window_expiries", s.events.n_expiry},
                 {"reflections", s.events.n_reflections},
                 {"acceptance_rate", s.events.acceptance_rate},
                 {"proposals_per_window", s.events.proposals_per_window}};
  j["n_blocks"] = s.n_units;
  j["dims_per_block"] = s.dims_per_unit;
  j["n_substrategies"] = s.n_substrategies;
  j["dataset_hash"] = hash_hex(s.dataset_hash);
  nlohmann::json diag;
  diag["delta"] = cfg.diagnostics.delta;
  diag["burn_in"] = cfg.diagnostics.burn_in;
  diag["n_samples"] = s.n_samples;
  diag["n_kept"] = s.n_kept;
  if (s.has_ess) {
    diag["ess_min"] = s.ess_min;
    diag["ess_median"] = s.ess_median;
    diag["ess_per_sec_min"] = s.ess_per_sec_min;
    diag["ess_per_sec_median"] = s.ess_per_sec_median;
    diag["msjd_mean"] = s.msjd_mean;
  }
  j["diagnostics"] = std::move(diag);
  j["warnings"] = s.warnings;
  j["config"] = experiment_config_to_json(cfg);
  return j;
}

}  // namespace detail

/// Write the x/v snapshot of an aborted run; returns the snapshot path
/// (the state file) for the error message.
inline std::string write_abort_snapshot(const std::string& dir,
                                        const NumericalAbort& abort) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string x_path = (fs::path(dir) / "abort_state.csv").string();
  write_matrix_csv(x_path, abort.x);
  write_matrix_csv((fs::path(dir) / "abort_velocity.csv").string(), abort.v);
  nlohmann::json j;
  j["time"] = abort.time;
  j["message"] = abort.what();
  write_text_file((fs::path(dir) / "abort.json").string(), j.dump(2) + "\n");
  return x_path;
}

/// Run the configured sampler and write every artifact of the run into
/// cfg.output_dir: events.csv, samples.csv, diagnostics.csv, acf.csv,
/// trace.csv, mse.csv (quadratic models only) and metadata.json.  On a
/// numerical abort the state snapshot is written before rethrowing.
inline RunSummary run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  ExperimentSetup setup = build_experiment(cfg);
  const TargetModel& target = *setup.model;

  SamplerOptions opts;
  opts.total_time = cfg.sampler.total_time;
  opts.refresh_rate = cfg.sampler.refresh_rate;
  opts.theta = cfg.sampler.theta;
  opts.seed = cfg.sampler.seed;
  opts.parallelism = cfg.sampler.parallelism;
  opts.max_events = cfg.sampler.max_events;
  opts.unit_velocity_init = cfg.sampler.unit_velocity_init;

  RunSummary summary;
  summary.output_dir = cfg.output_dir;
  summary.algorithm = cfg.sampler.algorithm;
  summary.d = target.d();
  summary.N = target.N();
  summary.seed = cfg.sampler.seed;
  summary.theta_auto = cfg.sampler.theta_auto;
  summary.dataset_hash = setup.data.hash;
  summary.n_units = setup.n_units;
  summary.dims_per_unit = setup.dims_per_unit;
  summary.n_substrategies = setup.n_substrategies;

  const BlockingStrategy* strategy =
      setup.strategy ? &*setup.strategy : nullptr;
  const Partition* partition = setup.partition ? &*setup.partition : nullptr;
  const FactorSet* factors = setup.factors ? &*setup.factors : nullptr;

  if (cfg.sampler.theta_auto) {
    summary.tuning = tune_theta(target, strategy, partition, factors,
                                setup.kind, opts);
    opts.theta = summary.tuning.theta;
    opts.x0 = summary.tuning.x_final;  // start the main run warmed up
    if (!summary.tuning.converged)
      summary.warnings.push_back(
          "theta tuning did not settle inside the target band; using theta = " +
          std::to_string(opts.theta));
  }
  summary.theta_used = opts.theta;

  SamplerRun run;
  try {
    switch (setup.kind) {
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
  } catch (const NumericalAbort& abort) {
    write_abort_snapshot(cfg.output_dir, abort);
    throw;
  }
  const Trajectory& traj = run.trajectory;
  summary.stats = traj.stats;
  summary.events = event_stats(traj);
  summary.warnings.insert(summary.warnings.end(), traj.stats.warnings.begin(),
                          traj.stats.warnings.end());

  fs::create_directories(cfg.output_dir);
  const auto out_path = [&](const char* name) {
    return (fs::path(cfg.output_dir) / name).string();
  };
  write_text_file(out_path("events.csv"), events_csv(traj));

  SampleSeries samples = discretize(traj, cfg.diagnostics.delta,
                                    cfg.diagnostics.tracked);
  write_text_file(out_path("samples.csv"), samples_csv(samples));
  summary.n_samples = samples.n_samples();

  SampleSeries kept = drop_burn_in(samples, cfg.diagnostics.burn_in);
  summary.n_kept = kept.n_samples();

  // Summaries need a minimum of history; short smoke runs still produce
  // samples.csv and metadata but skip the estimator outputs.
  std::string diag_csv = "metric,coordinate,value\n";
  if (kept.n_samples() >= 100) {
    const EssResult esses = ess(kept);
    const Vector jumps = msjd(kept);
    diag_csv = diagnostics_csv(kept, esses, jumps);
    summary.has_ess = true;
    summary.ess_min = esses.min();
    summary.ess_median = esses.median();
    Vector essps = esses.ess_per_sec;
    std::sort(essps.data(), essps.data() + essps.size());
    summary.ess_per_sec_min = essps(0);
    summary.ess_per_sec_median =
        essps.size() % 2 == 1
            ? essps(essps.size() / 2)
            : 0.5 * (essps(essps.size() / 2 - 1) + essps(essps.size() / 2));
    summary.msjd_mean = jumps.mean();
  } else {
    summary.warnings.push_back(
        "fewer than 100 retained samples: ESS/MSJD summaries skipped");
  }
  write_text_file(out_path("diagnostics.csv"), diag_csv);

  // Energy trace over the whole run (burn-in included, for traceplots) and
  // its autocorrelation after burn-in.
  const std::vector<double> energy =
      energy_trace(target, traj, cfg.diagnostics.delta);
  write_text_file(out_path("trace.csv"),
                  energy_csv(energy, cfg.diagnostics.delta, 0.0));
  const long burn_count = summary.n_samples - summary.n_kept;
  std::vector<double> energy_kept(energy.begin() + burn_count, energy.end());
  const long nk = static_cast<long>(energy_kept.size());
  int max_lag = cfg.diagnostics.max_lag > 0 ? cfg.diagnostics.max_lag : 200;
  max_lag = static_cast<int>(std::min<long>(max_lag, nk / 4 - 1));
  if (max_lag >= 1) {
    write_text_file(out_path("acf.csv"), acf_csv(acf(energy_kept, max_lag)));
  } else {
    summary.warnings.push_back(
        "too few retained samples for an autocorrelation curve");
  }

  // Against quadratic targets the posterior mean is exactly computable, so
  // attach the error-versus-time curve measured against the oracle.
  if (target.traits().quadratic && summary.n_samples >= 1) {
    Vector truth(samples.n_coords());
    if (cfg.model.kind == "ar") {
      const auto& model = dynamic_cast<const ArGaussianModel&>(target);
      const SmootherResult oracle = kalman_smooth(model);
      for (int j = 0; j < samples.n_coords(); ++j)
        truth(j) = oracle.mean(samples.coords[j].first - 1,
                               samples.coords[j].second - 1);
    } else {
      truth.setZero();  // isotropic Gaussian posterior mean
    }
    write_text_file(out_path("mse.csv"), mse_csv(mse_vs_time(samples, truth)));
  }

  write_text_file(out_path("metadata.json"),
                  detail::run_metadata_json(cfg, summary).dump(2) + "\n");
  return summary;
}

// ---------------------------------------------------------------------------
// Comparison reports
// ---------------------------------------------------------------------------

struct CompareRow {
  std::string algorithm;
  int dims_per_block = 0;
  int n_blocks = 0;
  int n_substrategies = 1;
  double ess_per_sec_min = 0.0;
  double ess_per_sec_median = 0.0;
  double msjd_mean = 0.0;
  double rel_perf = 0.0;
};

struct CompareReport {
  std::vector<CompareRow> rows;
  std::string csv;
};

/// Build the comparison table from completed run directories.  All runs
/// must target the same dataset (metadata dataset_hash); relative
/// performance is each run's median ESS/s normalized by the best one.
inline CompareReport compare_runs(const std::vector<std::string>& run_dirs) {
  namespace fs = std::filesystem;
  if (run_dirs.size() < 2)
    throw ConfigError("compare needs at least two completed run directories");

  CompareReport report;
  std::string hash;
  for (const std::string& dir : run_dirs) {
    const std::string meta_path = (fs::path(dir) / "metadata.json").string();
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text_file(meta_path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("compare: cannot parse " + meta_path + ": " +
                        e.what());
    }
    if (!j.contains("dataset_hash") || !j.contains("diagnostics"))
      throw ConfigError("compare: " + meta_path +
                        " is not a run metadata file");
    const std::string run_hash = j["dataset_hash"].get<std::string>();
    if (hash.empty())
      hash = run_hash;
    else if (run_hash != hash)
      throw ConfigError("compare: run " + dir +
                        " used a different dataset than the first run "
                        "(dataset_hash mismatch)");
    const nlohmann::json& diag = j["diagnostics"];
    if (!diag.contains("ess_per_sec_median"))
      throw ConfigError("compare: run " + dir +
                        " has no ESS summary (too few retained samples)");
    CompareRow row;
    row.algorithm = j["algorithm"].get<std::string>();
    row.dims_per_block = j["dims_per_block"].get<int>();
    row.n_blocks = j["n_blocks"].get<int>();
    row.n_substrategies = j["n_substrategies"].get<int>();
    row.ess_per_sec_min = diag["ess_per_sec_min"].get<double>();
    row.ess_per_sec_median = diag["ess_per_sec_median"].get<double>();
    row.msjd_mean = diag["msjd_mean"].get<double>();
    report.rows.push_back(std::move(row));
  }

  double best = 0.0;
  for (const CompareRow& row : report.rows)
    best = std::max(best, row.ess_per_sec_median);
  for (CompareRow& row : report.rows)
    row.rel_perf = best > 0.0 ? row.ess_per_sec_median / best : 0.0;

  std::string csv =
      "algorithm,dims_per_block,n_blocks,n_substrategies,ess_per_sec_min,"
      "ess_per_sec_median,msjd_mean,rel_perf\n";
  for (const CompareRow& row : report.rows) {
    char rel[16];
    std::snprintf(rel, sizeof(rel), "%.2f", row.rel_perf);
    csv += row.algorithm + ',' + std::to_string(row.dims_per_block) + ',' +
           std::to_string(row.n_blocks) + ',' +
           std::to_string(row.n_substrategies) + ',' +
           format_double(row.ess_per_sec_min) + ',' +
           format_double(row.ess_per_sec_median) + ',' +
           format_double(row.msjd_mean) + ',' + rel + '\n';
  }
  report.csv = std::move(csv);
  return report;
}

// ---------------------------------------------------------------------------
// Self test
// ---------------------------------------------------------------------------

struct SelfTestReport {
  bool ok = true;
  std::vector<std::string> lines;
};

namespace detail {

inline void self_test_check(SelfTestReport& report, const std::string& name,
                            bool passed, const std::string& detail_text) {
  report.ok = report.ok && passed;
  report.lines.push_back((passed ? "[ok]   " : "[FAIL] ") + name + ": " +
                         detail_text);
}

}  // namespace detail

/// Cross-check the exact oracles and core sampler identities on small
/// random instances.  Any failure means the build cannot be trusted and
/// maps to its own exit code in the command-line driver.
inline SelfTestReport self_test(std::uint64_t seed = 20240817) {
  SelfTestReport report;
  Rng rng(seed);

  // Two independent exact posteriors must agree.
  double worst_mean_gap = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    const int d = 1 + static_cast<int>(rng.uniform() * 3.0);
    const int n = 2 + static_cast<int>(rng.uniform() * 12.0);
    const SimulatedData data =
        simulate_ar_data(d, n, 5.0, 0.1, rng.raw() | 1ULL);
    const ArGaussianModel model = make_ar_model(5.0, 0.1, data.y);
    const SmootherResult smoother = kalman_smooth(model);
    const GaussianPosterior dense = dense_gaussian_posterior(model);
    worst_mean_gap = std::max(
        worst_mean_gap,
        (smoother.mean - dense.mean()).cwiseAbs().maxCoeff());
  }
  detail::self_test_check(report, "kalman vs dense posterior",
                          worst_mean_gap < 1e-8,
                          "max |mean gap| = " + format_double(worst_mean_gap));

  // Analytic gradients against central differences on both shipped models.
  {
    const SimulatedData data = simulate_ar_data(3, 12, 5.0, 0.1, 11);
    const ArGaussianModel model = make_ar_model(5.0, 0.1, data.y);
    double worst = 0.0;
    for (int rep = 0; rep < 5; ++rep) {
      StateMatrix x(3, 12);
      rng.fill_normal(x);
      worst = std::max(worst, gradient_check(model, x));
    }
    detail::self_test_check(report, "ar gradient vs finite differences",
                            worst < 1e-5,
                            "max rel err = " + format_double(worst));
  }
  {
    const SimulatedData data =
        simulate_sv_data(sv_simulation_config(3), 20, 12);
    const StochVolModel model = make_sv_model(data.y, data.gamma);
    double worst = 0.0;
    for (int rep = 0; rep < 5; ++rep) {
      StateMatrix x(3, 20);
      rng.fill_normal(x);
      x *= 0.5;
      worst = std::max(worst, gradient_check(model, x));
    }
    detail::self_test_check(report, "sv gradient vs finite differences",
                            worst < 1e-5,
                            "max rel err = " + format_double(worst));
  }

  // Reflection identities: involution, norm preservation, rate flip.
  {
    const IsotropicGaussian model(3, 4);  // gradient(x) = x, everything exact
    const Block whole{1, 1, 3, 1, 4};
    double worst = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
      StateMatrix x(3, 4);
      VelocityMatrix v(3, 4);
      rng.fill_normal(x);
      rng.fill_normal(v);
      const VelocityMatrix r = reflect_block(model, whole, x, v);
      worst = std::max(
          worst, (reflect_block(model, whole, x, r) - v).cwiseAbs().maxCoeff());
      worst = std::max(worst, std::abs(r.norm() - v.norm()));
      const double before = (x.array() * v.array()).sum();
      const double after = (x.array() * r.array()).sum();
      worst = std::max(worst, std::abs(after + before));
    }
    detail::self_test_check(report, "reflection identities", worst < 1e-10,
                            "max deviation = " + format_double(worst));
  }

  // A short blocked run against the exact posterior mean.
  {
    const SimulatedData data = simulate_ar_data(2, 5, 5.0, 0.1, 21);
    const ArGaussianModel model = make_ar_model(5.0, 0.1, data.y);
    const BlockingStrategy strategy = make_grid_strategy(2, 5, 2, 2, 0, 1);
    SamplerOptions opts;
    opts.total_time = 4000.0;
    opts.refresh_rate = 1.0;
    opts.theta = 1.0;
    opts.seed = 99;
    const SamplerRun run = simulate_bbps(model, strategy, opts);
    const SampleSeries kept =
        drop_burn_in(discretize(run.trajectory, 0.5), 0.25);
    const SmootherResult oracle = kalman_smooth(model);
    double worst = 0.0;
    for (int j = 0; j < kept.n_coords(); ++j) {
      const double mean = kept.values.row(j).mean();
      const double truth = oracle.mean(kept.coords[j].first - 1,
                                       kept.coords[j].second - 1);
      worst = std::max(worst, std::abs(mean - truth));
    }
    detail::self_test_check(report, "blocked sampler vs kalman mean",
                            worst < 0.25,
                            "max |mean error| = " + format_double(worst));
  }

  return report;
}

}  // namespace bbps
