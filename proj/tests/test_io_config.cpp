#include <catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "bbps/blocking.hpp"
#include "bbps/config.hpp"
#include "bbps/csv.hpp"
#include "bbps/rng.hpp"
#include "bbps/strategy_json.hpp"
#include "bbps/trajectory.hpp"

using namespace bbps;
namespace fs = std::filesystem;

namespace {

/// Fresh scratch directory under the system temp root.
fs::path scratch_dir(const std::string& tag) {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() /
                       ("bbps_io_" + std::to_string(::getpid()) + "_" + tag +
                        "_" + std::to_string(counter++));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct CliResult {
  int exit_code = -1;
  std::string out, err;
};

CliResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path out_path = dir / "cli_stdout.txt";
  const fs::path err_path = dir / "cli_stderr.txt";
  const std::string cmd = std::string("\"") + BBPS_CLI_PATH + "\" " + args +
                          " > \"" + out_path.string() + "\" 2> \"" +
                          err_path.string() + "\"";
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WEXITSTATUS(raw);
  r.out = read_text_file(out_path.string());
  r.err = read_text_file(err_path.string());
  return r;
}

/// A small AR experiment config that finishes in well under a second.
nlohmann::json small_ar_config(const std::string& output_dir,
                               const std::string& algorithm) {
  nlohmann::json j;
  j["version"] = 1;
  j["output_dir"] = output_dir;
  j["model"] = {{"kind", "ar"},
                {"sigma2", 5.0},
                {"psi", 0.1},
                {"simulate", {{"d", 2}, {"N", 6}, {"seed", 31}}}};
  j["strategy"] = {{"kind", "grid"},
                   {"spatial_width", 2},
                   {"spatial_overlap", 0},
                   {"temporal_width", 2},
                   {"temporal_overlap", 1}};
  j["sampler"] = {{"algorithm", algorithm},
                  {"total_time", 150.0},
                  {"refresh_rate", 1.0},
                  {"theta", 0.5},
                  {"seed", 7}};
  j["diagnostics"] = {{"delta", 0.5}, {"burn_in", 0.25}};
  return j;
}

std::string write_config(const fs::path& dir, const nlohmann::json& j) {
  const std::string path = (dir / "config.json").string();
  write_text_file(path, j.dump(2) + "\n");
  return path;
}

bool bits_equal(double a, double b) {
  std::uint64_t ba, bb;
  std::memcpy(&ba, &a, sizeof ba);
  std::memcpy(&bb, &b, sizeof bb);
  return ba == bb;
}

}  // namespace

TEST_CASE("format_double round-trips bit for bit") {
  const double values[] = {0.0,       -0.0,          0.1,
                           1.0 / 3.0, 3.14159265358979323846,
                           1e300,     5e-324,        -1.7e-12,
                           123456789.123456789,      9007199254740993.0};
  for (double v : values) {
    const std::string text = format_double(v);
    char* end = nullptr;
    const double back = std::strtod(text.c_str(), &end);
    CHECK(*end == '\0');
    CHECK(bits_equal(back, v));
  }
}

TEST_CASE("matrix csv round-trips exactly") {
  const fs::path dir = scratch_dir("matrix");
  Rng rng(401);
  Matrix m(7, 5);
  rng.fill_normal(m);
  m(0, 0) = 1.0 / 3.0;
  m(6, 4) = -1e-17;
  const std::string path = (dir / "m.csv").string();
  write_matrix_csv(path, m);
  const Matrix back = read_matrix_csv(path);
  REQUIRE(back.rows() == 7);
  REQUIRE(back.cols() == 5);
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 5; ++c) CHECK(bits_equal(back(r, c), m(r, c)));
}

TEST_CASE("matrix csv reader tolerates a header and rejects bad bodies") {
  const fs::path dir = scratch_dir("matrixerr");
  const std::string path = (dir / "m.csv").string();

  write_text_file(path, "a,b,c\n1,2,3\n4, 5,6\n");
  const Matrix m = read_matrix_csv(path);
  REQUIRE(m.rows() == 2);
  REQUIRE(m.cols() == 3);
  CHECK(m(1, 1) == 5.0);

  write_text_file(path, "1,2\nx,y\n");
  CHECK_THROWS_AS(read_matrix_csv(path), ConfigError);
  write_text_file(path, "1,2\n3\n");
  CHECK_THROWS_AS(read_matrix_csv(path), ConfigError);
  write_text_file(path, "");
  CHECK_THROWS_AS(read_matrix_csv(path), ConfigError);
  CHECK_THROWS_AS(read_matrix_csv((dir / "absent.csv").string()), ConfigError);
}

TEST_CASE("artifact csv builders emit the documented headers") {
  SampleSeries s;
  s.delta = 0.5;
  s.start_time = 0.0;
  s.sampler_time = 1.0;
  s.wall_clock = 2.0;
  s.coords = {{1, 1}, {2, 1}};
  s.values.resize(2, 3);
  s.values << 0.25, 1.25, 2.25, 10.0, 20.0, 30.0;
  CHECK(samples_csv(s) ==
        "t,x_1_1,x_2_1\n"
        "0,0.25,10\n"
        "0.5,1.25,20\n"
        "1,2.25,30\n");

  Trajectory traj;
  traj.d = 1;
  traj.N = 1;
  traj.total_time = 1.0;
  traj.phi = Matrix::Ones(1, 1);
  traj.units = {Block{1, 1, 1, 1, 1}};
  traj.x0 = StateMatrix::Zero(1, 1);
  traj.v0 = VelocityMatrix::Ones(1, 1);
  EventRecord bounce;
  bounce.time = 0.25;
  bounce.kind = EventKind::Bounce;
  bounce.unit = 1;
  bounce.patches.push_back({1, Matrix::Constant(1, 1, -1.0)});
  EventRecord refresh;
  refresh.time = 0.5;
  refresh.kind = EventKind::Refresh;
  refresh.unit = 0;
  refresh.patches.push_back({0, Matrix::Ones(1, 1)});
  traj.events = {bounce, refresh};
  CHECK(events_csv(traj) ==
        "time,kind,block_id\n"
        "0.25,bounce,1\n"
        "0.5,refresh,0\n");

  EssResult e;
  e.ess = Vector(2);
  e.ess << 10.0, 20.0;
  e.ess_per_sec = Vector(2);
  e.ess_per_sec << 5.0, 10.0;
  Vector jumps(2);
  jumps << 0.5, 1.5;
  CHECK(diagnostics_csv(s, e, jumps) ==
        "metric,coordinate,value\n"
        "ess,x_1_1,10\n"
        "ess,x_2_1,20\n"
        "ess_per_sec,x_1_1,5\n"
        "ess_per_sec,x_2_1,10\n"
        "msjd,x_1_1,0.5\n"
        "msjd,x_2_1,1.5\n");

  Vector rho(2);
  rho << 1.0, 0.5;
  CHECK(acf_csv(rho) == "lag,acf\n0,1\n1,0.5\n");

  MseCurve curve;
  curve.cpu_seconds = {0.5, 1.0};
  curve.mse = {4.0, 2.0};
  CHECK(mse_csv(curve) == "cpu_seconds,mse\n0.5,4\n1,2\n");

  CHECK(energy_csv({7.0, 8.0}, 0.5, 1.0) == "t,energy\n1,7\n1.5,8\n");
}

TEST_CASE("strategy documents round-trip through json") {
  const BlockingStrategy strategy = make_grid_strategy(3, 20, 3, 6, 0, 2);
  const Partition partition = even_odd_partition(strategy);

  const nlohmann::json j = strategy_to_json(strategy, &partition);
  const StrategyFile file = strategy_from_json_text(j.dump());
  REQUIRE(file.strategy.num_blocks() == strategy.num_blocks());
  for (int id = 1; id <= strategy.num_blocks(); ++id) {
    const Block& a = strategy.block(id);
    const Block& b = file.strategy.block(id);
    CHECK(a.i == b.i);
    CHECK(a.j == b.j);
    CHECK(a.l == b.l);
    CHECK(a.m == b.m);
  }
  REQUIRE(file.has_partition);
  REQUIRE(file.partition.groups == partition.groups);

  const nlohmann::json bare = strategy_to_json(strategy);
  CHECK(!bare.contains("partition"));
  CHECK(!strategy_from_json(bare).has_partition);
}

TEST_CASE("strategy json parsing rejects malformed documents") {
  const BlockingStrategy strategy = make_grid_strategy(2, 6, 2, 2, 0, 1);
  nlohmann::json good = strategy_to_json(strategy);

  nlohmann::json j = good;
  j["comment"] = "hi";
  CHECK_THROWS_WITH(strategy_from_json(j),
                    Catch::Matchers::ContainsSubstring("unknown key"));

  j = good;
  j["blocks"][0]["width"] = 2;
  CHECK_THROWS_AS(strategy_from_json(j), ConfigError);

  j = good;
  j["blocks"][0].erase("m");
  CHECK_THROWS_AS(strategy_from_json(j), ConfigError);

  j = good;
  j.erase("blocks");
  CHECK_THROWS_AS(strategy_from_json(j), ConfigError);

  j = good;
  j["blocks"] = nlohmann::json::array();
  CHECK_THROWS_AS(strategy_from_json(j), ConfigError);

  j = good;
  j["partition"] = {{1, 2}, {3}};  // misses blocks 4 and 5
  CHECK_THROWS_AS(strategy_from_json(j), ConfigError);

  CHECK_THROWS_AS(strategy_from_json_text("{ not json"), ConfigError);
}

TEST_CASE("experiment config parses and echoes to a fixpoint") {
  const nlohmann::json j = small_ar_config("/tmp/out", "bbps");
  const ExperimentConfig cfg = experiment_config_from_text(j.dump());
  CHECK(cfg.version == 1);
  CHECK(cfg.output_dir == "/tmp/out");
  CHECK(cfg.model.kind == "ar");
  CHECK(cfg.model.sigma2 == 5.0);
  CHECK(cfg.model.has_simulate);
  CHECK(!cfg.model.has_data);
  CHECK(cfg.strategy.kind == "grid");
  CHECK(cfg.strategy.temporal_overlap == 1);
  CHECK(cfg.sampler.algorithm == "bbps");
  CHECK(!cfg.sampler.theta_auto);
  CHECK(cfg.sampler.theta == 0.5);
  CHECK(cfg.diagnostics.delta == 0.5);
  CHECK(!cfg.diagnostics.has_tracked);

  // The canonical echo must parse back to the same canonical echo.
  const nlohmann::json echo = experiment_config_to_json(cfg);
  const nlohmann::json echo2 =
      experiment_config_to_json(experiment_config_from_json(echo));
  CHECK(echo == echo2);
}

TEST_CASE("config options cover theta auto, tracking, and velocity init") {
  nlohmann::json j = small_ar_config("/tmp/out", "bbps");
  j["sampler"]["theta"] = "auto";
  j["sampler"]["velocity_init"] = "ones";
  j["diagnostics"]["tracked"] = {{1, 1}, {2, 6}};
  j["diagnostics"]["max_lag"] = 40;
  const ExperimentConfig cfg = experiment_config_from_text(j.dump());
  CHECK(cfg.sampler.theta_auto);
  CHECK(cfg.sampler.unit_velocity_init);
  REQUIRE(cfg.diagnostics.has_tracked);
  REQUIRE(cfg.diagnostics.tracked.size() == 2);
  CHECK(cfg.diagnostics.tracked[1] == std::make_pair(2, 6));
  CHECK(cfg.diagnostics.max_lag == 40);

  const nlohmann::json echo = experiment_config_to_json(cfg);
  CHECK(echo["sampler"]["theta"] == "auto");
  CHECK(echo["sampler"]["velocity_init"] == "ones");
  const nlohmann::json echo2 =
      experiment_config_to_json(experiment_config_from_json(echo));
  CHECK(echo == echo2);
}

TEST_CASE("config schema violations carry the offending path") {
  const nlohmann::json good = small_ar_config("/tmp/out", "bbps");
  nlohmann::json j;

  j = good;
  j["extra"] = 1;
  CHECK_THROWS_WITH(experiment_config_from_text(j.dump()),
                    Catch::Matchers::ContainsSubstring("$.extra"));

  j = good;
  j["model"]["rho"] = 0.5;
  CHECK_THROWS_WITH(experiment_config_from_text(j.dump()),
                    Catch::Matchers::ContainsSubstring("model.rho"));

  j = good;
  j["sampler"]["threads"] = 4;
  CHECK_THROWS_WITH(experiment_config_from_text(j.dump()),
                    Catch::Matchers::ContainsSubstring("sampler.threads"));

  j = good;
  j["version"] = 2;
  CHECK_THROWS_WITH(experiment_config_from_text(j.dump()),
                    Catch::Matchers::ContainsSubstring("not supported"));

  j = good;
  j.erase("version");
  CHECK_THROWS_AS(experiment_config_from_text(j.dump()), ConfigError);

  CHECK_THROWS_WITH(experiment_config_from_text("{ nope"),
                    Catch::Matchers::ContainsSubstring("parse"));
}

TEST_CASE("config value constraints") {
  const nlohmann::json good = small_ar_config("/tmp/out", "bbps");
  auto expect_reject = [&](void (*tweak)(nlohmann::json&)) {
    nlohmann::json j = good;
    tweak(j);
    CHECK_THROWS_AS(experiment_config_from_text(j.dump()), ConfigError);
  };
  expect_reject([](nlohmann::json& j) { j["model"]["sigma2"] = 0.0; });
  expect_reject([](nlohmann::json& j) { j["sampler"]["theta"] = -1.0; });
  expect_reject([](nlohmann::json& j) { j["sampler"]["theta"] = "fast"; });
  expect_reject([](nlohmann::json& j) { j["sampler"]["refresh_rate"] = -1.0; });
  expect_reject([](nlohmann::json& j) { j["sampler"]["parallelism"] = 0; });
  expect_reject([](nlohmann::json& j) { j["sampler"]["velocity_init"] = "x"; });
  expect_reject([](nlohmann::json& j) { j["sampler"].erase("total_time"); });
  expect_reject([](nlohmann::json& j) { j["diagnostics"]["delta"] = 0.0; });
  expect_reject([](nlohmann::json& j) { j["diagnostics"]["burn_in"] = 1.0; });
  expect_reject([](nlohmann::json& j) {
    j["diagnostics"]["tracked"] = nlohmann::json::array();
  });
  expect_reject(
      [](nlohmann::json& j) { j["diagnostics"]["tracked"] = {{0, 2}}; });
  expect_reject([](nlohmann::json& j) { j["output_dir"] = ""; });
  // A model must come with exactly one of data and simulate.
  expect_reject([](nlohmann::json& j) { j["model"].erase("simulate"); });
  expect_reject([](nlohmann::json& j) {
    j["model"]["data"] = {{"y", "y.csv"}};
  });
}

TEST_CASE("local sampler and factor strategies require each other") {
  nlohmann::json j = small_ar_config("/tmp/out", "local");
  CHECK_THROWS_WITH(experiment_config_from_text(j.dump()),
                    Catch::Matchers::ContainsSubstring("factors"));

  j["strategy"] = {{"kind", "factors"}, {"cluster_width", 2}};
  const ExperimentConfig cfg = experiment_config_from_text(j.dump());
  CHECK(cfg.strategy.cluster_width == 2);

  j["sampler"]["algorithm"] = "bbps";
  CHECK_THROWS_WITH(experiment_config_from_text(j.dump()),
                    Catch::Matchers::ContainsSubstring("local"));
}

TEST_CASE("cli self-test passes") {
  const fs::path dir = scratch_dir("selftest");
  const CliResult r = run_cli("self-test", dir);
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("self-test passed") != std::string::npos);
}

TEST_CASE("cli simulate-data is reproducible byte for byte") {
  const fs::path dir = scratch_dir("simdata");
  nlohmann::json j;
  j["version"] = 1;
  j["model"] = {{"kind", "ar"},
                {"sigma2", 5.0},
                {"psi", 0.1},
                {"simulate", {{"d", 3}, {"N", 1000}, {"seed", 5}}}};
  j["strategy"] = {{"kind", "grid"},
                   {"spatial_width", 3},
                   {"spatial_overlap", 0},
                   {"temporal_width", 20},
                   {"temporal_overlap", 10}};
  j["sampler"] = {{"algorithm", "bbps"}, {"total_time", 10.0}};

  const fs::path out_a = dir / "a";
  const fs::path out_b = dir / "b";
  j["output_dir"] = out_a.string();
  const std::string cfg_a = (dir / "a.json").string();
  write_text_file(cfg_a, j.dump() + "\n");
  j["output_dir"] = out_b.string();
  const std::string cfg_b = (dir / "b.json").string();
  write_text_file(cfg_b, j.dump() + "\n");

  const CliResult ra = run_cli("simulate-data -c \"" + cfg_a + "\"", dir);
  REQUIRE(ra.exit_code == 0);
  CHECK(ra.out.find("dataset 3 x 1000") != std::string::npos);
  CHECK(ra.out.find("hash") != std::string::npos);
  const CliResult rb = run_cli("simulate-data -c \"" + cfg_b + "\"", dir);
  REQUIRE(rb.exit_code == 0);

  for (const char* name : {"y.csv", "x_true.csv"}) {
    const std::string a = read_text_file((out_a / name).string());
    const std::string b = read_text_file((out_b / name).string());
    CHECK(!a.empty());
    CHECK(a == b);
  }
}

TEST_CASE("cli run writes the artifact set and reruns identically") {
  const fs::path dir = scratch_dir("run");
  const fs::path out_a = dir / "a";
  const std::string cfg_path =
      write_config(dir, small_ar_config(out_a.string(), "bbps"));

  const CliResult r = run_cli("run -c \"" + cfg_path + "\"", dir);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("algorithm        bbps") != std::string::npos);
  CHECK(r.out.find("artifacts in") != std::string::npos);
  for (const char* name : {"metadata.json", "samples.csv", "events.csv",
                           "diagnostics.csv", "trace.csv", "acf.csv",
                           "mse.csv"})
    CHECK(fs::exists(out_a / name));

  const nlohmann::json meta =
      nlohmann::json::parse(read_text_file((out_a / "metadata.json").string()));
  CHECK(meta["schema"] == "bbps-run-metadata");
  CHECK(meta["algorithm"] == "bbps");
  CHECK(meta.contains("dataset_hash"));
  CHECK(meta["diagnostics"].contains("ess_per_sec_median"));

  // The same config and seed into a second directory reproduces the samples.
  const fs::path out_b = dir / "b";
  const CliResult r2 = run_cli(
      "run -c \"" + cfg_path + "\" -o \"" + out_b.string() + "\"", dir);
  REQUIRE(r2.exit_code == 0);
  CHECK(read_text_file((out_a / "samples.csv").string()) ==
        read_text_file((out_b / "samples.csv").string()));
  CHECK(read_text_file((out_a / "events.csv").string()) ==
        read_text_file((out_b / "events.csv").string()));

  // A different seed must change the samples.
  const fs::path out_c = dir / "c";
  const CliResult r3 = run_cli("run -c \"" + cfg_path + "\" -o \"" +
                                   out_c.string() + "\" --seed 99",
                               dir);
  REQUIRE(r3.exit_code == 0);
  CHECK(read_text_file((out_a / "samples.csv").string()) !=
        read_text_file((out_c / "samples.csv").string()));
}

TEST_CASE("cli even-odd runs are identical across worker counts") {
  const fs::path dir = scratch_dir("eo");
  const fs::path out_a = dir / "p1";
  const fs::path out_b = dir / "p2";
  const std::string cfg_path =
      write_config(dir, small_ar_config(out_a.string(), "eobps"));

  const CliResult r1 =
      run_cli("run -c \"" + cfg_path + "\" --parallelism 1", dir);
  REQUIRE(r1.exit_code == 0);
  const CliResult r2 = run_cli("run -c \"" + cfg_path + "\" -o \"" +
                                   out_b.string() + "\" --parallelism 2",
                               dir);
  REQUIRE(r2.exit_code == 0);
  CHECK(read_text_file((out_a / "events.csv").string()) ==
        read_text_file((out_b / "events.csv").string()));
  CHECK(read_text_file((out_a / "samples.csv").string()) ==
        read_text_file((out_b / "samples.csv").string()));
}

TEST_CASE("cli compare tabulates runs of the same dataset") {
  const fs::path dir = scratch_dir("compare");
  const fs::path out_a = dir / "bbps";
  const fs::path out_b = dir / "eobps";
  const std::string cfg_a =
      write_config(dir, small_ar_config(out_a.string(), "bbps"));
  const fs::path cfg_b_path = dir / "config_b.json";
  write_text_file(cfg_b_path.string(),
                  small_ar_config(out_b.string(), "eobps").dump(2) + "\n");

  REQUIRE(run_cli("run -c \"" + cfg_a + "\"", dir).exit_code == 0);
  REQUIRE(run_cli("run -c \"" + cfg_b_path.string() + "\"", dir).exit_code ==
          0);

  const fs::path report = dir / "report.csv";
  const CliResult r = run_cli("compare \"" + out_a.string() + "\" \"" +
                                  out_b.string() + "\" -o \"" +
                                  report.string() + "\"",
                              dir);
  REQUIRE(r.exit_code == 0);
  const std::string csv = read_text_file(report.string());
  CHECK(csv.rfind("algorithm,dims_per_block,n_blocks,n_substrategies,"
                  "ess_per_sec_min,ess_per_sec_median,msjd_mean,rel_perf\n",
                  0) == 0);
  CHECK(csv.find("bbps,") != std::string::npos);
  CHECK(csv.find("eobps,") != std::string::npos);
  // The best run is its own reference point.
  CHECK(csv.find(",1.00\n") != std::string::npos);
  CHECK(r.out.find("report written to") != std::string::npos);
}

TEST_CASE("cli maps configuration problems to exit code 2") {
  const fs::path dir = scratch_dir("exitcodes");
  const std::string bad = (dir / "bad.json").string();
  write_text_file(bad, "{ definitely not json\n");
  CHECK(run_cli("run -c \"" + bad + "\"", dir).exit_code == 2);

  nlohmann::json j = small_ar_config((dir / "out").string(), "bbps");
  j["sampler"]["algorithm"] = "hmc";
  const std::string wrong = (dir / "wrong.json").string();
  write_text_file(wrong, j.dump() + "\n");
  const CliResult r = run_cli("run -c \"" + wrong + "\"", dir);
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("error") != std::string::npos);

  CHECK(run_cli("compare \"" + dir.string() + "\"", dir).exit_code == 2);
  CHECK(run_cli("frobnicate", dir).exit_code == 2);
}
