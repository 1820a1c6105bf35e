#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bbps/common.hpp"

namespace bbps {

/// Experiment configuration, parsed from a JSON document.
///
/// The schema is strict and versioned: unknown keys anywhere in the document
/// are rejected with the offending path in the error message, so a typo in a
/// parameter name fails loudly instead of silently running with a default.
///
/// Document layout (kinds select which sibling keys are legal):
///
///   {"version": 1,
///    "output_dir": "runs/ar_bbps",
///    "model": {"kind": "ar", "sigma2": 5.0, "psi": 0.1,
///              "simulate": {"d": 3, "N": 1000, "seed": 7}},
///    "strategy": {"kind": "grid", "spatial_width": 3, "temporal_width": 20,
///                 "spatial_overlap": 0, "temporal_overlap": 10},
///    "sampler": {"algorithm": "bbps", "total_time": 1000.0,
///                "refresh_rate": 1.0, "theta": "auto", "seed": 1},
///    "diagnostics": {"delta": 1.0, "burn_in": 0.25}}
///
/// A model either simulates its dataset ("simulate") or loads one from disk
/// ("data": {"y": ..., optional "gamma", optional "x_true"}); exactly one of
/// the two must be present except for the standalone isotropic target.

inline constexpr int kConfigVersion = 1;

namespace detail {

inline std::string json_type_name(const nlohmann::json& v) {
  return v.type_name();
}

/// Reject keys outside the allowed set, naming the path of the offender.
inline void check_keys(const nlohmann::json& obj, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  if (!obj.is_object())
    throw ConfigError("config: " + where + " must be a JSON object, got " +
                      json_type_name(obj));
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    bool known = false;
    for (const char* a : allowed)
      if (key == a) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError("config: unknown key \"" + where + "." + key + "\"");
  }
}

inline const nlohmann::json& require_key(const nlohmann::json& obj,
                                         const std::string& where,
                                         const char* key) {
  if (!obj.contains(key))
    throw ConfigError("config: missing required key \"" + where + "." + key +
                      "\"");
  return obj.at(key);
}

inline std::string get_string(const nlohmann::json& obj,
                              const std::string& where, const char* key) {
  const nlohmann::json& v = require_key(obj, where, key);
  if (!v.is_string())
    throw ConfigError("config: " + where + "." + key + " must be a string");
  return v.get<std::string>();
}

inline double get_number(const nlohmann::json& obj, const std::string& where,
                         const char* key, double fallback,
                         bool required = false) {
  if (!obj.contains(key)) {
    if (required)
      throw ConfigError("config: missing required key \"" + where + "." + key +
                        "\"");
    return fallback;
  }
  const nlohmann::json& v = obj.at(key);
  if (!v.is_number())
    throw ConfigError("config: " + where + "." + key + " must be a number");
  return v.get<double>();
}

inline long get_integer(const nlohmann::json& obj, const std::string& where,
                        const char* key, long fallback, bool required = false) {
  if (!obj.contains(key)) {
    if (required)
      throw ConfigError("config: missing required key \"" + where + "." + key +
                        "\"");
    return fallback;
  }
  const nlohmann::json& v = obj.at(key);
  if (!v.is_number_integer())
    throw ConfigError("config: " + where + "." + key + " must be an integer");
  return v.get<long>();
}

inline std::uint64_t get_seed(const nlohmann::json& obj,
                              const std::string& where, const char* key,
                              std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const nlohmann::json& v = obj.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0))
    throw ConfigError("config: " + where + "." + key +
                      " must be a non-negative integer");
  return v.get<std::uint64_t>();
}

}  // namespace detail

/// Paths of an on-disk dataset.  Empty strings mean "not provided".
struct DataPaths {
  std::string y;       // observations CSV, required
  std::string gamma;   // mixing weights CSV (one row), optional
  std::string x_true;  // ground-truth latent states, optional (enables MSE)
};

/// Parameters for simulating the dataset instead of loading one.
struct SimulateSpec {
  int d = 0;
  int N = 0;
  std::uint64_t seed = 1;
  double noise_scale = 1.0;  // AR only: 0 makes the observations exact
};

struct ModelConfig {
  std::string kind;  // "ar" | "sv" | "isotropic"

  // AR(1) Gaussian state-space parameters.
  double sigma2 = 5.0;
  double psi = 0.1;

  // Stochastic volatility parameters (shared diagonal persistence and
  // mixing-weight degrees of freedom; the noise covariances use the model
  // defaults and the empirical observation covariance).
  double alpha = 0.99;
  double nu = 15.0;

  // Standalone isotropic Gaussian dimensions.
  int d = 0;
  int N = 0;

  bool has_data = false;
  DataPaths data;
  bool has_simulate = false;
  SimulateSpec simulate;
};

struct StrategyConfig {
  std::string kind;  // "grid" | "file" | "factors"

  // Grid parameters (1-based block extents along each axis).
  int spatial_width = 0;
  int spatial_overlap = 0;
  int temporal_width = 0;
  int temporal_overlap = 0;

  std::string path;  // "file": JSON strategy document

  int cluster_width = 1;  // "factors": elementary factors per cluster
};

struct SamplerConfig {
  std::string algorithm;  // "bbps" | "eobps" | "local"
  double total_time = 1000.0;
  double refresh_rate = 1.0;
  bool theta_auto = true;  // "theta": "auto" tunes the lookahead window
  double theta = 1.0;
  std::uint64_t seed = 1;
  int parallelism = 1;
  bool unit_velocity_init = false;  // "velocity_init": "ones" | "normal"
  long max_events = 0;
};

struct DiagnosticsConfig {
  double delta = 1.0;    // discretization step of the sample grid
  double burn_in = 0.25; // fraction of total_time discarded before summaries
  int max_lag = 0;       // autocorrelation horizon; 0 picks n/4 - 1
  bool has_tracked = false;
  std::vector<std::pair<int, int>> tracked;  // 1-based (row, column) coords
};

struct ExperimentConfig {
  int version = kConfigVersion;
  std::string output_dir;
  ModelConfig model;
  StrategyConfig strategy;
  SamplerConfig sampler;
  DiagnosticsConfig diagnostics;
};

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.kind = detail::get_string(j, "model", "kind");

  if (m.kind == "ar") {
    detail::check_keys(j, "model",
                       {"kind", "sigma2", "psi", "data", "simulate"});
    m.sigma2 = detail::get_number(j, "model", "sigma2", m.sigma2);
    m.psi = detail::get_number(j, "model", "psi", m.psi);
    if (m.sigma2 <= 0.0)
      throw ConfigError("config: model.sigma2 must be positive");
    if (m.psi <= 0.0) throw ConfigError("config: model.psi must be positive");
  } else if (m.kind == "sv") {
    detail::check_keys(j, "model", {"kind", "alpha", "nu", "data", "simulate"});
    m.alpha = detail::get_number(j, "model", "alpha", m.alpha);
    m.nu = detail::get_number(j, "model", "nu", m.nu);
    if (!(m.alpha > -1.0 && m.alpha < 1.0))
      throw ConfigError("config: model.alpha must lie in (-1, 1)");
    if (m.nu <= 0.0) throw ConfigError("config: model.nu must be positive");
  } else if (m.kind == "isotropic") {
    detail::check_keys(j, "model", {"kind", "d", "N"});
    m.d = static_cast<int>(detail::get_integer(j, "model", "d", 0, true));
    m.N = static_cast<int>(detail::get_integer(j, "model", "N", 0, true));
    if (m.d < 1 || m.N < 1)
      throw ConfigError("config: model.d and model.N must be >= 1");
    return m;  // standalone target: no dataset section
  } else {
    throw ConfigError("config: model.kind must be \"ar\", \"sv\" or "
                      "\"isotropic\", got \"" + m.kind + "\"");
  }

  m.has_data = j.contains("data");
  m.has_simulate = j.contains("simulate");
  if (m.has_data == m.has_simulate)
    throw ConfigError("config: model needs exactly one of \"data\" and "
                      "\"simulate\"");

  if (m.has_data) {
    const nlohmann::json& data = j.at("data");
    detail::check_keys(data, "model.data", {"y", "gamma", "x_true"});
    m.data.y = detail::get_string(data, "model.data", "y");
    if (data.contains("gamma"))
      m.data.gamma = detail::get_string(data, "model.data", "gamma");
    if (data.contains("x_true"))
      m.data.x_true = detail::get_string(data, "model.data", "x_true");
  } else {
    const nlohmann::json& sim = j.at("simulate");
    if (m.kind == "ar") {
      detail::check_keys(sim, "model.simulate",
                         {"d", "N", "seed", "noise_scale"});
      m.simulate.noise_scale =
          detail::get_number(sim, "model.simulate", "noise_scale", 1.0);
      if (m.simulate.noise_scale < 0.0)
        throw ConfigError(
            "config: model.simulate.noise_scale must be >= 0");
    } else {
      detail::check_keys(sim, "model.simulate", {"d", "N", "seed"});
    }
    m.simulate.d =
        static_cast<int>(detail::get_integer(sim, "model.simulate", "d", 0, true));
    m.simulate.N =
        static_cast<int>(detail::get_integer(sim, "model.simulate", "N", 0, true));
    m.simulate.seed = detail::get_seed(sim, "model.simulate", "seed", 1);
    if (m.simulate.d < 1 || m.simulate.N < 1)
      throw ConfigError(
          "config: model.simulate.d and model.simulate.N must be >= 1");
  }
  return m;
}

inline StrategyConfig strategy_config_from_json(const nlohmann::json& j) {
  StrategyConfig s;
  s.kind = detail::get_string(j, "strategy", "kind");

  if (s.kind == "grid") {
    detail::check_keys(j, "strategy",
                       {"kind", "spatial_width", "spatial_overlap",
                        "temporal_width", "temporal_overlap"});
    s.spatial_width = static_cast<int>(
        detail::get_integer(j, "strategy", "spatial_width", 0, true));
    s.temporal_width = static_cast<int>(
        detail::get_integer(j, "strategy", "temporal_width", 0, true));
    s.spatial_overlap = static_cast<int>(
        detail::get_integer(j, "strategy", "spatial_overlap", 0));
    s.temporal_overlap = static_cast<int>(
        detail::get_integer(j, "strategy", "temporal_overlap", 0));
  } else if (s.kind == "file") {
    detail::check_keys(j, "strategy", {"kind", "path"});
    s.path = detail::get_string(j, "strategy", "path");
  } else if (s.kind == "factors") {
    detail::check_keys(j, "strategy", {"kind", "cluster_width"});
    s.cluster_width = static_cast<int>(
        detail::get_integer(j, "strategy", "cluster_width", 1));
    if (s.cluster_width < 1)
      throw ConfigError("config: strategy.cluster_width must be >= 1");
  } else {
    throw ConfigError("config: strategy.kind must be \"grid\", \"file\" or "
                      "\"factors\", got \"" + s.kind + "\"");
  }
  return s;
}

inline SamplerConfig sampler_config_from_json(const nlohmann::json& j) {
  detail::check_keys(j, "sampler",
                     {"algorithm", "total_time", "refresh_rate", "theta",
                      "seed", "parallelism", "velocity_init", "max_events"});
  SamplerConfig s;
  s.algorithm = detail::get_string(j, "sampler", "algorithm");
  if (s.algorithm != "bbps" && s.algorithm != "eobps" && s.algorithm != "local")
    throw ConfigError("config: sampler.algorithm must be \"bbps\", \"eobps\" "
                      "or \"local\", got \"" + s.algorithm + "\"");
  s.total_time =
      detail::get_number(j, "sampler", "total_time", s.total_time, true);
  if (s.total_time <= 0.0)
    throw ConfigError("config: sampler.total_time must be positive");
  s.refresh_rate =
      detail::get_number(j, "sampler", "refresh_rate", s.refresh_rate);
  if (s.refresh_rate < 0.0)
    throw ConfigError("config: sampler.refresh_rate must be >= 0");

  if (j.contains("theta")) {
    const nlohmann::json& theta = j.at("theta");
    if (theta.is_string()) {
      if (theta.get<std::string>() != "auto")
        throw ConfigError("config: sampler.theta must be a positive number or "
                          "the string \"auto\"");
      s.theta_auto = true;
    } else if (theta.is_number()) {
      s.theta_auto = false;
      s.theta = theta.get<double>();
      if (s.theta <= 0.0)
        throw ConfigError("config: sampler.theta must be positive");
    } else {
      throw ConfigError("config: sampler.theta must be a positive number or "
                        "the string \"auto\"");
    }
  }

  s.seed = detail::get_seed(j, "sampler", "seed", s.seed);
  s.parallelism = static_cast<int>(
      detail::get_integer(j, "sampler", "parallelism", s.parallelism));
  if (s.parallelism < 1)
    throw ConfigError("config: sampler.parallelism must be >= 1");

  if (j.contains("velocity_init")) {
    const std::string init = detail::get_string(j, "sampler", "velocity_init");
    if (init == "ones")
      s.unit_velocity_init = true;
    else if (init == "normal")
      s.unit_velocity_init = false;
    else
      throw ConfigError("config: sampler.velocity_init must be \"normal\" or "
                        "\"ones\", got \"" + init + "\"");
  }

  s.max_events = detail::get_integer(j, "sampler", "max_events", 0);
  if (s.max_events < 0)
    throw ConfigError("config: sampler.max_events must be >= 0");
  return s;
}

inline DiagnosticsConfig diagnostics_config_from_json(const nlohmann::json& j) {
  detail::check_keys(j, "diagnostics",
                     {"delta", "burn_in", "max_lag", "tracked"});
  DiagnosticsConfig d;
  d.delta = detail::get_number(j, "diagnostics", "delta", d.delta);
  if (d.delta <= 0.0)
    throw ConfigError("config: diagnostics.delta must be positive");
  d.burn_in = detail::get_number(j, "diagnostics", "burn_in", d.burn_in);
  if (d.burn_in < 0.0 || d.burn_in >= 1.0)
    throw ConfigError("config: diagnostics.burn_in is a fraction of the run "
                      "and must lie in [0, 1)");
  d.max_lag =
      static_cast<int>(detail::get_integer(j, "diagnostics", "max_lag", 0));
  if (d.max_lag < 0)
    throw ConfigError("config: diagnostics.max_lag must be >= 0");

  if (j.contains("tracked")) {
    const nlohmann::json& tracked = j.at("tracked");
    if (!tracked.is_array())
      throw ConfigError("config: diagnostics.tracked must be an array of "
                        "[row, column] pairs");
    d.has_tracked = true;
    for (const nlohmann::json& entry : tracked) {
      if (!entry.is_array() || entry.size() != 2 ||
          !entry[0].is_number_integer() || !entry[1].is_number_integer())
        throw ConfigError("config: diagnostics.tracked entries must be "
                          "[row, column] integer pairs");
      const int k = entry[0].get<int>();
      const int n = entry[1].get<int>();
      if (k < 1 || n < 1)
        throw ConfigError("config: diagnostics.tracked coordinates are "
                          "1-based and must be >= 1");
      d.tracked.emplace_back(k, n);
    }
    if (d.tracked.empty())
      throw ConfigError("config: diagnostics.tracked must not be empty; omit "
                        "it to track every coordinate");
  }
  return d;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  detail::check_keys(j, "$", {"version", "output_dir", "model", "strategy",
                              "sampler", "diagnostics"});
  ExperimentConfig cfg;
  cfg.version =
      static_cast<int>(detail::get_integer(j, "$", "version", 0, true));
  if (cfg.version != kConfigVersion)
    throw ConfigError("config: version " + std::to_string(cfg.version) +
                      " is not supported (this build reads version " +
                      std::to_string(kConfigVersion) + ")");
  cfg.output_dir = detail::get_string(j, "$", "output_dir");
  if (cfg.output_dir.empty())
    throw ConfigError("config: output_dir must not be empty");

  cfg.model = model_config_from_json(detail::require_key(j, "$", "model"));
  cfg.strategy =
      strategy_config_from_json(detail::require_key(j, "$", "strategy"));
  cfg.sampler =
      sampler_config_from_json(detail::require_key(j, "$", "sampler"));
  if (j.contains("diagnostics"))
    cfg.diagnostics = diagnostics_config_from_json(j.at("diagnostics"));

  // Cross-section rules: the local sampler thins factor units, the blocked
  // samplers rectangular block units.
  if (cfg.sampler.algorithm == "local") {
    if (cfg.strategy.kind != "factors")
      throw ConfigError("config: sampler.algorithm \"local\" requires "
                        "strategy.kind \"factors\"");
  } else if (cfg.strategy.kind == "factors") {
    throw ConfigError("config: strategy.kind \"factors\" requires "
                      "sampler.algorithm \"local\"");
  }
  return cfg;
}

inline ExperimentConfig experiment_config_from_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config JSON parse error: ") + e.what());
  }
  return experiment_config_from_json(j);
}

/// Canonical JSON echo of a parsed configuration, embedded in metadata.json
/// so a run can be reproduced from its artifacts alone.
inline nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["version"] = cfg.version;
  j["output_dir"] = cfg.output_dir;

  nlohmann::json model;
  model["kind"] = cfg.model.kind;
  if (cfg.model.kind == "ar") {
    model["sigma2"] = cfg.model.sigma2;
    model["psi"] = cfg.model.psi;
  } else if (cfg.model.kind == "sv") {
    model["alpha"] = cfg.model.alpha;
    model["nu"] = cfg.model.nu;
  } else {
    model["d"] = cfg.model.d;
    model["N"] = cfg.model.N;
  }
  if (cfg.model.has_data) {
    nlohmann::json data;
    data["y"] = cfg.model.data.y;
    if (!cfg.model.data.gamma.empty()) data["gamma"] = cfg.model.data.gamma;
    if (!cfg.model.data.x_true.empty()) data["x_true"] = cfg.model.data.x_true;
    model["data"] = std::move(data);
  }
  if (cfg.model.has_simulate) {
    nlohmann::json sim;
    sim["d"] = cfg.model.simulate.d;
    sim["N"] = cfg.model.simulate.N;
    sim["seed"] = cfg.model.simulate.seed;
    if (cfg.model.kind == "ar")
      sim["noise_scale"] = cfg.model.simulate.noise_scale;
    model["simulate"] = std::move(sim);
  }
  j["model"] = std::move(model);

  nlohmann::json strategy;
  strategy["kind"] = cfg.strategy.kind;
  if (cfg.strategy.kind == "grid") {
    strategy["spatial_width"] = cfg.strategy.spatial_width;
    strategy["spatial_overlap"] = cfg.strategy.spatial_overlap;
    strategy["temporal_width"] = cfg.strategy.temporal_width;
    strategy["temporal_overlap"] = cfg.strategy.temporal_overlap;
  } else if (cfg.strategy.kind == "file") {
    strategy["path"] = cfg.strategy.path;
  } else {
    strategy["cluster_width"] = cfg.strategy.cluster_width;
  }
  j["strategy"] = std::move(strategy);

  nlohmann::json sampler;
  sampler["algorithm"] = cfg.sampler.algorithm;
  sampler["total_time"] = cfg.sampler.total_time;
  sampler["refresh_rate"] = cfg.sampler.refresh_rate;
  if (cfg.sampler.theta_auto)
    sampler["theta"] = "auto";
  else
    sampler["theta"] = cfg.sampler.theta;
  sampler["seed"] = cfg.sampler.seed;
  sampler["parallelism"] = cfg.sampler.parallelism;
  sampler["velocity_init"] = cfg.sampler.unit_velocity_init ? "ones" : "normal";
  sampler["max_events"] = cfg.sampler.max_events;
  j["sampler"] = std::move(sampler);

  nlohmann::json diag;
  diag["delta"] = cfg.diagnostics.delta;
  diag["burn_in"] = cfg.diagnostics.burn_in;
  diag["max_lag"] = cfg.diagnostics.max_lag;
  if (cfg.diagnostics.has_tracked) {
    diag["tracked"] = nlohmann::json::array();
    for (const auto& [k, n] : cfg.diagnostics.tracked)
      diag["tracked"].push_back({k, n});
  }
  j["diagnostics"] = std::move(diag);
  return j;
}

}  // namespace bbps
