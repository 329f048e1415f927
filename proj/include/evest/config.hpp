#pragma once

#include "evest/model.hpp"
#include "evest/sim.hpp"
#include "evest/trigger.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace evest::cli {

using nlohmann::json;

/// Configuration invalid in a way the user must fix (exit code 2).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
  }
}

inline Mat parse_matrix(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw ConfigError(where + ": expected a matrix as nested arrays of numbers");
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].size();
  if (cols == 0) throw ConfigError(where + ": matrix rows must be non-empty");
  Mat M(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      throw ConfigError(where + ": ragged matrix (row " + std::to_string(r) + ")");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number())
        throw ConfigError(where + ": non-numeric entry at (" + std::to_string(r) + "," +
                          std::to_string(c) + ")");
      M(r, c) = j[r][c].get<double>();
    }
  }
  return M;
}

inline json matrix_to_json(const Mat& M) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

struct ModelSpec {
  // explicit matrices...
  std::optional<Mat> A, Q, R, Sigma0;
  std::optional<std::vector<Mat>> sensors;
  // ...or a generated scenario
  std::optional<std::string> scenario;
  std::uint64_t scenario_seed = 0;

  /// Raw (unvalidated) model from explicit matrices; cmd_validate needs
  /// this to report violations instead of throwing on construction.
  model::SystemModel to_raw() const {
    model::SystemModel m;
    if (!A || !Q || !R || !Sigma0 || !sensors)
      throw ConfigError("model: A, sensors, Q, R, Sigma0 are all required");
    m.A = *A;
    m.sensor_blocks = *sensors;
    m.Q = *Q;
    m.R = *R;
    m.Sigma0 = *Sigma0;
    return m;
  }

  bool is_scenario() const { return scenario.has_value(); }

  sim::Scenario build_scenario() const {
    if (is_scenario()) {
      if (*scenario != "datacenter")
        throw ConfigError("model.scenario: unknown scenario \"" + *scenario + "\"");
      return sim::generate_datacenter_scenario(scenario_seed);
    }
    const model::SystemModel raw = to_raw();
    sim::Scenario sc;
    sc.model = model::make_model(raw.A, raw.sensor_blocks, raw.Q, raw.R, raw.Sigma0);
    sc.label = "config";
    sc.provenance = "explicit matrices from config";
    return sc;
  }
};

struct TriggerSpec {
  std::optional<double> target_rate;
  std::optional<std::vector<Mat>> Y_blocks;

  trigger::TriggerDesign build(const model::SystemModel& m) const {
    if (Y_blocks && target_rate)
      throw ConfigError("trigger: give either target_rate or Y, not both");
    if (Y_blocks) {
      if (static_cast<int>(Y_blocks->size()) != m.num_sensors())
        throw ConfigError("trigger.Y: expected one block per sensor");
      for (int i = 0; i < m.num_sensors(); ++i)
        if ((*Y_blocks)[i].rows() != m.sizes[i] || (*Y_blocks)[i].cols() != m.sizes[i])
          throw ConfigError("trigger.Y: block " + std::to_string(i) + " has wrong dimensions");
      return trigger::TriggerDesign{*Y_blocks};
    }
    if (target_rate) {
      const model::StationaryStats stats = model::stationary_stats(m);
      std::vector<double> ys;
      for (int i = 0; i < m.num_sensors(); ++i)
        ys.push_back(trigger::rate_to_scalar_y(i, stats, *target_rate));
      return trigger::TriggerDesign::uniform_scalar(m.sizes, ys);
    }
    throw ConfigError("trigger: either target_rate or Y must be given");
  }
};

struct ExperimentSpec {
  int horizon = 500;
  int trials = 10000;
  std::vector<double> rate_grid;
  std::uint64_t seed = 1;
  int burn_in = 100;
  bool emit_trace = false;
};

struct DesignSpec {
  std::optional<Mat> delta;
  std::optional<double> delta_scalar;

  Mat build_delta(int n) const {
    if (delta) {
      if (delta->rows() != n || delta->cols() != n)
        throw ConfigError("design.delta: dimension does not match the model");
      return *delta;
    }
    if (delta_scalar) {
      if (*delta_scalar <= 0.0) throw ConfigError("design.delta_scalar must be positive");
      return *delta_scalar * Mat::Identity(n, n);
    }
    throw ConfigError("design: either delta or delta_scalar must be given");
  }
};

struct OracleSpec {
  int steps = 3;
  int grid_points = 2001;
};

struct RunConfig {
  ModelSpec model;
  std::optional<TriggerSpec> trigger;
  ExperimentSpec experiment;
  DesignSpec design;
  OracleSpec oracle;
  std::string out_dir = "out";
  std::uint64_t config_hash = 0;

  static RunConfig parse_text(const std::string& text);
  static RunConfig load(const std::string& path);

  /// Serialization that reproduces the parsed content (round-trip check).
  json to_json() const;
};

inline RunConfig RunConfig::parse_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // byte offset -> line number for a usable diagnostic
    std::size_t line = 1;
    for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()); ++i)
      if (text[i] == '\n') ++line;
    throw ConfigError("config parse error at line " + std::to_string(line) + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be an object");
  detail::check_keys(j, {"model", "trigger", "experiment", "design", "oracle", "output"},
                     "config root");

  RunConfig cfg;
  cfg.config_hash = detail::fnv1a64(text);

  if (!j.contains("model")) throw ConfigError("config: \"model\" section is required");
  {
    const json& jm = j["model"];
    if (!jm.is_object()) throw ConfigError("model must be an object");
    if (jm.contains("scenario")) {
      detail::check_keys(jm, {"scenario", "scenario_seed"}, "model");
      cfg.model.scenario = jm["scenario"].get<std::string>();
      if (jm.contains("scenario_seed"))
        cfg.model.scenario_seed = jm["scenario_seed"].get<std::uint64_t>();
    } else {
      detail::check_keys(jm, {"A", "sensors", "Q", "R", "Sigma0"}, "model");
      for (const char* k : {"A", "sensors", "Q", "R", "Sigma0"})
        if (!jm.contains(k)) throw ConfigError(std::string("model.") + k + " is required");
      cfg.model.A = detail::parse_matrix(jm["A"], "model.A");
      cfg.model.Q = detail::parse_matrix(jm["Q"], "model.Q");
      cfg.model.R = detail::parse_matrix(jm["R"], "model.R");
      cfg.model.Sigma0 = detail::parse_matrix(jm["Sigma0"], "model.Sigma0");
      if (!jm["sensors"].is_array() || jm["sensors"].empty())
        throw ConfigError("model.sensors must be a non-empty array of matrices");
      std::vector<Mat> sensors;
      for (std::size_t i = 0; i < jm["sensors"].size(); ++i)
        sensors.push_back(
            detail::parse_matrix(jm["sensors"][i], "model.sensors[" + std::to_string(i) + "]"));
      cfg.model.sensors = std::move(sensors);
    }
  }

  if (j.contains("trigger")) {
    const json& jt = j["trigger"];
    detail::check_keys(jt, {"target_rate", "Y"}, "trigger");
    TriggerSpec ts;
    if (jt.contains("target_rate")) ts.target_rate = jt["target_rate"].get<double>();
    if (jt.contains("Y")) {
      std::vector<Mat> blocks;
      for (std::size_t i = 0; i < jt["Y"].size(); ++i)
        blocks.push_back(detail::parse_matrix(jt["Y"][i], "trigger.Y[" + std::to_string(i) + "]"));
      ts.Y_blocks = std::move(blocks);
    }
    cfg.trigger = std::move(ts);
  }

  if (j.contains("experiment")) {
    const json& je = j["experiment"];
    detail::check_keys(je, {"horizon", "trials", "rate_grid", "seed", "burn_in", "emit_trace"},
                       "experiment");
    if (je.contains("horizon")) cfg.experiment.horizon = je["horizon"].get<int>();
    if (je.contains("trials")) cfg.experiment.trials = je["trials"].get<int>();
    if (je.contains("seed")) cfg.experiment.seed = je["seed"].get<std::uint64_t>();
    if (je.contains("burn_in")) cfg.experiment.burn_in = je["burn_in"].get<int>();
    if (je.contains("emit_trace")) cfg.experiment.emit_trace = je["emit_trace"].get<bool>();
    if (je.contains("rate_grid"))
      for (const auto& v : je["rate_grid"]) cfg.experiment.rate_grid.push_back(v.get<double>());
  }

  if (j.contains("design")) {
    const json& jd = j["design"];
    detail::check_keys(jd, {"delta", "delta_scalar"}, "design");
    if (jd.contains("delta")) cfg.design.delta = detail::parse_matrix(jd["delta"], "design.delta");
    if (jd.contains("delta_scalar")) cfg.design.delta_scalar = jd["delta_scalar"].get<double>();
  }

  if (j.contains("oracle")) {
    const json& jo = j["oracle"];
    detail::check_keys(jo, {"steps", "grid_points"}, "oracle");
    if (jo.contains("steps")) cfg.oracle.steps = jo["steps"].get<int>();
    if (jo.contains("grid_points")) cfg.oracle.grid_points = jo["grid_points"].get<int>();
  }

  if (j.contains("output")) {
    const json& jo = j["output"];
    detail::check_keys(jo, {"dir"}, "output");
    if (jo.contains("dir")) cfg.out_dir = jo["dir"].get<std::string>();
  }
  return cfg;
}

inline RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

inline json RunConfig::to_json() const {
  json j;
  if (model.is_scenario()) {
    j["model"]["scenario"] = *model.scenario;
    j["model"]["scenario_seed"] = model.scenario_seed;
  } else {
    j["model"]["A"] = detail::matrix_to_json(*model.A);
    json sensors = json::array();
    for (const Mat& Ci : *model.sensors) sensors.push_back(detail::matrix_to_json(Ci));
    j["model"]["sensors"] = std::move(sensors);
    j["model"]["Q"] = detail::matrix_to_json(*model.Q);
    j["model"]["R"] = detail::matrix_to_json(*model.R);
    j["model"]["Sigma0"] = detail::matrix_to_json(*model.Sigma0);
  }
  if (trigger) {
    if (trigger->target_rate) j["trigger"]["target_rate"] = *trigger->target_rate;
    if (trigger->Y_blocks) {
      json blocks = json::array();
      for (const Mat& Y : *trigger->Y_blocks) blocks.push_back(detail::matrix_to_json(Y));
      j["trigger"]["Y"] = std::move(blocks);
    }
  }
  j["experiment"]["horizon"] = experiment.horizon;
  j["experiment"]["trials"] = experiment.trials;
  j["experiment"]["rate_grid"] = experiment.rate_grid;
  j["experiment"]["seed"] = experiment.seed;
  j["experiment"]["burn_in"] = experiment.burn_in;
  j["experiment"]["emit_trace"] = experiment.emit_trace;
  if (design.delta) j["design"]["delta"] = detail::matrix_to_json(*design.delta);
  if (design.delta_scalar) j["design"]["delta_scalar"] = *design.delta_scalar;
  j["oracle"]["steps"] = oracle.steps;
  j["oracle"]["grid_points"] = oracle.grid_points;
  j["output"]["dir"] = out_dir;
  return j;
}

}  // namespace evest::cli
