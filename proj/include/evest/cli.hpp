#pragma once

#include "evest/config.hpp"
#include "evest/design.hpp"
#include "evest/oracle.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

namespace evest::cli {

// exit codes
inline constexpr int kExitOk = 0;
inline constexpr int kExitInfeasible = 1;
inline constexpr int kExitInvalidInput = 2;
inline constexpr int kExitNumericalFailure = 3;

struct CommonFlags {
  std::string config_path;
  std::string out_dir;  // overrides config when non-empty
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::optional<int> horizon;
};

namespace detail {

struct Session {
  RunConfig cfg;
  std::string out_dir;

  std::string preamble() const {
    char buf[96];
    std::snprintf(buf, sizeof buf, "# evest %s config=%016" PRIx64 " seed=%" PRIu64, kVersion,
                  cfg.config_hash, cfg.experiment.seed);
    return buf;
  }

  std::ofstream open_output(const std::string& name) const {
    std::filesystem::create_directories(out_dir);
    const auto path = std::filesystem::path(out_dir) / name;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open output file: " + path.string());
    return os;
  }
};

inline Session make_session(const CommonFlags& fl) {
  Session s{RunConfig::load(fl.config_path), ""};
  if (fl.seed) s.cfg.experiment.seed = *fl.seed;
  if (fl.trials) s.cfg.experiment.trials = *fl.trials;
  if (fl.horizon) s.cfg.experiment.horizon = *fl.horizon;
  s.out_dir = fl.out_dir.empty() ? s.cfg.out_dir : fl.out_dir;
  return s;
}

inline void write_matrix_rows(std::ostream& os, const std::string& name, const Mat& M) {
  char buf[48];
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", M(i, j));
      os << name << ',' << i << ',' << j << ',' << buf << '\n';
    }
}

}  // namespace detail

inline int cmd_validate(const CommonFlags& fl) {
  detail::Session s = detail::make_session(fl);
  model::ValidationReport rep;
  if (s.cfg.model.is_scenario()) {
    const sim::Scenario sc = s.cfg.model.build_scenario();
    rep = model::validate(sc.model);
    std::cout << "scenario " << sc.label << " (" << sc.provenance << ")\n";
  } else {
    rep = model::validate(s.cfg.model.to_raw());
  }
  std::cout << rep.summary() << '\n';
  return rep.ok() ? kExitOk : kExitInvalidInput;
}

inline int cmd_rate(const CommonFlags& fl) {
  detail::Session s = detail::make_session(fl);
  if (!s.cfg.trigger) throw ConfigError("rate: config needs a trigger section");
  const sim::Scenario sc = s.cfg.model.build_scenario();
  const model::StationaryStats stats = model::stationary_stats(sc.model);
  const trigger::TriggerDesign d = s.cfg.trigger->build(sc.model);

  auto os = s.open_output("rates.csv");
  os << s.preamble() << '\n' << "sensor,rate\n";
  char buf[48];
  double total = 0.0;
  for (int i = 0; i < sc.model.num_sensors(); ++i) {
    const double lam = trigger::comm_rate(i, stats, d);
    total += lam;
    std::snprintf(buf, sizeof buf, "%.17g", lam);
    os << i << ',' << buf << '\n';
    std::printf("sensor %d: lambda = %.6f\n", i, lam);
  }
  std::printf("average rate: %.6f\n", total / sc.model.num_sensors());
  return kExitOk;
}

inline int cmd_bounds(const CommonFlags& fl) {
  detail::Session s = detail::make_session(fl);
  if (!s.cfg.trigger) throw ConfigError("bounds: config needs a trigger section");
  const sim::Scenario sc = s.cfg.model.build_scenario();
  const trigger::TriggerDesign d = s.cfg.trigger->build(sc.model);
  const analysis::BoundSet b = analysis::compute_bounds(sc.model, d);

  auto os = s.open_output("bounds.csv");
  os << s.preamble() << '\n' << "matrix,row,col,value\n";
  detail::write_matrix_rows(os, "X_lower", b.X_lower.m());
  detail::write_matrix_rows(os, "X_upper", b.X_upper.m());
  detail::write_matrix_rows(os, "P_bar", b.P_bar.m());

  std::printf("trace X_lower = %.10g\n", b.X_lower.m().trace());
  std::printf("trace X_upper = %.10g\n", b.X_upper.m().trace());
  std::printf("trace P_bar   = %.10g\n", b.P_bar.m().trace());
  return kExitOk;
}

inline int cmd_design(const CommonFlags& fl) {
  detail::Session s = detail::make_session(fl);
  const sim::Scenario sc = s.cfg.model.build_scenario();
  const Mat Delta = s.cfg.design.build_delta(sc.model.n());
  const design::SDPProblem prob =
      design::SDPProblem::make(sc.model, numerics::symmetrize(Delta));
  const design::SDPSolution sol = design::solve_sdp(prob);

  std::printf("status: %s\n", design::to_string(sol.status));
  if (sol.status == design::SolveStatus::infeasible) {
    std::printf("%s\n", sol.note.c_str());
    return kExitInfeasible;
  }
  if (sol.status == design::SolveStatus::max_iterations) {
    std::printf("%s\n", sol.note.c_str());
    return kExitNumericalFailure;
  }

  const design::VerifyReport rep = design::verify_design(prob, sol);
  std::printf("objective = %.10g (gap surrogate %.3g)\n", sol.objective, sol.gap);
  std::printf("P_bar margin (min eig of Delta - P_bar) = %.3g\n", rep.pbar_margin);

  auto os = s.open_output("design_solution.csv");
  os << s.preamble() << '\n' << "entity,row,col,value\n";
  for (std::size_t b = 0; b < sol.Y_blocks.size(); ++b)
    detail::write_matrix_rows(os, "Y" + std::to_string(b), sol.Y_blocks[b]);
  detail::write_matrix_rows(os, "S", sol.S);

  auto ros = s.open_output("design_rates.csv");
  ros << s.preamble() << '\n' << "sensor,rate\n";
  char buf[48];
  double total = 0.0;
  for (std::size_t i = 0; i < rep.rates.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", rep.rates[i]);
    ros << i << ',' << buf << '\n';
    total += rep.rates[i];
  }
  std::printf("predicted average rate = %.6f\n", total / rep.rates.size());

  if (!rep.ok) {
    for (const auto& f : rep.failures) std::printf("verification failure: %s\n", f.c_str());
    return kExitNumericalFailure;
  }
  std::printf("verification: ok\n");
  return kExitOk;
}

inline int cmd_simulate(const CommonFlags& fl) {
  detail::Session s = detail::make_session(fl);
  if (s.cfg.experiment.rate_grid.empty())
    throw ConfigError("simulate: experiment.rate_grid must be non-empty");
  const sim::Scenario sc = s.cfg.model.build_scenario();

  sim::ExperimentOptions opt;
  opt.burn_in = s.cfg.experiment.burn_in;
  const sim::AggregateResult res =
      sim::run_experiment(sc, s.cfg.experiment.rate_grid, s.cfg.experiment.trials,
                          s.cfg.experiment.horizon, s.cfg.experiment.seed, opt);

  {
    auto os = s.open_output("results.csv");
    sim::write_results_csv(os, s.preamble(), res);
  }
  {
    auto os = s.open_output("improvement.csv");
    sim::write_improvement_csv(os, s.preamble(), sim::percent_improvement(res));
  }
  {
    auto os = s.open_output("bound_curves.csv");
    sim::write_bounds_csv(os, s.preamble(), res);
  }

  if (s.cfg.experiment.emit_trace) {
    // one stochastic-trigger trajectory at the first rate point
    const double rate = s.cfg.experiment.rate_grid.front();
    const model::StationaryStats stats = model::stationary_stats(sc.model);
    std::vector<double> ys;
    for (int i = 0; i < sc.model.num_sensors(); ++i)
      ys.push_back(trigger::rate_to_scalar_y(i, stats, rate));
    const auto d = trigger::TriggerDesign::uniform_scalar(sc.model.sizes, ys);
    const auto log = filter::run_trajectory(
        sc.model, d, s.cfg.experiment.horizon, s.cfg.experiment.seed,
        {filter::ScheduleKind::stochastic_trigger, rate});
    auto os = s.open_output("trace.csv");
    os << s.preamble() << '\n';
    filter::write_trace_csv(os, log);
  }

  for (const auto& p : res.points)
    std::printf("%-10s rate %.3f -> empirical %.4f, trace %.6g, mse %.6g\n", p.schedule.c_str(),
                p.target_rate, p.empirical_rate, p.trace_prior_cov, p.empirical_mse);
  std::printf("optimized schedule: nearest-rate match from a Delta = delta*I sweep\n");
  return kExitOk;
}

inline int cmd_oracle_check(const CommonFlags& fl) {
  detail::Session s = detail::make_session(fl);
  if (!s.cfg.trigger) throw ConfigError("oracle-check: config needs a trigger section");
  const sim::Scenario sc = s.cfg.model.build_scenario();
  if (sc.model.n() > 2)
    throw ConfigError("oracle-check: the quadrature oracle supports n <= 2 only");
  const trigger::TriggerDesign d = s.cfg.trigger->build(sc.model);

  oracle::GridSpec gs;
  gs.points_per_axis = s.cfg.oracle.grid_points;
  const oracle::EquivalenceReport rep =
      oracle::run_equivalence_suite(sc.model, d, s.cfg.oracle.steps, gs);

  std::printf("patterns checked: %d\n", rep.patterns);
  std::printf("max mean deviation:       %.3e (tolerance 1e-4)\n", rep.max_mean_dev);
  std::printf("max covariance deviation: %.3e (tolerance 1e-4)\n", rep.max_cov_dev);
  std::printf("max |excess kurtosis|:    %.3e (tolerance 1e-3)\n", rep.max_kurtosis);

  const bool ok =
      rep.max_mean_dev <= 1e-4 && rep.max_cov_dev <= 1e-4 && rep.max_kurtosis <= 1e-3;
  std::printf("oracle equivalence: %s\n", ok ? "ok" : "FAILED");
  return ok ? kExitOk : kExitNumericalFailure;
}

}  // namespace evest::cli
