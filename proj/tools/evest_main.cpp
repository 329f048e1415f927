// Command-line front end: validate, rate, bounds, design, simulate,
// oracle-check. Exit codes: 0 success, 1 certified infeasibility,
// 2 invalid input/config, 3 internal numerical failure.

#include "evest/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <functional>

int main(int argc, char** argv) {
  using namespace evest::cli;

  CLI::App app{"evest: multi-sensor remote estimation with stochastic event triggers"};
  app.require_subcommand(1);

  CommonFlags fl;
  std::uint64_t seed_val = 0;
  int trials_val = 0, horizon_val = 0;

  std::function<int(const CommonFlags&)> action;
  const auto add_common = [&](CLI::App* sub, std::function<int(const CommonFlags&)> fn) {
    sub->add_option("--config", fl.config_path, "path to the run configuration file")
        ->required();
    sub->add_option("--out-dir", fl.out_dir, "output directory (overrides config)");
    sub->add_option("--seed", seed_val, "master seed (overrides config)")
        ->each([&](const std::string&) { fl.seed = seed_val; });
    sub->add_option("--trials", trials_val, "trial count (overrides config)")
        ->each([&](const std::string&) { fl.trials = trials_val; });
    sub->add_option("--horizon", horizon_val, "horizon (overrides config)")
        ->each([&](const std::string&) { fl.horizon = horizon_val; });
    sub->callback([&, fn] { action = fn; });
  };

  add_common(app.add_subcommand("validate", "check model invariants"), cmd_validate);
  add_common(app.add_subcommand("rate", "closed-form communication rates"), cmd_rate);
  add_common(app.add_subcommand("bounds", "asymptotic covariance bounds"), cmd_bounds);
  add_common(app.add_subcommand("design", "optimize trigger parameters"), cmd_design);
  add_common(app.add_subcommand("simulate", "Monte Carlo rate/accuracy study"), cmd_simulate);
  add_common(app.add_subcommand("oracle-check", "filter vs quadrature oracle"), cmd_oracle_check);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? kExitInvalidInput : kExitOk;
  }

  try {
    return action(fl);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalidInput;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalidInput;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumericalFailure;
  }
}
