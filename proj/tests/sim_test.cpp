#include "evest/sim.hpp"

#include "test_support.hpp"

#include <cmath>
#include <sstream>

using namespace evest;
using namespace evest::sim;

namespace {

Scenario scalar_scenario() {
  Scenario sc;
  sc.model = test_support::scalar_model();
  sc.label = "scalar";
  sc.seed = 0;
  return sc;
}

}  // namespace

TEST_CASE("datacenter scenario satisfies its construction contract", "[sim]") {
  const Scenario sc = generate_datacenter_scenario(7);
  CHECK(sc.model.n() == 20);
  CHECK(sc.model.num_sensors() == 20);
  CHECK(numerics::spectral_radius(sc.model.A) < 1.0 - 1e-6);
  CHECK(numerics::min_eigenvalue(numerics::symmetrize(sc.model.Q)) > 0.0);
  CHECK(numerics::min_eigenvalue(numerics::symmetrize(sc.model.R)) > 0.0);
  CHECK(model::validate(sc.model).ok());
}

TEST_CASE("process-noise scaling hits the target mean magnitude", "[sim]") {
  const Scenario sc = generate_datacenter_scenario(3);
  RngStream rng(1000);
  double sum_abs = 0.0;
  const int draws = 100000;
  for (int k = 0; k < draws; ++k) {
    const Vec w = sc.model.chol_Q * rng.normal_vec(sc.model.n());
    sum_abs += w.cwiseAbs().sum();
  }
  CHECK(sum_abs / (static_cast<double>(draws) * sc.model.n()) ==
        Catch::Approx(0.1).margin(0.005));

  // same check for the measurement noise at 0.5 K
  double sum_abs_v = 0.0;
  for (int k = 0; k < draws; ++k) {
    const Vec v = sc.model.chol_R * rng.normal_vec(sc.model.s());
    sum_abs_v += v.cwiseAbs().sum();
  }
  CHECK(sum_abs_v / (static_cast<double>(draws) * sc.model.s()) ==
        Catch::Approx(0.5).margin(0.025));
}

TEST_CASE("scenario generation is seed-deterministic", "[sim]") {
  const Scenario a = generate_datacenter_scenario(11);
  const Scenario b = generate_datacenter_scenario(11);
  CHECK(a.model.A == b.model.A);
  CHECK(a.model.Q == b.model.Q);
  CHECK(a.model.R == b.model.R);
  const Scenario c = generate_datacenter_scenario(12);
  CHECK(a.model.A != c.model.A);
}

TEST_CASE("experiment reproduces bit-for-bit and ignores thread count", "[sim]") {
  const Scenario sc = scalar_scenario();
  ExperimentOptions o1;
  o1.burn_in = 30;
  o1.threads = 1;
  o1.sweep_points = 8;
  ExperimentOptions o2 = o1;
  o2.threads = 2;

  const auto r1 = run_experiment(sc, {0.4, 0.7}, 60, 100, 42, o1);
  const auto r2 = run_experiment(sc, {0.4, 0.7}, 60, 100, 42, o2);
  REQUIRE(r1.points.size() == r2.points.size());
  for (std::size_t i = 0; i < r1.points.size(); ++i) {
    CHECK(r1.points[i].trace_prior_cov == r2.points[i].trace_prior_cov);
    CHECK(r1.points[i].empirical_mse == r2.points[i].empirical_mse);
    CHECK(r1.points[i].per_sensor_rates == r2.points[i].per_sensor_rates);
  }
}

TEST_CASE("stochastic schedule hits its target rate empirically", "[sim]") {
  const Scenario sc = scalar_scenario();
  ExperimentOptions opt;
  opt.burn_in = 20;
  opt.sweep_points = 8;
  const auto res = run_experiment(sc, {0.3, 0.6}, 150, 120, 5, opt);
  for (const auto& p : res.points) {
    if (p.schedule != "stochastic") continue;
    CHECK(p.empirical_rate == Catch::Approx(p.target_rate).margin(0.01));
  }
}

TEST_CASE("covariance traces decrease with the communication rate", "[sim]") {
  const Scenario sc = scalar_scenario();
  ExperimentOptions opt;
  opt.burn_in = 20;
  opt.sweep_points = 8;
  const auto res = run_experiment(sc, {0.2, 0.5, 0.8}, 400, 120, 6, opt);
  for (const char* sched : {"random", "stochastic", "optimized"}) {
    std::vector<const AggregatePoint*> pts;
    for (const auto& p : res.points)
      if (p.schedule == sched) pts.push_back(&p);
    REQUIRE(pts.size() == 3);
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      const double tol = 2.0 * (pts[i]->trace_se + pts[i + 1]->trace_se);
      CHECK(pts[i + 1]->trace_prior_cov <= pts[i]->trace_prior_cov + tol);
    }
  }
}

TEST_CASE("reported covariance traces match Monte Carlo error", "[sim]") {
  const Scenario sc = scalar_scenario();
  ExperimentOptions opt;
  opt.burn_in = 20;
  opt.sweep_points = 8;
  const auto res = run_experiment(sc, {0.5}, 10000, 60, 8, opt);
  for (const auto& p : res.points)
    CHECK(std::abs(p.empirical_mse - p.trace_prior_cov) / p.trace_prior_cov <= 0.05);
}

TEST_CASE("uniform stochastic curve lies between the Riccati bound curves", "[sim]") {
  const Scenario sc = scalar_scenario();
  ExperimentOptions opt;
  opt.burn_in = 30;
  opt.sweep_points = 8;
  const auto res = run_experiment(sc, {0.3, 0.6}, 400, 200, 9, opt);
  REQUIRE(res.bounds.size() == 2);
  std::size_t bi = 0;
  for (const auto& p : res.points) {
    if (p.schedule != "stochastic") continue;
    const auto& b = res.bounds.at(bi++);
    CHECK(p.target_rate == b.target_rate);
    CHECK(p.trace_prior_cov >= b.trace_lower - 3.0 * p.trace_se);
    CHECK(p.trace_prior_cov <= b.trace_upper + 3.0 * p.trace_se);
    CHECK(b.trace_lower <= b.trace_upper);
  }
}

TEST_CASE("rate one degenerates all schedules to the same filter", "[sim]") {
  const Scenario sc = scalar_scenario();
  ExperimentOptions opt;
  opt.burn_in = 10;
  opt.sweep_points = 8;
  const auto res = run_experiment(sc, {1.0}, 40, 60, 10, opt);
  REQUIRE(res.points.size() == 3);
  // under always-transmit the covariance sequence carries no randomness
  CHECK(res.points[0].trace_prior_cov == res.points[1].trace_prior_cov);
  CHECK(res.points[1].trace_prior_cov == res.points[2].trace_prior_cov);
  for (const auto& p : res.points) CHECK(p.empirical_rate == 1.0);
  CHECK(res.bounds.empty());
}

TEST_CASE("percent improvement is zero for identical curves", "[sim]") {
  AggregateResult res;
  for (double rate : {0.3, 0.5}) {
    for (const char* sched : {"random", "stochastic", "optimized"}) {
      AggregatePoint p;
      p.schedule = sched;
      p.target_rate = rate;
      p.trace_prior_cov = 1.7;
      res.points.push_back(p);
    }
  }
  const auto imp = percent_improvement(res);
  REQUIRE(imp.size() == 2);
  for (const auto& ip : imp) {
    CHECK(ip.stochastic_pct == 0.0);
    CHECK(ip.optimized_pct == 0.0);
  }
}

TEST_CASE("designed triggers beat the random baseline at a mid rate", "[sim]") {
  const Scenario sc = scalar_scenario();
  ExperimentOptions opt;
  opt.burn_in = 20;
  opt.sweep_points = 10;
  const auto res = run_experiment(sc, {0.5}, 1500, 120, 12, opt);
  const auto imp = percent_improvement(res);
  REQUIRE(imp.size() == 1);
  const double se_pct =
      200.0 * (res.points[0].trace_se + res.points[1].trace_se) / res.points[0].trace_prior_cov;
  CHECK(imp[0].stochastic_pct >= -se_pct);
  CHECK(imp[0].optimized_pct >= -se_pct);
}

TEST_CASE("csv writers emit the documented headers", "[sim]") {
  const Scenario sc = scalar_scenario();
  ExperimentOptions opt;
  opt.burn_in = 10;
  opt.sweep_points = 8;
  const auto res = run_experiment(sc, {0.5}, 20, 40, 2, opt);

  std::ostringstream os;
  write_results_csv(os, "# test", res);
  CHECK(os.str().rfind("# test\nschedule,target_rate,empirical_rate,trace_prior_cov,"
                       "empirical_mse,trials,horizon\n", 0) == 0);

  std::ostringstream ios;
  write_improvement_csv(ios, "# test", percent_improvement(res));
  CHECK(ios.str().rfind("# test\ntarget_rate,stochastic_improvement_pct,"
                        "optimized_improvement_pct\n", 0) == 0);

  std::ostringstream bos;
  write_bounds_csv(bos, "# test", res);
  CHECK(bos.str().rfind("# test\ntarget_rate,trace_x_lower,trace_x_upper\n", 0) == 0);
}
