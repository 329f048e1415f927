#pragma once

#include "evest/analysis.hpp"
#include "evest/design.hpp"
#include "evest/filter.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace evest::sim {

/// A generated study system plus the information needed to regenerate it.
struct Scenario {
  model::SystemModel model;
  std::string label;
  std::uint64_t seed = 0;
  std::string provenance;
};

/// Thermal network of 20 devices (16 servers, 3 air conditioners, 1
/// other): continuous-time dynamics k_i * (interaction - I) on output
/// temperatures, discretized at 150 s. Interaction rows are random,
/// normalized, then scaled by a leakage factor below one so the
/// continuous-time matrix is Hurwitz. Q and R come from the product of a
/// uniform random matrix with its transpose, scaled so the per-component
/// mean absolute noise is 0.1 K (process) and 0.5 K (measurement). One
/// scalar sensor observes each device input temperature.
inline Scenario generate_datacenter_scenario(std::uint64_t seed) {
  constexpr int kServers = 16, kAir = 3, kOther = 1;
  constexpr int n = kServers + kAir + kOther;
  constexpr double kSamplePeriod = 150.0;  // seconds, 1/150 Hz

  for (std::uint64_t attempt = 0;; ++attempt) {
    RngStream rng = RngStream::substream(seed, attempt);

    // interaction weights: nonnegative rows summing to a leakage < 1
    Mat Psi(n, n);
    for (int i = 0; i < n; ++i) {
      double row_sum = 0.0;
      for (int j = 0; j < n; ++j) {
        Psi(i, j) = rng.uniform01();
        row_sum += Psi(i, j);
      }
      const double leakage = 0.90 + 0.07 * rng.uniform01();
      Psi.row(i) *= leakage / row_sum;
    }

    // thermal constants by node class (1/seconds)
    Vec k(n);
    for (int i = 0; i < n; ++i) {
      double lo, hi;
      if (i < kServers) {
        lo = 1.0 / 120.0;
        hi = 1.0 / 40.0;
      } else if (i < kServers + kAir) {
        lo = 1.0 / 90.0;
        hi = 1.0 / 30.0;
      } else {
        lo = 1.0 / 200.0;
        hi = 1.0 / 60.0;
      }
      k[i] = lo + (hi - lo) * rng.uniform01();
    }

    const Mat A_ct = k.asDiagonal() * (Psi - Mat::Identity(n, n));
    const Mat A = (A_ct * kSamplePeriod).exp();
    if (numerics::spectral_radius(A) >= 1.0 - 1e-6) continue;

    const auto noise_cov = [&](int dim, double target_mean_abs) {
      Mat G(dim, dim);
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) G(i, j) = rng.uniform01();
      Mat raw = G * G.transpose();
      double mean_sd = 0.0;
      for (int i = 0; i < dim; ++i) mean_sd += std::sqrt(raw(i, i));
      mean_sd /= dim;
      // E|N(0, s^2)| = s sqrt(2/pi)
      const double beta = target_mean_abs / (mean_sd * std::sqrt(2.0 / M_PI));
      return Mat((beta * beta) * raw);
    };
    const Mat Q = noise_cov(n, 0.1);
    const Mat R = noise_cov(n, 0.5);

    std::vector<Mat> sensors;
    for (int i = 0; i < n; ++i) sensors.push_back(Psi.row(i));

    Mat Sigma0;
    try {
      Sigma0 = numerics::solve_lyapunov(A, numerics::symmetrize(Q)).m();
    } catch (const std::exception&) {
      continue;
    }

    Scenario sc;
    sc.model = model::make_model(A, sensors, Q, R, numerics::symmetrize(Sigma0).m());
    sc.label = "datacenter-20";
    sc.seed = seed;
    std::ostringstream prov;
    prov << "seed=" << seed << " attempt=" << attempt
         << "; 16 servers + 3 air conditioners + 1 other, 150 s sampling; "
            "interaction rows normalized with leakage in [0.90, 0.97]; "
            "noise scaled to mean |w| = 0.1 K, mean |v| = 0.5 K; "
            "Sigma0 set to the stationary state covariance";
    sc.provenance = prov.str();
    return sc;
  }
}

/// One row of the communication-vs-accuracy study.
struct AggregatePoint {
  std::string schedule;  // "random" | "stochastic" | "optimized"
  double target_rate = 0.0;
  std::vector<double> per_sensor_rates;
  double empirical_rate = 0.0;   // mean over sensors
  double trace_prior_cov = 0.0;  // time/trial average of tr P_k^-
  double empirical_mse = 0.0;    // time/trial average of |x - x^-|^2
  double trace_se = 0.0;         // standard error over trials
  double mse_se = 0.0;
  int trials = 0;
  int horizon = 0;
};

struct BoundPoint {
  double target_rate = 0.0;
  double trace_lower = 0.0;  // tr X_lower for the uniform design
  double trace_upper = 0.0;  // tr X_upper
};

struct AggregateResult {
  std::vector<AggregatePoint> points;
  std::vector<BoundPoint> bounds;
};

struct ExperimentOptions {
  int burn_in = 100;
  int threads = 0;       // 0 = hardware concurrency
  int sweep_points = 25; // delta grid resolution for the optimized design
};

namespace detail {

struct TrialAccum {
  double sum_trace = 0.0;
  double sum_mse = 0.0;
  long steps = 0;
  std::vector<long> sensor_tx;
  long decision_steps = 0;
};

inline TrialAccum run_trial(const model::SystemModel& m, const trigger::TriggerDesign& design,
                            filter::ScheduleKind kind, double bernoulli_rate, int horizon,
                            int burn_in, std::uint64_t trial_seed) {
  RngStream plant = RngStream::substream(trial_seed, 0);
  auto sensors = trigger::SensorStreams::from_seed(
      RngStream::substream(trial_seed, 1).next_u64(), m.num_sensors());

  TrialAccum acc;
  acc.sensor_tx.assign(m.num_sensors(), 0);

  filter::EstimatorState st = filter::initial_state(m);
  Vec x = m.chol_Sigma0 * plant.normal_vec(m.n());
  for (int k = 0; k < horizon; ++k) {
    if (k > 0) st = filter::time_update(st, m);
    const Vec y = m.C * x + m.chol_R * plant.normal_vec(m.s());

    if (k >= burn_in) {
      acc.sum_trace += st.P_prior.m().trace();
      acc.sum_mse += (x - st.x_prior).squaredNorm();
      ++acc.steps;
    }

    trigger::DecisionVector dec;
    switch (kind) {
      case filter::ScheduleKind::stochastic_trigger:
        dec = trigger::draw_decisions(y, m, design, sensors);
        break;
      case filter::ScheduleKind::random_bernoulli: {
        std::vector<int> gamma(m.num_sensors());
        for (int i = 0; i < m.num_sensors(); ++i)
          gamma[i] = sensors.streams[i].uniform01() < bernoulli_rate ? 1 : 0;
        dec = trigger::DecisionVector::from_gamma(std::move(gamma), m.sizes);
        break;
      }
      case filter::ScheduleKind::always_transmit:
        dec = trigger::DecisionVector::all_transmit(m.sizes);
        break;
    }
    for (int i = 0; i < m.num_sensors(); ++i) acc.sensor_tx[i] += dec.gamma[i];
    ++acc.decision_steps;

    auto rec = filter::TransmissionRecord::from_measurement(y, std::move(dec), m);
    switch (kind) {
      case filter::ScheduleKind::stochastic_trigger:
        st = filter::measurement_update(st, m, design, rec);
        break;
      case filter::ScheduleKind::random_bernoulli:
        st = filter::intermittent_update(st, m, rec);
        break;
      case filter::ScheduleKind::always_transmit:
        st = filter::standard_kalman_update(st, m, y);
        break;
    }
    x = m.A * x + m.chol_Q * plant.normal_vec(m.n());
  }
  return acc;
}

/// Runs `trials` independent trials across a thread pool; per-trial seeds
/// depend only on (master seed, point counter, trial index), and the
/// reduction is ordered by trial index, so results are schedule-invariant.
inline AggregatePoint aggregate_trials(const model::SystemModel& m,
                                       const trigger::TriggerDesign& design,
                                       filter::ScheduleKind kind, double bernoulli_rate,
                                       int trials, int horizon, int burn_in,
                                       std::uint64_t master_seed, std::uint64_t point_counter,
                                       int threads) {
  std::vector<TrialAccum> per_trial(trials);
  std::atomic<int> next{0};
  const int nthreads = threads > 0 ? threads
                                   : std::max(1u, std::thread::hardware_concurrency());
  auto worker = [&]() {
    for (;;) {
      const int t = next.fetch_add(1);
      if (t >= trials) return;
      const std::uint64_t trial_seed =
          RngStream::substream(master_seed, point_counter * 0x100000000ULL +
                                               static_cast<std::uint64_t>(t))
              .next_u64();
      per_trial[t] = run_trial(m, design, kind, bernoulli_rate, horizon, burn_in, trial_seed);
    }
  };
  std::vector<std::thread> pool;
  for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  AggregatePoint pt;
  pt.trials = trials;
  pt.horizon = horizon;
  pt.per_sensor_rates.assign(m.num_sensors(), 0.0);
  double sum_tr = 0.0, sum_mse = 0.0, sum_tr2 = 0.0, sum_mse2 = 0.0;
  for (const TrialAccum& a : per_trial) {
    const double tr = a.sum_trace / a.steps;
    const double mse = a.sum_mse / a.steps;
    sum_tr += tr;
    sum_mse += mse;
    sum_tr2 += tr * tr;
    sum_mse2 += mse * mse;
    for (int i = 0; i < m.num_sensors(); ++i)
      pt.per_sensor_rates[i] += static_cast<double>(a.sensor_tx[i]) / a.decision_steps;
  }
  pt.trace_prior_cov = sum_tr / trials;
  pt.empirical_mse = sum_mse / trials;
  if (trials > 1) {
    pt.trace_se = std::sqrt(std::max(0.0, sum_tr2 / trials - pt.trace_prior_cov * pt.trace_prior_cov) /
                            (trials - 1));
    pt.mse_se = std::sqrt(std::max(0.0, sum_mse2 / trials - pt.empirical_mse * pt.empirical_mse) /
                          (trials - 1));
  }
  double rate_sum = 0.0;
  for (double& r : pt.per_sensor_rates) {
    r /= trials;
    rate_sum += r;
  }
  pt.empirical_rate = rate_sum / m.num_sensors();
  return pt;
}

}  // namespace detail

/// Runs the three scheduling strategies over the rate grid:
///   random     - i.i.d. Bernoulli transmissions, intermittent filter;
///   stochastic - uniform-rate trigger design, event-based filter;
///   optimized  - trigger design from the SDP sweep matched by rate.
/// Also emits the Riccati bound traces for the uniform design. A target
/// rate of exactly 1 degenerates every schedule to always-transmit.
inline AggregateResult run_experiment(const Scenario& scenario,
                                      const std::vector<double>& rate_grid, int trials,
                                      int horizon, std::uint64_t master_seed,
                                      const ExperimentOptions& opt = {}) {
  const model::SystemModel& m = scenario.model;
  for (double r : rate_grid)
    if (r <= 0.0 || r > 1.0)
      throw std::invalid_argument("run_experiment: rates must lie in (0, 1]");
  if (trials < 1 || horizon <= opt.burn_in)
    throw std::invalid_argument("run_experiment: trials >= 1 and horizon > burn_in required");

  const model::StationaryStats stats = model::stationary_stats(m);

  // delta sweep for the optimized design, spanning from just above the
  // always-transmit posterior bound to just above the open-loop covariance
  std::vector<design::SweepEntry> sweep;
  {
    const auto R_sym = numerics::symmetrize(m.R);
    const auto Q_sym = numerics::symmetrize(m.Q);
    const Mat Xl = numerics::riccati_fixed_point(m.A, m.C, Q_sym, R_sym).m();
    const Mat XCt = Xl * m.C.transpose();
    const Mat P_full = Xl - XCt * (m.C * XCt + m.R).llt().solve(XCt.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es_lo((P_full + P_full.transpose()) * 0.5);
    Eigen::SelfAdjointEigenSolver<Mat> es_hi(stats.Sigma.m());
    const double d_lo = es_lo.eigenvalues().maxCoeff() * 1.02;
    const double d_hi = es_hi.eigenvalues().maxCoeff() * 1.20;
    std::vector<double> grid;
    for (int i = 0; i < opt.sweep_points; ++i)
      grid.push_back(d_lo * std::pow(d_hi / d_lo, static_cast<double>(i) / (opt.sweep_points - 1)));
    sweep = design::sweep_designs(m, grid);
  }

  AggregateResult out;
  std::uint64_t counter = 0;
  for (double rate : rate_grid) {
    const bool degenerate = rate == 1.0;

    trigger::TriggerDesign uniform;
    if (!degenerate) {
      std::vector<double> ys;
      for (int i = 0; i < m.num_sensors(); ++i)
        ys.push_back(trigger::rate_to_scalar_y(i, stats, rate));
      uniform = trigger::TriggerDesign::uniform_scalar(m.sizes, ys);
    } else {
      uniform = trigger::TriggerDesign::uniform_scalar(
          m.sizes, std::vector<double>(m.num_sensors(), 1.0));
    }

    trigger::TriggerDesign optimized = uniform;
    if (!degenerate) {
      double best = std::numeric_limits<double>::infinity();
      const design::SweepEntry* pick = nullptr;
      for (const auto& e : sweep) {
        if (e.status != design::SolveStatus::optimal) continue;
        const double dist = std::abs(e.avg_rate - rate);
        if (dist < best) {
          best = dist;
          pick = &e;
        }
      }
      if (!pick) throw std::runtime_error("run_experiment: no feasible design in the sweep");
      optimized = trigger::TriggerDesign{pick->Y_blocks}.regularized();
    }

    const struct {
      const char* name;
      filter::ScheduleKind kind;
      const trigger::TriggerDesign* design;
    } runs[3] = {
        {"random", degenerate ? filter::ScheduleKind::always_transmit
                              : filter::ScheduleKind::random_bernoulli, &uniform},
        {"stochastic", degenerate ? filter::ScheduleKind::always_transmit
                                  : filter::ScheduleKind::stochastic_trigger, &uniform},
        {"optimized", degenerate ? filter::ScheduleKind::always_transmit
                                 : filter::ScheduleKind::stochastic_trigger, &optimized},
    };
    for (const auto& r : runs) {
      AggregatePoint pt = detail::aggregate_trials(m, *r.design, r.kind, rate, trials, horizon,
                                                   opt.burn_in, master_seed, counter++,
                                                   opt.threads);
      pt.schedule = r.name;
      pt.target_rate = rate;
      out.points.push_back(std::move(pt));
    }

    if (!degenerate) {
      const analysis::BoundSet b = analysis::compute_bounds(m, uniform);
      out.bounds.push_back({rate, b.X_lower.m().trace(), b.X_upper.m().trace()});
    }
  }
  return out;
}

struct ImprovementPoint {
  double target_rate = 0.0;
  double stochastic_pct = 0.0;
  double optimized_pct = 0.0;
};

/// Percent improvement of the designed triggers over the random baseline,
/// per rate point: 100 (trace_random - trace_design) / trace_random.
inline std::vector<ImprovementPoint> percent_improvement(const AggregateResult& res) {
  std::vector<ImprovementPoint> out;
  for (std::size_t i = 0; i + 2 < res.points.size(); i += 3) {
    const auto& rnd = res.points[i];
    const auto& sto = res.points[i + 1];
    const auto& opt = res.points[i + 2];
    if (rnd.schedule != "random" || sto.schedule != "stochastic" ||
        opt.schedule != "optimized" || rnd.target_rate != sto.target_rate ||
        rnd.target_rate != opt.target_rate)
      throw std::invalid_argument("percent_improvement: misaligned rate grids");
    ImprovementPoint p;
    p.target_rate = rnd.target_rate;
    p.stochastic_pct = 100.0 * (rnd.trace_prior_cov - sto.trace_prior_cov) / rnd.trace_prior_cov;
    p.optimized_pct = 100.0 * (rnd.trace_prior_cov - opt.trace_prior_cov) / rnd.trace_prior_cov;
    out.push_back(p);
  }
  return out;
}

namespace detail {

inline void append_num(std::string& line, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  line += buf;
}

}  // namespace detail

/// CSV emission. Every file starts with the caller-provided preamble
/// comment (tool version, config hash, master seed). Numeric formatting
/// is locale-free and bit-stable across runs.
inline void write_results_csv(std::ostream& os, const std::string& preamble,
                              const AggregateResult& res) {
  os << preamble << '\n';
  os << "schedule,target_rate,empirical_rate,trace_prior_cov,empirical_mse,trials,horizon\n";
  for (const auto& p : res.points) {
    std::string line = p.schedule;
    line += ',';
    detail::append_num(line, p.target_rate);
    line += ',';
    detail::append_num(line, p.empirical_rate);
    line += ',';
    detail::append_num(line, p.trace_prior_cov);
    line += ',';
    detail::append_num(line, p.empirical_mse);
    line += ',' + std::to_string(p.trials) + ',' + std::to_string(p.horizon);
    os << line << '\n';
  }
}

inline void write_improvement_csv(std::ostream& os, const std::string& preamble,
                                  const std::vector<ImprovementPoint>& pts) {
  os << preamble << '\n';
  os << "target_rate,stochastic_improvement_pct,optimized_improvement_pct\n";
  for (const auto& p : pts) {
    std::string line;
    detail::append_num(line, p.target_rate);
    line += ',';
    detail::append_num(line, p.stochastic_pct);
    line += ',';
    detail::append_num(line, p.optimized_pct);
    os << line << '\n';
  }
}

inline void write_bounds_csv(std::ostream& os, const std::string& preamble,
                             const AggregateResult& res) {
  os << preamble << '\n';
  os << "target_rate,trace_x_lower,trace_x_upper\n";
  for (const auto& b : res.bounds) {
    std::string line;
    detail::append_num(line, b.target_rate);
    line += ',';
    detail::append_num(line, b.trace_lower);
    line += ',';
    detail::append_num(line, b.trace_upper);
    os << line << '\n';
  }
}

}  // namespace evest::sim
