#include "evest/analysis.hpp"

#include "evest/filter.hpp"
#include "test_support.hpp"

using namespace evest;
using namespace evest::analysis;
using trigger::TriggerDesign;

namespace {

// positive root of c^2 x^2 + (w - a^2 w - q c^2) x - q w = 0
double scalar_riccati_root(double a, double c, double q, double w) {
  const double A = c * c;
  const double B = w - a * a * w - q * c * c;
  const double C = -q * w;
  return (-B + std::sqrt(B * B - 4 * A * C)) / (2 * A);
}

}  // namespace

TEST_CASE("bounds collapse for a huge trigger parameter", "[analysis]") {
  const auto m = test_support::scalar_model();
  const auto d = TriggerDesign::uniform_scalar(m.sizes, {1e12});
  const auto b = compute_bounds(m, d);
  CHECK(test_support::max_abs_diff(b.X_upper.m(), b.X_lower.m()) <=
        1e-3 * b.X_lower.m().norm());
}

TEST_CASE("bounds approach the open-loop covariance for a vanishing trigger", "[analysis]") {
  const auto m = test_support::scalar_model();
  const auto d = TriggerDesign::uniform_scalar(m.sizes, {1e-12});
  const auto b = compute_bounds(m, d);
  CHECK(b.X_upper.m()(0, 0) == Catch::Approx(4.0 / 3.0).epsilon(1e-3));
}

TEST_CASE("scalar bound pair matches the quadratic-formula oracle", "[analysis]") {
  const auto m = test_support::scalar_model();
  const auto d = TriggerDesign::uniform_scalar(m.sizes, {1.0});
  const auto b = compute_bounds(m, d);
  CHECK(b.X_lower.m()(0, 0) == Catch::Approx(scalar_riccati_root(0.5, 1, 1, 1.0)).epsilon(1e-8));
  CHECK(b.X_upper.m()(0, 0) == Catch::Approx(scalar_riccati_root(0.5, 1, 1, 2.0)).epsilon(1e-8));

  // P_bar = X_upper - X_upper^2 / (X_upper + w), w = r + 1/y
  const double Xu = b.X_upper.m()(0, 0);
  CHECK(b.P_bar.m()(0, 0) == Catch::Approx(Xu - Xu * Xu / (Xu + 2.0)).epsilon(1e-8));

  TriggerDesign singular;
  singular.blocks = {Mat::Zero(1, 1)};
  CHECK_THROWS_AS(compute_bounds(m, singular), std::invalid_argument);
}

TEST_CASE("bound set ordering invariants", "[analysis]") {
  RngStream rng(606);
  for (int trial = 0; trial < 6; ++trial) {
    const int n = 2;
    const Mat A = test_support::random_stable(rng, n, 0.4 + 0.5 * rng.uniform01());
    const Mat Q = test_support::random_psd(rng, n, 0.2);
    const Mat R = test_support::random_psd(rng, 2, 0.3);
    const Mat S0 = test_support::random_psd(rng, n, 0.2);
    const auto m = model::make_model(A, {test_support::random_mat(rng, 2, n)}, Q, R, S0);
    const Mat Y = test_support::random_psd(rng, 2, 0.1);
    const auto b = compute_bounds(m, TriggerDesign{{Y}});

    CHECK(numerics::min_eigenvalue(numerics::symmetrize(b.X_upper.m() - b.X_lower.m())) >= -1e-9);
    CHECK(numerics::min_eigenvalue(numerics::symmetrize(b.X_upper.m() - b.P_bar.m())) >= -1e-9);
    CHECK(numerics::is_psd(b.P_bar));

    // Loewner-larger Y means smaller upper envelope
    const Mat Y2 = Y + test_support::random_psd(rng, 2, 0.05);
    const auto b2 = compute_bounds(m, TriggerDesign{{Y2}});
    CHECK(numerics::min_eigenvalue(numerics::symmetrize(b.X_upper.m() - b2.X_upper.m())) >=
          -1e-9);
  }
}

TEST_CASE("always-transmit covariances converge to the lower envelope", "[analysis]") {
  const auto m = test_support::scalar_model();
  const auto d = TriggerDesign::uniform_scalar(m.sizes, {9.0 / 7.0});
  const auto b = compute_bounds(m, d);

  const auto log = filter::run_trajectory(m, d, 2000, 5,
                                          {filter::ScheduleKind::always_transmit, 1.0});
  std::vector<Mat> P_seq;
  for (const auto& st : log.states) P_seq.push_back(st.P_prior.m());
  const auto rep = empirical_bound_check(P_seq, b, 1e-6, 100);
  CHECK(rep.violations_lower == 0);
  CHECK(rep.closest_to_lower <= 1e-6);
}

TEST_CASE("forced all-drop covariances converge to the upper envelope", "[analysis]") {
  const auto m = test_support::scalar_model();
  const auto d = TriggerDesign::uniform_scalar(m.sizes, {9.0 / 7.0});
  const auto b = compute_bounds(m, d);

  auto st = filter::initial_state(m);
  std::vector<Mat> P_seq;
  const auto drop_rec = filter::TransmissionRecord::from_measurement(
      Vec::Zero(1), trigger::DecisionVector::all_drop(m.sizes), m);
  for (int k = 0; k < 500; ++k) {
    if (k > 0) st = filter::time_update(st, m);
    P_seq.push_back(st.P_prior.m());
    st = filter::measurement_update(st, m, d, drop_rec);
  }
  const auto rep = empirical_bound_check(P_seq, b, 1e-6, 100);
  CHECK(rep.violations_upper == 0);
  CHECK(rep.closest_to_upper <= 1e-6);
}

TEST_CASE("stochastic run stays inside the sandwich and touches both bounds", "[analysis]") {
  const auto m = test_support::scalar_model();
  const auto d = TriggerDesign::uniform_scalar(m.sizes, {9.0 / 7.0});
  const auto b = compute_bounds(m, d);
  const auto log = filter::run_trajectory(m, d, 100000, 321,
                                          {filter::ScheduleKind::stochastic_trigger, 0.0});
  std::vector<Mat> P_seq;
  for (const auto& st : log.states) P_seq.push_back(st.P_prior.m());
  const auto rep = empirical_bound_check(P_seq, b, 1e-6, 100);
  CHECK(rep.violations_lower == 0);
  CHECK(rep.violations_upper == 0);
  CHECK(rep.closest_to_lower <= 0.01);
  CHECK(rep.closest_to_upper <= 0.01);
  CHECK(rep.max_trace < 10.0);  // uniform boundedness witness
}

TEST_CASE("posterior covariance respects the worst-case ceiling", "[analysis]") {
  const auto m = test_support::scalar_model();
  const auto d = TriggerDesign::uniform_scalar(m.sizes, {9.0 / 7.0});
  const auto b = compute_bounds(m, d);
  const auto log = filter::run_trajectory(m, d, 100000, 654,
                                          {filter::ScheduleKind::stochastic_trigger, 0.0});
  const double pbar = b.P_bar.m()(0, 0);
  bool touched = false;
  for (std::size_t k = 100; k < log.states.size(); ++k) {
    const double P = log.states[k].P_post.m()(0, 0);
    CHECK(P <= pbar + 1e-6);
    touched = touched || std::abs(P - pbar) <= 0.01;
    if (P > pbar + 1e-6) break;  // avoid flooding output on failure
  }
  CHECK(touched);
}

TEST_CASE("total-rate bracket endpoints", "[analysis]") {
  // u = 0: both bounds vanish
  const auto zero = total_rate_bracket({numerics::SymMatrix(Mat::Identity(1, 1))},
                                  {Mat::Zero(1, 1)});
  CHECK(zero.first == 0.0);
  CHECK(zero.second == 0.0);

  // u = 3, m = 1: lower bound f(3) = 1 - 1/2
  std::vector<numerics::SymMatrix> Pi = {numerics::SymMatrix(Mat::Constant(1, 1, 1.5))};
  std::vector<Mat> Y = {Mat::Constant(1, 1, 2.0)};
  const auto lb = total_rate_bracket(Pi, Y);
  CHECK(lb.first == Catch::Approx(0.5).epsilon(1e-12));
  CHECK(lb.second == Catch::Approx(1.0 - std::exp(-1.5)).epsilon(1e-12));
}

TEST_CASE("achievable uniform designs sit inside the rate bracket", "[analysis]") {
  RngStream rng(1212);
  for (int trial = 0; trial < 20; ++trial) {
    const int sensors = 1 + static_cast<int>(rng.uniform01() * 4);
    std::vector<numerics::SymMatrix> Pi;
    std::vector<Mat> Y;
    double total_rate = 0.0;
    for (int i = 0; i < sensors; ++i) {
      const double pi = 0.2 + 3.0 * rng.uniform01();
      const double y = 0.05 + 2.0 * rng.uniform01();
      Pi.push_back(numerics::SymMatrix(Mat::Constant(1, 1, pi)));
      Y.push_back(Mat::Constant(1, 1, y));
      total_rate += 1.0 - 1.0 / std::sqrt(1.0 + pi * y);
    }
    const auto [lo, hi] = total_rate_bracket(Pi, Y);
    CHECK(lo <= total_rate + 1e-12);
    CHECK(total_rate <= hi + 1e-12);
  }
}
