#include "evest/design.hpp"

#include "test_support.hpp"

#include <cmath>

using namespace evest;
using namespace evest::design;
using trigger::TriggerDesign;

namespace {

// scalar helpers, independent of the library's Riccati path: closed-form
// quadratic root for the fixed point and a bisection over the trigger gain

double riccati_root(double a, double c, double q, double w) {
  const double A = c * c;
  const double B = w - a * a * w - q * c * c;
  const double C = -q * w;
  return (-B + std::sqrt(B * B - 4 * A * C)) / (2 * A);
}

double scalar_pbar(double a, double c, double q, double r, double y) {
  const double w = r + 1.0 / y;
  const double Xu = riccati_root(a, c, q, w);
  return Xu * w / (c * c * Xu + w);
}

struct ScalarOracle {
  bool feasible = false;
  double y_star = 0.0;
  double objective = 0.0;
};

ScalarOracle scalar_bisection_oracle(double a, double c, double q, double r, double pi,
                                     double delta) {
  ScalarOracle out;
  const double sigma = q / (1.0 - a * a);
  if (delta >= sigma) {
    out.feasible = true;
    return out;  // y* = 0, objective 0
  }
  const double x_lo = riccati_root(a, c, q, r);
  const double p_min = x_lo * r / (c * c * x_lo + r);
  if (delta <= p_min) return out;  // unreachable even with y -> infinity

  double lo = 1e-12, hi = 1.0;
  while (scalar_pbar(a, c, q, r, hi) > delta) hi *= 2.0;
  for (int it = 0; it < 300; ++it) {
    const double mid = 0.5 * (lo + hi);
    (scalar_pbar(a, c, q, r, mid) > delta ? lo : hi) = mid;
  }
  out.feasible = true;
  out.y_star = hi;
  out.objective = pi * hi;
  return out;
}

model::SystemModel scalar_custom(double a, double c, double q, double r) {
  return model::make_model(Mat::Constant(1, 1, a), {Mat::Constant(1, 1, c)},
                           Mat::Constant(1, 1, q), Mat::Constant(1, 1, r),
                           Mat::Constant(1, 1, q / (1.0 - a * a)));
}

model::SystemModel two_state_two_sensor() {
  Mat A(2, 2);
  A << 0.6, 0.15, -0.1, 0.7;
  Mat Q(2, 2);
  Q << 0.5, 0.1, 0.1, 0.4;
  Mat C1(1, 2), C2(1, 2);
  C1 << 1.0, 0.2;
  C2 << -0.3, 0.8;
  Mat R(2, 2);
  R << 0.6, 0.1, 0.1, 0.9;
  const Mat S0 = numerics::solve_lyapunov(A, numerics::symmetrize(Q)).m();
  return model::make_model(A, {C1, C2}, Q, R, S0);
}

}  // namespace

TEST_CASE("build_lmi assembles the hand-checked scalar block matrix", "[design]") {
  const auto m = scalar_custom(0.5, 1.0, 1.0, 1.0);
  const auto prob = SDPProblem::make(m, numerics::SymMatrix(Mat::Identity(1, 1)));
  const double sigma = 0.3;
  const Mat lmi = build_lmi(prob, {Mat::Identity(1, 1)}, Mat::Constant(1, 1, sigma));
  Mat expect(3, 3);
  expect << 2.0 - sigma, 0.5, 1.0, 0.5, 0.25 + sigma, 0.0, 1.0, 0.0, 2.0;
  CHECK(test_support::max_abs_diff(lmi, expect) < 1e-12);
}

TEST_CASE("build_lmi trailing block is Y + R^{-1} and the output is symmetric", "[design]") {
  const auto m = two_state_two_sensor();
  const auto prob = SDPProblem::make(m, numerics::SymMatrix(Mat::Identity(2, 2)));
  RngStream rng(88);
  const Mat Y0 = test_support::random_psd(rng, 1, 0.1);
  const Mat Y1 = test_support::random_psd(rng, 1, 0.1);
  const Mat S = test_support::random_psd(rng, 2, 0.1);
  const Mat lmi = build_lmi(prob, {Y0, Y1}, S);

  CHECK((lmi - lmi.transpose()).cwiseAbs().maxCoeff() == 0.0);
  const Mat Rinv = m.R.llt().solve(Mat::Identity(2, 2));
  Mat Yfull = Mat::Zero(2, 2);
  Yfull(0, 0) = Y0(0, 0);
  Yfull(1, 1) = Y1(0, 0);
  CHECK(test_support::max_abs_diff(lmi.block(4, 4, 2, 2), Yfull + Rinv) < 1e-12);
}

TEST_CASE("slack bound drives the optimal trigger to zero", "[design]") {
  const auto m = test_support::scalar_model();  // stationary variance 4/3
  const auto prob = SDPProblem::make(m, numerics::SymMatrix(Mat::Constant(1, 1, 2.0)));
  const auto sol = solve_sdp(prob);
  REQUIRE(sol.status == SolveStatus::optimal);
  CHECK(sol.objective <= 1e-6);
}

TEST_CASE("bound below the full-information posterior is certified infeasible", "[design]") {
  const auto m = test_support::scalar_model();
  const double x_lo = riccati_root(0.5, 1, 1, 1);
  const double p_min = x_lo / (x_lo + 1.0);
  const auto prob =
      SDPProblem::make(m, numerics::SymMatrix(Mat::Constant(1, 1, 0.5 * p_min)));
  const auto sol = solve_sdp(prob);
  CHECK(sol.status == SolveStatus::infeasible);
}

TEST_CASE("mid-range bounds match the scalar bisection oracle", "[design]") {
  const auto m = test_support::scalar_model();
  const double pi = 7.0 / 3.0;
  for (double delta : {0.66, 0.8, 1.0, 1.2}) {
    const auto oracle = scalar_bisection_oracle(0.5, 1, 1, 1, pi, delta);
    REQUIRE(oracle.feasible);
    const auto prob = SDPProblem::make(m, numerics::SymMatrix(Mat::Constant(1, 1, delta)));
    const auto sol = solve_sdp(prob);
    REQUIRE(sol.status == SolveStatus::optimal);
    CHECK(std::abs(sol.objective - oracle.objective) <= 1e-6 * (1.0 + oracle.objective));
  }
}

TEST_CASE("verify_design accepts optima and flags undersized triggers", "[design]") {
  const auto m = test_support::scalar_model();
  const double delta = 0.8;
  const auto prob = SDPProblem::make(m, numerics::SymMatrix(Mat::Constant(1, 1, delta)));
  const auto sol = solve_sdp(prob);
  REQUIRE(sol.status == SolveStatus::optimal);
  const auto rep = verify_design(prob, sol);
  CHECK(rep.ok);
  CHECK(rep.pbar_margin >= -1e-6);
  REQUIRE(rep.rates.size() == 1);
  const auto stats = model::stationary_stats(m);
  CHECK(rep.rates[0] ==
        Catch::Approx(trigger::comm_rate(0, stats, TriggerDesign{sol.Y_blocks})).margin(1e-12));

  // an undersized trigger (half the optimal gain) violates the bound
  const auto oracle = scalar_bisection_oracle(0.5, 1, 1, 1, 7.0 / 3.0, delta);
  SDPSolution bad = sol;
  bad.Y_blocks = {Mat::Constant(1, 1, 0.5 * oracle.y_star)};
  const auto bad_rep = verify_design(prob, bad);
  CHECK_FALSE(bad_rep.ok);
  REQUIRE_FALSE(bad_rep.failures.empty());
  CHECK(bad_rep.failures[0].find("P_bar") != std::string::npos);
}

TEST_CASE("LMI feasibility agrees with the direct P_bar comparison", "[design]") {
  const auto m = two_state_two_sensor();
  const double delta = 0.45;
  const auto prob =
      SDPProblem::make(m, numerics::SymMatrix(Mat(delta * Mat::Identity(2, 2))));

  int checked = 0;
  for (double y0 : {0.05, 0.3, 1.0, 4.0, 15.0}) {
    for (double y1 : {0.05, 0.3, 1.0, 4.0, 15.0}) {
      const std::vector<Mat> Y = {Mat::Constant(1, 1, y0), Mat::Constant(1, 1, y1)};
      const auto b = analysis::compute_bounds(m, TriggerDesign{Y});
      const double margin = numerics::min_eigenvalue(
          numerics::symmetrize(prob.Delta.m() - b.P_bar.m()));
      if (std::abs(margin) < 1e-7) continue;  // skip razor-thin boundary cases
      const bool direct = margin >= 0.0;
      const bool via_lmi = lmi_feasible_with_some_s(prob, Y);
      CHECK(direct == via_lmi);

      // the inverse of the recomputed bound certifies feasible points as S
      if (direct) {
        const Mat S = b.P_bar.m().llt().solve(Mat::Identity(2, 2));
        const Mat lmi = build_lmi(prob, Y, (S + S.transpose()) * 0.5);
        CHECK(numerics::min_eigenvalue(numerics::symmetrize(lmi)) >=
              -1e-7 * (1.0 + lmi.norm()));
      }
      ++checked;
    }
  }
  CHECK(checked >= 20);
}

TEST_CASE("solved instances respect the rate-bracket lower bound", "[design]") {
  const auto m = two_state_two_sensor();
  const auto stats = model::stationary_stats(m);
  for (double delta : {0.5, 0.7, 1.0}) {
    const auto prob =
        SDPProblem::make(m, numerics::SymMatrix(Mat(delta * Mat::Identity(2, 2))));
    const auto sol = solve_sdp(prob);
    if (sol.status != SolveStatus::optimal) continue;
    double total_rate = 0.0;
    for (int i = 0; i < m.num_sensors(); ++i)
      total_rate += trigger::comm_rate(i, stats, TriggerDesign{sol.Y_blocks});
    CHECK(analysis::rate_lower_fn(sol.objective) <= total_rate + 1e-9);
  }
}

TEST_CASE("delta sweep is monotone and degenerates correctly", "[design]") {
  const auto m = test_support::scalar_model();
  const std::vector<double> grid = {0.66, 0.8, 1.0, 1.3, 2.0, 100.0};
  const auto sweep = sweep_designs(m, grid);
  REQUIRE(sweep.size() == grid.size());
  for (std::size_t i = 0; i + 1 < sweep.size(); ++i) {
    REQUIRE(sweep[i].status == SolveStatus::optimal);
    CHECK(sweep[i].avg_rate >= sweep[i + 1].avg_rate - 1e-6);
    CHECK(sweep[i].objective >= sweep[i + 1].objective - 1e-6);
  }
  CHECK(sweep.back().avg_rate <= 1e-3);

  const auto single = sweep_designs(m, {0.8});
  const auto direct =
      solve_sdp(SDPProblem::make(m, numerics::SymMatrix(Mat::Constant(1, 1, 0.8))));
  CHECK(std::abs(single[0].objective - direct.objective) <= 1e-9 * (1.0 + direct.objective));

  CHECK_THROWS_AS(sweep_designs(m, {-1.0}), std::invalid_argument);
}

TEST_CASE("solution invariants hold at optimality", "[design]") {
  const auto m = two_state_two_sensor();
  const auto prob =
      SDPProblem::make(m, numerics::SymMatrix(Mat(0.6 * Mat::Identity(2, 2))));
  const auto sol = solve_sdp(prob);
  REQUIRE(sol.status == SolveStatus::optimal);

  const Mat lmi = build_lmi(prob, sol.Y_blocks, sol.S);
  CHECK(numerics::min_eigenvalue(numerics::symmetrize(lmi)) >= -1e-7 * (1.0 + lmi.norm()));
  const Mat delta_inv = prob.Delta.m().llt().solve(Mat::Identity(2, 2));
  CHECK(numerics::min_eigenvalue(numerics::symmetrize(sol.S - delta_inv)) >= -1e-7);
  for (const Mat& Y : sol.Y_blocks)
    CHECK(numerics::min_eigenvalue(numerics::symmetrize(Y)) >= -1e-9);
}
