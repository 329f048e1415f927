#include "evest/trigger.hpp"

#include "evest/filter.hpp"
#include "test_support.hpp"

#include <vector>

using namespace evest;
using namespace evest::trigger;

TEST_CASE("phi is the scaled-Gaussian drop probability", "[trigger]") {
  TriggerDesign d;
  d.blocks = {Mat::Constant(1, 1, 2.0)};
  CHECK(phi(0, Vec::Zero(1), d) == 1.0);
  CHECK(phi(0, Vec::Constant(1, 1.0), d) == Catch::Approx(std::exp(-1.0)).epsilon(1e-14));
  CHECK(phi(0, Vec::Constant(1, 50.0), d) < 1e-12);
  CHECK_THROWS_AS(phi(0, Vec::Zero(2), d), std::invalid_argument);
}

TEST_CASE("decision masks are idempotent and consistent with gamma", "[trigger]") {
  const std::vector<int> sizes = {1, 2, 3};
  const auto dec = DecisionVector::from_gamma({1, 0, 1}, sizes);
  REQUIRE(dec.psi_diag.size() == 6);
  // idempotent diagonal: every entry is 0 or 1
  for (int i = 0; i < 6; ++i) CHECK(dec.psi_diag[i] * dec.psi_diag[i] == dec.psi_diag[i]);
  // blocks agree with gamma
  CHECK(dec.psi_diag[0] == 1);
  CHECK(dec.psi_diag[1] == 0);
  CHECK(dec.psi_diag[2] == 0);
  CHECK(dec.psi_diag[3] == 1);
  CHECK(dec.num_transmitting() == 2);
  CHECK_THROWS_AS(DecisionVector::from_gamma({2, 0, 0}, sizes), std::invalid_argument);
}

TEST_CASE("zero trigger block never transmits", "[trigger]") {
  const auto m = test_support::scalar_model();
  TriggerDesign d;
  d.blocks = {Mat::Zero(1, 1)};
  auto streams = SensorStreams::from_seed(5, 1);
  RngStream plant(6);
  const auto traj = model::simulate_plant(m, 200, plant);
  for (const Vec& y : traj.y) {
    const auto dec = draw_decisions(y, m, d, streams);
    CHECK(dec.gamma[0] == 0);
  }
}

TEST_CASE("zero measurement is always dropped", "[trigger]") {
  const auto m = test_support::scalar_two_sensor_model();
  TriggerDesign d = TriggerDesign::uniform_scalar(m.sizes, {1.0, 2.0});
  auto streams = SensorStreams::from_seed(5, 2);
  for (int k = 0; k < 100; ++k) {
    const auto dec = draw_decisions(Vec::Zero(2), m, d, streams);
    CHECK(dec.gamma[0] == 0);
    CHECK(dec.gamma[1] == 0);
  }
}

TEST_CASE("empirical drop frequency matches phi", "[trigger]") {
  const auto m = test_support::scalar_model();
  TriggerDesign d = TriggerDesign::uniform_scalar(m.sizes, {0.9});
  Vec y = Vec::Constant(1, 1.1);
  const double expect = phi(0, y, d);
  auto streams = SensorStreams::from_seed(31, 1);
  int drops = 0;
  const int T = 100000;
  for (int k = 0; k < T; ++k) drops += draw_decisions(y, m, d, streams).gamma[0] == 0 ? 1 : 0;
  CHECK(static_cast<double>(drops) / T == Catch::Approx(expect).margin(0.01));
}

TEST_CASE("comm_rate closed form", "[trigger]") {
  const auto m = test_support::scalar_model();
  const auto stats = model::stationary_stats(m);

  TriggerDesign zero;
  zero.blocks = {Mat::Zero(1, 1)};
  CHECK(comm_rate(0, stats, zero) == 0.0);

  // 1 + Pi y = 1 + (7/3)(9/7) = 4, so lambda = 1 - 1/2
  TriggerDesign d = TriggerDesign::uniform_scalar(m.sizes, {9.0 / 7.0});
  CHECK(comm_rate(0, stats, d) == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("empirical transmit fraction matches the rate formula", "[trigger]") {
  const auto m = test_support::scalar_model();
  TriggerDesign d = TriggerDesign::uniform_scalar(m.sizes, {9.0 / 7.0});
  const auto log = filter::run_trajectory(m, d, 100000, 12345,
                                          {filter::ScheduleKind::stochastic_trigger, 0.0});
  long tx = 0;
  for (const auto& rec : log.records) tx += rec.decision.gamma[0];
  CHECK(static_cast<double>(tx) / log.records.size() == Catch::Approx(0.5).margin(0.01));
}

TEST_CASE("rate_to_scalar_y inverts the rate formula", "[trigger]") {
  const auto m = test_support::scalar_model();
  const auto stats = model::stationary_stats(m);

  CHECK(rate_to_scalar_y(0, stats, 0.0) == 0.0);

  // closed-form inversion: det(1 + Pi y) = (1 - lambda)^{-2}
  const double y = rate_to_scalar_y(0, stats, 0.5);
  CHECK(y == Catch::Approx(9.0 / 7.0).margin(1e-8));

  RngStream rng(17);
  for (int trial = 0; trial < 8; ++trial) {
    const double target = 0.05 + 0.9 * rng.uniform01();
    const double yy = rate_to_scalar_y(0, stats, target);
    TriggerDesign d = TriggerDesign::uniform_scalar(m.sizes, {yy});
    CHECK(std::abs(comm_rate(0, stats, d) - target) <= 1e-10);
  }

  CHECK_THROWS_AS(rate_to_scalar_y(0, stats, 1.0), std::invalid_argument);
}

TEST_CASE("rate is monotone in the trigger parameter (Loewner order)", "[trigger]") {
  RngStream rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    model::StationaryStats stats{
        numerics::SymMatrix(Mat::Identity(1, 1)),
        {numerics::symmetrize(test_support::random_psd(rng, 2, 0.3))}};
    const Mat Y1 = test_support::random_psd(rng, 2, 0.01);
    const Mat Y2 = Y1 + test_support::random_psd(rng, 2, 0.01);
    TriggerDesign d1{{Y1}}, d2{{Y2}};
    const double l1 = comm_rate(0, stats, d1);
    const double l2 = comm_rate(0, stats, d2);
    CHECK(l1 <= l2 + 1e-12);
    CHECK(l1 >= 0.0);
    CHECK(l2 < 1.0);
  }
}

TEST_CASE("single sample path rates converge (finite-horizon surrogate)", "[trigger]") {
  const auto m = test_support::scalar_two_sensor_model();
  const auto stats = model::stationary_stats(m);
  // choose per-sensor rates in [0.3, 0.7]
  const double y0 = rate_to_scalar_y(0, stats, 0.4);
  const double y1 = rate_to_scalar_y(1, stats, 0.6);
  TriggerDesign d = TriggerDesign::uniform_scalar(m.sizes, {y0, y1});

  const int T = 100000;
  const auto log = filter::run_trajectory(m, d, T, 999,
                                          {filter::ScheduleKind::stochastic_trigger, 0.0});
  long tx0 = 0, tx1 = 0;
  int all_drop_run = 0, all_tx_run = 0;
  bool saw_drop_run = false, saw_tx_run = false;
  for (const auto& rec : log.records) {
    tx0 += rec.decision.gamma[0];
    tx1 += rec.decision.gamma[1];
    const bool all_drop = rec.decision.gamma[0] == 0 && rec.decision.gamma[1] == 0;
    const bool all_tx = rec.decision.gamma[0] == 1 && rec.decision.gamma[1] == 1;
    all_drop_run = all_drop ? all_drop_run + 1 : 0;
    all_tx_run = all_tx ? all_tx_run + 1 : 0;
    saw_drop_run = saw_drop_run || all_drop_run >= 3;
    saw_tx_run = saw_tx_run || all_tx_run >= 3;
  }
  CHECK(static_cast<double>(tx0) / T == Catch::Approx(0.4).margin(0.01));
  CHECK(static_cast<double>(tx1) / T == Catch::Approx(0.6).margin(0.01));
  CHECK(saw_drop_run);
  CHECK(saw_tx_run);
}
