#pragma once

#include "evest/trigger.hpp"

#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <utility>
#include <vector>

namespace evest::filter {

/// A-priori and a-posteriori estimate at step k. P_post never exceeds
/// P_prior in the Loewner order after a measurement update.
struct EstimatorState {
  Vec x_prior;
  Vec x_post;
  numerics::SymMatrix P_prior;
  numerics::SymMatrix P_post;
  int k = 0;
};

/// Prior at k = 0: x ~ N(0, Sigma0).
inline EstimatorState initial_state(const model::SystemModel& m) {
  EstimatorState st;
  st.x_prior = Vec::Zero(m.n());
  st.P_prior = numerics::symmetrize(m.Sigma0);
  st.x_post = st.x_prior;
  st.P_post = st.P_prior;
  st.k = 0;
  return st;
}

/// What actually crossed the channel at one step: the decision vector and
/// the transmitted sub-vector stacked in sensor order (possibly empty).
struct TransmissionRecord {
  trigger::DecisionVector decision;
  Vec values;

  static TransmissionRecord from_measurement(const Vec& y_full, trigger::DecisionVector dec,
                                             const model::SystemModel& m) {
    if (y_full.size() != m.s() || static_cast<int>(dec.gamma.size()) != m.num_sensors())
      throw std::invalid_argument("TransmissionRecord: measurement/decision dimension mismatch");
    TransmissionRecord rec;
    Eigen::Index total = 0;
    for (int i = 0; i < m.num_sensors(); ++i)
      if (dec.gamma[i]) total += m.sizes[i];
    rec.values.resize(total);
    Eigen::Index off = 0;
    for (int i = 0; i < m.num_sensors(); ++i) {
      if (!dec.gamma[i]) continue;
      rec.values.segment(off, m.sizes[i]) = y_full.segment(m.offsets[i], m.sizes[i]);
      off += m.sizes[i];
    }
    rec.decision = std::move(dec);
    return rec;
  }

  /// Transmitted values placed in their block positions, zeros elsewhere.
  /// The zeros are annihilated by the Psi mask in the update.
  Vec expand(const model::SystemModel& m) const {
    Vec y = Vec::Zero(m.s());
    Eigen::Index off = 0;
    for (int i = 0; i < m.num_sensors(); ++i) {
      if (!decision.gamma[i]) continue;
      y.segment(m.offsets[i], m.sizes[i]) = values.segment(off, m.sizes[i]);
      off += m.sizes[i];
    }
    return y;
  }
};

/// Time update: x^- = A x, P^- = A P Aᵀ + Q.
inline EstimatorState time_update(const EstimatorState& st, const model::SystemModel& m) {
  EstimatorState out;
  out.x_prior = m.A * st.x_post;
  out.P_prior = numerics::symmetrize(m.A * st.P_post.m() * m.A.transpose() + m.Q);
  out.x_post = out.x_prior;
  out.P_post = out.P_prior;
  out.k = st.k + 1;
  return out;
}

namespace detail {

/// Block diagonal of (I - Psi) Y^{-1}: inv(Y^{(i)}) where sensor i
/// dropped, zero where it transmitted. Only dropped blocks are inverted.
inline Mat masked_inverse_penalty(const model::SystemModel& m, const trigger::TriggerDesign& d,
                                  const trigger::DecisionVector& dec) {
  Mat out = Mat::Zero(m.s(), m.s());
  for (int i = 0; i < m.num_sensors(); ++i) {
    if (dec.gamma[i]) continue;
    const Mat& Y = d.blocks.at(i);
    Eigen::LLT<Mat> llt(Y);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error(
          "measurement_update: singular effective noise (trigger block " + std::to_string(i) +
          " is not strictly positive definite)");
    out.block(m.offsets[i], m.offsets[i], m.sizes[i], m.sizes[i]) =
        llt.solve(Mat::Identity(m.sizes[i], m.sizes[i]));
  }
  return out;
}

inline EstimatorState kalman_core(const EstimatorState& st, const Mat& C, const Mat& noise,
                                  const Vec& innovation) {
  const Mat PCt = st.P_prior.m() * C.transpose();
  const Mat W = C * PCt + noise;
  Eigen::LLT<Mat> llt(W);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("measurement_update: innovation covariance is singular");
  const Mat K = llt.solve(PCt.transpose()).transpose();  // P^- Cᵀ W^{-1}

  EstimatorState out = st;
  out.x_post = st.x_prior + K * innovation;
  out.P_post = numerics::symmetrize(st.P_prior.m() - K * C * st.P_prior.m());
  return out;
}

}  // namespace detail

/// Measurement update of the event-triggered MMSE filter: a Kalman update
/// with effective sensor noise R + (I - Psi) Y^{-1} and innovation
/// Psi y - C x^-. Drops therefore shrink the estimate toward the prior
/// mean scaled by what the silence reveals.
inline EstimatorState measurement_update(const EstimatorState& st, const model::SystemModel& m,
                                         const trigger::TriggerDesign& d,
                                         const TransmissionRecord& rec) {
  if (static_cast<int>(rec.decision.gamma.size()) != m.num_sensors())
    throw std::invalid_argument("measurement_update: record does not match model");
  const Mat noise = m.R + detail::masked_inverse_penalty(m, d, rec.decision);
  const Vec psi_y = rec.decision.psi_diag.asDiagonal() * rec.expand(m);
  return detail::kalman_core(st, m.C, noise, psi_y - m.C * st.x_prior);
}

/// Classical Kalman measurement update on the full stacked sensor.
inline EstimatorState standard_kalman_update(const EstimatorState& st,
                                             const model::SystemModel& m, const Vec& y_full) {
  if (y_full.size() != m.s())
    throw std::invalid_argument("standard_kalman_update: measurement dimension mismatch");
  return detail::kalman_core(st, m.C, m.R, y_full - m.C * st.x_prior);
}

/// Baseline estimator for schedules whose decisions are independent of the
/// measurements: updates with the received rows of C and the matching
/// principal sub-block of R, and ignores drops entirely.
inline EstimatorState intermittent_update(const EstimatorState& st, const model::SystemModel& m,
                                          const TransmissionRecord& rec) {
  const int received = static_cast<int>(rec.values.size());
  if (received == 0) {
    EstimatorState out = st;
    out.x_post = st.x_prior;
    out.P_post = st.P_prior;
    return out;
  }
  Mat C_sub(received, m.n());
  Mat R_sub(received, received);
  std::vector<int> rows;
  rows.reserve(received);
  for (int i = 0; i < m.num_sensors(); ++i) {
    if (!rec.decision.gamma[i]) continue;
    for (int r = 0; r < m.sizes[i]; ++r) rows.push_back(m.offsets[i] + r);
  }
  for (int a = 0; a < received; ++a) {
    C_sub.row(a) = m.C.row(rows[a]);
    for (int b = 0; b < received; ++b) R_sub(a, b) = m.R(rows[a], rows[b]);
  }
  return detail::kalman_core(st, C_sub, R_sub, rec.values - C_sub * st.x_prior);
}

enum class ScheduleKind { stochastic_trigger, random_bernoulli, always_transmit };

struct Schedule {
  ScheduleKind kind = ScheduleKind::stochastic_trigger;
  double bernoulli_rate = 1.0;  // used by random_bernoulli only
};

struct TrajectoryLog {
  std::vector<Vec> x_true;
  std::vector<EstimatorState> states;
  std::vector<TransmissionRecord> records;
};

/// Simulates the plant for `horizon` steps, draws decisions according to
/// the schedule and runs the matching estimator. The plant stream and the
/// per-sensor decision streams are derived from `seed` by fixed indices.
inline TrajectoryLog run_trajectory(const model::SystemModel& m, const trigger::TriggerDesign& d,
                                    int horizon, std::uint64_t seed, const Schedule& sched) {
  RngStream plant_stream = RngStream::substream(seed, 0);
  auto sensor_streams = trigger::SensorStreams::from_seed(
      RngStream::substream(seed, 1).next_u64(), m.num_sensors());

  const model::PlantTrajectory plant = simulate_plant(m, horizon, plant_stream);

  TrajectoryLog log;
  log.x_true = plant.x;
  log.states.reserve(horizon);
  log.records.reserve(horizon);

  EstimatorState st = initial_state(m);
  for (int k = 0; k < horizon; ++k) {
    if (k > 0) st = time_update(st, m);
    const Vec& y = plant.y[k];

    trigger::DecisionVector dec;
    switch (sched.kind) {
      case ScheduleKind::stochastic_trigger:
        dec = trigger::draw_decisions(y, m, d, sensor_streams);
        break;
      case ScheduleKind::random_bernoulli: {
        std::vector<int> gamma(m.num_sensors());
        for (int i = 0; i < m.num_sensors(); ++i)
          gamma[i] = sensor_streams.streams[i].uniform01() < sched.bernoulli_rate ? 1 : 0;
        dec = trigger::DecisionVector::from_gamma(std::move(gamma), m.sizes);
        break;
      }
      case ScheduleKind::always_transmit:
        dec = trigger::DecisionVector::all_transmit(m.sizes);
        break;
    }
    TransmissionRecord rec = TransmissionRecord::from_measurement(y, std::move(dec), m);

    switch (sched.kind) {
      case ScheduleKind::stochastic_trigger:
        st = measurement_update(st, m, d, rec);
        break;
      case ScheduleKind::random_bernoulli:
        st = intermittent_update(st, m, rec);
        break;
      case ScheduleKind::always_transmit:
        st = standard_kalman_update(st, m, y);
        break;
    }
    log.states.push_back(st);
    log.records.push_back(std::move(rec));
  }
  return log;
}

/// Per-step trace export: k, the gamma vector, trace P^-, trace P and the
/// squared estimation error of the posterior mean.
inline void write_trace_csv(std::ostream& os, const TrajectoryLog& log) {
  os << "k";
  if (!log.records.empty())
    for (std::size_t i = 0; i < log.records[0].decision.gamma.size(); ++i) os << ",gamma" << i;
  os << ",trace_P_prior,trace_P_post,squared_error\n";
  char buf[64];
  for (std::size_t k = 0; k < log.states.size(); ++k) {
    os << k;
    for (int g : log.records[k].decision.gamma) os << ',' << g;
    const double err2 = (log.x_true[k] - log.states[k].x_post).squaredNorm();
    std::snprintf(buf, sizeof buf, ",%.17g", log.states[k].P_prior.m().trace());
    os << buf;
    std::snprintf(buf, sizeof buf, ",%.17g", log.states[k].P_post.m().trace());
    os << buf;
    std::snprintf(buf, sizeof buf, ",%.17g", err2);
    os << buf << '\n';
  }
}

}  // namespace evest::filter
