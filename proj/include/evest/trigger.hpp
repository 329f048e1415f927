#pragma once

#include "evest/model.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace evest::trigger {

/// Per-sensor trigger parameters Y^{(i)} (PSD, s_i x s_i). The filter
/// needs each block strictly positive definite; regularized() applies the
/// standard Y + eps*I clamp before such use.
struct TriggerDesign {
  std::vector<Mat> blocks;

  static TriggerDesign uniform_scalar(const std::vector<int>& sizes, const std::vector<double>& y) {
    if (sizes.size() != y.size())
      throw std::invalid_argument("TriggerDesign::uniform_scalar: size mismatch");
    TriggerDesign d;
    for (std::size_t i = 0; i < sizes.size(); ++i)
      d.blocks.push_back(y[i] * Mat::Identity(sizes[i], sizes[i]));
    return d;
  }

  TriggerDesign regularized(double eps = 1e-8) const {
    TriggerDesign d;
    for (const Mat& Y : blocks) d.blocks.push_back(Y + eps * Mat::Identity(Y.rows(), Y.cols()));
    return d;
  }

  /// Block-diagonal Y = diag(Y^{(1)}, ..., Y^{(m)}).
  Mat full() const {
    Eigen::Index s = 0;
    for (const Mat& Y : blocks) s += Y.rows();
    Mat out = Mat::Zero(s, s);
    Eigen::Index off = 0;
    for (const Mat& Y : blocks) {
      out.block(off, off, Y.rows(), Y.cols()) = Y;
      off += Y.rows();
    }
    return out;
  }
};

/// Keep/drop outcome for one step: gamma holds the m binary decisions,
/// psi_diag the diagonal of the expanded s x s mask diag(gamma_i I_{s_i}).
struct DecisionVector {
  std::vector<int> gamma;
  Vec psi_diag;

  static DecisionVector from_gamma(std::vector<int> gamma, const std::vector<int>& sizes) {
    if (gamma.size() != sizes.size())
      throw std::invalid_argument("DecisionVector: gamma/sizes mismatch");
    Eigen::Index s = 0;
    for (int sz : sizes) s += sz;
    DecisionVector d;
    d.psi_diag = Vec::Zero(s);
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < gamma.size(); ++i) {
      if (gamma[i] != 0 && gamma[i] != 1)
        throw std::invalid_argument("DecisionVector: gamma entries must be 0/1");
      d.psi_diag.segment(off, sizes[i]).setConstant(gamma[i]);
      off += sizes[i];
    }
    d.gamma = std::move(gamma);
    return d;
  }

  static DecisionVector all_transmit(const std::vector<int>& sizes) {
    return from_gamma(std::vector<int>(sizes.size(), 1), sizes);
  }
  static DecisionVector all_drop(const std::vector<int>& sizes) {
    return from_gamma(std::vector<int>(sizes.size(), 0), sizes);
  }

  int num_transmitting() const {
    int c = 0;
    for (int g : gamma) c += g;
    return c;
  }
};

/// Drop probability phi^{(i)}(y) = exp(-1/2 yᵀ Y^{(i)} y); in (0, 1].
inline double phi(int i, const Vec& y_i, const TriggerDesign& d) {
  const Mat& Y = d.blocks.at(i);
  if (y_i.size() != Y.rows())
    throw std::invalid_argument("phi: measurement dimension does not match trigger block");
  return std::exp(-0.5 * y_i.dot(Y * y_i));
}

/// One independent zeta stream per sensor, derived from a master seed by
/// sensor index. Keeps trials reproducible under parallel execution.
struct SensorStreams {
  std::vector<RngStream> streams;

  static SensorStreams from_seed(std::uint64_t seed, int num_sensors) {
    SensorStreams s;
    for (int i = 0; i < num_sensors; ++i)
      s.streams.push_back(RngStream::substream(seed, static_cast<std::uint64_t>(i)));
    return s;
  }
};

/// Stochastic trigger of the scheduler: sensor i draws zeta uniform on
/// [0,1] and keeps the measurement (gamma = 1) iff zeta > phi(y^{(i)}).
inline DecisionVector draw_decisions(const Vec& y_full, const model::SystemModel& m,
                                     const TriggerDesign& d, SensorStreams& zeta) {
  if (static_cast<int>(d.blocks.size()) != m.num_sensors() ||
      static_cast<int>(zeta.streams.size()) != m.num_sensors())
    throw std::invalid_argument("draw_decisions: sensor count mismatch");
  std::vector<int> gamma(m.num_sensors());
  for (int i = 0; i < m.num_sensors(); ++i) {
    const Vec y_i = y_full.segment(m.offsets[i], m.sizes[i]);
    const double z = zeta.streams[i].uniform01();
    gamma[i] = (z <= phi(i, y_i, d)) ? 0 : 1;
  }
  return DecisionVector::from_gamma(std::move(gamma), m.sizes);
}

/// Closed-form stationary communication rate
///   lambda^{(i)} = 1 - det(I + Pi^{(i)} Y^{(i)})^{-1/2}.
inline double comm_rate(int i, const model::StationaryStats& stats, const TriggerDesign& d) {
  const Mat& Pi = stats.Pi_blocks.at(i).m();
  const Mat& Y = d.blocks.at(i);
  if (Pi.rows() != Y.rows()) throw std::invalid_argument("comm_rate: block dimension mismatch");
  const Mat M = Mat::Identity(Pi.rows(), Pi.rows()) + Pi * Y;
  const double det = M.partialPivLu().determinant();
  // det >= 1 for PSD arguments; the clamp only absorbs roundoff at Y ~ 0
  return std::max(0.0, 1.0 - 1.0 / std::sqrt(det));
}

/// Inverts the rate formula for the uniform design Y^{(i)} = y I:
/// bisection on y, bracket grown by doubling, until the achieved rate is
/// within 1e-10 of the target.
inline double rate_to_scalar_y(int i, const model::StationaryStats& stats, double target_rate) {
  if (target_rate < 0.0 || target_rate >= 1.0)
    throw std::invalid_argument("rate_to_scalar_y: target rate must lie in [0, 1)");
  if (target_rate == 0.0) return 0.0;

  const int si = static_cast<int>(stats.Pi_blocks.at(i).dim());
  const auto rate_of = [&](double y) {
    TriggerDesign d;
    d.blocks.assign(stats.Pi_blocks.size(), Mat());
    d.blocks[i] = y * Mat::Identity(si, si);
    return comm_rate(i, stats, d);
  };

  double lo = 0.0, hi = 1.0;
  while (rate_of(hi) < target_rate) {
    hi *= 2.0;
    if (hi > 1e300) throw std::runtime_error("rate_to_scalar_y: failed to bracket target rate");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double r = rate_of(mid);
    if (std::abs(r - target_rate) <= 1e-10) return mid;
    (r < target_rate ? lo : hi) = mid;
  }
  throw std::runtime_error("rate_to_scalar_y: bisection did not reach tolerance");
}

}  // namespace evest::trigger
