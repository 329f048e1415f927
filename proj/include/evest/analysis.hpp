#pragma once

#include "evest/trigger.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace evest::analysis {

/// Asymptotic covariance envelope: X_lower/X_upper are the fixed points of
/// the Riccati operator with noise R and R + Y^{-1}; P_bar is the
/// worst-case a-posteriori covariance derived from X_upper.
struct BoundSet {
  numerics::SymMatrix X_lower;
  numerics::SymMatrix X_upper;
  numerics::SymMatrix P_bar;
};

inline BoundSet compute_bounds(const model::SystemModel& m, const trigger::TriggerDesign& d,
                               const numerics::Tolerances& tol = {}) {
  const Mat Y = d.full();
  Eigen::LLT<Mat> llt(Y);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("compute_bounds: Y must be strictly positive definite");
  const Mat Yinv = llt.solve(Mat::Identity(m.s(), m.s()));

  const auto R_sym = numerics::symmetrize(m.R);
  const auto RYinv_sym = numerics::symmetrize(m.R + Yinv);
  const auto Q_sym = numerics::symmetrize(m.Q);

  BoundSet b;
  b.X_lower = numerics::riccati_fixed_point(m.A, m.C, Q_sym, R_sym, tol);
  b.X_upper = numerics::riccati_fixed_point(m.A, m.C, Q_sym, RYinv_sym, tol);

  // P_bar = X_upper - X_upper Cᵀ (C X_upper Cᵀ + R + Y^{-1})^{-1} C X_upper
  const Mat& Xu = b.X_upper.m();
  const Mat XCt = Xu * m.C.transpose();
  const Mat W = m.C * XCt + RYinv_sym.m();
  b.P_bar = numerics::symmetrize(Xu - XCt * W.llt().solve(XCt.transpose()));
  return b;
}

/// Finite-horizon audit of the sandwich X_lower - eps I <= P_k^- <=
/// X_upper + eps I: violation counts after burn-in, closest approach to
/// each envelope (Frobenius distance) and the largest observed trace.
struct BoundCheckReport {
  int violations_lower = 0;
  int violations_upper = 0;
  double closest_to_lower = std::numeric_limits<double>::infinity();
  double closest_to_upper = std::numeric_limits<double>::infinity();
  double max_trace = 0.0;
  int checked_steps = 0;
};

inline BoundCheckReport empirical_bound_check(const std::vector<Mat>& P_prior_seq,
                                              const BoundSet& bounds, double epsilon,
                                              int burn_in) {
  if (static_cast<int>(P_prior_seq.size()) <= burn_in)
    throw std::invalid_argument("empirical_bound_check: trajectory shorter than burn-in");
  BoundCheckReport rep;
  const Mat& Xl = bounds.X_lower.m();
  const Mat& Xu = bounds.X_upper.m();
  for (std::size_t k = static_cast<std::size_t>(burn_in); k < P_prior_seq.size(); ++k) {
    const Mat& P = P_prior_seq[k];
    if (numerics::min_eigenvalue(numerics::symmetrize(P - Xl)) < -epsilon) ++rep.violations_lower;
    if (numerics::min_eigenvalue(numerics::symmetrize(Xu - P)) < -epsilon) ++rep.violations_upper;
    rep.closest_to_lower = std::min(rep.closest_to_lower, (P - Xl).norm());
    rep.closest_to_upper = std::min(rep.closest_to_upper, (P - Xu).norm());
    rep.max_trace = std::max(rep.max_trace, P.trace());
    ++rep.checked_steps;
  }
  return rep;
}

/// f(x) = 1 - (1+x)^{-1/2}: lower rate-bound function.
inline double rate_lower_fn(double x) { return 1.0 - 1.0 / std::sqrt(1.0 + x); }

/// g(x) = 1 - exp(-x/2): upper rate-bound function.
inline double rate_upper_fn(double x) { return 1.0 - std::exp(-0.5 * x); }

/// Bracket on the optimal total communication rate as a function of
/// u = sum_i tr(Pi^{(i)} Y^{(i)}): returns (f(u), m * g(u/m)).
inline std::pair<double, double> total_rate_bracket(
    const std::vector<numerics::SymMatrix>& Pi_blocks, const std::vector<Mat>& Y_blocks) {
  if (Pi_blocks.size() != Y_blocks.size())
    throw std::invalid_argument("total_rate_bracket: block list mismatch");
  if (Pi_blocks.empty()) return {0.0, 0.0};
  double u = 0.0;
  for (std::size_t i = 0; i < Pi_blocks.size(); ++i) {
    if (Pi_blocks[i].dim() != Y_blocks[i].rows())
      throw std::invalid_argument("total_rate_bracket: block dimension mismatch");
    u += (Pi_blocks[i].m() * Y_blocks[i]).trace();
  }
  const double mcount = static_cast<double>(Pi_blocks.size());
  return {rate_lower_fn(u), mcount * rate_upper_fn(u / mcount)};
}

}  // namespace evest::analysis
