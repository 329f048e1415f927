#pragma once

#include "evest/numerics.hpp"
#include "evest/rng.hpp"

#include <Eigen/Cholesky>

#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace evest::model {

struct ValidationReport {
  std::vector<std::string> violations;
  std::vector<std::string> notes;

  bool ok() const { return violations.empty(); }

  std::string summary() const {
    std::ostringstream os;
    if (ok()) {
      os << "model valid";
    } else {
      os << "model invalid:";
      for (const auto& v : violations) os << "\n  - " << v;
    }
    for (const auto& n : notes) os << "\n  note: " << n;
    return os.str();
  }
};

/// Plant x_{k+1} = A x_k + w_k, y_k^{(i)} = C^{(i)} x_k + v_k^{(i)},
/// w ~ N(0,Q), v ~ N(0,R) (cross-sensor correlation allowed in R),
/// x_0 ~ N(0, Sigma0). Build through make_model so the Cholesky factors
/// used for sampling are cached once.
struct SystemModel {
  Mat A;
  std::vector<Mat> sensor_blocks;  // C^{(i)}, each s_i x n
  Mat Q;                           // n x n process noise covariance
  Mat R;                           // s x s measurement noise covariance
  Mat Sigma0;                      // n x n initial state covariance

  // derived, filled by make_model
  Mat C;                    // stacked s x n
  std::vector<int> sizes;   // s_i
  std::vector<int> offsets; // row offset of sensor i in the stacked vector
  Mat chol_Q, chol_R, chol_Sigma0;  // lower factors

  int n() const { return static_cast<int>(A.rows()); }
  int s() const { return static_cast<int>(C.rows()); }
  int num_sensors() const { return static_cast<int>(sensor_blocks.size()); }

  /// i-th diagonal block of R (the marginal noise covariance of sensor i).
  Mat sensor_noise_block(int i) const {
    return R.block(offsets[i], offsets[i], sizes[i], sizes[i]);
  }
};

namespace detail {

inline bool strictly_pd(const Mat& M, Mat* lower = nullptr) {
  if (M.rows() != M.cols() || M.rows() < 1) return false;
  const double scale = 1.0 + M.cwiseAbs().maxCoeff();
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) return false;
  Eigen::LLT<Mat> llt(M);
  if (llt.info() != Eigen::Success) return false;
  if (lower) *lower = llt.matrixL();
  return true;
}

}  // namespace detail

/// Checks every SystemModel invariant and names each violation.
/// Detectability of (A, C) follows from the stability requirement and is
/// reported as a note rather than tested separately.
inline ValidationReport validate(const SystemModel& m) {
  ValidationReport rep;
  const Eigen::Index n = m.A.rows();

  if (m.A.cols() != n || n < 1) {
    rep.violations.push_back("A must be square with dim >= 1");
    return rep;  // nothing downstream is well-defined
  }

  const double rho = numerics::spectral_radius(m.A);
  if (rho >= 1.0) {
    std::ostringstream os;
    os << "spectral radius >= 1 (rho(A) = " << rho << ")";
    rep.violations.push_back(os.str());
  }

  if (!detail::strictly_pd(m.Q)) rep.violations.push_back("Q not positive definite");
  if (!detail::strictly_pd(m.Sigma0)) rep.violations.push_back("Sigma0 not positive definite");
  if (m.Q.rows() != n) rep.violations.push_back("Q dimension does not match A");
  if (m.Sigma0.rows() != n) rep.violations.push_back("Sigma0 dimension does not match A");

  if (m.sensor_blocks.empty()) rep.violations.push_back("at least one sensor block required");
  Eigen::Index s = 0;
  for (std::size_t i = 0; i < m.sensor_blocks.size(); ++i) {
    const Mat& Ci = m.sensor_blocks[i];
    if (Ci.cols() != n || Ci.rows() < 1) {
      std::ostringstream os;
      os << "sensor block " << i << " must be s_i x n with s_i >= 1";
      rep.violations.push_back(os.str());
    }
    s += Ci.rows();
  }
  if (!detail::strictly_pd(m.R)) rep.violations.push_back("R not positive definite");
  if (m.R.rows() != s) rep.violations.push_back("R dimension does not match stacked sensor size");

  if (rho < 1.0)
    rep.notes.push_back("detectability of (A, C): satisfied (rho(A) < 1)");
  return rep;
}

/// Validates and finalizes a model: stacks C, records block offsets and
/// caches the Cholesky factors of Q, R, Sigma0 for sampling.
inline SystemModel make_model(Mat A, std::vector<Mat> sensor_blocks, Mat Q, Mat R, Mat Sigma0) {
  SystemModel m;
  m.A = std::move(A);
  m.sensor_blocks = std::move(sensor_blocks);
  m.Q = std::move(Q);
  m.R = std::move(R);
  m.Sigma0 = std::move(Sigma0);

  const ValidationReport rep = validate(m);
  if (!rep.ok()) throw std::invalid_argument("make_model: " + rep.summary());

  const Eigen::Index n = m.A.rows();
  Eigen::Index s = 0;
  for (const Mat& Ci : m.sensor_blocks) s += Ci.rows();
  m.C.resize(s, n);
  Eigen::Index off = 0;
  for (const Mat& Ci : m.sensor_blocks) {
    m.offsets.push_back(static_cast<int>(off));
    m.sizes.push_back(static_cast<int>(Ci.rows()));
    m.C.middleRows(off, Ci.rows()) = Ci;
    off += Ci.rows();
  }
  detail::strictly_pd(m.Q, &m.chol_Q);
  detail::strictly_pd(m.R, &m.chol_R);
  detail::strictly_pd(m.Sigma0, &m.chol_Sigma0);
  return m;
}

/// Long-run statistics of the stable plant: Sigma solves the stationary
/// state-covariance equation, Pi^{(i)} = C^{(i)} Sigma C^{(i)T} + R^{(i)}.
struct StationaryStats {
  numerics::SymMatrix Sigma;
  std::vector<numerics::SymMatrix> Pi_blocks;
};

inline StationaryStats stationary_stats(const SystemModel& m) {
  StationaryStats st{numerics::solve_lyapunov(m.A, numerics::symmetrize(m.Q)), {}};
  for (int i = 0; i < m.num_sensors(); ++i) {
    const Mat& Ci = m.sensor_blocks[i];
    Mat Pi = Ci * st.Sigma.m() * Ci.transpose() + m.sensor_noise_block(i);
    st.Pi_blocks.push_back(numerics::symmetrize(Pi));
  }
  return st;
}

struct PlantTrajectory {
  std::vector<Vec> x;  // x_0 .. x_{H-1}
  std::vector<Vec> y;  // stacked measurements y_0 .. y_{H-1}
};

/// Samples x_0 ~ N(0, Sigma0) and runs the plant forward; per step the
/// measurement noise is drawn before the process noise, so a fixed stream
/// reproduces the trajectory exactly.
inline PlantTrajectory simulate_plant(const SystemModel& m, int horizon, RngStream& stream) {
  if (horizon < 1) throw std::invalid_argument("simulate_plant: horizon must be >= 1");
  PlantTrajectory traj;
  traj.x.reserve(horizon);
  traj.y.reserve(horizon);
  Vec x = m.chol_Sigma0 * stream.normal_vec(m.n());
  for (int k = 0; k < horizon; ++k) {
    traj.x.push_back(x);
    traj.y.push_back(m.C * x + m.chol_R * stream.normal_vec(m.s()));
    x = m.A * x + m.chol_Q * stream.normal_vec(m.n());
  }
  return traj;
}

}  // namespace evest::model
