#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace evest {

inline constexpr const char* kVersion = "0.1.0";

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

namespace numerics {

/// Solver knobs shared by the fixed-point routines and PSD checks.
struct Tolerances {
  double psd_slack = 1e-9;        // relative slack for "is PSD" decisions
  double fixed_point_tol = 1e-10; // relative fixed-point residual
  int max_iters = 10000;

  void check() const {
    if (psd_slack < 0.0) throw std::invalid_argument("Tolerances: psd_slack must be >= 0");
    if (fixed_point_tol <= 0.0) throw std::invalid_argument("Tolerances: fixed_point_tol must be > 0");
    if (max_iters <= 0) throw std::invalid_argument("Tolerances: max_iters must be > 0");
  }
};

/// Dense real symmetric matrix. Construction enforces squareness and
/// symmetry to within 1e-12 relative; use symmetrize() to coerce a
/// nearly-symmetric product first.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(Mat m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols() || m_.rows() < 1)
      throw std::invalid_argument("SymMatrix: matrix must be square with dim >= 1");
    const double scale = 1.0 + m_.cwiseAbs().maxCoeff();
    const double asym = (m_ - m_.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12 * scale)
      throw std::invalid_argument("SymMatrix: matrix is not symmetric to within 1e-12 relative");
  }

  const Mat& m() const { return m_; }
  Eigen::Index dim() const { return m_.rows(); }

 private:
  Mat m_;
};

}  // namespace numerics
}  // namespace evest
