#pragma once

#include "evest/common.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>
#include <string>

namespace evest::numerics {

/// (M + Mᵀ)/2. The output is symmetric by construction; used after every
/// covariance update to suppress floating-point drift.
inline SymMatrix symmetrize(const Mat& M) {
  if (M.rows() != M.cols())
    throw std::invalid_argument("symmetrize: input must be square");
  return SymMatrix(((M + M.transpose()) * 0.5).eval());
}

inline double min_eigenvalue(const SymMatrix& M) {
  Eigen::SelfAdjointEigenSolver<Mat> es(M.m(), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// PSD test with relative slack: min eig >= -psd_slack * (1 + ||M||_F).
inline bool is_psd(const SymMatrix& M, const Tolerances& tol = {}) {
  tol.check();
  return min_eigenvalue(M) >= -tol.psd_slack * (1.0 + M.m().norm());
}

/// Largest eigenvalue modulus of a (possibly non-symmetric) square matrix.
inline double spectral_radius(const Mat& A) {
  if (A.rows() != A.cols())
    throw std::invalid_argument("spectral_radius: input must be square");
  Eigen::EigenSolver<Mat> es(A, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Unique solution of Sigma = A Sigma Aᵀ + Q for a stable A.
///
/// Small dimensions solve the vectorized linear system directly; larger
/// ones iterate the recursion from zero until the residual
/// ||Sigma - A Sigma Aᵀ - Q|| <= 1e-9 ||Sigma|| holds.
inline SymMatrix solve_lyapunov(const Mat& A, const SymMatrix& Q) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || Q.dim() != n)
    throw std::invalid_argument("solve_lyapunov: dimension mismatch");
  if (spectral_radius(A) >= 1.0)
    throw std::invalid_argument("solve_lyapunov: A is not stable (spectral radius >= 1)");

  constexpr double kResidualTol = 1e-9;
  Mat Sigma;
  if (n <= 24) {
    // vec(Sigma) = (I - A ⊗ A)^{-1} vec(Q)
    const Eigen::Index n2 = n * n;
    Mat K = Mat::Identity(n2, n2);
    // vec(A Sigma Aᵀ) = (A ⊗ A) vec(Sigma) in column-major vec convention
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        K.block(i * n, j * n, n, n) -= A(i, j) * A;
    Vec q(Eigen::Map<const Vec>(Q.m().data(), n2));
    Vec sig = K.partialPivLu().solve(q);
    Sigma = Eigen::Map<Mat>(sig.data(), n, n);
    Sigma = (Sigma + Sigma.transpose()) * 0.5;
  } else {
    Sigma = Q.m();
    for (int it = 0; it < 1000000; ++it) {
      Mat next = A * Sigma * A.transpose() + Q.m();
      next = (next + next.transpose()) * 0.5;
      Sigma = next;
      if (it % 8 == 0) {
        const double res = (Sigma - A * Sigma * A.transpose() - Q.m()).norm();
        if (res <= kResidualTol * Sigma.norm()) break;
      }
    }
  }

  const double res = (Sigma - A * Sigma * A.transpose() - Q.m()).norm();
  if (res > kResidualTol * std::max(Sigma.norm(), 1e-300))
    throw std::runtime_error("solve_lyapunov: residual bound not met");
  return SymMatrix(Sigma);
}

/// One application of the Riccati operator
///   g_W(X) = A X Aᵀ + Q - A X Cᵀ (C X Cᵀ + W)^{-1} C X Aᵀ.
inline Mat riccati_step(const Mat& A, const Mat& C, const Mat& Q, const Mat& W, const Mat& X) {
  const Mat CXCt_W = C * X * C.transpose() + W;
  Eigen::LLT<Mat> llt(CXCt_W);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("riccati_step: innovation covariance C X Cᵀ + W is not positive definite");
  const Mat AXCt = A * X * C.transpose();
  Mat out = A * X * A.transpose() + Q - AXCt * llt.solve(AXCt.transpose());
  return (out + out.transpose()) * 0.5;
}

/// Fixed point of g_W obtained by iterating from X = 0. The iterates are
/// monotone nondecreasing in the Loewner order and converge for stable A;
/// non-convergence within max_iters signals ill-conditioned input.
inline SymMatrix riccati_fixed_point(const Mat& A, const Mat& C, const SymMatrix& Q,
                                     const SymMatrix& W, const Tolerances& tol = {}) {
  tol.check();
  const Eigen::Index n = A.rows();
  if (A.cols() != n || C.cols() != n || Q.dim() != n || W.dim() != C.rows())
    throw std::invalid_argument("riccati_fixed_point: dimension mismatch");
  if (spectral_radius(A) >= 1.0)
    throw std::invalid_argument("riccati_fixed_point: A is not stable (spectral radius >= 1)");

  Mat X = Mat::Zero(n, n);
  for (int it = 0; it < tol.max_iters; ++it) {
    const Mat Xn = riccati_step(A, C, Q.m(), W.m(), X);
    const double diff = (Xn - X).norm();
    if (diff <= tol.fixed_point_tol * std::max(X.norm(), 1e-300))
      return SymMatrix(X);  // residual ||X - g_W(X)|| = diff is certified
    X = Xn;
  }
  throw std::runtime_error("riccati_fixed_point: no convergence within max_iters");
}

}  // namespace evest::numerics
