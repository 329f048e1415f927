#pragma once

#include "evest/common.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace evest::design::sdp {

/// One elementary symmetric contribution coef * (e_p e_qᵀ + e_q e_pᵀ) of a
/// variable to a cone matrix. A diagonal unit is coef = 1/2 with p == q.
struct SymTerm {
  int p;
  int q;
  double coef;
};

struct ConeVar {
  int var;
  std::vector<SymTerm> terms;
};

/// Affine matrix cone G(x) = F0 + sum_a x[a] A_a with A_a given by
/// elementary symmetric terms. Barrier calculus only ever needs G^{-1}
/// entries, so gradients and Hessians cost O(#terms^2) per variable pair.
struct Cone {
  Mat F0;
  std::vector<ConeVar> vars;

  Mat assemble(const Vec& x) const {
    Mat G = F0;
    for (const ConeVar& cv : vars)
      for (const SymTerm& t : cv.terms) {
        G(t.p, t.q) += t.coef * x[cv.var];
        G(t.q, t.p) += t.coef * x[cv.var];
      }
    return G;
  }

  Mat direction(const Vec& dx) const {
    Mat D = Mat::Zero(F0.rows(), F0.cols());
    for (const ConeVar& cv : vars)
      for (const SymTerm& t : cv.terms) {
        D(t.p, t.q) += t.coef * dx[cv.var];
        D(t.q, t.p) += t.coef * dx[cv.var];
      }
    return D;
  }
};

struct Program {
  Vec c;  // minimize cᵀx
  std::vector<Cone> cones;

  int num_vars() const { return static_cast<int>(c.size()); }

  /// Barrier parameter: total dimension of the product cone.
  double nu() const {
    double total = 0.0;
    for (const Cone& k : cones) total += static_cast<double>(k.F0.rows());
    return total;
  }
};

struct PathConfig {
  double gap_tol = 1e-6;     // relative duality-gap surrogate target
  double t0 = 1.0;
  double t_factor = 5.0;     // barrier parameter mu = 1/t shrinks by this
  int max_outer = 60;
  int max_newton = 80;
  double newton_tol = 1e-10; // stop centering at decrement^2 / 2 below this
};

struct PathResult {
  Vec x;
  double objective = 0.0;
  double gap = std::numeric_limits<double>::infinity();  // nu / t at exit
  bool hit_iteration_cap = false;
};

inline bool strictly_feasible(const Program& prog, const Vec& x) {
  for (const Cone& k : prog.cones) {
    Eigen::LLT<Mat> llt(k.assemble(x));
    if (llt.info() != Eigen::Success) return false;
  }
  return true;
}

namespace detail {

inline double log_det_from_llt(const Eigen::LLT<Mat>& llt) {
  double ld = 0.0;
  const auto& L = llt.matrixLLT();
  for (Eigen::Index i = 0; i < L.rows(); ++i) ld += std::log(L(i, i));
  return 2.0 * ld;
}

/// Computes barrier value, gradient and Hessian at a strictly feasible x.
/// Returns false if some cone lost positive definiteness.
inline bool barrier_derivatives(const Program& prog, const Vec& x, double* value, Vec* grad,
                                Mat* hess) {
  const int v = prog.num_vars();
  *value = 0.0;
  grad->setZero(v);
  hess->setZero(v, v);
  for (const Cone& k : prog.cones) {
    const Mat G = k.assemble(x);
    Eigen::LLT<Mat> llt(G);
    if (llt.info() != Eigen::Success) return false;
    *value -= log_det_from_llt(llt);
    const Mat Z = llt.solve(Mat::Identity(G.rows(), G.cols()));

    const auto& cv = k.vars;
    for (std::size_t a = 0; a < cv.size(); ++a) {
      double ga = 0.0;
      for (const SymTerm& t : cv[a].terms) ga += t.coef * 2.0 * Z(t.p, t.q);
      (*grad)[cv[a].var] -= ga;

      for (std::size_t b = a; b < cv.size(); ++b) {
        double h = 0.0;
        for (const SymTerm& t1 : cv[a].terms)
          for (const SymTerm& t2 : cv[b].terms)
            h += t1.coef * t2.coef * 2.0 *
                 (Z(t1.p, t2.p) * Z(t1.q, t2.q) + Z(t1.p, t2.q) * Z(t1.q, t2.p));
        (*hess)(cv[a].var, cv[b].var) += h;
        if (a != b) (*hess)(cv[b].var, cv[a].var) += h;
      }
    }
  }
  return true;
}

inline double barrier_value(const Program& prog, const Vec& x, bool* feasible) {
  double val = 0.0;
  for (const Cone& k : prog.cones) {
    Eigen::LLT<Mat> llt(k.assemble(x));
    if (llt.info() != Eigen::Success) {
      *feasible = false;
      return 0.0;
    }
    val -= log_det_from_llt(llt);
  }
  *feasible = true;
  return val;
}

}  // namespace detail

/// Primal log-det barrier path following with exact Newton centering.
/// `x0` must be strictly feasible. If watch_var >= 0, the path stops as
/// soon as x[watch_var] >= watch_threshold (used by Phase-I feasibility
/// searches, which only need a point with positive slack).
inline PathResult follow_path(const Program& prog, Vec x0, const PathConfig& cfg,
                              int watch_var = -1,
                              double watch_threshold = 0.0) {
  if (!strictly_feasible(prog, x0))
    throw std::invalid_argument("follow_path: initial point is not strictly feasible");

  const int v = prog.num_vars();
  double t = cfg.t0;
  Vec x = std::move(x0);
  PathResult res;
  res.hit_iteration_cap = true;

  double value;
  Vec grad(v);
  Mat hess(v, v);

  bool watch_fired = false;
  for (int outer = 0; outer < cfg.max_outer && !watch_fired; ++outer) {
    // Newton centering for F(x) = t cᵀx - sum log det G_j(x)
    bool centered = false;
    for (int inner = 0; inner < cfg.max_newton; ++inner) {
      if (watch_var >= 0 && x[watch_var] >= watch_threshold) {
        watch_fired = true;
        break;
      }
      if (!detail::barrier_derivatives(prog, x, &value, &grad, &hess))
        throw std::runtime_error("follow_path: iterate left the cone interior");
      Vec g = t * prog.c + grad;

      Vec dx;
      double ridge = 0.0;
      for (;;) {
        Mat H = hess;
        if (ridge > 0.0) H.diagonal().array() += ridge;
        Eigen::LDLT<Mat> ldlt(H);
        dx = ldlt.solve(-g);
        if (ldlt.info() == Eigen::Success && dx.allFinite()) break;
        ridge = (ridge == 0.0) ? 1e-12 * (1.0 + hess.trace() / v) : ridge * 100.0;
        if (ridge > 1e40) throw std::runtime_error("follow_path: Newton system is singular");
      }

      const double decrement2 = -g.dot(dx);
      if (decrement2 / 2.0 <= cfg.newton_tol) {
        centered = true;
        break;
      }

      // backtracking line search on t cᵀx + barrier, feasibility first
      const double f0 = t * prog.c.dot(x) + value;
      double step = 1.0;
      bool moved = false;
      while (step > 1e-14) {
        const Vec xt = x + step * dx;
        bool feas = false;
        const double bt = detail::barrier_value(prog, xt, &feas);
        if (feas) {
          const double ft = t * prog.c.dot(xt) + bt;
          if (ft <= f0 - 0.25 * step * decrement2) {
            x = xt;
            moved = true;
            break;
          }
        }
        step *= 0.5;
      }
      if (!moved) {
        centered = true;  // numerical floor; accept current center
        break;
      }
    }

    res.gap = prog.nu() / t;
    res.objective = prog.c.dot(x);
    if (watch_var >= 0 && x[watch_var] >= watch_threshold) {
      res.hit_iteration_cap = false;
      break;
    }
    // the gap surrogate nu/t only bounds the suboptimality at centered
    // points, so a capped inner loop cannot justify an exit
    if (centered && res.gap <= cfg.gap_tol * (1.0 + std::abs(res.objective))) {
      res.hit_iteration_cap = false;
      break;
    }
    t *= cfg.t_factor;
  }
  if (watch_fired) res.hit_iteration_cap = false;

  res.x = std::move(x);
  res.objective = prog.c.dot(res.x);
  return res;
}

}  // namespace evest::design::sdp
