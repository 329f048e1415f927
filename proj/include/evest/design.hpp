#pragma once

#include "evest/analysis.hpp"
#include "evest/sdp.hpp"

#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace evest::design {

/// Trigger-parameter optimization instance: minimize the total weighted
/// trace sum_i tr(Pi^{(i)} Y^{(i)}) subject to the worst-case posterior
/// covariance bound P_bar <= Delta, recast as an LMI.
struct SDPProblem {
  const model::SystemModel* model = nullptr;
  std::vector<numerics::SymMatrix> Pi_blocks;
  numerics::SymMatrix Delta;

  static SDPProblem make(const model::SystemModel& m, const numerics::SymMatrix& Delta) {
    Eigen::LLT<Mat> llt(Delta.m());
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("SDPProblem: Delta must be strictly positive definite");
    if (Delta.dim() != m.n())
      throw std::invalid_argument("SDPProblem: Delta dimension does not match the model");
    SDPProblem p;
    p.model = &m;
    p.Pi_blocks = model::stationary_stats(m).Pi_blocks;
    p.Delta = Delta;
    return p;
  }
};

enum class SolveStatus { optimal, infeasible, max_iterations };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::max_iterations: return "max-iterations";
  }
  return "?";
}

struct SDPSolution {
  std::vector<Mat> Y_blocks;
  Mat S;
  double objective = 0.0;
  SolveStatus status = SolveStatus::max_iterations;
  double gap = 0.0;
  std::string note;
};

struct SolverConfig {
  SolverConfig() { path.gap_tol = 1e-7; }  // headroom under the 1e-6 contract
  sdp::PathConfig path;
  double infeasible_tol = -1e-9;  // Phase-I slack below this certifies infeasibility
  double clamp_eps = 1e-8;        // Y + eps I clamp applied before filter use
};

namespace detail {

inline Mat pd_inverse(const Mat& M, const char* what) {
  Eigen::LLT<Mat> llt(M);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument(std::string(what) + " must be strictly positive definite");
  Mat inv = llt.solve(Mat::Identity(M.rows(), M.cols()));
  return (inv + inv.transpose()) * 0.5;
}

/// Maps the symmetric matrix variables (S, then each Y block) to a flat
/// vector. Entry order within a matrix: column-major upper triangle.
struct VarLayout {
  int n = 0;
  std::vector<int> block_sizes;
  std::vector<int> block_var_offset;
  int s_vars = 0;
  int total = 0;

  static int sym_count(int d) { return d * (d + 1) / 2; }

  static int tri_index(int i, int j) {  // i <= j
    return j * (j + 1) / 2 + i;
  }

  explicit VarLayout(const model::SystemModel& m) {
    n = m.n();
    s_vars = sym_count(n);
    int off = s_vars;
    for (int sz : m.sizes) {
      block_sizes.push_back(sz);
      block_var_offset.push_back(off);
      off += sym_count(sz);
    }
    total = off;
  }

  int s_var(int i, int j) const { return tri_index(std::min(i, j), std::max(i, j)); }
  int y_var(int block, int i, int j) const {
    return block_var_offset[block] + tri_index(std::min(i, j), std::max(i, j));
  }

  Mat unpack_s(const Vec& x) const {
    Mat S(n, n);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i <= j; ++i) S(i, j) = S(j, i) = x[s_var(i, j)];
    return S;
  }

  std::vector<Mat> unpack_y(const Vec& x) const {
    std::vector<Mat> out;
    for (std::size_t b = 0; b < block_sizes.size(); ++b) {
      const int d = block_sizes[b];
      Mat Y(d, d);
      for (int j = 0; j < d; ++j)
        for (int i = 0; i <= j; ++i) Y(i, j) = Y(j, i) = x[y_var(static_cast<int>(b), i, j)];
      out.push_back(Y);
    }
    return out;
  }

  void pack(const Mat& S, const std::vector<Mat>& Y, Vec* x) const {
    for (int j = 0; j < n; ++j)
      for (int i = 0; i <= j; ++i) (*x)[s_var(i, j)] = S(i, j);
    for (std::size_t b = 0; b < Y.size(); ++b) {
      const int d = block_sizes[b];
      for (int j = 0; j < d; ++j)
        for (int i = 0; i <= j; ++i) (*x)[y_var(static_cast<int>(b), i, j)] = Y[b](i, j);
    }
  }
};

inline sdp::SymTerm unit_term(int p, int q, double sign) {
  // sign * E_pq as an elementary symmetric pair; diagonal units carry 1/2
  return sdp::SymTerm{std::min(p, q), std::max(p, q), (p == q) ? 0.5 * sign : sign};
}

/// Constant part of the design LMI (the Y and S contributions enter as
/// variable terms).
inline Mat lmi_constant(const model::SystemModel& m) {
  const int n = m.n(), s = m.s();
  const Mat Qinv = pd_inverse(m.Q, "Q");
  const Mat Rinv = pd_inverse(m.R, "R");
  Mat F = Mat::Zero(2 * n + s, 2 * n + s);
  F.block(0, 0, n, n) = Qinv + m.C.transpose() * Rinv * m.C;
  F.block(0, n, n, n) = Qinv * m.A;
  F.block(n, 0, n, n) = m.A.transpose() * Qinv;
  F.block(n, n, n, n) = m.A.transpose() * Qinv * m.A;
  F.block(0, 2 * n, n, s) = m.C.transpose() * Rinv;
  F.block(2 * n, 0, s, n) = Rinv * m.C;
  F.block(2 * n, 2 * n, s, s) = Rinv;
  return (F + F.transpose()) * 0.5;
}

struct BuiltProgram {
  sdp::Program prog;
  VarLayout layout;
  double scale = 1.0;  // magnitude of the constant LMI data
};

inline BuiltProgram build_program(const SDPProblem& p) {
  const model::SystemModel& m = *p.model;
  BuiltProgram bp{{}, VarLayout(m), 1.0};
  const VarLayout& L = bp.layout;
  const int n = m.n();

  // objective: sum_i tr(Pi^{(i)} Y^{(i)}); off-diagonal entries appear twice
  bp.prog.c = Vec::Zero(L.total);
  for (int b = 0; b < m.num_sensors(); ++b) {
    const Mat& Pi = p.Pi_blocks[b].m();
    for (int j = 0; j < m.sizes[b]; ++j)
      for (int i = 0; i <= j; ++i)
        bp.prog.c[L.y_var(b, i, j)] = (i == j) ? Pi(i, i) : 2.0 * Pi(i, j);
  }

  // cone 1: the LMI
  sdp::Cone lmi;
  lmi.F0 = lmi_constant(m);
  bp.scale = 1.0 + lmi.F0.cwiseAbs().maxCoeff();
  for (int j = 0; j < n; ++j)
    for (int i = 0; i <= j; ++i) {
      sdp::ConeVar cv{L.s_var(i, j), {}};
      cv.terms.push_back(unit_term(i, j, -1.0));          // -S in block (1,1)
      cv.terms.push_back(unit_term(n + i, n + j, 1.0));   // +S in block (2,2)
      lmi.vars.push_back(std::move(cv));
    }
  for (int b = 0; b < m.num_sensors(); ++b) {
    const int o = 2 * n + m.offsets[b];
    for (int j = 0; j < m.sizes[b]; ++j)
      for (int i = 0; i <= j; ++i)
        lmi.vars.push_back({L.y_var(b, i, j), {unit_term(o + i, o + j, 1.0)}});
  }
  bp.prog.cones.push_back(std::move(lmi));

  // cone 2: S - Delta^{-1} >= 0
  sdp::Cone sc;
  sc.F0 = -pd_inverse(p.Delta.m(), "Delta");
  for (int j = 0; j < n; ++j)
    for (int i = 0; i <= j; ++i)
      sc.vars.push_back({L.s_var(i, j), {unit_term(i, j, 1.0)}});
  bp.prog.cones.push_back(std::move(sc));

  // cones 3..: Y^{(i)} >= 0
  for (int b = 0; b < m.num_sensors(); ++b) {
    sdp::Cone yc;
    yc.F0 = Mat::Zero(m.sizes[b], m.sizes[b]);
    for (int j = 0; j < m.sizes[b]; ++j)
      for (int i = 0; i <= j; ++i)
        yc.vars.push_back({L.y_var(b, i, j), {unit_term(i, j, 1.0)}});
    bp.prog.cones.push_back(std::move(yc));
  }
  return bp;
}

/// Phase-I slack maximization: append a slack variable tau, maximize it
/// until strictly positive (or until its optimum certifies infeasibility).
struct PhaseOneResult {
  bool strictly_feasible = false;
  double tau = 0.0;
  double gap = 0.0;
  Vec x;  // without the tau coordinate
};

inline PhaseOneResult phase_one(const BuiltProgram& bp, const Vec& x_init,
                                const SolverConfig& cfg) {
  sdp::Program aug;
  const int v = bp.prog.num_vars();
  aug.c = Vec::Zero(v + 1);
  aug.c[v] = -1.0;  // maximize tau
  for (const sdp::Cone& k : bp.prog.cones) {
    sdp::Cone ak = k;
    sdp::ConeVar tau_var{v, {}};
    for (int d = 0; d < k.F0.rows(); ++d) tau_var.terms.push_back(sdp::SymTerm{d, d, -0.5});
    ak.vars.push_back(std::move(tau_var));
    aug.cones.push_back(std::move(ak));
  }
  // Without the objective of Phase II nothing stops the log-det terms from
  // growing along free directions (larger Y enlarges both its own cone and
  // the LMI trailing block), so the slack problem needs a bounded domain.
  // Box every variable; solutions anywhere near the box edge are outside
  // the regime this solver targets.
  const double box = 1e8 * bp.scale;
  for (int a = 0; a < v; ++a) {
    sdp::Cone up{Mat::Constant(1, 1, box), {{a, {unit_term(0, 0, -1.0)}}}};
    sdp::Cone down{Mat::Constant(1, 1, box), {{a, {unit_term(0, 0, 1.0)}}}};
    aug.cones.push_back(std::move(up));
    aug.cones.push_back(std::move(down));
  }

  Vec x0(v + 1);
  x0.head(v) = x_init;
  double min_eig = std::numeric_limits<double>::infinity();
  for (const sdp::Cone& k : bp.prog.cones) {
    Eigen::SelfAdjointEigenSolver<Mat> es(k.assemble(x_init), Eigen::EigenvaluesOnly);
    min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
  }
  x0[v] = min_eig - 0.1 * bp.scale - 1.0;

  sdp::PathConfig pc = cfg.path;
  pc.gap_tol = 1e-12;  // drive tau tightly unless the watch fires first
  pc.t0 = 10.0;        // weight the slack objective early to limit drift
  const double tau_go = 1e-6 * bp.scale;
  sdp::PathResult r = sdp::follow_path(aug, x0, pc, /*watch_var=*/v,
                                       /*watch_threshold=*/tau_go);

  PhaseOneResult out;
  out.tau = r.x[v];
  out.gap = r.gap;
  out.x = r.x.head(v);
  out.strictly_feasible = out.tau > 0.0 && sdp::strictly_feasible(bp.prog, out.x);
  return out;
}

}  // namespace detail

/// Assembles the covariance-bound LMI
///   [ Q^{-1} - S + CᵀR^{-1}C   Q^{-1}A          CᵀR^{-1}  ]
///   [ AᵀQ^{-1}                 AᵀQ^{-1}A + S    0         ]
///   [ R^{-1}C                  0                Y + R^{-1} ]
/// for given Y blocks and S.
inline Mat build_lmi(const SDPProblem& p, const std::vector<Mat>& Y_blocks, const Mat& S) {
  const model::SystemModel& m = *p.model;
  const int n = m.n();
  if (static_cast<int>(Y_blocks.size()) != m.num_sensors())
    throw std::invalid_argument("build_lmi: wrong number of Y blocks");
  if (S.rows() != n || S.cols() != n) throw std::invalid_argument("build_lmi: S must be n x n");

  Mat F = detail::lmi_constant(m);
  F.block(0, 0, n, n) -= S;
  F.block(n, n, n, n) += S;
  for (int b = 0; b < m.num_sensors(); ++b) {
    if (Y_blocks[b].rows() != m.sizes[b] || Y_blocks[b].cols() != m.sizes[b])
      throw std::invalid_argument("build_lmi: Y block dimension mismatch");
    const int o = 2 * n + m.offsets[b];
    F.block(o, o, m.sizes[b], m.sizes[b]) += Y_blocks[b];
  }
  return (F + F.transpose()) * 0.5;
}

/// Solves the trigger design SDP by the internal barrier method.
/// Returns the optimal blocks with a duality-gap surrogate within
/// gap_tol * (1 + |objective|), a certified infeasibility, or a partial
/// iterate when the iteration caps are hit.
inline SDPSolution solve_sdp(const SDPProblem& p, const SolverConfig& cfg = {},
                             const std::vector<Mat>* warm_Y = nullptr,
                             const Mat* warm_S = nullptr) {
  detail::BuiltProgram bp = detail::build_program(p);
  const detail::VarLayout& L = bp.layout;
  const model::SystemModel& m = *p.model;

  // starting point: S inside its own cone, identity trigger blocks
  Vec x0(L.total);
  {
    Mat S0 = detail::pd_inverse(p.Delta.m(), "Delta") + Mat::Identity(m.n(), m.n());
    std::vector<Mat> Y0;
    for (int sz : m.sizes) Y0.push_back(Mat::Identity(sz, sz));
    if (warm_Y && warm_S) {
      S0 = *warm_S;
      Y0 = *warm_Y;
    }
    L.pack(S0, Y0, &x0);
  }

  SDPSolution sol;
  Vec x_feas;
  if (sdp::strictly_feasible(bp.prog, x0)) {
    x_feas = x0;
  } else {
    if (warm_Y && warm_S) {
      // warm start failed; retry from the default interior guess
      Mat S0 = detail::pd_inverse(p.Delta.m(), "Delta") + Mat::Identity(m.n(), m.n());
      std::vector<Mat> Y0;
      for (int sz : m.sizes) Y0.push_back(Mat::Identity(sz, sz));
      L.pack(S0, Y0, &x0);
    }
    if (sdp::strictly_feasible(bp.prog, x0)) {
      x_feas = x0;
    } else {
      detail::PhaseOneResult p1 = detail::phase_one(bp, x0, cfg);
      if (!p1.strictly_feasible) {
        sol.Y_blocks = L.unpack_y(p1.x);
        sol.S = L.unpack_s(p1.x);
        sol.objective = bp.prog.c.dot(p1.x);
        sol.gap = p1.gap;
        if (p1.tau + p1.gap < cfg.infeasible_tol * bp.scale ||
            p1.tau < cfg.infeasible_tol * bp.scale) {
          sol.status = SolveStatus::infeasible;
          std::ostringstream os;
          os << "Phase-I slack maximum " << p1.tau << " certifies infeasibility";
          sol.note = os.str();
        } else {
          sol.status = SolveStatus::max_iterations;
          sol.note = "Phase-I slack ended within the boundary band (-1e-9, 0]";
        }
        return sol;
      }
      x_feas = p1.x;
    }
  }

  sdp::PathResult r = sdp::follow_path(bp.prog, x_feas, cfg.path);
  sol.Y_blocks = L.unpack_y(r.x);
  sol.S = L.unpack_s(r.x);
  sol.objective = r.objective;
  sol.gap = r.gap;
  sol.status = r.hit_iteration_cap ? SolveStatus::max_iterations : SolveStatus::optimal;
  if (r.hit_iteration_cap) sol.note = "iteration cap reached; returning partial iterate";
  return sol;
}

/// Decides whether some S >= Delta^{-1} makes the LMI feasible for the
/// given fixed Y blocks. Used to cross-check the LMI reformulation
/// against the direct P_bar <= Delta evaluation.
inline bool lmi_feasible_with_some_s(const SDPProblem& p, const std::vector<Mat>& Y_blocks,
                                     double tol = 1e-9) {
  const model::SystemModel& m = *p.model;
  const int n = m.n();
  detail::VarLayout L(m);

  sdp::Program prog;
  const int sv = detail::VarLayout::sym_count(n);
  prog.c = Vec::Zero(sv + 1);
  prog.c[sv] = -1.0;

  Mat lmi_f0 = build_lmi(p, Y_blocks, Mat::Zero(n, n));
  sdp::Cone lmi{std::move(lmi_f0), {}};
  sdp::Cone sc{-detail::pd_inverse(p.Delta.m(), "Delta"), {}};
  for (int j = 0; j < n; ++j)
    for (int i = 0; i <= j; ++i) {
      const int var = detail::VarLayout::tri_index(i, j);
      sdp::ConeVar cv{var, {}};
      cv.terms.push_back(detail::unit_term(i, j, -1.0));
      cv.terms.push_back(detail::unit_term(n + i, n + j, 1.0));
      lmi.vars.push_back(std::move(cv));
      sc.vars.push_back({var, {detail::unit_term(i, j, 1.0)}});
    }
  const double scale = 1.0 + lmi.F0.cwiseAbs().maxCoeff();
  for (sdp::Cone* k : {&lmi, &sc}) {
    sdp::ConeVar tau{sv, {}};
    for (int d = 0; d < k->F0.rows(); ++d) tau.terms.push_back(sdp::SymTerm{d, d, -0.5});
    k->vars.push_back(std::move(tau));
  }
  prog.cones.push_back(std::move(lmi));
  prog.cones.push_back(std::move(sc));

  Vec x0 = Vec::Zero(sv + 1);
  {
    const Mat S0 = detail::pd_inverse(p.Delta.m(), "Delta") + Mat::Identity(n, n);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i <= j; ++i) x0[detail::VarLayout::tri_index(i, j)] = S0(i, j);
    double min_eig = std::numeric_limits<double>::infinity();
    for (const sdp::Cone& k : prog.cones) {
      Mat G = k.assemble(x0) - x0[sv] * Mat::Identity(k.F0.rows(), k.F0.rows());
      Eigen::SelfAdjointEigenSolver<Mat> es(G, Eigen::EigenvaluesOnly);
      min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
    }
    x0[sv] = min_eig - 0.1 * scale - 1.0;
  }

  sdp::PathConfig pc;
  pc.gap_tol = 1e-12;
  sdp::PathResult r = sdp::follow_path(prog, x0, pc, /*watch_var=*/sv,
                                       /*watch_threshold=*/tol * scale);
  return r.x[sv] >= -tol * scale;
}

/// Re-derives the quantities the LMI encodes and checks them directly:
/// P_bar recomputed from the returned Y obeys P_bar <= Delta + 1e-6 I,
/// the LMI is PSD at the solution, and the predicted per-sensor rates
/// are reported.
struct VerifyReport {
  bool ok = false;
  double pbar_margin = 0.0;  // min eig of Delta - P_bar
  double lmi_min_eig = 0.0;
  std::vector<double> rates;
  std::vector<std::string> failures;
};

inline VerifyReport verify_design(const SDPProblem& p, const SDPSolution& sol,
                                  const SolverConfig& cfg = {}) {
  if (sol.status != SolveStatus::optimal)
    throw std::invalid_argument("verify_design: solution status must be optimal");
  const model::SystemModel& m = *p.model;
  VerifyReport rep;

  trigger::TriggerDesign d{sol.Y_blocks};
  const trigger::TriggerDesign strict = d.regularized(cfg.clamp_eps);
  const analysis::BoundSet b = analysis::compute_bounds(m, strict);
  rep.pbar_margin = numerics::min_eigenvalue(numerics::symmetrize(p.Delta.m() - b.P_bar.m()));
  if (rep.pbar_margin < -1e-6)
    rep.failures.push_back("P_bar exceeds Delta beyond the 1e-6 slack");

  const Mat lmi = build_lmi(p, sol.Y_blocks, sol.S);
  rep.lmi_min_eig = numerics::min_eigenvalue(numerics::symmetrize(lmi));
  if (rep.lmi_min_eig < -1e-7 * (1.0 + lmi.norm()))
    rep.failures.push_back("LMI is not PSD at the returned solution");

  const model::StationaryStats stats{numerics::solve_lyapunov(m.A, numerics::symmetrize(m.Q)),
                                     p.Pi_blocks};
  for (int i = 0; i < m.num_sensors(); ++i) rep.rates.push_back(trigger::comm_rate(i, stats, d));
  rep.ok = rep.failures.empty();
  return rep;
}

/// Solves Problem 2 for Delta = delta * I over a grid of scalars,
/// recording the average predicted rate per point. Infeasible points are
/// kept in the list with their status. Solutions warm-start the next
/// point, so the grid is processed in ascending delta order internally.
struct SweepEntry {
  double delta = 0.0;
  SolveStatus status = SolveStatus::max_iterations;
  double avg_rate = 0.0;
  double objective = 0.0;
  std::vector<Mat> Y_blocks;
};

inline std::vector<SweepEntry> sweep_designs(const model::SystemModel& m,
                                             const std::vector<double>& delta_grid,
                                             const SolverConfig& cfg = {}) {
  for (double d : delta_grid)
    if (d <= 0.0) throw std::invalid_argument("sweep_designs: delta values must be positive");

  std::vector<std::size_t> order(delta_grid.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return delta_grid[a] < delta_grid[b]; });

  const model::StationaryStats stats = model::stationary_stats(m);
  std::vector<SweepEntry> out(delta_grid.size());
  std::optional<std::vector<Mat>> warm_Y;
  std::optional<Mat> warm_S;
  for (std::size_t idx : order) {
    const double delta = delta_grid[idx];
    SDPProblem p = SDPProblem::make(
        m, numerics::SymMatrix(Mat(delta * Mat::Identity(m.n(), m.n()))));
    SDPSolution sol = solve_sdp(p, cfg, warm_Y ? &*warm_Y : nullptr, warm_S ? &*warm_S : nullptr);

    SweepEntry e;
    e.delta = delta;
    e.status = sol.status;
    e.objective = sol.objective;
    e.Y_blocks = sol.Y_blocks;
    if (sol.status == SolveStatus::optimal) {
      trigger::TriggerDesign d{sol.Y_blocks};
      double total = 0.0;
      for (int i = 0; i < m.num_sensors(); ++i) total += trigger::comm_rate(i, stats, d);
      e.avg_rate = total / m.num_sensors();
      warm_Y = sol.Y_blocks;
      warm_S = sol.S;
    }
    out[idx] = std::move(e);
  }
  return out;
}

}  // namespace evest::design
