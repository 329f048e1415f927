#pragma once

#include "evest/filter.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <vector>

namespace evest::oracle {

struct GridSpec {
  int points_per_axis = 2001;     // >= 2001 keeps discretization below 1e-4
  double half_width_sigmas = 8.0; // grid spans +/- this many stationary sigmas
};

/// Brute-force representation of the conditional state density for tiny
/// systems (n <= 2): density values on a uniform lattice. Weights are
/// renormalized after every operation.
class GridPosterior {
 public:
  int dims = 0;
  int npts = 0;
  double lo[2] = {0, 0};
  double step[2] = {0, 0};
  Eigen::ArrayXd w;  // 1-D: size N; 2-D: size N*N, index i0 * N + i1

  double coord(int d, int i) const { return lo[d] + step[d] * i; }
  double cell() const { return dims == 1 ? step[0] : step[0] * step[1]; }
  double total_mass() const { return w.sum() * cell(); }

  void renormalize() {
    const double mass = total_mass();
    if (!(mass > 1e-12))
      throw std::runtime_error("GridPosterior: near-zero total mass on the grid");
    w /= mass;
  }

  Vec point(Eigen::Index flat) const {
    Vec x(dims);
    if (dims == 1) {
      x[0] = coord(0, static_cast<int>(flat));
    } else {
      x[0] = coord(0, static_cast<int>(flat / npts));
      x[1] = coord(1, static_cast<int>(flat % npts));
    }
    return x;
  }
};

namespace detail {

inline double gauss1(double d, double var) {
  return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * M_PI * var);
}

/// Multivariate normal density evaluator with a precomputed factorization.
struct GaussDensity {
  Mat cov_inv;
  double norm_const;

  explicit GaussDensity(const Mat& cov) {
    Eigen::LLT<Mat> llt(cov);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("GaussDensity: covariance must be positive definite");
    cov_inv = llt.solve(Mat::Identity(cov.rows(), cov.cols()));
    double logdet = 0.0;
    const Mat& L = llt.matrixLLT();
    for (Eigen::Index i = 0; i < L.rows(); ++i) logdet += std::log(L(i, i));
    norm_const = std::exp(-logdet) / std::pow(2.0 * M_PI, 0.5 * cov.rows());
  }

  double operator()(const Vec& d) const {
    return norm_const * std::exp(-0.5 * d.dot(cov_inv * d));
  }
};

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwBuffer {
  double* p = nullptr;
  explicit FftwBuffer(std::size_t count) : p(static_cast<double*>(fftw_malloc(sizeof(double) * count))) {
    if (!p) throw std::bad_alloc();
  }
  ~FftwBuffer() { fftw_free(p); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
};

inline int fft_size_for(int npts) {
  const int need = 3 * npts - 2;  // linear convolution of N with 2N-1 support
  int l = 1;
  while (l < need) l *= 2;
  // allow a 3 * 2^k candidate, which is often noticeably smaller
  int l3 = 3;
  while (l3 < need) l3 *= 2;
  return std::min(l, l3);
}

}  // namespace detail

/// Reusable FFT workspace and kernel spectrum for 2-D propagation. Not
/// required; propagate() builds a transient one when none is supplied.
class Conv2Cache {
 public:
  bool matches(int npts, const Mat& Q, double step0, double step1) const {
    return ready_ && npts_ == npts && step0_ == step0 && step1_ == step1 &&
           Q_.rows() == Q.rows() && (Q_ - Q).norm() == 0.0;
  }

  int npts_ = 0;
  double step0_ = 0.0, step1_ = 0.0;
  Mat Q_;
  bool ready_ = false;
  std::vector<std::complex<double>> kernel_spec;
};

/// N(0, Sigma0) sampled on a lattice spanning +/- half_width_sigmas
/// stationary standard deviations per axis.
inline GridPosterior make_gaussian_prior(const model::SystemModel& m,
                                         const GridSpec& gs = {}) {
  if (m.n() > 2) throw std::invalid_argument("oracle: grids support n <= 2 only");
  if (gs.points_per_axis < 2001)
    throw std::invalid_argument("oracle: grids need at least 2001 points per axis");

  const Mat Sigma = numerics::solve_lyapunov(m.A, numerics::symmetrize(m.Q)).m();
  GridPosterior p;
  p.dims = m.n();
  p.npts = gs.points_per_axis;
  for (int d = 0; d < p.dims; ++d) {
    const double sd = std::sqrt(Sigma(d, d));
    p.lo[d] = -gs.half_width_sigmas * sd;
    p.step[d] = 2.0 * gs.half_width_sigmas * sd / (p.npts - 1);
  }

  const detail::GaussDensity prior(m.Sigma0);
  if (p.dims == 1) {
    p.w.resize(p.npts);
    Vec x(1);
    for (int i = 0; i < p.npts; ++i) {
      x[0] = p.coord(0, i);
      p.w[i] = prior(x);
    }
  } else {
    p.w.resize(static_cast<Eigen::Index>(p.npts) * p.npts);
    Vec x(2);
    for (int i0 = 0; i0 < p.npts; ++i0) {
      x[0] = p.coord(0, i0);
      for (int i1 = 0; i1 < p.npts; ++i1) {
        x[1] = p.coord(1, i1);
        p.w[static_cast<Eigen::Index>(i0) * p.npts + i1] = prior(x);
      }
    }
  }
  p.renormalize();
  return p;
}

namespace detail {

inline GridPosterior propagate_1d(const GridPosterior& p, const model::SystemModel& m) {
  const double a = m.A(0, 0);
  const double q = m.Q(0, 0);
  const int N = p.npts;
  GridPosterior out = p;
  out.w.setZero();

  // exact quadrature of the pushforward-convolution integral: the source
  // points a*x_i are off-lattice, the kernel is evaluated directly
  const double h = p.step[0];
  const double inv2q = 0.5 / q;
  const double norm = 1.0 / std::sqrt(2.0 * M_PI * q);
  for (int j = 0; j < N; ++j) {
    const double z = p.coord(0, j);
    double acc = 0.0;
    for (int i = 0; i < N; ++i) {
      const double d = z - a * p.coord(0, i);
      acc += std::exp(-d * d * inv2q) * p.w[i];
    }
    out.w[j] = acc * norm * h;
  }

  const double lost = 1.0 - out.total_mass();
  if (lost > 1e-6)
    throw std::runtime_error("propagate: probability mass beyond the grid exceeds 1e-6");
  out.renormalize();
  return out;
}

inline GridPosterior propagate_2d(const GridPosterior& p, const model::SystemModel& m,
                                  Conv2Cache* cache) {
  const int N = p.npts;
  GridPosterior out = p;

  if (m.A.norm() == 0.0) {
    const GaussDensity kq(m.Q);
    Vec x(2);
    for (int i0 = 0; i0 < N; ++i0)
      for (int i1 = 0; i1 < N; ++i1) {
        x[0] = p.coord(0, i0);
        x[1] = p.coord(1, i1);
        out.w[static_cast<Eigen::Index>(i0) * N + i1] = kq(x);
      }
    out.renormalize();
    return out;
  }

  Eigen::FullPivLU<Mat> lu(m.A);
  if (!lu.isInvertible())
    throw std::runtime_error("propagate: singular nonzero A is not supported on 2-D grids");
  const Mat Ainv = lu.inverse();
  const double jac = std::abs(1.0 / lu.determinant());

  // pushforward through A by bilinear resampling: g(u) = f(A^{-1} u) / |det A|
  Eigen::ArrayXd g(static_cast<Eigen::Index>(N) * N);
  for (int i0 = 0; i0 < N; ++i0) {
    const double u0 = p.coord(0, i0);
    for (int i1 = 0; i1 < N; ++i1) {
      const double u1 = p.coord(1, i1);
      const double x0 = Ainv(0, 0) * u0 + Ainv(0, 1) * u1;
      const double x1 = Ainv(1, 0) * u0 + Ainv(1, 1) * u1;
      const double f0 = (x0 - p.lo[0]) / p.step[0];
      const double f1 = (x1 - p.lo[1]) / p.step[1];
      double val = 0.0;
      if (f0 >= 0.0 && f0 <= N - 1 && f1 >= 0.0 && f1 <= N - 1) {
        const int k0 = std::min(static_cast<int>(f0), N - 2);
        const int k1 = std::min(static_cast<int>(f1), N - 2);
        const double t0 = f0 - k0, t1 = f1 - k1;
        const auto at = [&](int a, int b) { return p.w[static_cast<Eigen::Index>(a) * N + b]; };
        val = (1 - t0) * (1 - t1) * at(k0, k1) + t0 * (1 - t1) * at(k0 + 1, k1) +
              (1 - t0) * t1 * at(k0, k1 + 1) + t0 * t1 * at(k0 + 1, k1 + 1);
      }
      g[static_cast<Eigen::Index>(i0) * N + i1] = val * jac;
    }
  }

  // discrete convolution with the N(0, Q) kernel by zero-padded FFT
  const int L = fft_size_for(N);
  const std::size_t spec_cols = static_cast<std::size_t>(L / 2 + 1);
  const std::size_t spec_count = static_cast<std::size_t>(L) * spec_cols;

  Conv2Cache transient;
  Conv2Cache* cc = cache ? cache : &transient;
  FftwBuffer real_buf(static_cast<std::size_t>(L) * L);
  std::vector<std::complex<double>> g_spec(spec_count);

  fftw_plan fwd, bwd;
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fwd = fftw_plan_dft_r2c_2d(L, L, real_buf.p, reinterpret_cast<fftw_complex*>(g_spec.data()),
                               FFTW_ESTIMATE | FFTW_UNALIGNED);
    bwd = fftw_plan_dft_c2r_2d(L, L, reinterpret_cast<fftw_complex*>(g_spec.data()), real_buf.p,
                               FFTW_ESTIMATE | FFTW_UNALIGNED);
  }

  if (!cc->matches(N, m.Q, p.step[0], p.step[1])) {
    const GaussDensity kq(m.Q);
    std::fill(real_buf.p, real_buf.p + static_cast<std::size_t>(L) * L, 0.0);
    Vec d(2);
    for (int d0 = 0; d0 < 2 * N - 1; ++d0) {
      d[0] = (d0 - (N - 1)) * p.step[0];
      for (int d1 = 0; d1 < 2 * N - 1; ++d1) {
        d[1] = (d1 - (N - 1)) * p.step[1];
        real_buf.p[static_cast<std::size_t>(d0) * L + d1] = kq(d);
      }
    }
    cc->kernel_spec.resize(spec_count);
    fftw_execute_dft_r2c(fwd, real_buf.p, reinterpret_cast<fftw_complex*>(cc->kernel_spec.data()));
    cc->npts_ = N;
    cc->step0_ = p.step[0];
    cc->step1_ = p.step[1];
    cc->Q_ = m.Q;
    cc->ready_ = true;
  }

  std::fill(real_buf.p, real_buf.p + static_cast<std::size_t>(L) * L, 0.0);
  for (int i0 = 0; i0 < N; ++i0)
    for (int i1 = 0; i1 < N; ++i1)
      real_buf.p[static_cast<std::size_t>(i0) * L + i1] = g[static_cast<Eigen::Index>(i0) * N + i1];
  fftw_execute(fwd);

  const double scale = p.cell() / (static_cast<double>(L) * L);
  for (std::size_t i = 0; i < spec_count; ++i) g_spec[i] *= cc->kernel_spec[i] * scale;
  fftw_execute(bwd);

  for (int j0 = 0; j0 < N; ++j0)
    for (int j1 = 0; j1 < N; ++j1)
      out.w[static_cast<Eigen::Index>(j0) * N + j1] =
          std::max(0.0, real_buf.p[static_cast<std::size_t>(j0 + N - 1) * L + (j1 + N - 1)]);

  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(bwd);
  }

  const double lost = 1.0 - out.total_mass();
  if (lost > 1e-6)
    throw std::runtime_error("propagate: probability mass beyond the grid exceeds 1e-6");
  out.renormalize();
  return out;
}

}  // namespace detail

/// Density of A x + w for w ~ N(0, Q): pushforward through A followed by
/// discrete convolution with the process-noise kernel, renormalized.
inline GridPosterior propagate(const GridPosterior& p, const model::SystemModel& m,
                               Conv2Cache* cache = nullptr) {
  if (p.dims == 1) return detail::propagate_1d(p, m);
  return detail::propagate_2d(p, m, cache);
}

/// Multiplies in the likelihood of an observed transmission
/// y^{(i)} = value: weights *= N(value; C^{(i)} x, R^{(i)}).
/// Cross-sensor R correlations are outside this oracle; callers use
/// block-diagonal R instances.
inline GridPosterior condition_on_transmit(const GridPosterior& p, const model::SystemModel& m,
                                           int i, const Vec& value) {
  const Mat Ci = m.sensor_blocks.at(i);
  if (value.size() != Ci.rows())
    throw std::invalid_argument("condition_on_transmit: value dimension mismatch");
  const detail::GaussDensity lik(m.sensor_noise_block(i));

  GridPosterior out = p;
  for (Eigen::Index f = 0; f < out.w.size(); ++f)
    out.w[f] *= lik(value - Ci * p.point(f));
  out.renormalize();
  return out;
}

/// Closed-form likelihood of a drop at sensor i given state x:
///   L0(x) = det(I + R^{(i)} Y^{(i)})^{-1/2}
///           * exp(-1/2 (C^{(i)}x)ᵀ (Y^{(i)-1} + R^{(i)})^{-1} (C^{(i)}x)),
/// the marginal of exp(-1/2 yᵀYy) over y ~ N(C x, R^{(i)}). The quadratic
/// form uses Y^{1/2}(I + Y^{1/2} R Y^{1/2})^{-1} Y^{1/2}, which extends
/// continuously to singular Y (a zero block reveals nothing).
inline double drop_likelihood(const model::SystemModel& m, const trigger::TriggerDesign& d,
                              int i, const Vec& mu) {
  const Mat& Y = d.blocks.at(i);
  const Mat R = m.sensor_noise_block(i);
  Eigen::SelfAdjointEigenSolver<Mat> es(Y);
  if (es.eigenvalues().minCoeff() < -1e-12 * (1.0 + Y.norm()))
    throw std::invalid_argument("drop_likelihood: Y block must be PSD");
  const Mat Yhalf = es.operatorSqrt();
  const Mat inner = Mat::Identity(Y.rows(), Y.rows()) + Yhalf * R * Yhalf;
  const Mat M = Yhalf * inner.llt().solve(Yhalf);
  const double det = (Mat::Identity(Y.rows(), Y.rows()) + R * Y).partialPivLu().determinant();
  return std::exp(-0.5 * mu.dot(M * mu)) / std::sqrt(det);
}

inline GridPosterior condition_on_drop(const GridPosterior& p, const model::SystemModel& m,
                                       const trigger::TriggerDesign& d, int i) {
  const Mat Ci = m.sensor_blocks.at(i);
  const Mat& Y = d.blocks.at(i);
  const Mat R = m.sensor_noise_block(i);

  Eigen::SelfAdjointEigenSolver<Mat> es(Y);
  const Mat Yhalf = es.operatorSqrt();
  const Mat inner = Mat::Identity(Y.rows(), Y.rows()) + Yhalf * R * Yhalf;
  const Mat M = Yhalf * inner.llt().solve(Yhalf);
  const double det = (Mat::Identity(Y.rows(), Y.rows()) + R * Y).partialPivLu().determinant();
  const double dcoef = 1.0 / std::sqrt(det);

  GridPosterior out = p;
  for (Eigen::Index f = 0; f < out.w.size(); ++f) {
    const Vec mu = Ci * p.point(f);
    out.w[f] *= dcoef * std::exp(-0.5 * mu.dot(M * mu));
  }
  out.renormalize();
  return out;
}

struct Moments {
  Vec mean;
  Mat cov;
};

inline Moments moments(const GridPosterior& p) {
  const double cell = p.cell();
  Vec mean = Vec::Zero(p.dims);
  for (Eigen::Index f = 0; f < p.w.size(); ++f) mean += p.w[f] * cell * p.point(f);
  Mat cov = Mat::Zero(p.dims, p.dims);
  for (Eigen::Index f = 0; f < p.w.size(); ++f) {
    const Vec d = p.point(f) - mean;
    cov += (p.w[f] * cell) * (d * d.transpose());
  }
  return {mean, cov};
}

/// Excess kurtosis of each axis marginal; ~0 certifies Gaussianity.
inline Vec excess_kurtosis(const GridPosterior& p) {
  Vec out(p.dims);
  for (int d = 0; d < p.dims; ++d) {
    Eigen::ArrayXd marg = Eigen::ArrayXd::Zero(p.npts);
    if (p.dims == 1) {
      marg = p.w;
    } else {
      for (int i0 = 0; i0 < p.npts; ++i0)
        for (int i1 = 0; i1 < p.npts; ++i1)
          marg[d == 0 ? i0 : i1] += p.w[static_cast<Eigen::Index>(i0) * p.npts + i1];
    }
    const double total = marg.sum();
    double mean = 0.0;
    for (int i = 0; i < p.npts; ++i) mean += marg[i] * p.coord(d, i);
    mean /= total;
    double m2 = 0.0, m4 = 0.0;
    for (int i = 0; i < p.npts; ++i) {
      const double dd = p.coord(d, i) - mean;
      m2 += marg[i] * dd * dd;
      m4 += marg[i] * dd * dd * dd * dd;
    }
    m2 /= total;
    m4 /= total;
    out[d] = m4 / (m2 * m2) - 3.0;
  }
  return out;
}

/// Runs the filter and the quadrature oracle side by side over every
/// decision pattern of the given length and reports the worst deviations.
/// Transmitted values are deterministic, scaled to about one standard
/// deviation so the grid comfortably contains the posterior.
struct EquivalenceReport {
  double max_mean_dev = 0.0;  // relative, floor 1 on the denominator
  double max_cov_dev = 0.0;
  double max_kurtosis = 0.0;
  int patterns = 0;
};

inline EquivalenceReport run_equivalence_suite(const model::SystemModel& m,
                                               const trigger::TriggerDesign& d, int steps,
                                               const GridSpec& gs = {}) {
  const model::StationaryStats stats = model::stationary_stats(m);
  Conv2Cache cache;
  EquivalenceReport rep;

  struct Node {
    GridPosterior post;
    filter::EstimatorState st;
  };

  const auto transmit_value = [&](int step, int i) {
    Vec v(m.sizes[i]);
    for (int j = 0; j < m.sizes[i]; ++j)
      v[j] = (0.4 * (step + 1) - 0.15 * i + 0.1 * j) * std::sqrt(stats.Pi_blocks[i].m()(j, j));
    return v;
  };

  const auto compare = [&](const GridPosterior& post, const filter::EstimatorState& st) {
    const Moments mo = moments(post);
    const double mean_scale = 1.0 + st.x_post.norm();
    const double cov_scale = 1.0 + st.P_post.m().norm();
    rep.max_mean_dev = std::max(rep.max_mean_dev, (mo.mean - st.x_post).norm() / mean_scale);
    rep.max_cov_dev = std::max(rep.max_cov_dev, (mo.cov - st.P_post.m()).norm() / cov_scale);
    rep.max_kurtosis =
        std::max(rep.max_kurtosis, excess_kurtosis(post).cwiseAbs().maxCoeff());
  };

  std::vector<Node> level;
  level.push_back({make_gaussian_prior(m, gs), filter::initial_state(m)});

  for (int step = 0; step < steps; ++step) {
    std::vector<Node> next;
    for (Node& node : level) {
      if (step > 0) {
        node.post = propagate(node.post, m, &cache);
        node.st = filter::time_update(node.st, m);
      }
      const int combos = 1 << m.num_sensors();
      for (int mask = 0; mask < combos; ++mask) {
        std::vector<int> gamma(m.num_sensors());
        Vec y_full = Vec::Zero(m.s());
        GridPosterior post = node.post;
        for (int i = 0; i < m.num_sensors(); ++i) {
          gamma[i] = (mask >> i) & 1;
          if (gamma[i]) {
            const Vec v = transmit_value(step, i);
            y_full.segment(m.offsets[i], m.sizes[i]) = v;
            post = condition_on_transmit(post, m, i, v);
          } else {
            post = condition_on_drop(post, m, d, i);
          }
        }
        auto dec = trigger::DecisionVector::from_gamma(gamma, m.sizes);
        auto rec = filter::TransmissionRecord::from_measurement(y_full, std::move(dec), m);
        filter::EstimatorState st = filter::measurement_update(node.st, m, d, rec);
        compare(post, st);
        ++rep.patterns;
        if (step + 1 < steps) next.push_back({std::move(post), std::move(st)});
      }
    }
    level = std::move(next);
  }
  return rep;
}

}  // namespace evest::oracle
