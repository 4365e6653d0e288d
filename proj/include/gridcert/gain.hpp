#pragma once

// Element-wise L-infinity induced gains.
//
// Linear block: gamma_ij = integral_0^inf |h_ij(t)| dt, the L1 norm of the
// impulse response of channel (i, j). Nonlinearity: the sector gain
// gamma_psi(zbar) = sup_{|z| <= zbar} |psi(z) / z| of each line.

#include <chrono>
#include <complex>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "gridcert/core.hpp"
#include "gridcert/lure.hpp"

namespace gridcert {

struct GainMatrices {
  Matrix yu, yv, zu, zv;
  double tail_bound = 0.0;        // largest certified tail added to an entry
  double quadrature_error = 0.0;  // largest quadrature error estimate added
  double horizon = 0.0;           // integration end time (s)
  long steps = 0;
  double elapsed_seconds = 0.0;
  std::vector<std::string> y_labels, z_labels, u_labels, v_labels;

  std::size_t num_inputs() const { return static_cast<std::size_t>(yu.cols()); }
  std::size_t num_lines() const { return static_cast<std::size_t>(zv.rows()); }
  std::size_t num_generators() const { return static_cast<std::size_t>(yu.rows()); }
};

struct GainOptions {
  double rel_tol = 1e-8;       // stop once the decaying state is below rel_tol * peak
  double max_step = 1e-2;      // s
  double step_factor = 0.05;   // h <= step_factor / |lambda| over live modes
  double live_threshold = 1e-12;
  bool frequency_in_hz = true;
};

namespace detail {

// Integral of |linear interpolant| between samples a and b over width h.
inline double abs_segment(double a, double b, double h) {
  if (a * b >= 0.0) return 0.5 * h * (std::abs(a) + std::abs(b));
  const double s = std::abs(a) + std::abs(b);
  return 0.5 * h * (a * a + b * b) / s;
}

inline void accumulate_abs(Matrix& sum, const Matrix& a, const Matrix& b, double h) {
  for (Index j = 0; j < sum.cols(); ++j)
    for (Index i = 0; i < sum.rows(); ++i) sum(i, j) += abs_segment(a(i, j), b(i, j), h);
}

}  // namespace detail

/// Computes the four gain blocks by stepping the impulse responses of every
/// input column with the exact propagator exp(A h). Steps start at
/// step_factor / |lambda|_max and double as fast modes die out, capped by
/// max_step. Each entry is an upper estimate: trapezoid with zero-crossing
/// splitting and one Richardson step, plus an error estimate from a third
/// step level, plus an exponential tail.
inline GainMatrices linear_gains(const LureSystem& sys, const GainOptions& opt = {}) {
  const auto start = std::chrono::steady_clock::now();
  const Index N = sys.state_dim();
  const Index nu = sys.num_inputs();
  const Index L = static_cast<Index>(sys.lines);
  const Index m = static_cast<Index>(sys.m);
  const Index ncol = nu + L;
  const Index nout = m + L;

  const auto ev = decaying_eigenvalues(sys);
  double alpha = kInf, fastest = 0.0;
  for (const auto& e : ev) {
    alpha = std::min(alpha, -e.real());
    fastest = std::max(fastest, std::abs(e));
  }
  if (ev.empty()) alpha = 1.0;
  if (!(alpha > 1e-8))
    throw NumericalError("gain: non-decaying impulse response (slowest mode real part " +
                         std::to_string(-alpha) + ")");

  auto target_step = [&](double t) {
    double fast = 0.0;
    for (const auto& e : ev)
      if (std::exp(e.real() * t) > opt.live_threshold) fast = std::max(fast, std::abs(e));
    return fast > 0.0 ? std::min(opt.max_step, opt.step_factor / fast) : opt.max_step;
  };

  Matrix B(N, ncol);
  B << sys.Bu, sys.Bv;
  const Matrix P = sys.stable_projector();
  Matrix X = P * B;
  Matrix C(nout, N);
  C << sys.Cy / (opt.frequency_in_hz ? kTwoPi : 1.0), sys.Cz;

  std::vector<double> level_h{target_step(0.0)};
  while (2.0 * level_h.back() <= opt.max_step * (1.0 + 1e-12)) level_h.push_back(2.0 * level_h.back());
  std::vector<Matrix> propagator(level_h.size());
  auto step_matrix = [&](std::size_t lvl) -> const Matrix& {
    if (propagator[lvl].size() == 0) propagator[lvl] = (sys.A * level_h[lvl]).exp();
    return propagator[lvl];
  };

  // trapezoid sums on steps h, 2h and 4h; the step only changes at multiples of 4
  Matrix t1 = Matrix::Zero(nout, ncol), t2 = t1, t4 = t1;
  Matrix prev = C * X, prev2 = prev, prev4 = prev;
  const double window = 1.0 / alpha;
  Matrix block_max = prev.cwiseAbs(), last_block_max = Matrix::Zero(nout, ncol);
  double block_start = 0.0;
  double peak = X.cwiseAbs().maxCoeff();
  if (peak == 0.0) peak = 1.0;

  const double t_max = 100.0 / alpha + 10.0;
  std::size_t lvl = 0;
  double t = 0.0, pair_h = 0.0, quad_h = 0.0;
  long k = 0;
  for (;;) {
    if (k % 4 == 0) {
      while (lvl + 1 < level_h.size() && level_h[lvl + 1] <= target_step(t)) ++lvl;
      if (k > 0 && X.cwiseAbs().maxCoeff() < opt.rel_tol * peak) break;
      if (t > t_max)
        throw NumericalError("gain: impulse response did not decay by t = " + std::to_string(t) + " s");
      if (k % 200 == 0) X = P * X;
    }
    const double h = level_h[lvl];
    X = step_matrix(lvl) * X;
    t += h;
    pair_h += h;
    quad_h += h;
    const Matrix cur = C * X;
    detail::accumulate_abs(t1, prev, cur, h);
    if (k % 2 == 1) {
      detail::accumulate_abs(t2, prev2, cur, pair_h);
      prev2 = cur;
      pair_h = 0.0;
    }
    if (k % 4 == 3) {
      detail::accumulate_abs(t4, prev4, cur, quad_h);
      prev4 = cur;
      quad_h = 0.0;
    }
    prev = cur;
    peak = std::max(peak, X.cwiseAbs().maxCoeff());
    if (t - block_start > window) {
      last_block_max = block_max;
      block_max.setZero();
      block_start = t;
    }
    block_max = block_max.cwiseMax(cur.cwiseAbs());
    ++k;
  }

  // One Richardson step removes the h^2 term. Zero crossings leave an h^3
  // term, so the spread between the two extrapolants is divided by 2^3 - 1.
  const Matrix r1 = t1 + (t1 - t2) / 3.0;
  const Matrix r2 = t2 + (t2 - t4) / 3.0;
  const Matrix quad = (r1 - r2).cwiseAbs() / 7.0;
  const Matrix tail = block_max.cwiseMax(last_block_max) / alpha;
  const Matrix gamma = r1 + quad + tail;

  GainMatrices g;
  g.yu = gamma.block(0, 0, m, nu);
  g.yv = gamma.block(0, nu, m, L);
  g.zu = gamma.block(m, 0, L, nu);
  g.zv = gamma.block(m, nu, L, L);
  g.tail_bound = tail.maxCoeff();
  g.quadrature_error = quad.maxCoeff();
  g.horizon = t;
  g.steps = k;
  g.y_labels = sys.y_labels;
  g.z_labels = sys.z_labels;
  g.u_labels = sys.input_labels;
  g.v_labels = sys.v_labels;
  g.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!gamma.allFinite()) throw NumericalError("gain: non-finite gain entry");
  return g;
}

// ---------------------------------------------------------------------------
// Sector gain of psi_i(z) = sin(phi + z) - sin(phi) - cos(phi) z.

struct SectorGain {
  Vector diag;
  Vector zbar;
};

namespace detail {

// psi(z) / z, continuous at z = 0
inline double psi_ratio(double phi, double z) {
  if (z == 0.0) return 0.0;
  return 2.0 * std::cos(phi + 0.5 * z) * std::sin(0.5 * z) / z - std::cos(phi);
}

// 1 - sin(z)/z
inline double one_minus_sinc(double z) {
  if (std::abs(z) < 1e-3) {
    const double z2 = z * z;
    return z2 / 6.0 - z2 * z2 / 120.0 + z2 * z2 * z2 / 5040.0;
  }
  return 1.0 - std::sin(z) / z;
}

inline void check_corollary_domain(double phi, double zbar) {
  const double a = std::abs(phi);
  if (!(zbar >= 0.0)) throw InputError("sector gain: zbar must be nonnegative");
  if (a > kPi / 2 + 1e-12) throw InputError("sector gain: |phi*| exceeds pi/2");
  if (a + zbar > kPi + 1e-12)
    throw InputError("sector gain: |phi*| + zbar exceeds pi, shrink zbar");
}

}  // namespace detail

/// sup over |z| <= zbar of |psi(z)/z| by dense sampling plus golden-section
/// polishing of the best sample.
inline double sector_gain_exact(double phi, double zbar) {
  if (!(zbar > 0.0)) return 0.0;
  auto f = [&](double z) { return std::abs(detail::psi_ratio(phi, z)); };
  constexpr int kSamples = 4000;
  const double dz = 2.0 * zbar / kSamples;
  double best = 0.0;
  int best_i = 0;
  for (int i = 0; i <= kSamples; ++i) {
    const double z = i == kSamples ? zbar : -zbar + i * dz;
    const double v = f(z);
    if (v > best) {
      best = v;
      best_i = i;
    }
  }
  double lo = std::max(-zbar, -zbar + (best_i - 1) * dz);
  double hi = std::min(zbar, -zbar + (best_i + 1) * dz);
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = hi - r * (hi - lo), b = lo + r * (hi - lo);
  double fa = f(a), fb = f(b);
  while (hi - lo > 1e-12 * std::max(1.0, zbar)) {
    if (fa < fb) {
      lo = a;
      a = b;
      fa = fb;
      b = lo + r * (hi - lo);
      fb = f(b);
    } else {
      hi = b;
      b = a;
      fb = fa;
      a = hi - r * (hi - lo);
      fa = f(a);
    }
  }
  return std::max({best, fa, fb, f(0.5 * (lo + hi))});
}

/// Closed-form upper bound on the sector gain,
///   cos|phi| - (sin(|phi| + zbar) - sin|phi|) / zbar,
/// valid for |phi| <= pi/2 and |phi| + zbar <= pi. Zero at zbar = 0.
inline double sector_gain_corollary(double phi, double zbar) {
  detail::check_corollary_domain(phi, zbar);
  if (zbar == 0.0) return 0.0;
  const double a = std::abs(phi);
  const double s = std::sin(0.5 * zbar);
  return std::cos(a) * detail::one_minus_sinc(zbar) + std::sin(a) * 2.0 * s * s / zbar;
}

/// gamma_psi(zbar) * zbar = cos|phi| zbar - sin(|phi| + zbar) + sin|phi|, with
/// its first and second derivatives in zbar. Convex on the closed-form domain.
struct SectorProduct {
  double value, slope, curvature;
};

inline SectorProduct sector_product(double phi, double zbar) {
  const double a = std::abs(phi);
  return {sector_gain_corollary(phi, zbar) * zbar, std::cos(a) - std::cos(a + zbar),
          std::sin(a + zbar)};
}

inline SectorGain sector_gains(const Vector& phi_star, const Vector& zbar) {
  if (phi_star.size() != zbar.size()) throw InputError("sector gain: length mismatch");
  SectorGain s{Vector(zbar.size()), zbar};
  for (Index i = 0; i < zbar.size(); ++i) s.diag(i) = sector_gain_corollary(phi_star(i), zbar(i));
  return s;
}

/// Largest zbar per line admitted by the closed-form bound: pi - |phi*|.
inline Vector zbar_domain(const Vector& phi_star) {
  return (kPi - phi_star.cwiseAbs().array()).matrix();
}

}  // namespace gridcert
