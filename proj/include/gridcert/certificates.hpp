#pragma once

// M-matrix tests and the small-gain certificates (bounded input, constrained
// input, constrained input with constrained output).

#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridcert/core.hpp"
#include "gridcert/gain.hpp"

namespace gridcert {

struct PerronResult {
  double rho = 0.0;
  Vector vector;  // positive approximate Perron vector, max-normalized
  int iterations = 0;
  bool converged = false;
};

/// Spectral radius of an entrywise nonnegative matrix by power iteration on
/// Z + I (whose dominant eigenvalue rho + 1 is strictly dominant in modulus),
/// bracketed by the Collatz-Wielandt bounds
///   min_i (Zx)_i / x_i <= rho <= max_i (Zx)_i / x_i   for x > 0.
inline PerronResult perron_root(const Matrix& Z, double tol = 1e-12, int max_iter = 10000) {
  const Index n = Z.rows();
  PerronResult r;
  if (n == 0) return r;
  Vector x = Vector::Ones(n);
  for (int it = 1; it <= max_iter; ++it) {
    const Vector zx = Z * x;
    double lo = kInf, hi = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double q = zx(i) / x(i);
      lo = std::min(lo, q);
      hi = std::max(hi, q);
    }
    r.iterations = it;
    r.rho = 0.5 * (lo + hi);
    if (hi - lo <= tol * std::max(1.0, hi)) {
      r.converged = true;
      break;
    }
    x = zx + x;
    x /= x.maxCoeff();
  }
  if (!r.converged) {
    Eigen::EigenSolver<Matrix> es(Z, false);
    r.rho = es.eigenvalues().cwiseAbs().maxCoeff();
  }
  r.vector = x;
  return r;
}

inline double spectral_radius(const Matrix& Z) { return perron_root(Z).rho; }

struct MMatrixReport {
  double rho = 0.0;
  bool inverse_positive = false;
  std::optional<Vector> positive_vector;  // x >= 0 with (I - Z) x > 0
  Matrix inverse;                         // (I - Z)^-1 when nonsingular
};

/// Evaluates the three equivalent M-matrix conditions on I - Z separately:
/// rho(Z) < 1, entrywise nonnegativity of (I - Z)^-1, and a nonnegative x with
/// (I - Z) x > 0 (candidate x = (I - Z)^-1 1, verified by multiplication).
inline MMatrixReport mmatrix_checks(const Matrix& Z, double slack = 1e-10) {
  if (Z.rows() != Z.cols()) throw InputError("mmatrix_checks: matrix must be square");
  if ((Z.array() < 0.0).any()) throw InputError("mmatrix_checks: matrix must be nonnegative");
  const Index n = Z.rows();
  MMatrixReport rep;
  rep.rho = spectral_radius(Z);

  const Matrix IZ = Matrix::Identity(n, n) - Z;
  Eigen::FullPivLU<Matrix> lu(IZ);
  if (!lu.isInvertible()) return rep;
  rep.inverse = lu.inverse();
  if (!rep.inverse.allFinite()) return rep;
  const double scale = std::max(1.0, rep.inverse.cwiseAbs().maxCoeff());
  rep.inverse_positive = (rep.inverse.array() >= -slack * scale).all();

  const Vector x = lu.solve(Vector::Ones(n));
  const Vector r = IZ * x;
  const double xs = std::max(1.0, x.cwiseAbs().maxCoeff());
  if ((x.array() >= -slack * xs).all() && (r.array() > 0.0).all())
    rep.positive_vector = x.cwiseMax(0.0);
  return rep;
}

// ---------------------------------------------------------------------------

struct BiboResult {
  bool ok = false;
  double rho = 0.0;
  Matrix gamma_H;  // closed-loop gain u -> y, set when ok
};

/// Small-gain test rho(gamma_zv * gamma_psi) < 1 and, when it holds, the
/// closed-loop gain gamma_yu + gamma_yv G (I - gamma_zv G)^-1 gamma_zu.
inline BiboResult check_bibo(const GainMatrices& g, const SectorGain& psi) {
  if (!g.zv.allFinite() || !g.zu.allFinite() || !g.yu.allFinite() || !g.yv.allFinite())
    throw InputError("check_bibo: gains must be finite");
  const Matrix Z = g.zv * psi.diag.asDiagonal();
  BiboResult r;
  r.rho = spectral_radius(Z);
  r.ok = r.rho < 1.0;
  if (r.ok) {
    const Matrix IZ = Matrix::Identity(Z.rows(), Z.cols()) - Z;
    r.gamma_H = g.yu + g.yv * psi.diag.asDiagonal() * IZ.partialPivLu().solve(g.zu);
  }
  return r;
}

struct CertificateResult {
  Vector ubar, zbar, ybar;
  bool bibo_ok = false, cibo_ok = false, cico_ok = false;
  double spectral_radius = 0.0;
  Vector margins;  // lines first (angle condition), then generators (frequency)

  Vector angle_margins() const { return margins.head(zbar.size()); }
  Vector frequency_margins() const { return margins.tail(ybar.size()); }
};

namespace detail {

inline void check_certificate_args(const GainMatrices& g, const Vector& phi_star,
                                   const Vector& ubar, const Vector& zbar) {
  if (ubar.size() != g.zu.cols()) throw InputError("certificate: ubar has wrong length");
  if (zbar.size() != g.zv.rows() || phi_star.size() != zbar.size())
    throw InputError("certificate: zbar has wrong length");
  if ((ubar.array() < 0.0).any()) throw InputError("certificate: ubar must be nonnegative");
  if ((zbar.array() < 0.0).any()) throw InputError("certificate: zbar must be nonnegative");
}

}  // namespace detail

/// Both certificate inequalities for an explicit sector-gain vector.
inline CertificateResult evaluate_certificate(const GainMatrices& g, const Vector& psi_diag,
                                              const Vector& ubar, const Vector& zbar,
                                              const Vector& ybar) {
  if (ybar.size() != g.yu.rows()) throw InputError("certificate: ybar has wrong length");
  if ((ybar.array() <= 0.0).any()) throw InputError("certificate: ybar must be positive");
  const Index L = zbar.size(), m = ybar.size();
  CertificateResult c;
  c.ubar = ubar;
  c.zbar = zbar;
  c.ybar = ybar;

  const Matrix Z = g.zv * psi_diag.asDiagonal();
  c.spectral_radius = spectral_radius(Z);
  c.bibo_ok = c.spectral_radius < 1.0;

  c.margins.resize(L + m);
  c.margins.head(L) = zbar - Z * zbar - g.zu * ubar;
  const Vector ylhs = g.yu * ubar + g.yv * psi_diag.cwiseProduct(zbar);
  for (Index k = 0; k < m; ++k)
    c.margins(L + k) = std::isinf(ybar(k)) ? kInf : ybar(k) - ylhs(k);

  c.cibo_ok = c.bibo_ok && (c.margins.head(L).array() >= kStrictMargin).all();
  c.cico_ok = c.cibo_ok && (c.margins.tail(m).array() >= 0.0).all();
  return c;
}

struct CiboResult {
  bool ok = false;
  double rho = 0.0;
  Vector margins;
};

/// gamma_zu ubar < (I - gamma_zv gamma_psi(zbar)) zbar, row-wise with margin.
inline CiboResult check_cibo(const GainMatrices& g, const Vector& phi_star, const Vector& ubar,
                             const Vector& zbar) {
  detail::check_certificate_args(g, phi_star, ubar, zbar);
  const Vector psi = sector_gains(phi_star, zbar).diag;
  const Vector ybar = Vector::Constant(g.yu.rows(), kInf);
  const auto c = evaluate_certificate(g, psi, ubar, zbar, ybar);
  return {c.cibo_ok, c.spectral_radius, c.angle_margins()};
}

/// Full certificate. A +inf entry in ybar disables that frequency limit. The
/// guarantees hold for trajectories starting at the equilibrium.
inline CertificateResult check_cico(const GainMatrices& g, const Vector& phi_star, const Vector& ubar,
                                    const Vector& zbar, const Vector& ybar) {
  detail::check_certificate_args(g, phi_star, ubar, zbar);
  return evaluate_certificate(g, sector_gains(phi_star, zbar).diag, ubar, zbar, ybar);
}

// ---------------------------------------------------------------------------

inline nlohmann::json json_vector(const Vector& v) {
  auto a = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(v(i)))
      a.push_back(v(i));
    else
      a.push_back(nullptr);  // unconstrained
  }
  return a;
}

inline nlohmann::json to_json(const CertificateResult& c) {
  return {{"ubar", json_vector(c.ubar)},
          {"zbar", json_vector(c.zbar)},
          {"ybar", json_vector(c.ybar)},
          {"bibo_ok", c.bibo_ok},
          {"cibo_ok", c.cibo_ok},
          {"cico_ok", c.cico_ok},
          {"spectral_radius", c.spectral_radius},
          {"margins", json_vector(c.margins)}};
}

}  // namespace gridcert
