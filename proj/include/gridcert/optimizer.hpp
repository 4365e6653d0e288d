#pragma once

// Largest certified disturbance magnitude:
//
//   maximize   c' ubar
//   subject to gamma_zu ubar <= (I - gamma_zv diag(cos|phi*|)) zbar
//                               - gamma_zv sin|phi*| + gamma_zv sin(|phi*| + zbar)
//              gamma_yu ubar + gamma_yv gamma_psi(zbar) zbar <= ybar
//              ubar >= 0,  0 <= zbar <= pi - |phi*|
//
// Every constraint is linear in ubar and concave in zbar, so the feasible set
// is convex. It is solved with a log-barrier Newton method.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridcert/certificates.hpp"
#include "gridcert/core.hpp"
#include "gridcert/gain.hpp"

namespace gridcert {

struct OptProblem {
  GainMatrices gains;
  Vector phi_star;
  Vector direction;  // c >= 0, one entry per disturbance input
  Vector ybar;       // Hz per generator; +inf disables a limit
  Vector domain;     // per-line upper bound on zbar
  bool linear_only = false;  // force gamma_psi = 0
};

inline OptProblem make_problem(const GainMatrices& g, const Vector& phi_star, const Vector& direction,
                               const Vector& ybar) {
  return {g, phi_star, direction, ybar, zbar_domain(phi_star), false};
}

enum class OptMode { DirectionCoupled, Free };

struct SolverStats {
  int outer_iterations = 0;
  int newton_iterations = 0;
  double duality_gap = 0.0;
  double min_margin = 0.0;
};

struct OptSolution {
  double mu_star = 0.0;
  Vector ubar_star, zbar_star;
  CertificateResult certificate;
  SolverStats stats;
};

namespace detail {

inline void validate_problem(const OptProblem& p) {
  const Index nu = p.gains.zu.cols(), L = p.gains.zv.rows(), m = p.gains.yu.rows();
  if (p.direction.size() != nu) throw InputError("optimizer: direction has wrong length");
  if (p.phi_star.size() != L || p.domain.size() != L) throw InputError("optimizer: line count mismatch");
  if (p.ybar.size() != m) throw InputError("optimizer: ybar has wrong length");
  if ((p.direction.array() < 0.0).any()) throw InputError("optimizer: direction must be nonnegative");
  if (!(p.direction.maxCoeff() > 0.0)) throw InputError("optimizer: degenerate direction (c = 0)");
  if ((p.ybar.array() <= 0.0).any()) throw InputError("optimizer: infeasible ybar (nonpositive limit)");
  for (Index i = 0; i < L; ++i) {
    if (std::abs(p.phi_star(i)) > kPi / 2) throw InputError("optimizer: |phi*| exceeds pi/2");
    if (!(p.domain(i) > 0.0) || p.domain(i) > kPi - std::abs(p.phi_star(i)) + 1e-12)
      throw InputError("optimizer: zbar domain outside the convex region");
  }
}

// Constraint rows of the problem for a fixed variable layout. Row r reads
//   slack_r(zbar) - coef_r' v - eps_r >= 0
// where v is either [mu] or the supported entries of ubar.
struct RowSet {
  Matrix coef;       // rows x nv
  Matrix zv_like;    // rows x L, weights of the sector products
  Vector offset;     // ybar for frequency rows, 0 for angle rows
  Vector linear_z;   // 1 on angle rows (the +zbar_i term), 0 otherwise
  Vector eps;
  std::vector<std::string> labels;
};

inline RowSet build_rows(const OptProblem& p, const Matrix& input_map) {
  const auto& g = p.gains;
  const Index L = g.zv.rows(), m = g.yu.rows();
  std::vector<Index> finite_y;
  for (Index k = 0; k < m; ++k)
    if (std::isfinite(p.ybar(k))) finite_y.push_back(k);
  const Index rows = L + static_cast<Index>(finite_y.size());
  RowSet r;
  r.coef.resize(rows, input_map.cols());
  r.zv_like.resize(rows, L);
  r.offset = Vector::Zero(rows);
  r.linear_z = Vector::Zero(rows);
  r.eps = Vector::Zero(rows);
  r.coef.topRows(L) = g.zu * input_map;
  r.zv_like.topRows(L) = g.zv;
  r.eps.head(L).setConstant(2.0 * kStrictMargin);
  for (Index i = 0; i < L; ++i) {
    r.linear_z(i) = 1.0;
    r.labels.push_back(i < static_cast<Index>(g.z_labels.size()) ? g.z_labels[static_cast<std::size_t>(i)]
                                                                 : "z" + std::to_string(i));
  }
  for (std::size_t q = 0; q < finite_y.size(); ++q) {
    const Index k = finite_y[q], row = L + static_cast<Index>(q);
    r.coef.row(row) = g.yu.row(k) * input_map;
    r.zv_like.row(row) = g.yv.row(k);
    r.offset(row) = p.ybar(k);
    r.labels.push_back(k < static_cast<Index>(g.y_labels.size()) ? g.y_labels[static_cast<std::size_t>(k)]
                                                                 : "y" + std::to_string(k));
  }
  if (p.linear_only) r.zv_like.setZero();
  return r;
}

struct SectorTerms {
  Vector value, slope, curvature;
};

inline SectorTerms sector_terms(const Vector& phi_star, const Vector& zbar) {
  const Index L = zbar.size();
  SectorTerms s{Vector(L), Vector(L), Vector(L)};
  for (Index i = 0; i < L; ++i) {
    const auto sp = sector_product(phi_star(i), zbar(i));
    s.value(i) = sp.value;
    s.slope(i) = sp.slope;
    s.curvature(i) = sp.curvature;
  }
  return s;
}

// slack_r(zbar) - eps_r, before subtracting the disturbance term
inline Vector row_slack(const RowSet& r, const Vector& phi_star, const Vector& zbar) {
  const Vector q = sector_terms(phi_star, zbar).value;
  Vector s = r.offset - r.zv_like * q - r.eps;
  const Index L = zbar.size();
  s.head(L) += zbar;
  return s;
}

}  // namespace detail

/// Direction for the coupled mode: ubar = mu * c / (c'c), so that c' ubar = mu.
inline Vector coupled_direction(const Vector& c) { return c / c.squaredNorm(); }

/// Solves the convex program. In DirectionCoupled mode ubar is restricted to
/// mu * c / (c'c); in Free mode every ubar entry with c_k > 0 is a variable and
/// the others stay at zero (gains are nonnegative, so that loses nothing).
inline OptSolution max_disturbance(const OptProblem& p, OptMode mode = OptMode::DirectionCoupled) {
  detail::validate_problem(p);
  const Index nu = p.direction.size(), L = p.phi_star.size();

  Matrix input_map;  // ubar = input_map * v
  Vector objective;
  if (mode == OptMode::DirectionCoupled) {
    input_map = coupled_direction(p.direction);
    objective = Vector::Ones(1);
  } else {
    std::vector<Index> support;
    for (Index k = 0; k < nu; ++k)
      if (p.direction(k) > 0.0) support.push_back(k);
    input_map = Matrix::Zero(nu, static_cast<Index>(support.size()));
    objective.resize(static_cast<Index>(support.size()));
    for (std::size_t q = 0; q < support.size(); ++q) {
      input_map(support[q], static_cast<Index>(q)) = 1.0;
      objective(static_cast<Index>(q)) = p.direction(support[q]);
    }
  }
  const detail::RowSet rows = detail::build_rows(p, input_map);
  const Index nv = input_map.cols(), R = rows.coef.rows(), dim = nv + L;

  for (Index j = 0; j < nv; ++j)
    if (!(rows.coef.col(j).maxCoeff() > 0.0))
      throw InputError("optimizer: degenerate direction, disturbance unbounded along input " +
                       std::to_string(j));

  // strictly feasible start: small zbar, then a fraction of the admissible v
  Vector zbar = 0.5 * p.domain;
  Vector base;
  for (int halving = 0;; ++halving) {
    base = detail::row_slack(rows, p.phi_star, zbar);
    if ((base.array() > 0.0).all()) break;
    if (halving > 60) throw NumericalError("optimizer: no strictly feasible starting point");
    zbar *= 0.5;
  }
  Vector v(nv);
  {
    double theta = kInf;
    for (Index r = 0; r < R; ++r) {
      const double load = rows.coef.row(r).sum();
      if (load > 0.0) theta = std::min(theta, base(r) / load);
    }
    v.setConstant(0.5 * theta);
  }

  auto pack = [&](const Vector& vv, const Vector& zz) {
    Vector w(dim);
    w << vv, zz;
    return w;
  };
  auto constraints = [&](const Vector& w) {
    const Vector zz = w.tail(L);
    return Vector(detail::row_slack(rows, p.phi_star, zz) - rows.coef * w.head(nv));
  };
  auto interior = [&](const Vector& w) {
    if ((w.head(nv).array() <= 0.0).any()) return false;
    const Vector zz = w.tail(L);
    if ((zz.array() <= 0.0).any() || ((p.domain - zz).array() <= 0.0).any()) return false;
    return (constraints(w).array() > 0.0).all();
  };
  auto barrier = [&](const Vector& w, double t) {
    const Vector zz = w.tail(L);
    const Vector g = constraints(w);
    return -t * objective.dot(w.head(nv)) - g.array().log().sum() - w.head(nv).array().log().sum() -
           zz.array().log().sum() - (p.domain - zz).array().log().sum();
  };

  Vector w = pack(v, zbar);
  SolverStats stats;
  const double terms = static_cast<double>(R + nv + 2 * L);
  double t = 1.0;
  for (int outer = 0; outer < 60; ++outer) {
    ++stats.outer_iterations;
    for (int it = 0; it < 200; ++it) {
      const Vector zz = w.tail(L);
      const auto sec = detail::sector_terms(p.phi_star, zz);
      const Vector g = constraints(w);
      const Vector ginv = g.cwiseInverse();

      // gradient of each row: [-coef_r, d slack_r / d zbar]
      Matrix J(R, dim);
      J.leftCols(nv) = -rows.coef;
      J.rightCols(L) = -(rows.zv_like * sec.slope.asDiagonal());
      for (Index i = 0; i < L; ++i) J(i, nv + i) += 1.0;

      Vector grad = Vector::Zero(dim);
      grad.head(nv) = -t * objective - w.head(nv).cwiseInverse();
      grad.tail(L) = -zz.cwiseInverse() + (p.domain - zz).cwiseInverse();
      grad -= J.transpose() * ginv;

      Matrix H = J.transpose() * ginv.asDiagonal() * ginv.asDiagonal() * J;
      // -Hess(g_r)/g_r: Hess(g_r) = -diag(zv_like_r .* curvature) in the zbar block
      const Vector curv = (rows.zv_like.transpose() * ginv).cwiseProduct(sec.curvature);
      for (Index i = 0; i < L; ++i)
        H(nv + i, nv + i) += curv(i) + 1.0 / (zz(i) * zz(i)) +
                             1.0 / ((p.domain(i) - zz(i)) * (p.domain(i) - zz(i)));
      for (Index j = 0; j < nv; ++j) H(j, j) += 1.0 / (w(j) * w(j));

      const Vector step = H.ldlt().solve(-grad);
      const double decrement = -grad.dot(step);
      ++stats.newton_iterations;
      if (!step.allFinite()) throw NumericalError("optimizer: singular Newton system");
      if (decrement < 1e-14) break;

      const double f0 = barrier(w, t);
      double a = 1.0;
      for (int ls = 0; ls < 80; ++ls, a *= 0.5) {
        const Vector trial = w + a * step;
        if (interior(trial) && barrier(trial, t) <= f0 - 0.25 * a * decrement) {
          w = trial;
          break;
        }
        if (ls == 79) a = 0.0;
      }
      if (a == 0.0) break;
    }
    stats.duality_gap = terms / t;
    if (stats.duality_gap < 1e-10 * std::max(1.0, std::abs(objective.dot(w.head(nv))))) break;
    t *= 10.0;
  }

  zbar = w.tail(L);
  v = w.head(nv);
  if (mode == OptMode::DirectionCoupled) {
    // exact inner maximum at the final zbar
    const Vector slack = detail::row_slack(rows, p.phi_star, zbar);
    double mu = kInf;
    for (Index r = 0; r < R; ++r)
      if (rows.coef(r, 0) > 0.0) mu = std::min(mu, slack(r) / rows.coef(r, 0));
    mu *= 1.0 - 1e-12;
    if (mu > v(0)) v(0) = mu;
  }

  OptSolution sol;
  sol.zbar_star = zbar;
  sol.ubar_star = (input_map * v).cwiseMax(0.0);
  sol.mu_star = p.direction.dot(sol.ubar_star);
  const Vector psi = p.linear_only ? Vector(Vector::Zero(L)) : sector_gains(p.phi_star, zbar).diag;
  sol.certificate = evaluate_certificate(p.gains, psi, sol.ubar_star, zbar, p.ybar);
  if (!sol.certificate.cico_ok)
    throw NumericalError("optimizer: solution failed certificate re-validation");
  stats.min_margin = sol.certificate.margins.minCoeff();
  sol.stats = stats;
  return sol;
}

// ---------------------------------------------------------------------------

struct SweepPoint {
  double grid_value = 0.0;
  Vector zbar;
  double mu = 0.0;
  std::string binding_row;
  double small_gain_margin = 0.0;  // 1 - rho(gamma_zv gamma_psi(zbar))
  double ybound = 0.0;             // max over generators of the certified frequency bound at mu
};

/// Certified mu as a function of zbar along the coupled direction. With
/// `uniform` the grid value is the same zbar on every line (clipped to the
/// line's domain); otherwise it is a fraction of each line's domain.
inline std::vector<SweepPoint> sweep_zbar(const OptProblem& p, const std::vector<double>& grid,
                                          bool uniform = true) {
  detail::validate_problem(p);
  const Index L = p.phi_star.size();
  const Vector d = coupled_direction(p.direction);
  const detail::RowSet rows = detail::build_rows(p, d);
  std::vector<SweepPoint> out;
  out.reserve(grid.size());
  for (double s : grid) {
    SweepPoint pt;
    pt.grid_value = s;
    pt.zbar.resize(L);
    for (Index i = 0; i < L; ++i) pt.zbar(i) = uniform ? std::min(s, p.domain(i)) : s * p.domain(i);
    if ((pt.zbar.array() < 0.0).any()) throw InputError("sweep: negative grid value");

    const Vector psi = p.linear_only ? Vector(Vector::Zero(L)) : sector_gains(p.phi_star, pt.zbar).diag;
    const double rho = spectral_radius(p.gains.zv * psi.asDiagonal());
    pt.small_gain_margin = 1.0 - rho;

    const Vector slack = detail::row_slack(rows, p.phi_star, pt.zbar);
    double mu = kInf;
    Index binding = -1;
    for (Index r = 0; r < rows.coef.rows(); ++r) {
      const double a = rows.coef(r, 0);
      if (a > 0.0) {
        if (slack(r) / a < mu) {
          mu = slack(r) / a;
          binding = r;
        }
      } else if (slack(r) < 0.0) {
        mu = 0.0;
        binding = r;
        break;
      }
    }
    if (rho >= 1.0 || mu <= 0.0) mu = 0.0;
    if (std::isinf(mu)) throw InputError("sweep: direction is unconstrained");
    pt.mu = mu * (1.0 - 1e-12);
    if (binding >= 0) pt.binding_row = rows.labels[static_cast<std::size_t>(binding)];
    const Vector ubar = pt.mu * d;
    pt.ybound = (p.gains.yu * ubar + p.gains.yv * psi.cwiseProduct(pt.zbar)).maxCoeff();
    out.push_back(std::move(pt));
  }
  return out;
}

inline nlohmann::json to_json(const OptSolution& s) {
  return {{"mu_star", s.mu_star},
          {"ubar_star", json_vector(s.ubar_star)},
          {"zbar_star", json_vector(s.zbar_star)},
          {"certificate", to_json(s.certificate)},
          {"solver_stats",
           {{"outer_iterations", s.stats.outer_iterations},
            {"newton_iterations", s.stats.newton_iterations},
            {"duality_gap", s.stats.duality_gap},
            {"min_margin", s.stats.min_margin}}}};
}

}  // namespace gridcert
