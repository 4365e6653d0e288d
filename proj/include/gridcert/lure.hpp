#pragma once

// Lur'e representation of the swing + governor dynamics around an equilibrium:
//
//   x' = A x + B_v v + B_u u,   v = psi(z),   y = C_y x,   z = C_z x
//
// with state x = [dG; wG; dL; pG], the angle/frequency/governor deviations.

#include <algorithm>
#include <complex>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "gridcert/core.hpp"
#include "gridcert/network.hpp"

namespace gridcert {

/// v = sin(phi* + z) - sin(phi*) - diag(cos phi*) z, elementwise.
inline Vector nonlinearity(const Vector& phi_star, const Vector& z) {
  if (phi_star.size() != z.size()) throw InputError("nonlinearity: length mismatch");
  Vector v(z.size());
  for (Index i = 0; i < z.size(); ++i) {
    const double a = phi_star(i), d = z(i);
    // sin(a + d) - sin(a) = 2 cos(a + d/2) sin(d/2), free of cancellation
    v(i) = 2.0 * std::cos(a + 0.5 * d) * std::sin(0.5 * d) - std::cos(a) * d;
  }
  return v;
}

struct LureSystem {
  Matrix A, Bv, Bu, Cy, Cz;
  Vector phi_star;

  std::size_t m = 0;          // generators
  std::size_t n = 0;          // dynamic load buses (infinite bus excluded)
  std::size_t lines = 0;
  std::size_t governors = 0;  // generators with T > 0

  /// Right/left eigenvectors of the uniform angle-shift mode, normalized so
  /// that w0' v0 = 1. Empty when an infinite bus pins the angles.
  Vector shift_mode;
  Vector shift_mode_left;

  std::vector<int> input_bus;  // bus id of each disturbance column
  std::vector<std::string> input_labels, y_labels, z_labels, v_labels;

  Index state_dim() const { return A.rows(); }
  Index num_inputs() const { return Bu.cols(); }
  bool has_shift_mode() const { return shift_mode.size() > 0; }

  /// Projector onto the decaying subspace (identity without a shift mode).
  Matrix stable_projector() const {
    Matrix P = Matrix::Identity(state_dim(), state_dim());
    if (has_shift_mode()) P -= shift_mode * shift_mode_left.transpose();
    return P;
  }

  /// A x + B_v psi(C_z x) + B_u u
  Vector rhs(const Vector& x, const Vector& u) const {
    return A * x + Bv * nonlinearity(phi_star, Cz * x) + Bu * u;
  }

  void dump_csv(std::ostream& os) const {
    os << "block,row";
    for (Index j = 0; j < state_dim(); ++j) os << ",x" << j;
    os << '\n';
    auto rows = [&](const char* label, const Matrix& M) {
      for (Index i = 0; i < M.rows(); ++i) {
        os << label << ',' << i;
        for (Index j = 0; j < M.cols(); ++j) os << ',' << M(i, j);
        os << '\n';
      }
    };
    rows("A", A);
    rows("Bv^T", Bv.transpose());
    rows("Bu^T", Bu.transpose());
    rows("Cy", Cy);
    rows("Cz", Cz);
  }
};

struct LureOptions {
  double eigen_tolerance = 1e-8;
  bool check_stability = true;
};

inline std::string line_label(const Line& l) {
  return std::to_string(l.from) + "-" + std::to_string(l.to);
}

/// Eigenvalues of A with the structural shift mode removed (if any).
inline std::vector<std::complex<double>> decaying_eigenvalues(const LureSystem& sys) {
  Eigen::EigenSolver<Matrix> es(sys.A, false);
  std::vector<std::complex<double>> ev(es.eigenvalues().begin(), es.eigenvalues().end());
  if (sys.has_shift_mode() && !ev.empty()) {
    auto it = std::min_element(ev.begin(), ev.end(), [](auto a, auto b) { return std::abs(a) < std::abs(b); });
    ev.erase(it);
  }
  return ev;
}

inline LureSystem build_lure(const GridCase& c, const Equilibrium& eq, const LureOptions& opt = {}) {
  LureSystem s;
  const std::size_t m = c.num_generators();
  std::vector<std::size_t> load_bus;  // internal indices of dynamic loads
  for (std::size_t k = 0; k < c.num_loads(); ++k)
    if (!c.is_infinite(m + k)) load_bus.push_back(m + k);
  const std::size_t n = load_bus.size();
  const std::size_t L = c.num_lines();
  std::vector<std::size_t> gov;
  for (std::size_t g = 0; g < m; ++g)
    if (c.generators[g].has_governor()) gov.push_back(g);

  s.m = m;
  s.n = n;
  s.lines = L;
  s.governors = gov.size();
  s.phi_star = eq.phi_star;
  for (std::size_t l = 0; l < L; ++l)
    if (std::abs(eq.phi_star(static_cast<Index>(l))) > kPi / 2)
      throw InputError("lure: equilibrium line angle exceeds pi/2");

  const Index im = static_cast<Index>(m), in = static_cast<Index>(n), iL = static_cast<Index>(L),
              ig = static_cast<Index>(gov.size());
  const Index o1 = 0, o2 = im, o3 = 2 * im, o4 = 2 * im + in;
  const Index N = 2 * im + in + ig;

  const Matrix E = c.incidence();
  Matrix EG(im, iL), EL(in, iL);
  for (Index g = 0; g < im; ++g) EG.row(g) = E.row(g);
  for (Index k = 0; k < in; ++k) EL.row(k) = E.row(static_cast<Index>(load_bus[static_cast<std::size_t>(k)]));

  Vector phi(iL), w(iL);
  for (Index l = 0; l < iL; ++l) {
    phi(l) = c.lines[static_cast<std::size_t>(l)].phi;
    w(l) = phi(l) * std::cos(eq.phi_star(l));
  }
  Vector Minv(im), DG(im), DLinv(in);
  for (Index g = 0; g < im; ++g) {
    Minv(g) = 1.0 / c.generators[static_cast<std::size_t>(g)].M;
    DG(g) = c.generators[static_cast<std::size_t>(g)].D;
  }
  for (Index k = 0; k < in; ++k) DLinv(k) = 1.0 / c.loads[load_bus[static_cast<std::size_t>(k)] - m].D;

  const Matrix KGG = EG * w.asDiagonal() * EG.transpose();
  const Matrix KGL = EG * w.asDiagonal() * EL.transpose();
  const Matrix KLG = EL * w.asDiagonal() * EG.transpose();
  const Matrix KLL = EL * w.asDiagonal() * EL.transpose();

  s.A = Matrix::Zero(N, N);
  s.A.block(o1, o2, im, im).setIdentity();
  s.A.block(o2, o1, im, im) = -(Minv.asDiagonal() * KGG);
  s.A.block(o2, o2, im, im) = -(Minv.cwiseProduct(DG)).asDiagonal().toDenseMatrix();
  s.A.block(o2, o3, im, in) = -(Minv.asDiagonal() * KGL);
  s.A.block(o3, o1, in, im) = -(DLinv.asDiagonal() * KLG);
  s.A.block(o3, o3, in, in) = -(DLinv.asDiagonal() * KLL);
  for (Index q = 0; q < ig; ++q) {
    const Index g = static_cast<Index>(gov[static_cast<std::size_t>(q)]);
    const auto& p = c.generators[static_cast<std::size_t>(g)];
    s.A(o2 + g, o4 + q) = Minv(g);
    s.A(o4 + q, o2 + g) = -1.0 / (p.R * p.T);
    s.A(o4 + q, o4 + q) = -1.0 / p.T;
  }

  s.Bv = Matrix::Zero(N, iL);
  s.Bv.block(o2, 0, im, iL) = -(Minv.asDiagonal() * EG * phi.asDiagonal());
  s.Bv.block(o3, 0, in, iL) = -(DLinv.asDiagonal() * EL * phi.asDiagonal());

  // u = [u_G; u_L]; a governed generator takes u_G through its governor,
  // an ungoverned one directly on the swing equation.
  s.Bu = Matrix::Zero(N, im + in);
  Index q = 0;
  for (Index g = 0; g < im; ++g) {
    const auto& p = c.generators[static_cast<std::size_t>(g)];
    if (p.has_governor())
      s.Bu(o4 + q++, g) = 1.0 / p.T;
    else
      s.Bu(o2 + g, g) = Minv(g);
  }
  for (Index k = 0; k < in; ++k) s.Bu(o3 + k, im + k) = DLinv(k);

  s.Cy = Matrix::Zero(im, N);
  s.Cy.block(0, o2, im, im).setIdentity();
  s.Cz = Matrix::Zero(iL, N);
  s.Cz.block(0, o1, iL, im) = EG.transpose();
  s.Cz.block(0, o3, iL, in) = EL.transpose();

  for (std::size_t g = 0; g < m; ++g) {
    s.input_bus.push_back(c.buses[g].id);
    s.input_labels.push_back("uG" + std::to_string(c.buses[g].id));
    s.y_labels.push_back("y" + std::to_string(c.buses[g].id));
  }
  for (std::size_t b : load_bus) {
    s.input_bus.push_back(c.buses[b].id);
    s.input_labels.push_back("uL" + std::to_string(c.buses[b].id));
  }
  for (const auto& l : c.lines) {
    s.z_labels.push_back("z" + line_label(l));
    s.v_labels.push_back("v" + line_label(l));
  }

  if (!c.infinite_bus) {
    s.shift_mode = Vector::Zero(N);
    s.shift_mode.segment(o1, im).setOnes();
    s.shift_mode.segment(o3, in).setOnes();
    Eigen::JacobiSVD<Matrix> svd(s.A, Eigen::ComputeFullU);
    Vector left = svd.matrixU().col(N - 1);
    const double scale = left.dot(s.shift_mode);
    if (std::abs(scale) < 1e-12) throw NumericalError("lure: shift mode is not simple");
    s.shift_mode_left = left / scale;
  }

  if (opt.check_stability) {
    for (const auto& ev : decaying_eigenvalues(s)) {
      if (ev.real() >= -opt.eigen_tolerance) {
        std::ostringstream msg;
        msg << "lure: small-signal instability, eigenvalue " << ev.real()
            << (ev.imag() < 0 ? " - " : " + ") << std::abs(ev.imag()) << "i";
        throw NumericalError(msg.str());
      }
    }
  }
  return s;
}

}  // namespace gridcert
