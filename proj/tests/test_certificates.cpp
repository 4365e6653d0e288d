#include "catch_amalgamated.hpp"

#include <random>

#include "gridcert/certificates.hpp"
#include "oracles.hpp"

using namespace gridcert;
using Catch::Approx;

namespace {

struct Setup {
  GainMatrices g;
  Vector phi;
};

Setup setup(const std::string& name) {
  const auto c = parse_grid(oracle::case_path(name));
  const auto eq = solve_equilibrium(c);
  return {linear_gains(build_lure(c, eq)), eq.phi_star};
}

}  // namespace

TEST_CASE("Perron root agrees with the eigenvalue solver", "[certificates][mmatrix]") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> size(2, 20);
  std::uniform_real_distribution<double> target(0.1, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto Z = oracle::random_nonnegative(rng, size(rng), target(rng));
    const auto p = perron_root(Z);
    CHECK(p.rho == Approx(oracle::rho(Z)).epsilon(1e-9));
    CHECK((p.vector.array() > 0).all());
  }
  CHECK(spectral_radius(Matrix::Zero(3, 3)) == 0.0);
}

TEST_CASE("the three M-matrix conditions agree", "[certificates][mmatrix][property]") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> size(2, 20);
  std::uniform_real_distribution<double> target(0.1, 2.0);
  int stable = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const Index n = size(rng);
    const double t = target(rng);
    const auto Z = oracle::random_nonnegative(rng, n, t);
    const auto rep = mmatrix_checks(Z);
    const bool c1 = rep.rho < 1.0;
    INFO("n " << n << " rho " << t);
    CHECK(c1 == rep.inverse_positive);
    CHECK(c1 == rep.positive_vector.has_value());
    if (c1) {
      ++stable;
      // truncated Neumann series of (I - Z)^-1
      Matrix S = Matrix::Identity(n, n), term = S;
      for (int k = 0; k < 5000 && term.cwiseAbs().maxCoeff() > 1e-16; ++k) {
        term = term * Z;
        S += term;
      }
      CHECK((S - rep.inverse).cwiseAbs().maxCoeff() <= 1e-6 * S.cwiseAbs().maxCoeff());
      const Vector r = (Matrix::Identity(n, n) - Z) * *rep.positive_vector;
      CHECK((r.array() > 0).all());
    } else {
      // left Perron vector w >= 0 gives w'(I - Z) = (1 - rho) w' <= 0, so no
      // x >= 0 can have (I - Z) x > 0
      Eigen::EigenSolver<Matrix> es(Z.transpose());
      Index k = 0;
      es.eigenvalues().cwiseAbs().maxCoeff(&k);
      Vector w = es.eigenvectors().col(k).real();
      if (w.sum() < 0) w = -w;
      CHECK((w.array() >= -1e-10).all());
      const Vector lhs = (Matrix::Identity(n, n) - Z).transpose() * w;
      CHECK((lhs.array() <= 1e-9).all());
    }
  }
  CHECK(stable > 50);
  CHECK(stable < 250);
}

TEST_CASE("M-matrix checks reject bad input", "[certificates][mmatrix][errors]") {
  CHECK_THROWS_AS(mmatrix_checks(Matrix::Zero(2, 3)), InputError);
  Matrix neg = Matrix::Zero(2, 2);
  neg(0, 1) = -0.1;
  CHECK_THROWS_AS(mmatrix_checks(neg), InputError);
}

TEST_CASE("SMIB certificate near and inside the boundary", "[certificates]") {
  const auto s = setup("smib.json");
  Vector u(1), z(1), y(1);
  y << kInf;

  z << 1.2;
  u << 0.45;
  const auto inside = check_cico(s.g, s.phi, u, z, y);
  CHECK(inside.bibo_ok);
  CHECK(inside.cibo_ok);
  CHECK(inside.cico_ok);
  CHECK(inside.angle_margins()(0) > 0.01);

  u << 0.55;  // above the maximum of about 0.50
  CHECK_FALSE(check_cico(s.g, s.phi, u, z, y).cico_ok);

  // the certified region ends near 2.38 rad: nothing is certified past it
  z << 2.4;
  u << 0.0;
  const auto edge = check_cibo(s.g, s.phi, u, z);
  CHECK(edge.rho >= 1.0);  // in one dimension the angle row is the small-gain condition
  CHECK_FALSE(edge.ok);
  z << 2.35;
  CHECK(check_cibo(s.g, s.phi, u, z).ok);
}

TEST_CASE("zero disturbance is certified", "[certificates]") {
  for (const char* name : {"smib.json", "three_bus.json", "wscc9.json"}) {
    const auto s = setup(name);
    const Vector u = Vector::Zero(static_cast<Index>(s.g.num_inputs()));
    const Vector z = Vector::Constant(s.phi.size(), 0.5);
    const Vector y = Vector::Constant(static_cast<Index>(s.g.num_generators()), 0.1);
    INFO(name);
    CHECK(check_cico(s.g, s.phi, u, z, y).cico_ok);
  }
}

TEST_CASE("certificate implication chain and monotone shrinkage", "[certificates][property]") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (const char* name : {"smib.json", "three_bus.json", "wscc9.json"}) {
    const auto s = setup(name);
    const Index nu = static_cast<Index>(s.g.num_inputs()), L = s.phi.size(),
                m = static_cast<Index>(s.g.num_generators());
    const Vector dom = zbar_domain(s.phi);
    int certified = 0;
    for (int trial = 0; trial < 300; ++trial) {
      Vector u(nu), z(L), y(m);
      // mid-domain angles and small disturbances, so that every case lands
      // on both sides of the certified boundary
      const double scale = std::pow(10.0, -3.0 + 2.5 * u01(rng));
      for (Index i = 0; i < nu; ++i) u(i) = scale * u01(rng);
      for (Index i = 0; i < L; ++i) z(i) = dom(i) * (0.05 + 0.35 * u01(rng));
      for (Index i = 0; i < m; ++i) y(i) = 0.5 * u01(rng) + 0.02;
      const auto c = check_cico(s.g, s.phi, u, z, y);
      INFO(name << " trial " << trial);
      if (c.cico_ok) CHECK(c.cibo_ok);
      if (c.cibo_ok) CHECK(c.bibo_ok);
      CHECK(c.cibo_ok == check_cibo(s.g, s.phi, u, z).ok);
      CHECK(c.bibo_ok == check_bibo(s.g, sector_gains(s.phi, z)).ok);
      if (!c.cico_ok) continue;
      ++certified;
      // smaller disturbances and looser frequency limits stay certified
      Vector u2 = u, y2 = y;
      for (Index i = 0; i < nu; ++i) u2(i) *= u01(rng);
      for (Index i = 0; i < m; ++i) y2(i) += u01(rng);
      CHECK(check_cico(s.g, s.phi, u2, z, y2).cico_ok);
    }
    CHECK(certified > 0);
    CHECK(certified < 300);
  }
}

TEST_CASE("closed-loop gain formula", "[certificates]") {
  const auto s = setup("three_bus.json");
  const Vector z = Vector::Constant(3, 1.0);
  const auto psi = sector_gains(s.phi, z);
  const auto r = check_bibo(s.g, psi);
  REQUIRE(r.ok);
  const Matrix G = psi.diag.asDiagonal();
  const Matrix expect =
      s.g.yu + s.g.yv * G * (Matrix::Identity(3, 3) - s.g.zv * G).inverse() * s.g.zu;
  CHECK((r.gamma_H - expect).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(r.rho == Approx(oracle::rho(s.g.zv * G)).epsilon(1e-9));
}

TEST_CASE("certificate argument checks and JSON", "[certificates][errors]") {
  const auto s = setup("smib.json");
  Vector u(1), z(1), y(1), bad(2);
  u << 0.1;
  z << 1.0;
  y << kInf;
  CHECK_THROWS_AS(check_cico(s.g, s.phi, bad, z, y), InputError);
  CHECK_THROWS_AS(check_cico(s.g, s.phi, u, bad, y), InputError);
  CHECK_THROWS_AS(check_cico(s.g, s.phi, u, z, bad), InputError);
  Vector neg(1);
  neg << -0.1;
  CHECK_THROWS_AS(check_cico(s.g, s.phi, neg, z, y), InputError);
  CHECK_THROWS_AS(check_cico(s.g, s.phi, u, z, neg), InputError);

  const auto j = to_json(check_cico(s.g, s.phi, u, z, y));
  for (const char* key : {"ubar", "zbar", "ybar", "bibo_ok", "cibo_ok", "cico_ok", "spectral_radius", "margins"})
    CHECK(j.contains(key));
  CHECK(j["ybar"][0].is_null());
  CHECK(j["margins"][1].is_null());
  CHECK(j["cico_ok"].get<bool>());
}
