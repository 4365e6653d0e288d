#include "catch_amalgamated.hpp"

#include <complex>
#include <random>

#include "gridcert/gain.hpp"
#include "oracles.hpp"

using namespace gridcert;
using Catch::Approx;

namespace {

// Bare single-output, single-input system wrapped as a LureSystem with one
// "line" whose channel carries the same dynamics.
LureSystem siso(const Matrix& A, const Vector& b, const Vector& c) {
  LureSystem s;
  s.A = A;
  s.Bu = b;
  s.Bv = b;
  s.Cy = c.transpose();
  s.Cz = c.transpose();
  s.phi_star = Vector::Zero(1);
  s.m = 1;
  s.lines = 1;
  return s;
}

GainOptions raw() {
  GainOptions o;
  o.frequency_in_hz = false;
  return o;
}

LureSystem case_system(const std::string& name) {
  const auto c = parse_grid(oracle::case_path(name));
  return build_lure(c, solve_equilibrium(c));
}

}  // namespace

TEST_CASE("first-order lag has gain 1/a", "[gain]") {
  for (double a : {0.05, 0.5, 3.0, 40.0}) {
    Matrix A(1, 1);
    A << -a;
    const auto g = linear_gains(siso(A, Vector::Ones(1), Vector::Ones(1)), raw());
    INFO(a);
    CHECK(g.yu(0, 0) >= 1.0 / a * (1 - 1e-12));
    CHECK(g.yu(0, 0) == Approx(1.0 / a).epsilon(1e-6));
  }
}

TEST_CASE("nonnegative impulse response: gain equals the DC gain", "[gain]") {
  // 1 / ((s + 1)(s + 3)), overdamped
  Matrix A(2, 2);
  A << 0, 1, -3, -4;
  Vector b(2), c(2);
  b << 0, 1;
  c << 1, 0;
  const auto g = linear_gains(siso(A, b, c), raw());
  CHECK(g.yu(0, 0) == Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("oscillatory channel matches direct quadrature of |h|", "[gain]") {
  // h(t) = exp(-s t) sin(w t) / w
  const double s = 0.3, w = 2.0;
  Matrix A(2, 2);
  A << 0, 1, -(s * s + w * w), -2 * s;
  Vector b(2), c(2);
  b << 0, 1;
  c << 1, 0;
  const auto g = linear_gains(siso(A, b, c), raw());
  double ref = 0.0;
  const double dt = 1e-5;
  for (double t = 0.5 * dt; t < 120.0; t += dt) ref += std::abs(std::exp(-s * t) * std::sin(w * t) / w) * dt;
  CHECK(g.yu(0, 0) >= ref * (1 - 1e-7));
  CHECK(g.yu(0, 0) == Approx(ref).epsilon(1e-5));
  CHECK(g.yu(0, 0) > 1.0 / (s * s + w * w));  // strictly above the DC gain
}

TEST_CASE("SMIB gains", "[gain]") {
  const auto g = linear_gains(case_system("smib.json"));
  CHECK(g.zu(0, 0) == Approx(1.434).epsilon(0.02));
  CHECK(g.zv(0, 0) == Approx(1.148).epsilon(0.02));
  CHECK(g.yu(0, 0) == Approx(0.178).epsilon(0.02));
  CHECK(g.yv(0, 0) == Approx(0.142).epsilon(0.02));
  // v enters as -phi times u's channel
  CHECK(g.zv(0, 0) == Approx(0.8 * g.zu(0, 0)).epsilon(1e-9));
  CHECK(g.tail_bound < 1e-6);
}

TEST_CASE("gain dominates the frequency response magnitude", "[gain][property]") {
  for (const char* name : {"three_bus.json", "wscc9.json"}) {
    const auto sys = case_system(name);
    const auto g = linear_gains(sys);
    const Index N = sys.state_dim(), m = static_cast<Index>(sys.m);
    Matrix B(N, sys.Bu.cols() + sys.Bv.cols());
    B << sys.Bu, sys.Bv;
    Matrix C(sys.Cy.rows() + sys.Cz.rows(), N);
    C << sys.Cy / kTwoPi, sys.Cz;
    Matrix gamma(C.rows(), B.cols());
    gamma << g.yu, g.yv, g.zu, g.zv;
    for (double omega : {1e-4, 0.1, 0.5, 1.0, 2.0, 5.0, 20.0}) {
      const Eigen::MatrixXcd sIA =
          std::complex<double>(0.0, omega) * Eigen::MatrixXcd::Identity(N, N) - sys.A.cast<std::complex<double>>();
      const Eigen::MatrixXcd H = C.cast<std::complex<double>>() * sIA.partialPivLu().solve(B.cast<std::complex<double>>());
      INFO(name << " omega " << omega);
      CHECK((H.cwiseAbs().array() <= gamma.array() * (1 + 1e-8) + 1e-12).all());
    }
    CHECK((g.yu.array() >= 0).all());
    CHECK(g.yu.rows() == m);
  }
}

TEST_CASE("bang-bang input attains the gain within 2%", "[gain][property]") {
  for (const char* name : {"smib.json", "three_bus.json"}) {
    const auto sys = case_system(name);
    const auto g = linear_gains(sys);
    const Index N = sys.state_dim();
    const double dt = 2e-3, T = g.horizon;
    const auto steps = static_cast<Index>(T / dt);
    const Matrix P = sys.stable_projector();
    const Matrix Ad = (sys.A * dt).exp();
    // every (output, input) channel of the z and y blocks
    for (Index j = 0; j < sys.Bu.cols(); ++j) {
      for (Index i = 0; i < static_cast<Index>(sys.lines); ++i) {
        // sampled impulse response of channel (i, j)
        std::vector<double> h(static_cast<std::size_t>(steps + 1));
        Vector x = P * sys.Bu.col(j);
        for (Index k = 0; k <= steps; ++k) {
          h[static_cast<std::size_t>(k)] = sys.Cz.row(i).dot(x);
          x = Ad * x;
        }
        // apply u(t) = sign h(T - t) through the exact ZOH map
        const auto [Phi, Gam] = oracle::zoh(sys.A, sys.Bu.col(j), dt);
        Vector s = Vector::Zero(N);
        for (Index k = 0; k < steps; ++k) {
          const double hk = h[static_cast<std::size_t>(steps - k)] + h[static_cast<std::size_t>(steps - k - 1)];
          Vector u(1);
          u << (hk >= 0 ? 1.0 : -1.0);
          s = Phi * s + Gam * u;
        }
        const double reached = std::abs(sys.Cz.row(i).dot(s));
        INFO(name << " z" << i << " u" << j);
        CHECK(reached <= g.zu(i, j) * (1 + 1e-9));
        CHECK(reached >= 0.98 * g.zu(i, j));
      }
    }
  }
}

TEST_CASE("random clamped inputs stay within the gain bound", "[gain][property]") {
  const auto sys = case_system("three_bus.json");
  const auto g = linear_gains(sys);
  const Index N = sys.state_dim(), nu = sys.Bu.cols(), L = sys.Bv.cols();
  Matrix B(N, nu + L);
  B << sys.Bu, sys.Bv;
  const double dt = 0.01;
  const auto [Phi, Gam] = oracle::zoh(sys.A, B, dt);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    Vector w(nu + L);
    for (Index k = 0; k < w.size(); ++k) w(k) = u01(rng) < 0.2 ? 0.0 : u01(rng);
    Vector x = Vector::Zero(N), in = Vector::Zero(nu + L);
    const Vector zb = g.zu * w.head(nu) + g.zv * w.tail(L);
    const Vector yb = g.yu * w.head(nu) + g.yv * w.tail(L);
    const double hold = 0.05 + 2.0 * u01(rng);
    double peak_ratio = 0.0;
    for (int k = 0; k < 3000; ++k) {
      if (std::fmod(k * dt, hold) < dt)
        for (Index q = 0; q < in.size(); ++q) in(q) = w(q) * (u01(rng) < 0.5 ? -1.0 : 1.0);
      x = Phi * x + Gam * in;
      const Vector z = sys.Cz * x, y = sys.Cy * x / kTwoPi;
      for (Index i = 0; i < z.size(); ++i) {
        CHECK(std::abs(z(i)) <= zb(i) + 1e-12);
        if (zb(i) > 0) peak_ratio = std::max(peak_ratio, std::abs(z(i)) / zb(i));
      }
      for (Index i = 0; i < y.size(); ++i) CHECK(std::abs(y(i)) <= yb(i) + 1e-12);
    }
    CHECK(peak_ratio > 0.0);
  }
}

// ---------------------------------------------------------------------------

TEST_CASE("closed-form sector bound is never below the true sector gain", "[gain][sector][property]") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const double phi = (2 * u01(rng) - 1) * kPi / 2;
    const double zbar = (kPi - std::abs(phi)) * u01(rng);
    const double exact = sector_gain_exact(phi, zbar);
    const double bound = sector_gain_corollary(phi, zbar);
    INFO("phi " << phi << " zbar " << zbar);
    CHECK(bound >= exact - 1e-12);
    CHECK(bound >= oracle::sector_sampled(phi, zbar, 2000) - 1e-12);
    CHECK(bound == Approx(oracle::sector_bound(phi, zbar)).margin(1e-9));
  }
}

TEST_CASE("sector bound is nondecreasing in zbar", "[gain][sector][property]") {
  for (double phi : {0.0, 0.25268, -0.7, 1.2, kPi / 2}) {
    double prev = 0.0;
    for (double z = 0.0; z <= kPi - std::abs(phi); z += 1e-3) {
      const double v = sector_gain_corollary(phi, z);
      CHECK(v >= prev - 1e-15);
      CHECK(v <= 1.0 + std::cos(phi) + 1e-15);  // the difference quotient of sin is at most 1
      prev = v;
    }
  }
}

TEST_CASE("sector bound special values", "[gain][sector]") {
  CHECK(sector_gain_corollary(0.0, 0.0) == 0.0);
  CHECK(sector_gain_corollary(0.0, kPi) == Approx(1.0).margin(1e-15));
  CHECK(sector_gain_corollary(0.0, kPi / 2) == Approx(1.0 - 2.0 / kPi).margin(1e-15));
  CHECK(sector_gain_exact(0.0, kPi) == Approx(1.0).margin(1e-12));
  // tiny zbar stays accurate (no cancellation)
  CHECK(sector_gain_corollary(0.0, 1e-6) == Approx(1e-12 / 6).epsilon(1e-6));
  CHECK_THROWS_AS(sector_gain_corollary(1.7, 0.1), InputError);
  CHECK_THROWS_AS(sector_gain_corollary(1.0, kPi - 0.9), InputError);
  CHECK_THROWS_AS(sector_gain_corollary(0.0, -0.1), InputError);
  Vector phi(2), zb(2);
  phi << 0.1, -0.2;
  zb << 0.5, 1.5;
  const auto d = zbar_domain(phi);
  CHECK(d(0) == Approx(kPi - 0.1));
  CHECK(d(1) == Approx(kPi - 0.2));
  const auto s = sector_gains(phi, zb);
  CHECK(s.diag(1) == Approx(oracle::sector_bound(-0.2, 1.5)).margin(1e-14));
  const auto sp = sector_product(-0.2, 1.5);
  CHECK(sp.value == Approx(s.diag(1) * 1.5).margin(1e-14));
  CHECK(sp.slope == Approx((sector_product(-0.2, 1.5 + 1e-6).value - sector_product(-0.2, 1.5 - 1e-6).value) / 2e-6).margin(1e-8));
}
