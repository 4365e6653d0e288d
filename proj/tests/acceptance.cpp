// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Every threshold used below is defined in this block.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "gridcert/gridcert.hpp"
#include "oracles.hpp"

using namespace gridcert;

namespace {

constexpr double kGainRelTol = 0.02;
constexpr double kGainSeconds = 1.0;
constexpr double kPeakZbar = 1.2, kZeroZbar = 2.4, kZbarTol = 0.15;
constexpr double kSweepStep = 1e-3;
constexpr double kSweepSeconds = 5.0;
constexpr int kMatrices = 1000;
constexpr double kMinRho = 0.1, kMaxRho = 2.0;
constexpr double kEigenSlack = 1e-10;
constexpr int kDisturbancesPerCase = 200;
constexpr double kSoundnessSeconds = 120.0;
constexpr double kSimHorizon = 20.0;
constexpr double kOracleRelTol = 0.01;
constexpr double kTightnessGap = 0.35;
constexpr double kTightnessBisectTol = 1e-4;
constexpr int kGainInputs = 500;
constexpr double kGainSlack = 1e-12;  // absolute, on top of the certified tail already inside gamma
constexpr double kYbar39 = 0.5;
constexpr int kDisturbances39 = 20;
constexpr std::uint64_t kSeed = 20240601;

struct Loaded {
  GridCase c;
  Equilibrium eq;
  LureSystem sys;
  GainMatrices g;
};

Loaded load(const std::string& name) {
  Loaded l;
  l.c = parse_grid(oracle::case_path(name));
  l.eq = solve_equilibrium(l.c);
  l.sys = build_lure(l.c, l.eq);
  l.g = linear_gains(l.sys);
  return l;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail, double secs) {
  char t[32];
  std::snprintf(t, sizeof t, "%.2f s", secs);
  std::cout << (ok ? "[PASS] " : "[FAIL] ") << id << " " << name << ": " << detail << " (" << t << ")" << std::endl;
  if (!ok) ++failures;
}

void run(int id, const std::string& name, const std::function<bool(std::ostringstream&)>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream detail;
  bool ok = false;
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail << "exception: " << e.what();
  }
  report(id, name, ok, detail.str(), seconds_since(t0));
}

std::vector<double> sweep_grid(double hi) {
  std::vector<double> g;
  for (long i = 0; i * kSweepStep <= hi; ++i) g.push_back(static_cast<double>(i) * kSweepStep);
  return g;
}

// Simulates `count` random disturbances with magnitude box ubar and counts
// limit violations (loss of synchronism counts as one).
int soundness_violations(const Loaded& l, const Vector& ubar, const Vector& zbar, const Vector& ybar, int count,
                         std::mt19937_64& rng, double& worst_ratio) {
  int bad = 0;
  for (int k = 0; k < count; ++k) {
    const auto d = random_disturbance(rng, ubar, kSimHorizon);
    try {
      const auto tr = simulate(l.c, l.eq, d, kSimHorizon);
      for (Index i = 0; i < zbar.size(); ++i) worst_ratio = std::max(worst_ratio, tr.peak_z(i) / zbar(i));
      if (((tr.peak_z - zbar).array() > 0.0).any() || ((tr.peak_y - ybar).array() > 0.0).any()) ++bad;
    } catch (const NumericalError&) {
      ++bad;
    }
  }
  return bad;
}

// Random piecewise-constant inputs with |u| <= w through the exact ZOH map of
// the linear block; counts samples where an output leaves gamma * w.
int gain_violations(const Loaded& l, int count, std::mt19937_64& rng) {
  const auto& s = l.sys;
  const Index N = s.state_dim(), nu = s.Bu.cols(), L = s.Bv.cols();
  Matrix B(N, nu + L);
  B << s.Bu, s.Bv;
  const double dt = 0.01;
  const auto [Phi, Gam] = oracle::zoh(s.A, B, dt);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  int bad = 0;
  for (int trial = 0; trial < count; ++trial) {
    Vector w(nu + L);
    for (Index k = 0; k < w.size(); ++k) w(k) = u01(rng) < 0.2 ? 0.0 : u01(rng);
    const Vector zb = l.g.zu * w.head(nu) + l.g.zv * w.tail(L);
    const Vector yb = l.g.yu * w.head(nu) + l.g.yv * w.tail(L);
    const double hold = 0.02 + 3.0 * u01(rng);
    Vector x = Vector::Zero(N), in(nu + L);
    double next_switch = 0.0;
    bool violated = false;
    for (int k = 0; k < 3000 && !violated; ++k) {
      if (k * dt >= next_switch) {
        for (Index q = 0; q < in.size(); ++q) in(q) = w(q) * (u01(rng) < 0.5 ? -1.0 : 1.0) * (u01(rng) < 0.8 ? 1.0 : u01(rng));
        next_switch += hold * (0.5 + u01(rng));
      }
      x = Phi * x + Gam * in;
      const Vector z = s.Cz * x, y = s.Cy * x / kTwoPi;
      violated = ((z.cwiseAbs() - zb).array() > kGainSlack).any() || ((y.cwiseAbs() - yb).array() > kGainSlack).any();
    }
    bad += violated;
  }
  return bad;
}

}  // namespace

int main() {
  std::mt19937_64 rng(kSeed);

  run(1, "SMIB gain reproduction", [](std::ostringstream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto l = load("smib.json");
    const double secs = seconds_since(t0);
    const double ref[4] = {0.178, 0.142, 1.434, 1.148};
    const double got[4] = {l.g.yu(0, 0), l.g.yv(0, 0), l.g.zu(0, 0), l.g.zv(0, 0)};
    double worst = 0.0;
    for (int i = 0; i < 4; ++i) worst = std::max(worst, std::abs(got[i] - ref[i]) / ref[i]);
    out << "yu " << got[0] << " yv " << got[1] << " zu " << got[2] << " zv " << got[3] << ", worst rel err "
        << worst << " (limit " << kGainRelTol << "), pipeline " << secs << " s (limit " << kGainSeconds << ")";
    return worst <= kGainRelTol && secs < kGainSeconds;
  });

  run(2, "SMIB sweep shape", [](std::ostringstream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto l = load("smib.json");
    const auto p = make_problem(l.g, l.eq.phi_star, Vector::Ones(1), Vector::Constant(1, kInf));
    const auto pts = sweep_zbar(p, sweep_grid(p.domain(0)));
    std::size_t peak = 0;
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (pts[i].mu > pts[peak].mu) peak = i;
    double zero = kInf;
    for (std::size_t i = peak; i < pts.size(); ++i)
      if (pts[i].mu <= 0.0) {
        zero = pts[i].grid_value;
        break;
      }
    const double secs = seconds_since(t0);
    out << "peak mu " << pts[peak].mu << " at zbar " << pts[peak].grid_value << ", zero at " << zero << ", "
        << secs << " s";
    return std::abs(pts[peak].grid_value - kPeakZbar) <= kZbarTol && std::abs(zero - kZeroZbar) <= kZbarTol &&
           secs < kSweepSeconds;
  });

  run(3, "M-matrix condition equivalence", [&rng](std::ostringstream& out) {
    std::uniform_int_distribution<int> size(2, 20);
    std::uniform_real_distribution<double> target(kMinRho, kMaxRho);
    int agree = 0, stable = 0;
    for (int k = 0; k < kMatrices; ++k) {
      const auto Z = oracle::random_nonnegative(rng, size(rng), target(rng));
      const auto rep = mmatrix_checks(Z, kEigenSlack);
      const bool c1 = rep.rho < 1.0, c2 = rep.inverse_positive, c3 = rep.positive_vector.has_value();
      agree += (c1 == c2 && c2 == c3);
      stable += c1;
    }
    out << agree << "/" << kMatrices << " agree (" << stable << " with rho < 1)";
    return agree == kMatrices;
  });

  run(4, "master soundness", [&rng](std::ostringstream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    struct Spec {
      const char* name;
      double ybar;
    };
    bool ok = true;
    for (const Spec& sp : {Spec{"smib.json", 0.12}, Spec{"three_bus.json", 0.05}, Spec{"wscc9.json", 0.05}}) {
      const auto l = load(sp.name);
      const Vector ybar = Vector::Constant(static_cast<Index>(l.sys.m), sp.ybar);
      const auto sol = max_disturbance(make_problem(l.g, l.eq.phi_star, Vector::Ones(l.sys.num_inputs()), ybar));
      double worst = 0.0;
      const int bad = soundness_violations(l, sol.ubar_star, sol.zbar_star, ybar, kDisturbancesPerCase, rng, worst);
      out << sp.name << " mu* " << sol.mu_star << ": " << bad << " violations, peak/zbar " << worst << "; ";
      ok = ok && bad == 0;
    }
    const double secs = seconds_since(t0);
    out << "total " << secs << " s";
    return ok && secs < kSoundnessSeconds;
  });

  run(5, "optimizer vs grid search", [](std::ostringstream& out) {
    bool ok = true;
    struct Spec {
      const char* name;
      double ybar;
      int n, rounds;
    };
    for (const Spec& sp : {Spec{"smib.json", kInf, 4000, 3}, Spec{"smib.json", 0.12, 4000, 3},
                           Spec{"three_bus.json", kInf, 24, 6}, Spec{"three_bus.json", 0.05, 24, 6}}) {
      const auto l = load(sp.name);
      const Vector c = Vector::Ones(l.sys.num_inputs());
      const Vector ybar = Vector::Constant(static_cast<Index>(l.sys.m), sp.ybar);
      const auto sol = max_disturbance(make_problem(l.g, l.eq.phi_star, c, ybar));
      const double ref = oracle::grid_search(l.g.zu, l.g.zv, l.g.yu, l.g.yv, l.eq.phi_star, zbar_domain(l.eq.phi_star),
                                             c / c.squaredNorm(), ybar, sp.n, sp.rounds);
      const double rel = std::abs(sol.mu_star - ref) / ref;
      out << sp.name << " ybar " << sp.ybar << ": " << sol.mu_star << " vs " << ref << " (rel " << rel << "); ";
      ok = ok && rel <= kOracleRelTol;
    }
    return ok;
  });

  run(6, "tightness against step simulations", [](std::ostringstream& out) {
    const auto l = load("smib.json");
    const auto p = make_problem(l.g, l.eq.phi_star, Vector::Ones(1), Vector::Constant(1, kInf));
    const auto pts = sweep_zbar(p, sweep_grid(p.domain(0)));
    std::size_t peak = 0;
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (pts[i].mu > pts[peak].mu) peak = i;
    EmpiricalOptions opt;
    opt.bisect_tol = kTightnessBisectTol;
    opt.horizon = kSimHorizon;
    const double emp = empirical_upper_bound(l.c, l.eq, Vector::Ones(1),
                                             OutputLimit{OutputLimit::Kind::Angle, pts[peak].zbar},
                                             step_family(1), opt);
    const double gap = (emp - pts[peak].mu) / pts[peak].mu;
    out << "certified " << pts[peak].mu << " at zbar " << pts[peak].grid_value << ", simulated " << emp << ", gap "
        << gap << " (limit " << kTightnessGap << ")";
    return emp >= pts[peak].mu && gap <= kTightnessGap;
  });

  run(7, "gain soundness on random inputs", [&rng](std::ostringstream& out) {
    int bad = 0, total = 0;
    for (const char* name : {"smib.json", "three_bus.json", "wscc9.json"}) {
      const auto l = load(name);
      const int n = kGainInputs / 3 + (std::string(name) == "smib.json" ? kGainInputs % 3 : 0);
      const int b = gain_violations(l, n, rng);
      out << name << " " << b << "/" << n << "; ";
      bad += b;
      total += n;
    }
    out << "total inputs " << total;
    return bad == 0 && total == kGainInputs;
  });

  run(8, "39-bus per-bus ordering and properties", [&rng](std::ostringstream& out) {
    const auto l = load("ieee39.json");
    const Vector ybar = Vector::Constant(static_cast<Index>(l.sys.m), kYbar39);
    const auto degree = l.c.degrees();
    double gen_sum = 0.0, load_sum = 0.0;
    int gen_n = 0, load_n = 0;
    for (Index k = 0; k < l.sys.num_inputs(); ++k) {
      Vector c = Vector::Zero(l.sys.num_inputs());
      c(k) = 1.0;
      const double mu = max_disturbance(make_problem(l.g, l.eq.phi_star, c, ybar)).mu_star;
      const auto bus = l.c.index_of(l.sys.input_bus[static_cast<std::size_t>(k)]);
      if (static_cast<std::size_t>(k) < l.sys.m) {
        gen_sum += mu;
        ++gen_n;
      } else if (degree[bus] >= 3) {
        load_sum += mu;
        ++load_n;
      }
    }
    const double gen_mean = gen_sum / gen_n, load_mean = load_sum / load_n;
    out << "mean mu* at degree>=3 load buses " << load_mean << " vs generator buses " << gen_mean << "; ";

    // simultaneous disturbance at buses 3, 15, 27, checked by simulation
    Vector c = Vector::Zero(l.sys.num_inputs());
    for (int bus : {3, 15, 27})
      for (std::size_t j = 0; j < l.sys.input_bus.size(); ++j)
        if (l.sys.input_bus[j] == bus) c(static_cast<Index>(j)) = 1.0;
    const auto sol = max_disturbance(make_problem(l.g, l.eq.phi_star, c, ybar));
    double worst = 0.0;
    const int bad = soundness_violations(l, sol.ubar_star, sol.zbar_star, ybar, kDisturbances39, rng, worst);
    out << "buses 3/15/27 mu* " << sol.mu_star << ", " << bad << "/" << kDisturbances39 << " violations; ";
    const int gbad = gain_violations(l, kDisturbances39, rng);
    out << "gain soundness " << gbad << "/" << kDisturbances39;
    return load_mean > gen_mean && bad == 0 && gbad == 0;
  });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
