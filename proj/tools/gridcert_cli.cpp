// gridcert: command-line front end.
//
//   gridcert gains    --case C [--out DIR]
//   gridcert certify  --case C --ubar U --zbar Z [--ybar Y]...
//   gridcert maxdist  --case C [--direction "k=w,..." | --per-bus] [--ybar Y]...
//   gridcert sweep    --case C [--direction ...] [--zbar-grid A:B:S] [--ybar Y]...
//   gridcert simulate --case C --scenario S.json [--horizon T]
//
// Exit codes: 0 success / certified, 1 not certified, 2 input error,
// 3 numerical failure.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gridcert/gridcert.hpp"

namespace fs = std::filesystem;
using namespace gridcert;

namespace {

constexpr int kExitOk = 0, kExitNotCertified = 1, kExitInput = 2, kExitNumerical = 3;

struct RunConfig {
  std::string case_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  std::vector<double> ybar;
  std::string direction;
  bool per_bus = false;
  std::string zbar_grid = "0:3.2:0.01";
  bool grid_fraction = false;
  int empirical_stride = 5;
  std::vector<std::string> tol;
  std::string ubar, zbar;
  std::string scenario;
  double horizon = 20.0;
};

struct Tolerances {
  GainOptions gain;
  EquilibriumOptions eq;
  EmpiricalOptions empirical;
};

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InputError(what + ": cannot parse number '" + s + "'");
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

Tolerances parse_tolerances(const std::vector<std::string>& specs) {
  Tolerances t;
  for (const auto& spec : specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw InputError("--tol: expected NAME=VAL, got '" + spec + "'");
    const std::string name = spec.substr(0, eq);
    const double v = parse_double(spec.substr(eq + 1), "--tol " + name);
    if (!(v > 0.0)) throw InputError("--tol " + name + ": must be positive");
    if (name == "gain.rel_tol") t.gain.rel_tol = v;
    else if (name == "gain.max_step") t.gain.max_step = v;
    else if (name == "eq.tolerance") t.eq.tolerance = v;
    else if (name == "sim.rtol") t.empirical.sim.rtol = v;
    else if (name == "sim.atol") t.empirical.sim.atol = v;
    else if (name == "sim.max_step") t.empirical.sim.max_step = v;
    else if (name == "bisect_tol") t.empirical.bisect_tol = v;
    else if (name == "sim.horizon") t.empirical.horizon = v;
    else throw InputError("--tol: unknown tolerance '" + name + "'");
  }
  return t;
}

struct Pipeline {
  GridCase grid;
  Equilibrium eq;
  LureSystem sys;
  Tolerances tol;

  Index input_of(int bus, const std::string& what) const {
    for (std::size_t j = 0; j < sys.input_bus.size(); ++j)
      if (sys.input_bus[j] == bus) return static_cast<Index>(j);
    throw InputError(what + ": bus " + std::to_string(bus) +
                     (grid.has_bus(bus) ? " takes no disturbance" : " does not exist"));
  }
};

Pipeline load(const RunConfig& cfg) {
  Pipeline p;
  p.tol = parse_tolerances(cfg.tol);
  p.grid = parse_grid(cfg.case_path);
  p.eq = solve_equilibrium(p.grid, p.tol.eq);
  p.sys = build_lure(p.grid, p.eq);
  return p;
}

Vector parse_ybar(const RunConfig& cfg, const Pipeline& p) {
  const Index m = static_cast<Index>(p.sys.m);
  if (cfg.ybar.empty()) return Vector::Constant(m, kInf);
  for (double y : cfg.ybar)
    if (!(y > 0.0)) throw InputError("--ybar: frequency limits must be positive");
  if (cfg.ybar.size() == 1) return Vector::Constant(m, cfg.ybar[0]);
  if (static_cast<Index>(cfg.ybar.size()) != m)
    throw InputError("--ybar: expected 1 or " + std::to_string(m) + " values, got " +
                     std::to_string(cfg.ybar.size()));
  return Eigen::Map<const Vector>(cfg.ybar.data(), m);
}

// "k=w,..." keyed by bus id; a bare number broadcasts to every input
Vector parse_bus_vector(const std::string& spec, const Pipeline& p, const std::string& what) {
  const Index nu = p.sys.num_inputs();
  if (spec.find('=') == std::string::npos) return Vector::Constant(nu, parse_double(spec, what));
  Vector v = Vector::Zero(nu);
  for (const auto& item : split(spec, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InputError(what + ": expected k=w, got '" + item + "'");
    const int bus = static_cast<int>(parse_double(item.substr(0, eq), what));
    v(p.input_of(bus, what)) = parse_double(item.substr(eq + 1), what);
  }
  return v;
}

Vector parse_direction(const RunConfig& cfg, const Pipeline& p) {
  if (cfg.direction.empty()) return Vector::Ones(p.sys.num_inputs());
  return parse_bus_vector(cfg.direction, p, "--direction");
}

std::vector<double> parse_grid_spec(const std::string& spec) {
  const auto parts = split(spec, ':');
  if (parts.size() != 3) throw InputError("--zbar-grid: expected START:STOP:STEP");
  const double a = parse_double(parts[0], "--zbar-grid"), b = parse_double(parts[1], "--zbar-grid"),
               s = parse_double(parts[2], "--zbar-grid");
  if (!(s > 0.0) || b < a || a < 0.0) throw InputError("--zbar-grid: empty grid");
  std::vector<double> g;
  const auto n = static_cast<long>(std::floor((b - a) / s + 1e-9));
  for (long i = 0; i <= n; ++i) g.push_back(a + static_cast<double>(i) * s);
  return g;
}

fs::path out_file(const RunConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  return fs::path(cfg.out_dir) / name;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  return os;
}

// ---------------------------------------------------------------------------

int cmd_gains(const RunConfig& cfg) {
  const auto p = load(cfg);
  const auto g = linear_gains(p.sys, p.tol.gain);

  auto os = open_csv(out_file(cfg, "gains.csv"));
  os << "block,output,input,gamma\n";
  auto block = [&](const char* name, const Matrix& M, const std::vector<std::string>& rows,
                   const std::vector<std::string>& cols) {
    for (Index i = 0; i < M.rows(); ++i)
      for (Index j = 0; j < M.cols(); ++j)
        os << name << ',' << rows[static_cast<std::size_t>(i)] << ',' << cols[static_cast<std::size_t>(j)] << ','
           << num(M(i, j)) << '\n';
  };
  block("yu", g.yu, g.y_labels, g.u_labels);
  block("yv", g.yv, g.y_labels, g.v_labels);
  block("zu", g.zu, g.z_labels, g.u_labels);
  block("zv", g.zv, g.z_labels, g.v_labels);

  nlohmann::json j;
  j["case"] = cfg.case_path;
  j["generators"] = p.sys.m;
  j["dynamic_loads"] = p.sys.n;
  j["lines"] = p.sys.lines;
  j["states"] = p.sys.state_dim();
  j["entries"] = g.yu.size() + g.yv.size() + g.zu.size() + g.zv.size();
  j["frequency_unit"] = "Hz";
  j["horizon_s"] = g.horizon;
  j["steps"] = g.steps;
  j["tail_bound"] = g.tail_bound;
  j["quadrature_error"] = g.quadrature_error;
  j["elapsed_seconds"] = g.elapsed_seconds;
  write_json(out_file(cfg, "gains.json"), j);

  std::cout << "gains: " << j["entries"] << " entries in " << num(g.elapsed_seconds) << " s\n";
  if (g.yu.size() == 1 && g.zv.size() == 1)
    std::cout << "  gamma_yu " << num(g.yu(0, 0)) << "  gamma_yv " << num(g.yv(0, 0)) << "  gamma_zu "
              << num(g.zu(0, 0)) << "  gamma_zv " << num(g.zv(0, 0)) << '\n';
  return kExitOk;
}

int cmd_certify(const RunConfig& cfg) {
  const auto p = load(cfg);
  if (cfg.ubar.empty() || cfg.zbar.empty()) throw InputError("certify: --ubar and --zbar are required");
  const Vector ubar = parse_bus_vector(cfg.ubar, p, "--ubar");
  const Index L = static_cast<Index>(p.sys.lines);
  const auto zparts = split(cfg.zbar, ',');
  Vector zbar(L);
  if (zparts.size() == 1)
    zbar.setConstant(parse_double(zparts[0], "--zbar"));
  else if (static_cast<Index>(zparts.size()) == L)
    for (Index i = 0; i < L; ++i) zbar(i) = parse_double(zparts[static_cast<std::size_t>(i)], "--zbar");
  else
    throw InputError("--zbar: expected 1 or " + std::to_string(L) + " values");
  const auto g = linear_gains(p.sys, p.tol.gain);
  const auto cert = check_cico(g, p.eq.phi_star, ubar, zbar, parse_ybar(cfg, p));
  write_json(out_file(cfg, "certificate.json"), to_json(cert));
  std::cout << (cert.cico_ok ? "certified" : "not certified") << " (rho " << num(cert.spectral_radius)
            << ", min margin " << num(cert.margins.minCoeff()) << ")\n";
  return cert.cico_ok ? kExitOk : kExitNotCertified;
}

int cmd_maxdist(const RunConfig& cfg) {
  const auto p = load(cfg);
  const auto g = linear_gains(p.sys, p.tol.gain);
  const Vector ybar = parse_ybar(cfg, p);

  if (cfg.per_bus) {
    auto os = open_csv(out_file(cfg, "per_bus.csv"));
    os << "bus,kind,degree,mu_star,min_zbar\n";
    const auto degree = p.grid.degrees();
    nlohmann::json rows = nlohmann::json::array();
    for (Index k = 0; k < p.sys.num_inputs(); ++k) {
      Vector c = Vector::Zero(p.sys.num_inputs());
      c(k) = 1.0;
      const auto sol = max_disturbance(make_problem(g, p.eq.phi_star, c, ybar));
      const int bus = p.sys.input_bus[static_cast<std::size_t>(k)];
      const bool gen = static_cast<std::size_t>(k) < p.sys.m;
      const auto deg = degree[p.grid.index_of(bus)];
      os << bus << ',' << (gen ? "gen" : "load") << ',' << deg << ',' << num(sol.mu_star) << ','
         << num(sol.zbar_star.minCoeff()) << '\n';
      rows.push_back({{"bus", bus}, {"kind", gen ? "gen" : "load"}, {"degree", deg}, {"mu_star", sol.mu_star}});
      std::cout << "bus " << bus << (gen ? " (gen) " : " (load) ") << "mu* = " << num(sol.mu_star) << '\n';
    }
    write_json(out_file(cfg, "per_bus.json"), {{"ybar", json_vector(ybar)}, {"buses", rows}});
    return kExitOk;
  }

  const Vector c = parse_direction(cfg, p);
  const auto sol = max_disturbance(make_problem(g, p.eq.phi_star, c, ybar));
  write_json(out_file(cfg, "solution.json"), to_json(sol));
  auto os = open_csv(out_file(cfg, "solution.csv"));
  os << "kind,label,value\n";
  os << "mu_star,," << num(sol.mu_star) << '\n';
  for (Index k = 0; k < sol.ubar_star.size(); ++k)
    os << "ubar," << p.sys.input_labels[static_cast<std::size_t>(k)] << ',' << num(sol.ubar_star(k)) << '\n';
  for (Index i = 0; i < sol.zbar_star.size(); ++i)
    os << "zbar," << p.sys.z_labels[static_cast<std::size_t>(i)] << ',' << num(sol.zbar_star(i)) << '\n';
  std::cout << "mu* = " << num(sol.mu_star) << "  (zbar in [" << num(sol.zbar_star.minCoeff()) << ", "
            << num(sol.zbar_star.maxCoeff()) << "] rad)\n";
  return kExitOk;
}

std::string svg_plot(const std::vector<double>& x, const std::vector<double>& cert,
                     const std::vector<std::pair<double, double>>& emp) {
  const double W = 640, H = 400, pad = 50;
  double xmax = x.empty() ? 1.0 : x.back(), ymax = 1e-12;
  for (double v : cert) ymax = std::max(ymax, v);
  for (const auto& e : emp) ymax = std::max(ymax, e.second);
  ymax *= 1.1;
  auto X = [&](double v) { return pad + (W - 2 * pad) * v / xmax; };
  auto Y = [&](double v) { return H - pad - (H - 2 * pad) * v / ymax; };
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << pad << "\" y1=\"" << H - pad << "\" x2=\"" << W - pad << "\" y2=\"" << H - pad
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << H - pad
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">zbar (rad)</text>\n";
  os << "<text x=\"12\" y=\"" << H / 2 << "\" transform=\"rotate(-90 12 " << H / 2
     << ")\" text-anchor=\"middle\">mu (pu)</text>\n";
  os << "<text x=\"" << pad << "\" y=\"" << pad - 8 << "\">max " << std::setprecision(4) << ymax / 1.1
     << "</text>\n" << std::setprecision(2);
  os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < x.size(); ++i) os << X(x[i]) << ',' << Y(cert[i]) << ' ';
  os << "\"/>\n";
  if (!emp.empty()) {
    os << "<polyline fill=\"none\" stroke=\"darkorange\" stroke-width=\"2\" points=\"";
    for (const auto& e : emp) os << X(e.first) << ',' << Y(e.second) << ' ';
    os << "\"/>\n";
  }
  os << "<text x=\"" << W - pad << "\" y=\"" << pad << "\" text-anchor=\"end\" fill=\"steelblue\">certified</text>\n";
  os << "<text x=\"" << W - pad << "\" y=\"" << pad + 16
     << "\" text-anchor=\"end\" fill=\"darkorange\">simulated upper bound</text>\n";
  os << "</svg>\n";
  return os.str();
}

int cmd_sweep(const RunConfig& cfg) {
  const auto p = load(cfg);
  const auto grid = parse_grid_spec(cfg.zbar_grid);
  const auto g = linear_gains(p.sys, p.tol.gain);
  const Vector ybar = parse_ybar(cfg, p);
  const Vector c = parse_direction(cfg, p);
  const auto prob = make_problem(g, p.eq.phi_star, c, ybar);
  const auto pts = sweep_zbar(prob, grid, !cfg.grid_fraction);

  // simulated upper bound along the same direction, step family
  const Vector d = coupled_direction(c);
  const auto family = step_family(p.sys.num_inputs());
  std::vector<double> emp(pts.size(), std::nan(""));
  std::vector<std::pair<double, double>> emp_curve;
  if (cfg.empirical_stride > 0) {
    for (std::size_t i = 0; i < pts.size(); i += static_cast<std::size_t>(cfg.empirical_stride)) {
      if (pts[i].mu <= 0.0 && pts[i].zbar.maxCoeff() == 0.0) {
        emp[i] = 0.0;
      } else {
        std::vector<OutputLimit> limits{{OutputLimit::Kind::Angle, pts[i].zbar}};
        if (ybar.allFinite()) limits.push_back({OutputLimit::Kind::Frequency, ybar});
        emp[i] = empirical_upper_bound(p.grid, p.eq, d, limits, family, p.tol.empirical);
      }
      emp_curve.emplace_back(pts[i].grid_value, emp[i]);
    }
  }

  auto os = open_csv(out_file(cfg, "sweep.csv"));
  os << "zbar,mu_certified,ybound_hz,small_gain_margin,binding,mu_empirical,gap\n";
  std::size_t peak = 0;
  double zero_at = std::nan(""), max_gap = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& pt = pts[i];
    if (pt.mu > pts[peak].mu) peak = i;
    if (std::isnan(zero_at) && i > peak && pt.mu <= 0.0 && pts[peak].mu > 0.0) zero_at = pt.grid_value;
    std::string gap;
    if (!std::isnan(emp[i]) && pt.mu > 0.0) {
      max_gap = std::max(max_gap, (emp[i] - pt.mu) / pt.mu);
      gap = num((emp[i] - pt.mu) / pt.mu);
    }
    os << num(pt.grid_value) << ',' << num(pt.mu) << ',' << num(pt.ybound) << ',' << num(pt.small_gain_margin)
       << ',' << pt.binding_row << ',' << (std::isnan(emp[i]) ? "" : num(emp[i])) << ',' << gap << '\n';
  }
  {
    std::vector<double> xs, ys;
    for (const auto& pt : pts) xs.push_back(pt.grid_value), ys.push_back(pt.mu);
    std::ofstream svg(out_file(cfg, "sweep.svg"));
    svg << svg_plot(xs, ys, emp_curve);
  }
  nlohmann::json j;
  j["points"] = pts.size();
  j["peak_zbar"] = pts.empty() ? 0.0 : pts[peak].grid_value;
  j["peak_mu"] = pts.empty() ? 0.0 : pts[peak].mu;
  j["zero_zbar"] = std::isnan(zero_at) ? nlohmann::json(nullptr) : nlohmann::json(zero_at);
  j["max_relative_gap"] = max_gap;
  j["empirical_family"] = "step, both signs, coupled direction";
  write_json(out_file(cfg, "sweep.json"), j);
  std::cout << "peak mu " << num(j["peak_mu"].get<double>()) << " at zbar " << num(j["peak_zbar"].get<double>())
            << ", zero at " << (std::isnan(zero_at) ? std::string("-") : num(zero_at))
            << ", max gap " << num(max_gap) << '\n';
  return kExitOk;
}

int cmd_simulate(const RunConfig& cfg) {
  const auto p = load(cfg);
  if (cfg.scenario.empty()) throw InputError("simulate: --scenario is required");
  std::ifstream in(cfg.scenario);
  if (!in) throw InputError("cannot open scenario file '" + cfg.scenario + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("scenario file: " + std::string(e.what()));
  }
  if (!doc.contains("seed")) doc["seed"] = cfg.seed;
  const auto d = parse_scenario(doc, p.sys);
  if (!(cfg.horizon > 0.0)) throw InputError("--horizon: must be positive");
  const auto tr = simulate(p.grid, p.eq, d, cfg.horizon, p.tol.empirical.sim);
  auto os = open_csv(out_file(cfg, "trajectory.csv"));
  write_trajectory_csv(os, tr, p.sys.y_labels, p.sys.z_labels);
  nlohmann::json j;
  j["samples"] = tr.t.size();
  j["horizon_s"] = cfg.horizon;
  j["peak_y_hz"] = json_vector(tr.peak_y);
  j["peak_z_rad"] = json_vector(tr.peak_z);
  j["y_labels"] = p.sys.y_labels;
  j["z_labels"] = p.sys.z_labels;
  write_json(out_file(cfg, "trajectory.json"), j);
  std::cout << "max |z| " << num(tr.peak_z.maxCoeff()) << " rad, max |y| " << num(tr.peak_y.maxCoeff())
            << " Hz\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Certified disturbance bounds for power grids"};
  app.require_subcommand(1);
  app.fallthrough();
  RunConfig cfg;

  app.add_option("--case", cfg.case_path, "grid case (JSON)")->required();
  app.add_option("--out", cfg.out_dir, "output directory");
  app.add_option("--seed", cfg.seed, "seed for random scenarios");
  app.add_option("--ybar", cfg.ybar, "frequency limit in Hz (one value or one per generator)");
  app.add_option("--tol", cfg.tol, "tolerance override NAME=VAL");

  auto* gains = app.add_subcommand("gains", "element-wise gains of the linear block");
  auto* certify = app.add_subcommand("certify", "check a (ubar, zbar, ybar) certificate");
  certify->add_option("--ubar", cfg.ubar, "disturbance bound: scalar or \"k=w,...\"");
  certify->add_option("--zbar", cfg.zbar, "angle bound: scalar or one per line, comma separated");
  auto* maxdist = app.add_subcommand("maxdist", "largest certified disturbance");
  auto* sweep = app.add_subcommand("sweep", "certified and simulated mu over a zbar grid");
  for (auto* sub : {maxdist, sweep}) sub->add_option("--direction", cfg.direction, "weights \"k=w,...\"");
  auto* per_bus = maxdist->add_flag("--per-bus", cfg.per_bus, "one solve per disturbance bus");
  per_bus->excludes(maxdist->get_option("--direction"));
  sweep->add_option("--zbar-grid", cfg.zbar_grid, "START:STOP:STEP");
  sweep->add_flag("--fraction", cfg.grid_fraction, "grid values are fractions of each line's domain");
  sweep->add_option("--empirical-stride", cfg.empirical_stride, "simulate every N-th grid point (0 = off)");
  auto* simulate_cmd = app.add_subcommand("simulate", "nonlinear simulation of a scenario");
  simulate_cmd->add_option("--scenario", cfg.scenario, "scenario file (JSON)");
  simulate_cmd->add_option("--horizon", cfg.horizon, "simulated time (s)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (gains->parsed()) return cmd_gains(cfg);
    if (certify->parsed()) return cmd_certify(cfg);
    if (maxdist->parsed()) return cmd_maxdist(cfg);
    if (sweep->parsed()) return cmd_sweep(cfg);
    if (simulate_cmd->parsed()) return cmd_simulate(cfg);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitInput;
}
