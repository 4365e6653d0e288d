#pragma once

// Grid data model, JSON case parsing and the lossless power-flow equilibrium.
//
// Sign convention: every injection is a net injection into the bus. Load
// buses carry Pl < 0 when they consume power.

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridcert/core.hpp"

namespace gridcert {

enum class BusKind { Generator, Load };

struct Bus {
  int id = 0;
  BusKind kind = BusKind::Load;
};

struct Line {
  int from = 0;
  int to = 0;
  double phi = 0.0;  // b_kj * V_k * V_j, per unit
};

struct GeneratorParams {
  double M = 0.0;   // inertia
  double D = 0.0;   // damping
  double T = 0.0;   // governor time constant; 0 bypasses the governor
  double R = 0.0;   // droop; ignored when T == 0
  double Pg = 0.0;  // scheduled injection

  bool has_governor() const { return T > 0.0; }
};

struct LoadParams {
  double D = 0.0;
  double Pl = 0.0;  // net injection, negative for consumption
};

/// Static network description. Buses are stored generators first, each group
/// in file order; `file_position[i]` is the position of internal bus i in the
/// case file.
struct GridCase {
  std::vector<Bus> buses;
  std::vector<Line> lines;
  std::vector<GeneratorParams> generators;  // aligned with buses[0, m)
  std::vector<LoadParams> loads;            // aligned with buses[m, m + n)
  std::optional<int> infinite_bus;          // id of a fixed-angle load bus
  std::vector<std::size_t> file_position;

  std::size_t num_generators() const { return generators.size(); }
  std::size_t num_loads() const { return loads.size(); }
  std::size_t num_buses() const { return buses.size(); }
  std::size_t num_lines() const { return lines.size(); }

  std::size_t index_of(int bus_id) const {
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (buses[i].id == bus_id) return i;
    throw InputError("unknown bus id " + std::to_string(bus_id));
  }

  bool has_bus(int bus_id) const {
    return std::any_of(buses.begin(), buses.end(),
                       [&](const Bus& b) { return b.id == bus_id; });
  }

  bool is_infinite(std::size_t bus_index) const {
    return infinite_bus && buses[bus_index].id == *infinite_bus;
  }

  /// Oriented incidence matrix, buses x lines: +1 at `from`, -1 at `to`.
  Matrix incidence() const {
    Matrix E = Matrix::Zero(static_cast<Index>(buses.size()),
                            static_cast<Index>(lines.size()));
    for (std::size_t l = 0; l < lines.size(); ++l) {
      E(static_cast<Index>(index_of(lines[l].from)), static_cast<Index>(l)) = 1.0;
      E(static_cast<Index>(index_of(lines[l].to)), static_cast<Index>(l)) = -1.0;
    }
    return E;
  }

  /// Net scheduled injection per internal bus (zero at an infinite bus).
  Vector injections() const {
    Vector p = Vector::Zero(static_cast<Index>(buses.size()));
    for (std::size_t g = 0; g < generators.size(); ++g)
      p(static_cast<Index>(g)) = generators[g].Pg;
    for (std::size_t k = 0; k < loads.size(); ++k) {
      const std::size_t i = generators.size() + k;
      p(static_cast<Index>(i)) = is_infinite(i) ? 0.0 : loads[k].Pl;
    }
    return p;
  }

  std::vector<std::size_t> degrees() const {
    std::vector<std::size_t> deg(buses.size(), 0);
    for (const auto& l : lines) {
      ++deg[index_of(l.from)];
      ++deg[index_of(l.to)];
    }
    return deg;
  }
};

namespace detail {

inline double require_number(const nlohmann::json& obj, const std::string& key,
                             const std::string& path) {
  if (!obj.is_object() || !obj.contains(key))
    throw InputError(path + "." + key + ": missing field");
  const auto& v = obj.at(key);
  if (!v.is_number()) throw InputError(path + "." + key + ": expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw InputError(path + "." + key + ": not finite");
  return x;
}

inline double optional_number(const nlohmann::json& obj, const std::string& key,
                              const std::string& path, double fallback) {
  if (!obj.contains(key)) return fallback;
  return require_number(obj, key, path);
}

inline void require_positive(double x, const std::string& path, const char* what) {
  if (!(x > 0.0)) throw InputError(path + ": nonpositive " + std::string(what));
}

}  // namespace detail

/// Checks every structural invariant of a case. Throws InputError naming the
/// offending field.
inline void validate(const GridCase& c) {
  if (c.generators.empty()) throw InputError("buses: case has no generator bus");
  if (c.buses.size() != c.generators.size() + c.loads.size())
    throw InputError("buses: parameter tables do not cover every bus");

  std::set<int> ids;
  for (std::size_t i = 0; i < c.buses.size(); ++i) {
    if (!ids.insert(c.buses[i].id).second)
      throw InputError("buses[" + std::to_string(i) + "].id: duplicate bus id " +
                       std::to_string(c.buses[i].id));
    const bool gen_slot = i < c.generators.size();
    if (gen_slot != (c.buses[i].kind == BusKind::Generator))
      throw InputError("buses: generators must precede loads internally");
  }

  if (c.infinite_bus) {
    const std::size_t i = c.index_of(*c.infinite_bus);
    if (c.buses[i].kind != BusKind::Load)
      throw InputError("infinite_bus: must name a load bus");
  }

  for (std::size_t g = 0; g < c.generators.size(); ++g) {
    const auto& p = c.generators[g];
    const std::string path = "generators." + std::to_string(c.buses[g].id);
    detail::require_positive(p.M, path + ".M", "inertia");
    detail::require_positive(p.D, path + ".D", "damping");
    if (p.T < 0.0) throw InputError(path + ".T: negative governor time constant");
    if (p.has_governor()) detail::require_positive(p.R, path + ".R", "droop");
  }
  for (std::size_t k = 0; k < c.loads.size(); ++k) {
    const std::size_t i = c.generators.size() + k;
    if (c.is_infinite(i)) continue;
    detail::require_positive(c.loads[k].D,
                             "loads." + std::to_string(c.buses[i].id) + ".D",
                             "damping");
  }

  if (c.lines.empty()) throw InputError("lines: case has no lines");
  std::set<std::pair<int, int>> seen;
  for (std::size_t l = 0; l < c.lines.size(); ++l) {
    const auto& ln = c.lines[l];
    const std::string path = "lines[" + std::to_string(l) + "]";
    if (!c.has_bus(ln.from)) throw InputError(path + ".from: unknown bus " + std::to_string(ln.from));
    if (!c.has_bus(ln.to)) throw InputError(path + ".to: unknown bus " + std::to_string(ln.to));
    if (ln.from == ln.to) throw InputError(path + ": self-loop");
    if (!(ln.phi > 0.0)) throw InputError(path + ".phi: nonpositive line coefficient");
    const auto key = std::minmax(ln.from, ln.to);
    if (!seen.insert({key.first, key.second}).second)
      throw InputError(path + ": duplicate line " + std::to_string(key.first) + "-" +
                       std::to_string(key.second));
  }

  // connectivity by union-find over internal indices
  std::vector<std::size_t> parent(c.buses.size());
  for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = i;
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (const auto& ln : c.lines) parent[find(c.index_of(ln.from))] = find(c.index_of(ln.to));
  for (std::size_t i = 1; i < parent.size(); ++i)
    if (find(i) != find(0))
      throw InputError("lines: disconnected graph (bus " + std::to_string(c.buses[i].id) +
                       " unreachable)");
}

/// Builds a GridCase from the JSON case schema.
inline GridCase parse_grid_json(const nlohmann::json& doc) {
  using nlohmann::json;
  if (!doc.is_object()) throw InputError("case: top level must be an object");
  for (const char* key : {"buses", "lines", "generators"})
    if (!doc.contains(key)) throw InputError(std::string(key) + ": missing field");
  if (!doc["buses"].is_array()) throw InputError("buses: expected an array");
  if (!doc["lines"].is_array()) throw InputError("lines: expected an array");
  if (!doc["generators"].is_object()) throw InputError("generators: expected an object");
  const json loads = doc.value("loads", json::object());
  if (!loads.is_object()) throw InputError("loads: expected an object");

  GridCase c;
  if (doc.contains("infinite_bus")) {
    if (!doc["infinite_bus"].is_number_integer())
      throw InputError("infinite_bus: expected an integer bus id");
    c.infinite_bus = doc["infinite_bus"].get<int>();
  }

  struct Raw {
    Bus bus;
    std::size_t pos;
  };
  std::vector<Raw> gens, lds;
  const auto& buses = doc["buses"];
  for (std::size_t i = 0; i < buses.size(); ++i) {
    const std::string path = "buses[" + std::to_string(i) + "]";
    const auto& b = buses[i];
    if (!b.is_object() || !b.contains("id") || !b["id"].is_number_integer())
      throw InputError(path + ".id: expected an integer");
    if (!b.contains("kind") || !b["kind"].is_string())
      throw InputError(path + ".kind: expected \"gen\" or \"load\"");
    const std::string kind = b["kind"].get<std::string>();
    Bus bus{b["id"].get<int>(), BusKind::Load};
    if (kind == "gen")
      bus.kind = BusKind::Generator;
    else if (kind != "load")
      throw InputError(path + ".kind: expected \"gen\" or \"load\", got \"" + kind + "\"");
    (bus.kind == BusKind::Generator ? gens : lds).push_back({bus, i});
  }

  for (const auto& r : gens) {
    const std::string key = std::to_string(r.bus.id);
    const std::string path = "generators." + key;
    if (!doc["generators"].contains(key)) throw InputError(path + ": missing parameters");
    const auto& g = doc["generators"][key];
    GeneratorParams p;
    p.M = detail::require_number(g, "M", path);
    p.D = detail::require_number(g, "D", path);
    p.T = detail::require_number(g, "T", path);
    p.R = p.T > 0.0 ? detail::require_number(g, "R", path)
                    : detail::optional_number(g, "R", path, 0.0);
    p.Pg = detail::require_number(g, "Pg", path);
    c.buses.push_back(r.bus);
    c.generators.push_back(p);
    c.file_position.push_back(r.pos);
  }
  for (const auto& r : lds) {
    const std::string key = std::to_string(r.bus.id);
    const std::string path = "loads." + key;
    LoadParams p;
    const bool infinite = c.infinite_bus && *c.infinite_bus == r.bus.id;
    if (loads.contains(key)) {
      p.D = infinite ? detail::optional_number(loads[key], "D", path, 0.0)
                     : detail::require_number(loads[key], "D", path);
      p.Pl = detail::optional_number(loads[key], "Pl", path, 0.0);
    } else if (!infinite) {
      throw InputError(path + ": missing parameters");
    }
    c.buses.push_back(r.bus);
    c.loads.push_back(p);
    c.file_position.push_back(r.pos);
  }
  for (const auto& [key, _] : doc["generators"].items()) {
    const int id = std::stoi(key);
    if (!c.has_bus(id) || c.buses[c.index_of(id)].kind != BusKind::Generator)
      throw InputError("generators." + key + ": not a generator bus");
  }

  const auto& lines = doc["lines"];
  for (std::size_t l = 0; l < lines.size(); ++l) {
    const std::string path = "lines[" + std::to_string(l) + "]";
    const auto& ln = lines[l];
    for (const char* key : {"from", "to"})
      if (!ln.is_object() || !ln.contains(key) || !ln[key].is_number_integer())
        throw InputError(path + "." + key + ": expected an integer bus id");
    c.lines.push_back({ln["from"].get<int>(), ln["to"].get<int>(),
                       detail::require_number(ln, "phi", path)});
  }

  validate(c);
  return c;
}

enum class CaseFormat { Json };

inline GridCase parse_grid(const std::string& file_path, CaseFormat format = CaseFormat::Json) {
  (void)format;
  std::ifstream in(file_path);
  if (!in) throw InputError("cannot open case file '" + file_path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("case file '" + file_path + "': " + e.what());
  }
  return parse_grid_json(doc);
}

/// Serializes a case back to the JSON schema (file order is not preserved).
inline nlohmann::json to_json(const GridCase& c) {
  nlohmann::json doc;
  doc["buses"] = nlohmann::json::array();
  for (const auto& b : c.buses)
    doc["buses"].push_back({{"id", b.id}, {"kind", b.kind == BusKind::Generator ? "gen" : "load"}});
  doc["lines"] = nlohmann::json::array();
  for (const auto& l : c.lines) doc["lines"].push_back({{"from", l.from}, {"to", l.to}, {"phi", l.phi}});
  doc["generators"] = nlohmann::json::object();
  for (std::size_t g = 0; g < c.generators.size(); ++g) {
    const auto& p = c.generators[g];
    doc["generators"][std::to_string(c.buses[g].id)] = {
        {"M", p.M}, {"D", p.D}, {"T", p.T}, {"R", p.R}, {"Pg", p.Pg}};
  }
  doc["loads"] = nlohmann::json::object();
  for (std::size_t k = 0; k < c.loads.size(); ++k)
    doc["loads"][std::to_string(c.buses[c.generators.size() + k].id)] = {
        {"D", c.loads[k].D}, {"Pl", c.loads[k].Pl}};
  if (c.infinite_bus) doc["infinite_bus"] = *c.infinite_bus;
  return doc;
}

/// Single machine against an infinite bus (bus 1 = machine, bus 2 = infinite).
/// T == 0 builds the governor-free machine.
inline GridCase make_smib(double M, double D, double p, double phi, double T = 0.0,
                          double R = 0.0) {
  GridCase c;
  c.buses = {{1, BusKind::Generator}, {2, BusKind::Load}};
  c.lines = {{1, 2, phi}};
  c.generators = {{M, D, T, R, p}};
  c.loads = {{0.0, -p}};
  c.infinite_bus = 2;
  c.file_position = {0, 1};
  validate(c);
  return c;
}

// ---------------------------------------------------------------------------

struct Equilibrium {
  Vector delta_star;  // per internal bus, reference bus at 0
  Vector p_star;      // generator mechanical powers after slack adjustment
  Vector phi_star;    // per line, E^T delta*
  std::size_t reference_bus = 0;
  double slack_adjustment = 0.0;  // added to the slack generator's Pg
  double residual = 0.0;          // max-norm of the steady-state balance
  int iterations = 0;
};

struct EquilibriumOptions {
  double tolerance = 1e-12;
  int max_iterations = 50;
};

/// Steady-state balance residual sum_j phi_kj sin(delta_k - delta_j) - P_k at
/// every non-infinite bus.
inline Vector balance_residual(const GridCase& c, const Vector& delta, const Vector& injection) {
  Vector r = -injection;
  for (const auto& l : c.lines) {
    const Index a = static_cast<Index>(c.index_of(l.from));
    const Index b = static_cast<Index>(c.index_of(l.to));
    const double f = l.phi * std::sin(delta(a) - delta(b));
    r(a) += f;
    r(b) -= f;
  }
  for (std::size_t i = 0; i < c.num_buses(); ++i)
    if (c.is_infinite(i)) r(static_cast<Index>(i)) = 0.0;
  return r;
}

/// Lossless power-flow equilibrium by Newton-Raphson from a flat start.
///
/// Without an infinite bus the lowest-id generator is both the angle
/// reference and the slack that absorbs any injection imbalance. With an
/// infinite bus that bus is the reference and absorbs the imbalance itself.
inline Equilibrium solve_equilibrium(const GridCase& c, const EquilibriumOptions& opt = {}) {
  const std::size_t nb = c.num_buses();
  Equilibrium eq;
  Vector injection = c.injections();

  if (c.infinite_bus) {
    eq.reference_bus = c.index_of(*c.infinite_bus);
  } else {
    std::size_t slack = 0;
    for (std::size_t g = 1; g < c.num_generators(); ++g)
      if (c.buses[g].id < c.buses[slack].id) slack = g;
    eq.reference_bus = slack;
    eq.slack_adjustment = -injection.sum();
    injection(static_cast<Index>(slack)) += eq.slack_adjustment;
  }

  std::vector<Index> free_bus;
  for (std::size_t i = 0; i < nb; ++i)
    if (i != eq.reference_bus) free_bus.push_back(static_cast<Index>(i));
  const Index nf = static_cast<Index>(free_bus.size());

  auto reduced = [&](const Vector& full) {
    Vector r(nf);
    for (Index k = 0; k < nf; ++k) r(k) = full(free_bus[static_cast<std::size_t>(k)]);
    return r;
  };
  std::vector<Index> slot(nb, -1);
  for (Index k = 0; k < nf; ++k) slot[static_cast<std::size_t>(free_bus[static_cast<std::size_t>(k)])] = k;

  Vector delta = Vector::Zero(static_cast<Index>(nb));
  Vector r = reduced(balance_residual(c, delta, injection));
  double rnorm = r.lpNorm<Eigen::Infinity>();
  int it = 0;
  while (rnorm > opt.tolerance) {
    if (it >= opt.max_iterations)
      throw NumericalError("equilibrium: Newton-Raphson did not converge after " +
                           std::to_string(opt.max_iterations) + " iterations (residual " +
                           std::to_string(rnorm) + ")");
    Matrix J = Matrix::Zero(nf, nf);
    for (const auto& l : c.lines) {
      const std::size_t a = c.index_of(l.from), b = c.index_of(l.to);
      const double w = l.phi * std::cos(delta(static_cast<Index>(a)) - delta(static_cast<Index>(b)));
      const Index sa = slot[a], sb = slot[b];
      if (sa >= 0) J(sa, sa) += w;
      if (sb >= 0) J(sb, sb) += w;
      if (sa >= 0 && sb >= 0) {
        J(sa, sb) -= w;
        J(sb, sa) -= w;
      }
    }
    const Vector step = J.fullPivLu().solve(-r);
    if (!step.allFinite()) throw NumericalError("equilibrium: singular Jacobian");
    double t = 1.0;
    for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
      Vector trial = delta;
      for (Index k = 0; k < nf; ++k) trial(free_bus[static_cast<std::size_t>(k)]) += t * step(k);
      const Vector rt = reduced(balance_residual(c, trial, injection));
      const double tn = rt.lpNorm<Eigen::Infinity>();
      if (tn < rnorm || ls == 29) {
        delta = trial;
        r = rt;
        rnorm = tn;
        break;
      }
    }
    ++it;
  }

  eq.delta_star = delta;
  eq.iterations = it;
  eq.residual = rnorm;
  eq.p_star = Vector(static_cast<Index>(c.num_generators()));
  for (std::size_t g = 0; g < c.num_generators(); ++g)
    eq.p_star(static_cast<Index>(g)) = injection(static_cast<Index>(g));
  eq.phi_star = c.incidence().transpose() * delta;

  for (std::size_t l = 0; l < c.num_lines(); ++l) {
    if (std::abs(eq.phi_star(static_cast<Index>(l))) > kPi / 2)
      throw NumericalError("equilibrium: line " + std::to_string(c.lines[l].from) + "-" +
                           std::to_string(c.lines[l].to) +
                           " angle exceeds pi/2 (" + std::to_string(eq.phi_star(static_cast<Index>(l))) + " rad)");
  }
  return eq;
}

}  // namespace gridcert
