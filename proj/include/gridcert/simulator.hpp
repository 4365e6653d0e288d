#pragma once

// Nonlinear time-domain simulation of the swing + governor model, disturbance
// scenarios, and the simulation-based upper bound on the admissible
// disturbance magnitude.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridcert/core.hpp"
#include "gridcert/lure.hpp"
#include "gridcert/network.hpp"

namespace gridcert {

enum class DisturbanceKind { Step, RampStep, Sinusoid, FilteredNoise, Samples };

/// u_k(t) = pattern_k * shape_k(t) with |shape_k| <= 1. The realized signal is
/// clamped to [-pattern, pattern] whatever the shape parameters say.
struct Disturbance {
  DisturbanceKind kind = DisturbanceKind::Step;
  Vector pattern;  // per-input magnitude (pu), one entry per disturbance column

  Vector sign;  // step / ramp: per-input +-1, empty = all +1
  double start_time = 0.0;
  double ramp_time = 1.0;

  double frequency = 1.0;  // sinusoid, rad/s
  Vector phase;            // sinusoid, per input; empty = 0

  double bandwidth = 1.0;    // noise low-pass corner, rad/s
  double sample_dt = 0.05;   // noise sample spacing, s
  std::uint64_t seed = 0;

  std::vector<double> sample_times;  // custom samples
  Matrix sample_values;              // times x inputs, in pu (clamped)
};

/// Evaluates one realization of a Disturbance. Noise samples are drawn once at
/// construction so evaluation is deterministic.
class DisturbanceSignal {
 public:
  DisturbanceSignal(const Disturbance& d, double horizon) : d_(d) {
    const Index nu = d.pattern.size();
    if ((d.pattern.array() < 0.0).any()) throw InputError("disturbance: negative magnitude");
    if (d.sign.size() != 0 && d.sign.size() != nu) throw InputError("disturbance: sign has wrong length");
    if (d.phase.size() != 0 && d.phase.size() != nu) throw InputError("disturbance: phase has wrong length");
    switch (d.kind) {
      case DisturbanceKind::Step:
        breaks_ = {d.start_time};
        break;
      case DisturbanceKind::RampStep:
        if (!(d.ramp_time > 0.0)) throw InputError("disturbance: ramp_time must be positive");
        breaks_ = {d.start_time, d.start_time + d.ramp_time};
        break;
      case DisturbanceKind::Sinusoid:
        break;
      case DisturbanceKind::FilteredNoise: {
        if (!(d.sample_dt > 0.0) || !(d.bandwidth > 0.0))
          throw InputError("disturbance: noise needs positive sample_dt and bandwidth");
        const auto count = static_cast<Index>(std::ceil(horizon / d.sample_dt)) + 2;
        std::mt19937_64 rng(d.seed);
        std::uniform_real_distribution<double> white(-1.0, 1.0);
        const double a = std::exp(-d.bandwidth * d.sample_dt);
        const double gain = std::sqrt((1.0 + a) / (1.0 - a));
        noise_ = Matrix::Zero(count, nu);
        Vector state = Vector::Zero(nu);
        for (Index k = 0; k < count; ++k) {
          for (Index j = 0; j < nu; ++j) {
            state(j) = a * state(j) + (1.0 - a) * white(rng);
            noise_(k, j) = std::clamp(gain * state(j), -1.0, 1.0);
          }
          breaks_.push_back(static_cast<double>(k) * d.sample_dt);
        }
        break;
      }
      case DisturbanceKind::Samples:
        if (d.sample_times.size() < 2 || static_cast<Index>(d.sample_times.size()) != d.sample_values.rows() ||
            d.sample_values.cols() != nu)
          throw InputError("disturbance: custom samples are malformed");
        if (!std::is_sorted(d.sample_times.begin(), d.sample_times.end()))
          throw InputError("disturbance: sample times must be increasing");
        breaks_ = d.sample_times;
        break;
    }
  }

  Vector operator()(double t) const {
    const Index nu = d_.pattern.size();
    Vector u(nu);
    for (Index k = 0; k < nu; ++k) {
      const double s = d_.sign.size() ? d_.sign(k) : 1.0;
      double shape = 0.0;
      switch (d_.kind) {
        case DisturbanceKind::Step:
          shape = t >= d_.start_time ? s : 0.0;
          break;
        case DisturbanceKind::RampStep:
          shape = s * std::clamp((t - d_.start_time) / d_.ramp_time, 0.0, 1.0);
          break;
        case DisturbanceKind::Sinusoid:
          shape = std::sin(d_.frequency * t + (d_.phase.size() ? d_.phase(k) : 0.0));
          break;
        case DisturbanceKind::FilteredNoise: {
          const double pos = std::max(t, 0.0) / d_.sample_dt;
          const Index i = std::min(static_cast<Index>(pos), noise_.rows() - 2);
          const double f = std::clamp(pos - static_cast<double>(i), 0.0, 1.0);
          shape = (1.0 - f) * noise_(i, k) + f * noise_(i + 1, k);
          break;
        }
        case DisturbanceKind::Samples: {
          const auto& ts = d_.sample_times;
          if (t <= ts.front()) {
            u(k) = d_.sample_values(0, k);
          } else if (t >= ts.back()) {
            u(k) = d_.sample_values(static_cast<Index>(ts.size()) - 1, k);
          } else {
            const auto it = std::upper_bound(ts.begin(), ts.end(), t);
            const Index i = static_cast<Index>(it - ts.begin()) - 1;
            const double f = (t - ts[static_cast<std::size_t>(i)]) /
                             (ts[static_cast<std::size_t>(i) + 1] - ts[static_cast<std::size_t>(i)]);
            u(k) = (1.0 - f) * d_.sample_values(i, k) + f * d_.sample_values(i + 1, k);
          }
          u(k) = std::clamp(u(k), -d_.pattern(k), d_.pattern(k));
          continue;
        }
      }
      u(k) = std::clamp(d_.pattern(k) * shape, -d_.pattern(k), d_.pattern(k));
    }
    return u;
  }

  /// Times where the signal or its slope may jump.
  const std::vector<double>& breakpoints() const { return breaks_; }

 private:
  Disturbance d_;
  Matrix noise_;
  std::vector<double> breaks_;
};

// ---------------------------------------------------------------------------

/// The nonlinear vector field, written directly from the swing, load and
/// governor equations (no Lur'e matrices involved). State layout matches
/// LureSystem: [angle dev. gens; freq gens; angle dev. loads; governor powers].
class SwingModel {
 public:
  SwingModel(const GridCase& c, const Equilibrium& eq) : case_(c), eq_(eq) {
    m_ = c.num_generators();
    for (std::size_t k = 0; k < c.num_loads(); ++k)
      if (!c.is_infinite(m_ + k)) load_bus_.push_back(m_ + k);
    for (std::size_t g = 0; g < m_; ++g)
      if (c.generators[g].has_governor()) gov_.push_back(g);
    state_slot_.assign(c.num_buses(), -1);
    for (std::size_t g = 0; g < m_; ++g) state_slot_[g] = static_cast<Index>(g);
    for (std::size_t k = 0; k < load_bus_.size(); ++k)
      state_slot_[load_bus_[k]] = static_cast<Index>(2 * m_ + k);
    for (const auto& l : c.lines) ends_.push_back({c.index_of(l.from), c.index_of(l.to)});
    injection_ = c.injections();
  }

  Index state_dim() const { return static_cast<Index>(2 * m_ + load_bus_.size() + gov_.size()); }
  Index num_inputs() const { return static_cast<Index>(m_ + load_bus_.size()); }
  std::size_t num_generators() const { return m_; }
  std::size_t num_lines() const { return ends_.size(); }

  Vector bus_angles(const Vector& x) const {
    Vector delta = eq_.delta_star;
    for (std::size_t b = 0; b < state_slot_.size(); ++b)
      if (state_slot_[b] >= 0) delta(static_cast<Index>(b)) += x(state_slot_[b]);
    return delta;
  }

  /// Line-angle deviations z = E' (delta - delta*).
  Vector line_deviation(const Vector& x) const {
    Vector z(static_cast<Index>(ends_.size()));
    for (std::size_t l = 0; l < ends_.size(); ++l) {
      const Index a = state_slot_[ends_[l].first], b = state_slot_[ends_[l].second];
      z(static_cast<Index>(l)) = (a >= 0 ? x(a) : 0.0) - (b >= 0 ? x(b) : 0.0);
    }
    return z;
  }

  Vector frequency_hz(const Vector& x) const {
    return x.segment(static_cast<Index>(m_), static_cast<Index>(m_)) / kTwoPi;
  }

  Vector rhs(const Vector& x, const Vector& u) const {
    const Index im = static_cast<Index>(m_);
    const Vector delta = bus_angles(x);
    Vector outflow = Vector::Zero(static_cast<Index>(case_.num_buses()));
    for (std::size_t l = 0; l < ends_.size(); ++l) {
      const Index a = static_cast<Index>(ends_[l].first), b = static_cast<Index>(ends_[l].second);
      const double f = case_.lines[l].phi * std::sin(delta(a) - delta(b));
      outflow(a) += f;
      outflow(b) -= f;
    }
    Vector dx(state_dim());
    std::size_t q = 0;
    for (Index g = 0; g < im; ++g) {
      const auto& p = case_.generators[static_cast<std::size_t>(g)];
      const double w = x(im + g);
      double mech = eq_.p_star(g);
      if (p.has_governor()) {
        const Index slot = 2 * im + static_cast<Index>(load_bus_.size() + q++);
        mech += x(slot);
        dx(slot) = (u(g) - x(slot) - w / p.R) / p.T;
      } else {
        mech += u(g);
      }
      dx(g) = w;
      dx(im + g) = (mech - p.D * w - outflow(g)) / p.M;
    }
    for (std::size_t k = 0; k < load_bus_.size(); ++k) {
      const std::size_t b = load_bus_[k];
      const auto& p = case_.loads[b - m_];
      dx(2 * im + static_cast<Index>(k)) =
          (injection_(static_cast<Index>(b)) + u(im + static_cast<Index>(k)) - outflow(static_cast<Index>(b))) / p.D;
    }
    return dx;
  }

  /// 1/2 w'Mw - sum phi cos(line angle) - sum P delta over non-infinite buses;
  /// nonincreasing along unforced trajectories when no generator has a governor.
  double energy(const Vector& x) const {
    const Index im = static_cast<Index>(m_);
    const Vector delta = bus_angles(x);
    double e = 0.0;
    for (Index g = 0; g < im; ++g) {
      const double w = x(im + g);
      e += 0.5 * case_.generators[static_cast<std::size_t>(g)].M * w * w;
      e -= eq_.p_star(g) * delta(g);
    }
    for (std::size_t b : load_bus_) e -= injection_(static_cast<Index>(b)) * delta(static_cast<Index>(b));
    for (std::size_t l = 0; l < ends_.size(); ++l)
      e -= case_.lines[l].phi * std::cos(delta(static_cast<Index>(ends_[l].first)) -
                                         delta(static_cast<Index>(ends_[l].second)));
    return e;
  }

  const Vector& phi_star() const { return eq_.phi_star; }

 private:
  GridCase case_;
  Equilibrium eq_;
  std::size_t m_ = 0;
  std::vector<std::size_t> load_bus_, gov_;
  std::vector<Index> state_slot_;
  std::vector<std::pair<std::size_t, std::size_t>> ends_;
  Vector injection_;
};

struct SimOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  double max_step = 0.05;
  double initial_step = 1e-3;
  double min_step = 1e-12;
  long max_steps = 5'000'000;
  double sync_limit = kPi;  // |phi* + z| beyond this on any line = loss of synchronism
  std::optional<Vector> initial_state;  // default: the equilibrium (x = 0)
};

struct Trajectory {
  std::vector<double> t;
  Matrix x;  // state_dim x samples
  Matrix y;  // generators x samples, Hz
  Matrix z;  // lines x samples, rad
  Vector peak_y, peak_z;  // max abs value, including extrema between steps
  long rejected_steps = 0;
};

namespace detail {

// Continuous extension of the Dormand-Prince step: over one accepted step the
// state is x0 + h * sum_j q_j theta^j (j = 1..4) with q = K * P, where
// K holds the seven stage derivatives as columns and P is the table below.
inline const Matrix& dense_coefficients() {
  static const Matrix P = [] {
    Matrix m(7, 4);
    m << 1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0, -12715105075.0 / 11282082432.0,
        0.0, 0.0, 0.0, 0.0,
        0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0, 87487479700.0 / 32700410799.0,
        0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0, -10690763975.0 / 1880347072.0,
        0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0, 701980252875.0 / 199316789632.0,
        0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0, -1453857185.0 / 822651844.0,
        0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0, 69997945.0 / 29380423.0;
    return m;
  }();
  return P;
}

// Raises peak(i) to the largest |s_i(theta)| over theta in (0, 1), where
// s(theta) = s0 + h * sum_j Q(i, j) theta^(j+1). Interior maxima of |s| are
// zeros of the derivative, bracketed by a sign change at the step ends.
inline void interior_peaks(const Vector& s0, const Matrix& Q, double h, Vector& peak) {
  for (Index i = 0; i < s0.size(); ++i) {
    const double q1 = Q(i, 0), q2 = Q(i, 1), q3 = Q(i, 2), q4 = Q(i, 3);
    auto value = [&](double th) { return s0(i) + h * th * (q1 + th * (q2 + th * (q3 + th * q4))); };
    auto slope = [&](double th) { return q1 + th * (2 * q2 + th * (3 * q3 + th * 4 * q4)); };
    // the derivative is cubic: split [0, 1] at its critical points so each
    // piece holds at most one root
    std::vector<double> cuts{0.0, 1.0};
    const double a = 12 * q4, b = 6 * q3, c = 2 * q2;
    if (a != 0.0) {
      const double disc = b * b - 4 * a * c;
      if (disc > 0.0)
        for (double r : {(-b - std::sqrt(disc)) / (2 * a), (-b + std::sqrt(disc)) / (2 * a)})
          if (r > 0.0 && r < 1.0) cuts.push_back(r);
    } else if (b != 0.0 && -c / b > 0.0 && -c / b < 1.0) {
      cuts.push_back(-c / b);
    }
    std::sort(cuts.begin(), cuts.end());
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
      double lo = cuts[k], hi = cuts[k + 1];
      double flo = slope(lo);
      if (flo * slope(hi) > 0.0) continue;
      for (int it = 0; it < 60 && hi - lo > 1e-15; ++it) {
        const double mid = 0.5 * (lo + hi), fm = slope(mid);
        if ((fm > 0.0) == (flo > 0.0)) {
          lo = mid;
          flo = fm;
        } else {
          hi = mid;
        }
      }
      peak(i) = std::max(peak(i), std::abs(value(0.5 * (lo + hi))));
    }
  }
}

}  // namespace detail

/// Dormand-Prince 5(4) integration of the nonlinear model from the
/// equilibrium (or opt.initial_state). Integration never steps across a
/// disturbance breakpoint. Throws SynchronismLost when a line angle leaves
/// the synchronous region and NumericalError on step-size underflow.
inline Trajectory simulate(const GridCase& c, const Equilibrium& eq, const Disturbance& d, double horizon,
                           const SimOptions& opt = {}) {
  if (!(horizon > 0.0)) throw InputError("simulate: horizon must be positive");
  const SwingModel model(c, eq);
  if (d.pattern.size() != model.num_inputs())
    throw InputError("simulate: disturbance pattern has " + std::to_string(d.pattern.size()) +
                     " entries, expected " + std::to_string(model.num_inputs()));
  const DisturbanceSignal signal(d, horizon);
  const Index N = model.state_dim();

  std::vector<double> stops;
  for (double b : signal.breakpoints())
    if (b > 0.0 && b < horizon) stops.push_back(b);
  stops.push_back(horizon);
  std::sort(stops.begin(), stops.end());
  stops.erase(std::unique(stops.begin(), stops.end()), stops.end());

  Vector x = opt.initial_state ? *opt.initial_state : Vector::Zero(N);
  if (x.size() != N) throw InputError("simulate: initial state has wrong length");

  std::vector<double> ts{0.0};
  std::vector<Vector> xs{x};
  Trajectory tr;

  auto check = [&](const Vector& state, double t) {
    if (!state.allFinite()) throw NumericalError("simulate: non-finite state at t = " + std::to_string(t));
    const Vector z = model.line_deviation(state);
    for (Index l = 0; l < z.size(); ++l)
      if (std::abs(model.phi_star()(l) + z(l)) > opt.sync_limit)
        throw SynchronismLost("simulate: loss of synchronism on line " + std::to_string(l) +
                                  " at t = " + std::to_string(t),
                              t);
  };
  check(x, 0.0);
  tr.peak_z = model.line_deviation(x).cwiseAbs();
  tr.peak_y = model.frequency_hz(x).cwiseAbs();
  const Matrix& P = detail::dense_coefficients();
  Matrix K(N, 7);

  // Dormand-Prince tableau
  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                   a65 = -5103.0 / 18656;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                   e6 = 22.0 / 525, e7 = -1.0 / 40;

  double t = 0.0, h = std::min(opt.initial_step, opt.max_step);
  long steps = 0;
  double seg_lo = 0.0;
  for (double seg_hi : stops) {
    // evaluate the input strictly inside the current segment
    auto u_at = [&](double tt) {
      const double pad = 1e-12 * std::max(1.0, seg_hi);
      return signal(std::clamp(tt, seg_lo + pad, std::max(seg_lo + pad, seg_hi - pad)));
    };
    auto f = [&](double tt, const Vector& xx) { return model.rhs(xx, u_at(tt)); };
    Vector k1 = f(t, x);
    while (t < seg_hi) {
      if (++steps > opt.max_steps) throw NumericalError("simulate: step budget exhausted");
      bool last = false;
      if (t + h >= seg_hi) {
        h = seg_hi - t;
        last = true;
      }
      const Vector k2 = f(t + c2 * h, x + h * a21 * k1);
      const Vector k3 = f(t + c3 * h, x + h * (a31 * k1 + a32 * k2));
      const Vector k4 = f(t + c4 * h, x + h * (a41 * k1 + a42 * k2 + a43 * k3));
      const Vector k5 = f(t + c5 * h, x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
      const Vector k6 = f(t + h, x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
      const Vector xn = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      const Vector k7 = f(t + h, xn);
      const Vector err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
      double norm = 0.0;
      for (Index i = 0; i < N; ++i) {
        const double sc = opt.atol + opt.rtol * std::max(std::abs(x(i)), std::abs(xn(i)));
        norm += (err(i) / sc) * (err(i) / sc);
      }
      norm = std::sqrt(norm / static_cast<double>(N));
      if (!std::isfinite(norm)) norm = 1e10;

      if (norm <= 1.0) {
        K << k1, k2, k3, k4, k5, k6, k7;
        const Matrix Q = K * P;
        Matrix Qz(tr.peak_z.size(), 4), Qy(tr.peak_y.size(), 4);
        for (Index j = 0; j < 4; ++j) {
          Qz.col(j) = model.line_deviation(Q.col(j));
          Qy.col(j) = model.frequency_hz(Q.col(j));
        }
        detail::interior_peaks(model.line_deviation(x), Qz, h, tr.peak_z);
        detail::interior_peaks(model.frequency_hz(x), Qy, h, tr.peak_y);
        tr.peak_z = tr.peak_z.cwiseMax(model.line_deviation(xn).cwiseAbs());
        tr.peak_y = tr.peak_y.cwiseMax(model.frequency_hz(xn).cwiseAbs());
        t = last ? seg_hi : t + h;
        x = xn;
        k1 = k7;
        check(x, t);
        ts.push_back(t);
        xs.push_back(x);
        const double grow = norm == 0.0 ? 5.0 : std::min(5.0, std::max(0.2, 0.9 * std::pow(norm, -0.2)));
        h = std::min(opt.max_step, h * grow);
      } else {
        ++tr.rejected_steps;
        h *= std::max(0.1, 0.9 * std::pow(norm, -0.2));
        if (h < opt.min_step * std::max(1.0, t))
          throw NumericalError("simulate: step size underflow at t = " + std::to_string(t) +
                               " (probable loss of synchronism)");
      }
    }
    seg_lo = seg_hi;
  }

  const Index ns = static_cast<Index>(ts.size());
  tr.t = ts;
  tr.x.resize(N, ns);
  tr.y.resize(static_cast<Index>(model.num_generators()), ns);
  tr.z.resize(static_cast<Index>(model.num_lines()), ns);
  for (Index i = 0; i < ns; ++i) {
    const Vector& xi = xs[static_cast<std::size_t>(i)];
    tr.x.col(i) = xi;
    tr.y.col(i) = model.frequency_hz(xi);
    tr.z.col(i) = model.line_deviation(xi);
  }
  return tr;
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr, const std::vector<std::string>& y_labels,
                                 const std::vector<std::string>& z_labels) {
  os << "t";
  for (const auto& l : y_labels) os << ',' << l;
  for (const auto& l : z_labels) os << ',' << l;
  os << '\n';
  os.precision(12);
  for (std::size_t i = 0; i < tr.t.size(); ++i) {
    os << tr.t[i];
    for (Index r = 0; r < tr.y.rows(); ++r) os << ',' << tr.y(r, static_cast<Index>(i));
    for (Index r = 0; r < tr.z.rows(); ++r) os << ',' << tr.z(r, static_cast<Index>(i));
    os << '\n';
  }
}

// ---------------------------------------------------------------------------

struct OutputLimit {
  enum class Kind { Angle, Frequency } kind = Kind::Angle;
  Vector bound;  // zbar (rad, per line) or ybar (Hz, per generator)
};

struct EmpiricalOptions {
  double bisect_tol = 1e-3;
  double initial_guess = 0.1;
  double mu_cap = 1e3;
  double horizon = 30.0;
  SimOptions sim;
};

/// True when some realization of the family at magnitude mu * direction
/// breaks one of the limits or loses synchronism.
inline bool violates_limits(const GridCase& c, const Equilibrium& eq, const Vector& direction, double mu,
                            const std::vector<OutputLimit>& limits, const std::vector<Disturbance>& family,
                            const EmpiricalOptions& opt) {
  for (Disturbance d : family) {
    d.pattern = mu * direction;
    try {
      const Trajectory tr = simulate(c, eq, d, opt.horizon, opt.sim);
      for (const auto& limit : limits) {
        const Vector& peak = limit.kind == OutputLimit::Kind::Angle ? tr.peak_z : tr.peak_y;
        if (peak.size() != limit.bound.size()) throw InputError("empirical bound: limit has wrong length");
        if (((peak - limit.bound).array() > 0.0).any()) return true;
      }
    } catch (const NumericalError&) {
      return true;
    }
  }
  return false;
}

/// Largest mu (to within bisect_tol) at which no member of the scenario
/// family violates any of the limits. Each realization is one admissible
/// disturbance, so the result upper-bounds the true admissible magnitude.
inline double empirical_upper_bound(const GridCase& c, const Equilibrium& eq, const Vector& direction,
                                    const std::vector<OutputLimit>& limits, const std::vector<Disturbance>& family,
                                    const EmpiricalOptions& opt = {}) {
  if (family.empty()) throw InputError("empirical bound: scenario family is empty");
  if ((direction.array() < 0.0).any()) throw InputError("empirical bound: direction must be nonnegative");
  auto bad = [&](double mu) { return violates_limits(c, eq, direction, mu, limits, family, opt); };
  double lo = 0.0, hi = opt.initial_guess;
  while (!bad(hi)) {
    lo = hi;
    hi *= 2.0;
    if (hi > opt.mu_cap) return opt.mu_cap;
  }
  while (hi - lo > opt.bisect_tol) {
    const double mid = 0.5 * (lo + hi);
    (bad(mid) ? hi : lo) = mid;
  }
  return lo;
}

inline double empirical_upper_bound(const GridCase& c, const Equilibrium& eq, const Vector& direction,
                                    const OutputLimit& limit, const std::vector<Disturbance>& family,
                                    const EmpiricalOptions& opt = {}) {
  return empirical_upper_bound(c, eq, direction, std::vector<OutputLimit>{limit}, family, opt);
}

/// Step disturbances of both signs starting at t = start_time.
inline std::vector<Disturbance> step_family(Index inputs, double start_time = 0.0) {
  std::vector<Disturbance> fam;
  for (double s : {1.0, -1.0}) {
    Disturbance d;
    d.kind = DisturbanceKind::Step;
    d.pattern = Vector::Zero(inputs);
    d.sign = Vector::Constant(inputs, s);
    d.start_time = start_time;
    fam.push_back(d);
  }
  return fam;
}

/// One random admissible disturbance with magnitude box `pattern`: the kind,
/// signs, timing, frequency, phases and noise seed are drawn from `rng`.
template <class Rng>
Disturbance random_disturbance(Rng& rng, const Vector& pattern, double horizon) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Index nu = pattern.size();
  Disturbance d;
  d.pattern = pattern;
  const int kind = static_cast<int>(unit(rng) * 5.0);
  d.kind = static_cast<DisturbanceKind>(std::min(kind, 4));
  d.sign.resize(nu);
  d.phase.resize(nu);
  for (Index k = 0; k < nu; ++k) {
    d.sign(k) = unit(rng) < 0.5 ? -1.0 : 1.0;
    d.phase(k) = kTwoPi * unit(rng);
  }
  d.start_time = 0.2 * horizon * unit(rng);
  d.ramp_time = 0.05 + 2.0 * unit(rng);
  d.frequency = std::exp(std::log(0.1) + unit(rng) * std::log(200.0));  // 0.1 .. 20 rad/s
  d.bandwidth = std::exp(std::log(0.2) + unit(rng) * std::log(100.0));
  d.sample_dt = 0.02 + 0.1 * unit(rng);
  d.seed = static_cast<std::uint64_t>(unit(rng) * 4294967296.0);
  if (d.kind == DisturbanceKind::Samples) {
    // random telegraph-like sequence with steep transitions
    const double dt = 0.1 + 1.5 * unit(rng);
    const auto count = static_cast<std::size_t>(horizon / dt) + 2;
    d.sample_values = Matrix(static_cast<Index>(2 * count), nu);
    for (std::size_t i = 0; i < count; ++i) {
      const double t0 = static_cast<double>(i) * dt;
      d.sample_times.push_back(t0);
      d.sample_times.push_back(t0 + 0.9 * dt);
      for (Index k = 0; k < nu; ++k) {
        const double level = pattern(k) * (unit(rng) < 0.7 ? (unit(rng) < 0.5 ? -1.0 : 1.0) : 2.0 * unit(rng) - 1.0);
        d.sample_values(static_cast<Index>(2 * i), k) = level;
        d.sample_values(static_cast<Index>(2 * i + 1), k) = level;
      }
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Scenario files

inline DisturbanceKind parse_kind(const std::string& s) {
  if (s == "step") return DisturbanceKind::Step;
  if (s == "ramp") return DisturbanceKind::RampStep;
  if (s == "sinusoid") return DisturbanceKind::Sinusoid;
  if (s == "noise") return DisturbanceKind::FilteredNoise;
  if (s == "samples") return DisturbanceKind::Samples;
  throw InputError("scenario.kind: unknown kind \"" + s + "\"");
}

/// Reads a scenario. Per-bus quantities are objects keyed by bus id; buses
/// that are not listed get zero magnitude, sign +1 and phase 0.
inline Disturbance parse_scenario(const nlohmann::json& doc, const LureSystem& sys) {
  if (!doc.is_object()) throw InputError("scenario: expected an object");
  Disturbance d;
  d.kind = parse_kind(doc.value("kind", std::string("step")));
  const Index nu = sys.num_inputs();
  auto column_of = [&](const std::string& key, const std::string& path) {
    int id = 0;
    try {
      id = std::stoi(key);
    } catch (...) {
      throw InputError(path + ": bus key \"" + key + "\" is not an integer");
    }
    for (std::size_t j = 0; j < sys.input_bus.size(); ++j)
      if (sys.input_bus[j] == id) return static_cast<Index>(j);
    throw InputError(path + ": bus " + key + " takes no disturbance");
  };
  auto per_bus = [&](const char* key, double fallback) {
    Vector v = Vector::Constant(nu, fallback);
    if (!doc.contains(key)) return Vector();
    if (!doc[key].is_object()) throw InputError(std::string("scenario.") + key + ": expected an object");
    for (const auto& [k, val] : doc[key].items()) {
      if (!val.is_number()) throw InputError(std::string("scenario.") + key + "." + k + ": expected a number");
      v(column_of(k, std::string("scenario.") + key)) = val.get<double>();
    }
    return v;
  };
  d.pattern = per_bus("magnitudes", 0.0);
  if (d.pattern.size() == 0) throw InputError("scenario.magnitudes: missing field");
  d.sign = per_bus("signs", 1.0);
  d.phase = per_bus("phases", 0.0);
  d.start_time = doc.value("start_time", 0.0);
  d.ramp_time = doc.value("ramp_time", 1.0);
  d.frequency = doc.value("frequency", 1.0);
  d.bandwidth = doc.value("bandwidth", 1.0);
  d.sample_dt = doc.value("sample_dt", 0.05);
  d.seed = doc.value("seed", std::uint64_t{0});
  if (d.kind == DisturbanceKind::Samples) {
    if (!doc.contains("samples") || !doc["samples"].is_object())
      throw InputError("scenario.samples: missing field");
    const auto& s = doc["samples"];
    d.sample_times = s.at("t").get<std::vector<double>>();
    d.sample_values = Matrix::Zero(static_cast<Index>(d.sample_times.size()), nu);
    for (const auto& [k, vals] : s.at("u").items()) {
      const auto series = vals.get<std::vector<double>>();
      if (series.size() != d.sample_times.size())
        throw InputError("scenario.samples.u." + k + ": length differs from t");
      const Index j = column_of(k, "scenario.samples.u");
      for (std::size_t i = 0; i < series.size(); ++i) d.sample_values(static_cast<Index>(i), j) = series[i];
    }
  }
  return d;
}

}  // namespace gridcert
