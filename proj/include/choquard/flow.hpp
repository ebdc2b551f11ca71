#ifndef CHOQUARD_FLOW_HPP
#define CHOQUARD_FLOW_HPP

// Constrained minimization on S_xi x S_eta (L^2-subcritical regime).
//
// Preconditioned Riemannian gradient descent: the L^2 gradient is smoothed by
// (sigma - Delta)^{-1} (with a potential, (sigma - Delta + V)^{-1}), projected
// onto the tangent space of the sphere in the preconditioned metric, and the
// step is retracted by rescaling the masses.
// Step lengths come from an Armijo backtracking search that also grows the
// step after every success. A target mass of zero freezes that component at
// zero, which gives the single-field problem and the edge cells of a scan.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "energy.hpp"
#include "error.hpp"
#include "grid.hpp"
#include "model.hpp"

namespace choquard {

enum class StepRule { fixed, adaptive };

struct FlowOptions {
  int max_iters = 4000;
  StepRule step_rule = StepRule::adaptive;
  double initial_step = 1.0;
  double max_step = 1.5;
  double energy_tol = 1e-11;  ///< relative energy change over `window` steps
  double grad_tol = 1e-7;     ///< L^2 norm of the Euler-Lagrange residual
  int window = 10;
  /// 0 disables |.| + rearrangement; otherwise the start is rearranged
  /// once and later rearrangements are kept when they lower the energy.
  int symmetrize_every = 0;
  double min_shift = 0.05;    ///< floor of the preconditioner shift
  double armijo = 1e-4;

  void validate() const {
    require(max_iters >= 1, ErrorCode::RangeError, "flow.max_iters must be >= 1");
    require(initial_step > 0.0 && max_step >= initial_step, ErrorCode::RangeError,
            "flow steps must satisfy 0 < initial_step <= max_step");
    require(energy_tol > 0.0 && grad_tol > 0.0, ErrorCode::RangeError,
            "flow tolerances must be positive");
    require(window >= 1, ErrorCode::RangeError, "flow.window must be >= 1");
    require(symmetrize_every >= 0, ErrorCode::RangeError,
            "flow.symmetrize_every must be >= 0");
    require(min_shift > 0.0, ErrorCode::RangeError,
            "flow.min_shift must be positive");
  }
};

struct SolveReport {
  StatePair state;
  EnergyBreakdown energy;
  Multipliers multipliers;
  double el_residual = 0.0;
  /// Gradient norm on the tangent space of the constraint set; equals
  /// el_residual for the sphere constraint alone.
  double projected_gradient = 0.0;
  double el_residual_u = 0.0;
  double el_residual_v = 0.0;
  double mass_drift = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string regime;
  std::vector<double> trace; ///< objective after every accepted step
  std::vector<std::string> warnings;

  // Supercritical diagnostics (left empty by the subcritical flow).
  std::optional<double> pohozaev;
  std::optional<IdentitySides> identity;
  std::optional<double> fiber_shift; ///< s* of the last fiber polish

  explicit SolveReport(const GridSpec &g) : state(g) {}
};

/// (xi u/|u|, eta v/|v|). A zero target returns the zero field.
inline StatePair project_masses(const StatePair &s, double xi, double eta) {
  auto fix = [](const ScalarField &f, double c, const char *name) {
    if (c == 0.0)
      return ScalarField(f.grid());
    const double m = f.mass();
    require(m > 0.0, ErrorCode::ZeroMass,
            std::string("cannot project a zero ") + name + " onto a sphere");
    ScalarField out = f;
    out *= c / std::sqrt(m);
    return out;
  };
  return StatePair(fix(s.u, xi, "u"), fix(s.v, eta, "v"));
}

/// Centred Gaussians exp(-|x|^2 / (2 w^2)) at the target masses.
inline StatePair gaussian_pair(const GridSpec &g, double width_u, double width_v,
                               double xi, double eta) {
  auto make = [&](double w) {
    return ScalarField::from_radial(
        g, [&](double r) { return std::exp(-r * r / (2.0 * w * w)); });
  };
  return project_masses(StatePair(make(width_u), make(width_v)), xi, eta);
}

namespace detail {

/// Approximate (a - Delta + V)^{-1} b by a fixed number of Chebyshev steps
/// preconditioned with (a + min V - Delta)^{-1}. The spectrum of the
/// preconditioned operator lies in [1, 1 + (max V - min V)/(a + min V)], so
/// the result is a fixed symmetric positive polynomial in the operator,
/// i.e. a linear SPD preconditioner.
inline ScalarField solve_trapped(const ScalarField &b, double a,
                                 const ScalarField &V, double vmin, double vmax) {
  const double c = a + vmin;
  const double lo = 1.0, hi = 1.0 + (vmax - vmin) / c;
  const double theta = 0.5 * (hi + lo), delta = 0.5 * (hi - lo);
  if (delta < 1e-12 * theta)
    return (1.0 / theta) * inverse_shifted_laplacian(b, c);
  // Error factor 2 exp(-2k / sqrt(kappa)) <= 1e-3.
  const int steps = std::clamp(
      int(std::ceil(0.5 * std::sqrt(hi) * std::log(2e3))), 1, 60);
  auto apply = [&](const ScalarField &x) {
    ScalarField y = neg_laplacian(x);
    y.axpy(a, x);
    for (std::size_t i = 0; i < y.values().size(); ++i)
      y[i] += V[i] * x[i];
    return y;
  };
  const double sigma = theta / delta;
  double rho = 1.0 / sigma;
  ScalarField x(b.grid());
  ScalarField r = b;
  ScalarField d = (1.0 / theta) * inverse_shifted_laplacian(r, c);
  for (int k = 0; k < steps; ++k) {
    x += d;
    if (k + 1 == steps)
      break;
    r -= apply(d);
    const double rho1 = 1.0 / (2.0 * sigma - rho);
    d *= rho1 * rho;
    d.axpy(2.0 * rho1 / delta, inverse_shifted_laplacian(r, c));
    rho = rho1;
  }
  return x;
}

/// The flow preconditioner: (shift - Delta)^{-1} without a potential,
/// (shift - Delta + V)^{-1} (approximately) with one. The shift is raised so
/// that shift + min V stays at least min_shift.
struct Preconditioner {
  const ScalarField *V = nullptr;
  double vmin = 0.0, vmax = 0.0;
  double shift = 1.0;
  Preconditioner(double s, const ScalarField *pot, double min_shift) : V(pot), shift(s) {
    if (V) {
      vmin = V->min_value();
      vmax = *std::max_element(V->values().begin(), V->values().end());
      shift = std::max(shift, min_shift - vmin);
    }
  }
  ScalarField operator()(const ScalarField &f) const {
    return V ? solve_trapped(f, shift, *V, vmin, vmax) : inverse_shifted_laplacian(f, shift);
  }
};

/// Preconditioned tangent direction P g - (<f, P g>/<f, P f>) P f.
inline ScalarField tangent_direction(const ScalarField &f, const ScalarField &g,
                                     const Preconditioner &P) {
  if (f.mass() == 0.0)
    return ScalarField(f.grid());
  ScalarField pg = P(g);
  const ScalarField pf = P(f);
  pg.axpy(-dot(f, pg) / dot(f, pf), pf);
  return pg;
}

/// EL residual over the free components; a component pinned to zero mass
/// is not a variable of the constrained problem.
inline Residuals free_residuals(const StatePair &s, const Evaluation &ev,
                                double xi, double eta) {
  Residuals r = el_residuals(s, ev);
  if (xi == 0.0)
    r.el_u = 0.0;
  if (eta == 0.0)
    r.el_v = 0.0;
  r.el = std::hypot(r.el_u, r.el_v);
  return r;
}

inline double mass_drift(const StatePair &s, double xi, double eta) {
  return std::max(std::abs(s.u.mass() - xi * xi), std::abs(s.v.mass() - eta * eta));
}

inline void finish_report(SolveReport &rep, const StatePair &s,
                          const Evaluation &ev, const Problem &pb) {
  rep.state = s;
  rep.energy = ev.energy;
  rep.multipliers = {component_multiplier(s.u, ev.gradient.u),
                     component_multiplier(s.v, ev.gradient.v)};
  const Residuals r = free_residuals(s, ev, pb.params.xi, pb.params.eta);
  rep.el_residual = r.el;
  rep.projected_gradient = r.el;
  rep.el_residual_u = r.el_u;
  rep.el_residual_v = r.el_v;
  rep.mass_drift = mass_drift(s, pb.params.xi, pb.params.eta);
  rep.regime = pb.regime.label();
}

inline StatePair symmetrized(const StatePair &s) {
  return StatePair(rearrange_radial_decreasing(abs(s.u)),
                   rearrange_radial_decreasing(abs(s.v)));
}

inline bool all_finite(const StatePair &s) {
  return s.u.all_finite() && s.v.all_finite();
}

} // namespace detail

/// Minimizes E_V on S_xi x S_eta starting from `init`.
inline SolveReport minimize_normalized(const Problem &pb, const StatePair &init,
                                       const FlowOptions &opts = {}) {
  opts.validate();
  const auto &m = pb.params;
  require(pb.regime.subcritical(), ErrorCode::NotSubcritical,
          "constrained minimization needs p delta_p < 1 and q delta_q < 1 "
          "(regime: " + pb.regime.label() + ")");
  StatePair state = project_masses(
      opts.symmetrize_every > 0 ? detail::symmetrized(init) : init, m.xi, m.eta);
  Evaluation ev = evaluate(state, pb);
  require(std::isfinite(ev.energy.total), ErrorCode::NonFinite,
          "initial energy is not finite");

  SolveReport rep(pb.grid);
  std::deque<double> recent{ev.energy.total};
  rep.trace.push_back(ev.energy.total);
  double step = opts.initial_step;
  const double floor_step = 1e-14 * opts.initial_step;

  for (int it = 1; it <= opts.max_iters; ++it) {
    const double l1 = component_multiplier(state.u, ev.gradient.u);
    const double l2 = component_multiplier(state.v, ev.gradient.v);
    const double res = detail::free_residuals(state, ev, m.xi, m.eta).el;

    const double e0 = ev.energy.total;
    if (res < opts.grad_tol && recent.size() > std::size_t(opts.window) &&
        std::abs(recent.front() - e0) <=
            opts.energy_tol * std::max(1.0, std::abs(e0))) {
      rep.converged = true;
      rep.iterations = it - 1;
      break;
    }

    const ScalarField du = detail::tangent_direction(
        state.u, ev.gradient.u,
        detail::Preconditioner(std::max(l1, opts.min_shift),
                               pb.has_v1 ? &pb.v1 : nullptr, opts.min_shift));
    const ScalarField dv = detail::tangent_direction(
        state.v, ev.gradient.v,
        detail::Preconditioner(std::max(l2, opts.min_shift),
                               pb.has_v2 ? &pb.v2 : nullptr, opts.min_shift));
    const double slope = dot(ev.gradient.u, du) + dot(ev.gradient.v, dv);
    const double slack = 1e-13 * std::max(1.0, std::abs(e0));

    bool accepted = false;
    while (step >= floor_step) {
      StatePair trial(state.u - step * du, state.v - step * dv);
      trial = project_masses(trial, m.xi, m.eta);
      Evaluation tev = evaluate(trial, pb);
      const double e1 = tev.energy.total;
      require(std::isfinite(e1) || opts.step_rule == StepRule::adaptive,
              ErrorCode::NonFinite, "energy became non-finite");
      // Near the minimum the energy decrease drops below roundoff; inside
      // that band a step is accepted if it lowers the residual instead.
      const bool ok =
          std::isfinite(e1) &&
          (e1 <= e0 - opts.armijo * step * slope ||
           (e1 <= e0 + slack &&
            detail::free_residuals(trial, tev, m.xi, m.eta).el < res));
      if (ok || opts.step_rule == StepRule::fixed) {
        require(std::isfinite(e1) && detail::all_finite(trial),
                ErrorCode::NonFinite, "iterate became non-finite");
        state = std::move(trial);
        ev = std::move(tev);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (res < opts.grad_tol) {
        // At the roundoff floor: the gradient test already passes.
        rep.converged = true;
        rep.iterations = it - 1;
        break;
      }
      fail(ErrorCode::NoDescentStep,
           "line search underflow at iteration " + std::to_string(it) +
               " (residual " + detail::fmt(res) + ")");
    }
    if (opts.step_rule == StepRule::adaptive)
      step = std::min(2.0 * step, opts.max_step);

    if (opts.symmetrize_every > 0 && it % opts.symmetrize_every == 0) {
      // The rearranged grid profile is slightly rough, so near the minimum
      // it wins only by roundoff; such gains are rejected.
      StatePair sym = detail::symmetrized(state);
      Evaluation sev = evaluate(sym, pb);
      const double e = ev.energy.total;
      if (sev.energy.total < e - opts.energy_tol * std::max(1.0, std::abs(e))) {
        state = std::move(sym);
        ev = std::move(sev);
      }
    }

    rep.trace.push_back(ev.energy.total);
    recent.push_back(ev.energy.total);
    if (recent.size() > std::size_t(opts.window) + 1)
      recent.pop_front();
    rep.iterations = it;
  }
  detail::finish_report(rep, state, ev, pb);
  return rep;
}

/// m(c, mu) = inf over |u|_2 = c of 1/2 |grad u|^2 - mu/(2p) B(u,p).
/// `core` supplies N, alpha and the convolver; its coupling, potentials and
/// second component are ignored.
inline SolveReport scalar_ground_state(const Problem &core, double c, double mu,
                                       double p, const FlowOptions &opts = {},
                                       double width = 2.0) {
  ModelParams m = core.params;
  m.xi = c;
  m.eta = 0.0;
  m.mu1 = mu;
  m.p = p;
  m.q = p;
  m.coupling = CouplingSpec{};
  m.v1 = m.v2 = PotentialSpec{};
  const Problem pb(m, core.grid, core.conv);
  return minimize_normalized(pb, gaussian_pair(core.grid, width, width, c, 0.0),
                             opts);
}

// ---------------------------------------------------------------------------
// Mass scans

struct ScanCell {
  double xi = 0.0;
  double eta = 0.0;
  double energy = std::numeric_limits<double>::quiet_NaN();
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double el_residual = 0.0;
  int iterations = 0;
  bool converged = false;
  double width = 0.0; ///< initial width of the winning start
  std::string error;
};

struct ScanTable {
  std::vector<double> xi;
  std::vector<double> eta;
  std::vector<ScanCell> cells; ///< row-major: cells[i * eta.size() + j]

  const ScanCell &at(std::size_t i, std::size_t j) const {
    return cells[i * eta.size() + j];
  }
};

struct ScanOptions {
  FlowOptions flow;
  std::vector<double> widths{1.0, 2.0, 3.5};
  double jitter = 0.1;     ///< widths scaled by U[1 - jitter, 1 + jitter]
  std::uint64_t seed = 0;
  int threads = 1;
};

/// One start width per (cell, start), drawn in a fixed order from the seed.
inline std::vector<double> scan_widths(const ScanOptions &o, std::size_t cells) {
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> u(1.0 - o.jitter, 1.0 + o.jitter);
  std::vector<double> w;
  w.reserve(cells * o.widths.size());
  for (std::size_t c = 0; c < cells; ++c)
    for (double base : o.widths)
      w.push_back(base * u(rng));
  return w;
}

/// Best of several starts: converged first, then lowest energy, then start
/// order.
inline ScanCell solve_cell(const Problem &base, double xi, double eta,
                           const double *widths, std::size_t n_starts,
                           const FlowOptions &flow) {
  ScanCell cell;
  cell.xi = xi;
  cell.eta = eta;
  if (xi == 0.0 && eta == 0.0) {
    cell.energy = 0.0;
    cell.converged = true;
    return cell;
  }
  ModelParams m = base.params;
  m.xi = xi;
  m.eta = eta;
  const Problem pb(m, base.grid, base.conv);
  bool have = false;
  for (std::size_t k = 0; k < n_starts; ++k) {
    try {
      const SolveReport r = minimize_normalized(
          pb, gaussian_pair(base.grid, widths[k], widths[k], xi, eta), flow);
      const bool better =
          !have || (r.converged && !cell.converged) ||
          (r.converged == cell.converged && r.energy.total < cell.energy);
      if (better) {
        have = true;
        cell.energy = r.energy.total;
        cell.lambda1 = r.multipliers.lambda1;
        cell.lambda2 = r.multipliers.lambda2;
        cell.el_residual = r.el_residual;
        cell.iterations = r.iterations;
        cell.converged = r.converged;
        cell.width = widths[k];
        cell.error.clear();
      }
    } catch (const Error &e) {
      if (!have)
        cell.error = e.what();
    }
  }
  return cell;
}

inline ScanTable mass_scan(const Problem &base, const std::vector<double> &xi,
                           const std::vector<double> &eta,
                           const ScanOptions &opts = {}) {
  require(base.regime.subcritical(), ErrorCode::NotSubcritical,
          "mass scans run the subcritical minimizer");
  auto increasing = [](const std::vector<double> &a) {
    for (std::size_t i = 1; i < a.size(); ++i)
      if (!(a[i] > a[i - 1]))
        return false;
    return a.size() >= 2 && a.front() >= 0.0;
  };
  require(increasing(xi) && increasing(eta), ErrorCode::RangeError,
          "scan axes need >= 2 nonnegative, strictly increasing masses");
  require(!opts.widths.empty(), ErrorCode::RangeError,
          "scan needs at least one start width");
  opts.flow.validate();

  ScanTable t;
  t.xi = xi;
  t.eta = eta;
  const std::size_t n = xi.size() * eta.size();
  t.cells.resize(n);
  const std::vector<double> widths = scan_widths(opts, n);
  const std::size_t starts = opts.widths.size();

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next++; c < n; c = next++)
      t.cells[c] = solve_cell(base, xi[c / eta.size()], eta[c % eta.size()],
                              &widths[c * starts], starts, opts.flow);
  };
  const int nt = std::max(1, std::min<int>(opts.threads, static_cast<int>(n)));
  if (nt == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < nt; ++k)
      pool.emplace_back(worker);
    for (auto &th : pool)
      th.join();
  }
  return t;
}

} // namespace choquard

#endif
