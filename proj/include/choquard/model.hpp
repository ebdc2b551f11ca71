#ifndef CHOQUARD_MODEL_HPP
#define CHOQUARD_MODEL_HPP

// Parameters of the coupled problem, exponent bookkeeping, the coupling and
// potential families, and the constants behind the mountain-pass geometry.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "grid.hpp"

namespace choquard {

// ---------------------------------------------------------------------------
// Radial tables (tabulated coupling / potential inputs)

/// Piecewise-linear radial profile; constant beyond both ends.
struct RadialTable {
  std::vector<double> radius;
  std::vector<double> value;

  bool empty() const { return radius.empty(); }
  void validate(const std::string &what) const {
    require(!radius.empty() && radius.size() == value.size(),
            ErrorCode::RangeError,
            what + ": table needs matching, non-empty radius/value lists");
    for (std::size_t i = 0; i < radius.size(); ++i) {
      require(std::isfinite(radius[i]) && std::isfinite(value[i]),
              ErrorCode::RangeError, what + ": table entries must be finite");
      require(i == 0 || radius[i] > radius[i - 1], ErrorCode::RangeError,
              what + ": table radii must be strictly increasing");
    }
    require(radius.front() >= 0.0, ErrorCode::RangeError,
            what + ": table radii must be nonnegative");
  }
  double operator()(double r) const {
    if (r <= radius.front())
      return value.front();
    if (r >= radius.back())
      return value.back();
    const auto it = std::upper_bound(radius.begin(), radius.end(), r);
    const std::size_t k = static_cast<std::size_t>(it - radius.begin());
    const double t = (r - radius[k - 1]) / (radius[k] - radius[k - 1]);
    return (1.0 - t) * value[k - 1] + t * value[k];
  }
};

// ---------------------------------------------------------------------------
// Coupling beta(x)

enum class CouplingKind { constant, rational_decay, gaussian, tabulated };

/// constant        beta0
/// rational_decay  beta0 (1 + |x|^2)^{-decay}; decay defaults to delta_p
/// gaussian        beta0 exp(-|x|^2 / width^2)
/// tabulated       radial table
struct CouplingSpec {
  CouplingKind kind = CouplingKind::constant;
  double beta0 = 0.0;
  std::optional<double> decay;
  double width = 1.0;
  RadialTable table;
};

// ---------------------------------------------------------------------------
// Potentials V(x)

enum class PotentialKind { zero, gaussian_well, harmonic, tabulated };

/// gaussian_well  -depth exp(-|x|^2 / width^2)
/// harmonic       omega^2 |x|^2
struct PotentialSpec {
  PotentialKind kind = PotentialKind::zero;
  double depth = 1.0;
  double width = 1.0;
  double omega = 1.0;
  RadialTable table;

  bool is_zero() const { return kind == PotentialKind::zero; }
};

// ---------------------------------------------------------------------------
// Exponents and regimes

enum class RegimeLabel { subcritical, critical, supercritical };

constexpr const char *to_string(RegimeLabel r) {
  switch (r) {
  case RegimeLabel::subcritical: return "subcritical";
  case RegimeLabel::critical: return "critical";
  case RegimeLabel::supercritical: return "supercritical";
  }
  return "unknown";
}

inline double delta_p(int dim, double alpha, double p) {
  return (dim * (p - 1.0) - alpha) / (2.0 * p);
}

/// HLS exponent t = 2Np / (N + alpha) and the GN interpolation power
/// gamma = N (1/2 - 1/t), which coincides with delta_p.
inline double hls_exponent(int dim, double alpha, double p) {
  return 2.0 * dim * p / (dim + alpha);
}
inline double gamma_t(int dim, double t) { return dim * (0.5 - 1.0 / t); }

/// Sign of p delta_p - 1 = (N(p-1) - alpha - 2) / 2, classified on the
/// numerator so that rational inputs land exactly on the critical exponent.
inline RegimeLabel classify(int dim, double alpha, double p) {
  const double num = dim * (p - 1.0) - alpha - 2.0;
  const double tol = 1e-12 * std::max({1.0, dim * p, alpha});
  if (std::abs(num) <= tol)
    return RegimeLabel::critical;
  return num < 0.0 ? RegimeLabel::subcritical : RegimeLabel::supercritical;
}

struct Regime {
  RegimeLabel label_p = RegimeLabel::subcritical;
  RegimeLabel label_q = RegimeLabel::subcritical;
  double delta_p = 0.0;
  double delta_q = 0.0;
  double gamma_p = 0.0;
  double gamma_q = 0.0;

  /// Both exponents share a label, otherwise "mixed".
  std::string label() const {
    return label_p == label_q ? to_string(label_p) : "mixed";
  }
  bool subcritical() const {
    return label_p == RegimeLabel::subcritical &&
           label_q == RegimeLabel::subcritical;
  }
  bool supercritical() const {
    return label_p == RegimeLabel::supercritical &&
           label_q == RegimeLabel::supercritical;
  }
};

// ---------------------------------------------------------------------------
// Parameter bundle

struct ModelParams {
  int dim = 3;
  double alpha = 2.0;
  double p = 2.0;
  double q = 2.0;
  double mu1 = 1.0;
  double mu2 = 1.0;
  double xi = 1.0;
  double eta = 1.0;
  CouplingSpec coupling;
  PotentialSpec v1;
  PotentialSpec v2;

  bool has_potentials() const { return !v1.is_zero() || !v2.is_zero(); }

  void validate() const;
  Regime regime() const {
    Regime r;
    r.label_p = classify(dim, alpha, p);
    r.label_q = classify(dim, alpha, q);
    r.delta_p = delta_p(dim, alpha, p);
    r.delta_q = delta_p(dim, alpha, q);
    r.gamma_p = gamma_t(dim, hls_exponent(dim, alpha, p));
    r.gamma_q = gamma_t(dim, hls_exponent(dim, alpha, q));
    return r;
  }
  /// Exponent of the rational_decay coupling after defaults.
  double coupling_decay() const {
    return coupling.decay.value_or(delta_p(dim, alpha, p));
  }
};

namespace detail {

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

inline void check_exponent(const ModelParams &m, double e, const char *name) {
  const double lower = 1.0 + m.alpha / m.dim;
  require(std::isfinite(e) && e > lower, ErrorCode::RangeError,
          std::string(name) + " must satisfy 1+alpha/N < " + name + " (got " +
              name + " = " + fmt(e) + ", 1+alpha/N = " + fmt(lower) + ")");
  if (m.dim >= 3) {
    const double upper = (m.dim + m.alpha) / (m.dim - 2.0);
    require(e < upper, ErrorCode::RangeError,
            std::string(name) + " must satisfy " + name +
                " < (N+alpha)/(N-2) (got " + name + " = " + fmt(e) +
                ", (N+alpha)/(N-2) = " + fmt(upper) + ")");
  }
}

inline void check_table(const RadialTable &t, const std::string &what) {
  t.validate(what);
}

} // namespace detail

inline void ModelParams::validate() const {
  require(dim >= 1 && dim <= 3, ErrorCode::RangeError,
          "N must be 1, 2 or 3");
  require(std::isfinite(alpha) && alpha > 0.0 && alpha < dim,
          ErrorCode::RangeError,
          "alpha must satisfy 0 < alpha < N (got alpha = " + detail::fmt(alpha) +
              ")");
  detail::check_exponent(*this, p, "p");
  detail::check_exponent(*this, q, "q");
  require(mu1 > 0.0 && std::isfinite(mu1), ErrorCode::RangeError,
          "mu1 must satisfy mu1 > 0");
  require(mu2 > 0.0 && std::isfinite(mu2), ErrorCode::RangeError,
          "mu2 must satisfy mu2 > 0");
  require(xi >= 0.0 && eta >= 0.0 && std::isfinite(xi) && std::isfinite(eta),
          ErrorCode::RangeError, "xi and eta must be nonnegative");
  require(xi * xi + eta * eta > 0.0, ErrorCode::RangeError,
          "xi^2 + eta^2 must be positive");

  const auto &c = coupling;
  switch (c.kind) {
  case CouplingKind::tabulated:
    detail::check_table(c.table, "coupling");
    break;
  default:
    require(std::isfinite(c.beta0) && c.beta0 >= 0.0, ErrorCode::RangeError,
            "coupling.beta0 must be nonnegative (beta > 0 in the model; 0 "
            "decouples)");
    if (c.kind == CouplingKind::rational_decay)
      require(coupling_decay() >= 0.0, ErrorCode::RangeError,
              "coupling.decay must be nonnegative");
    if (c.kind == CouplingKind::gaussian)
      require(c.width > 0.0, ErrorCode::RangeError,
              "coupling.width must be positive");
  }
  for (const auto *v : {&v1, &v2}) {
    const std::string name = v == &v1 ? "v1" : "v2";
    switch (v->kind) {
    case PotentialKind::zero:
      break;
    case PotentialKind::gaussian_well:
      require(v->depth > 0.0 && v->width > 0.0, ErrorCode::RangeError,
              name + ": gaussian_well needs depth > 0 and width > 0");
      break;
    case PotentialKind::harmonic:
      require(v->omega > 0.0 && std::isfinite(v->omega), ErrorCode::RangeError,
              name + ": harmonic needs omega > 0");
      break;
    case PotentialKind::tabulated:
      detail::check_table(v->table, name);
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Sharp HLS constant, Gagliardo-Nirenberg estimate, mountain-pass function

inline double hls_sharp_constant(int dim, double alpha) {
  require(alpha > 0.0 && alpha < dim, ErrorCode::AlphaOutOfRange,
          "HLS constant needs 0 < alpha < N");
  require(alpha >= 1e-6, ErrorCode::Overflow,
          "HLS constant diverges as alpha -> 0 (alpha < 1e-6)");
  const double n = dim;
  return std::pow(std::numbers::pi, 0.5 * (n - alpha)) *
         std::tgamma(0.5 * alpha) / std::tgamma(0.5 * (n + alpha)) *
         std::pow(std::tgamma(0.5 * n) / std::tgamma(n), -alpha / n);
}

/// GN ratio ||f||_t / (||grad f||_2^gamma ||f||_2^{1-gamma}) of a Gaussian.
/// The ratio is the same for every Gaussian (dilation and amplitude
/// invariant), so this is the optimum over the Gaussian family.
inline double gn_constant_gaussian(int dim, double t) {
  const double pi = std::numbers::pi;
  const double n = dim;
  const double g = gamma_t(dim, t);
  const double lt = std::pow(2.0 * pi / t, n / (2.0 * t));
  const double l2 = std::pow(pi, n / 4.0);
  const double grad = std::sqrt(0.5 * n) * std::pow(pi, n / 4.0);
  return lt / (std::pow(grad, g) * std::pow(l2, 1.0 - g));
}

/// Constant in B(u,p) <= C ||grad u||^{2p delta} ||u||^{2p(1-delta)}.
inline double nonlocal_bound_constant(int dim, double alpha, double p) {
  return hls_sharp_constant(dim, alpha) *
         std::pow(gn_constant_gaussian(dim, hls_exponent(dim, alpha, p)),
                  2.0 * p);
}

/// C_{xi,eta} = max(mu1 C xi^{2p(1-delta)}, mu2 C eta^{2p(1-delta)}).
inline double mountain_pass_constant(const ModelParams &m) {
  const double d = delta_p(m.dim, m.alpha, m.p);
  const double c = nonlocal_bound_constant(m.dim, m.alpha, m.p);
  const double e = 2.0 * m.p * (1.0 - d);
  return std::max(m.mu1 * c * std::pow(m.xi, e), m.mu2 * c * std::pow(m.eta, e));
}

struct Thresholds {
  double x0 = 0.0;   ///< positive root of h
  double x1 = 0.0;   ///< maximizer of h
  double hmax = 0.0; ///< h(x1)
};

/// h(x) = x/2 - C/(2p) x^{p delta}
inline double h_value(double C, double p, double delta, double x) {
  return 0.5 * x - C / (2.0 * p) * std::pow(x, p * delta);
}
inline double h_derivative(double C, double p, double delta, double x) {
  return 0.5 - 0.5 * C * delta * std::pow(x, p * delta - 1.0);
}

inline Thresholds h_thresholds(double C, double p, double delta) {
  require(p * delta > 1.0, ErrorCode::NotSupercritical,
          "h thresholds need p delta_p > 1");
  require(C > 0.0 && std::isfinite(C), ErrorCode::RangeError,
          "h thresholds need C > 0");
  const double k = p * delta - 1.0;
  Thresholds t;
  t.x1 = std::pow(1.0 / (C * delta), 1.0 / k);
  t.x0 = std::pow(p / C, 1.0 / k);
  // One Newton step on each root removes the pow() rounding.
  t.x1 -= h_derivative(C, p, delta, t.x1) /
          (-0.5 * C * delta * k * std::pow(t.x1, k - 1.0));
  t.x0 -= h_value(C, p, delta, t.x0) / h_derivative(C, p, delta, t.x0);
  t.hmax = h_value(C, p, delta, t.x1);
  return t;
}

// ---------------------------------------------------------------------------
// Sampling

inline double coupling_value(const ModelParams &m, double r) {
  const auto &c = m.coupling;
  switch (c.kind) {
  case CouplingKind::constant:
    return c.beta0;
  case CouplingKind::rational_decay:
    return c.beta0 * std::pow(1.0 + r * r, -m.coupling_decay());
  case CouplingKind::gaussian:
    return c.beta0 * std::exp(-r * r / (c.width * c.width));
  case CouplingKind::tabulated:
    return c.table(r);
  }
  return 0.0;
}

inline bool coupling_is_constant(const ModelParams &m) {
  return m.coupling.kind == CouplingKind::constant;
}

inline ScalarField sample_coupling(const ModelParams &m, const GridSpec &g) {
  return ScalarField::from_radial(g, [&](double r) { return coupling_value(m, r); });
}

/// x . grad beta, analytic for the built-in families and spectral for tables.
inline ScalarField sample_coupling_flux(const ModelParams &m, const GridSpec &g) {
  const auto &c = m.coupling;
  switch (c.kind) {
  case CouplingKind::constant:
    return ScalarField(g);
  case CouplingKind::rational_decay: {
    const double d = m.coupling_decay();
    return ScalarField::from_radial(g, [&](double r) {
      return -2.0 * d * r * r * c.beta0 * std::pow(1.0 + r * r, -d - 1.0);
    });
  }
  case CouplingKind::gaussian: {
    const double w2 = c.width * c.width;
    return ScalarField::from_radial(g, [&](double r) {
      return -2.0 * r * r / w2 * c.beta0 * std::exp(-r * r / w2);
    });
  }
  case CouplingKind::tabulated:
    return x_dot_grad(sample_coupling(m, g));
  }
  return ScalarField(g);
}

/// sup |beta|; exact for the built-ins, sampled for tables.
inline double coupling_sup(const ModelParams &m, const GridSpec &g) {
  if (m.coupling.kind != CouplingKind::tabulated)
    return std::abs(m.coupling.beta0);
  double s = 0.0;
  for (double v : m.coupling.table.value)
    s = std::max(s, std::abs(v));
  return std::max(s, sample_coupling(m, g).max_abs());
}

inline double potential_value(const PotentialSpec &v, double r) {
  switch (v.kind) {
  case PotentialKind::zero:
    return 0.0;
  case PotentialKind::gaussian_well:
    return -v.depth * std::exp(-r * r / (v.width * v.width));
  case PotentialKind::harmonic:
    return v.omega * v.omega * r * r;
  case PotentialKind::tabulated:
    return v.table(r);
  }
  return 0.0;
}

inline ScalarField sample_potential(const PotentialSpec &v, const GridSpec &g) {
  return ScalarField::from_radial(g, [&](double r) { return potential_value(v, r); });
}

// ---------------------------------------------------------------------------
// Validators

struct Check {
  std::string name;
  bool applicable = true;
  bool passed = true;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
  std::optional<Point> location;
};

struct ValidationReport {
  std::string subject;
  std::string label;
  std::vector<Check> checks;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check &c) {
      return !c.applicable || c.passed;
    });
  }
  const Check *find(const std::string &name) const {
    for (const auto &c : checks)
      if (c.name == name)
        return &c;
    return nullptr;
  }
};

/// Conditions on beta: (i) positivity, (ii) boundedness and
/// ||beta||_inf < hmax / (2 xi eta), (iii) 2 beta + x.grad beta / delta_p >= 0.
inline ValidationReport validate_coupling(const ModelParams &m,
                                          const GridSpec &g) {
  ValidationReport rep;
  rep.subject = "coupling";
  const Regime reg = m.regime();
  const ScalarField beta = sample_coupling(m, g);
  const ScalarField flux = sample_coupling_flux(m, g);

  Check pos{"(i) positive", true, true};
  {
    double lo = std::numeric_limits<double>::infinity();
    for_each_point(g, [&](std::size_t i, const Point &x) {
      if (beta[i] < lo) {
        lo = beta[i];
        pos.location = x;
      }
    });
    pos.value = lo;
    pos.threshold = 0.0;
    pos.passed = lo > 0.0;
    pos.detail = pos.passed ? "min beta > 0" : "beta is not strictly positive";
  }
  rep.checks.push_back(pos);

  Check bounded{"(ii) bounded", true, true};
  bounded.value = std::max(beta.max_abs(), flux.max_abs());
  bounded.passed = beta.all_finite() && flux.all_finite();
  bounded.detail = "max of |beta| and |x.grad beta| on the grid";
  rep.checks.push_back(bounded);

  Check bound{"(ii) beta bound", reg.supercritical() && m.p == m.q, true};
  if (bound.applicable) {
    const double sup = coupling_sup(m, g);
    const Thresholds t = h_thresholds(mountain_pass_constant(m), m.p, reg.delta_p);
    const double limit = m.xi * m.eta > 0.0
                             ? t.hmax / (2.0 * m.xi * m.eta)
                             : std::numeric_limits<double>::infinity();
    bound.value = sup;
    bound.threshold = limit;
    bound.passed = sup < limit;
    bound.detail = "||beta||_inf < hmax / (2 xi eta)";
  } else {
    bound.detail = "applies only in the supercritical regime with p = q";
  }
  rep.checks.push_back(bound);

  Check flux_check{"(iii) 2beta + x.grad beta/delta_p >= 0",
                   reg.supercritical(), true};
  if (flux_check.applicable) {
    double lo = std::numeric_limits<double>::infinity();
    for_each_point(g, [&](std::size_t i, const Point &x) {
      const double val = 2.0 * beta[i] + flux[i] / reg.delta_p;
      if (val < lo) {
        lo = val;
        flux_check.location = x;
      }
    });
    flux_check.value = lo;
    flux_check.threshold = -1e-12 * std::max(1.0, beta.max_abs());
    flux_check.passed = lo >= flux_check.threshold;
    flux_check.detail = flux_check.passed
                            ? "holds at every grid point"
                            : "violated; location is the worst grid point";
  } else {
    flux_check.detail = "applies only in the supercritical regime";
  }
  rep.checks.push_back(flux_check);
  rep.label = rep.passed() ? "admissible" : "inadmissible";
  return rep;
}

enum class PotentialClass { free, v1, v2, none };

constexpr const char *to_string(PotentialClass c) {
  switch (c) {
  case PotentialClass::free: return "free";
  case PotentialClass::v1: return "V1";
  case PotentialClass::v2: return "V2";
  case PotentialClass::none: return "none";
  }
  return "none";
}

/// Class tests on grid samples. The boundary shell is the outermost layer of
/// grid points, the interior is |x| <= L/2.
/// (V1): V < 0 wherever V is representable (far-field samples may underflow
///       to exactly 0, so 0 is tolerated outside the interior), and the
///       boundary shell is within tol of 0.
/// (V2): min over the boundary shell exceeds max over the interior.
inline ValidationReport validate_potential(const PotentialSpec &v,
                                           const GridSpec &g,
                                           double tol_rel = 1e-6) {
  ValidationReport rep;
  rep.subject = "potential";
  const ScalarField s = sample_potential(v, g);
  const int m = g.points_per_axis;
  const double scale = s.max_abs();
  double vmax = -std::numeric_limits<double>::infinity();
  double interior_max = -std::numeric_limits<double>::infinity();
  double shell_min = std::numeric_limits<double>::infinity();
  double shell_abs = 0.0;
  std::optional<Point> worst;
  for_each_point(g, [&](std::size_t i, const Point &x) {
    bool shell = false;
    for (int a = 0; a < g.dim; ++a) {
      const std::size_t k = (i / g.stride(a)) % static_cast<std::size_t>(m);
      shell = shell || k == 0 || k == static_cast<std::size_t>(m - 1);
    }
    if (s[i] > vmax) {
      vmax = s[i];
      worst = x;
    }
    if (norm(x) <= 0.5 * g.half_extent) {
      interior_max = std::max(interior_max, s[i]);
    }
    if (shell) {
      shell_min = std::min(shell_min, s[i]);
      shell_abs = std::max(shell_abs, std::abs(s[i]));
    }
  });

  Check neg{"(V1) V < 0", true, false};
  neg.value = vmax;
  neg.location = worst;
  neg.passed = scale > 0.0 && vmax <= 0.0 && interior_max < 0.0;
  neg.detail = "largest sample of V";
  Check decay{"(V1) V -> 0", true, false};
  decay.value = shell_abs;
  decay.threshold = tol_rel * scale;
  decay.passed = scale > 0.0 && shell_abs <= decay.threshold;
  decay.detail = "max |V| over the boundary shell";
  Check trap{"(V2) V -> infinity", true, false};
  trap.value = shell_min;
  trap.threshold = interior_max;
  trap.passed = scale > 0.0 && shell_min > interior_max;
  trap.detail = "min over the boundary shell vs max over |x| <= L/2";
  rep.checks = {neg, decay, trap};

  const bool is_v1 = neg.passed && decay.passed;
  if (scale == 0.0)
    rep.label = to_string(PotentialClass::free);
  else if (is_v1)
    rep.label = to_string(PotentialClass::v1);
  else if (trap.passed)
    rep.label = to_string(PotentialClass::v2);
  else
    rep.label = to_string(PotentialClass::none);
  return rep;
}

inline PotentialClass classify_potential(const PotentialSpec &v,
                                         const GridSpec &g) {
  const std::string l = validate_potential(v, g).label;
  if (l == "free")
    return PotentialClass::free;
  if (l == "V1")
    return PotentialClass::v1;
  if (l == "V2")
    return PotentialClass::v2;
  return PotentialClass::none;
}

} // namespace choquard

#endif
