#ifndef CHOQUARD_CLI_HPP
#define CHOQUARD_CLI_HPP

// Run configuration, orchestration and report emission for the command-line
// tool. Configs are JSON (comments allowed); every key is optional except
// `mode`, unknown keys are rejected, and the resolved config with all
// defaults filled in is echoed into report.json. Nothing time- or
// host-dependent is written, so a fixed config and seed give identical files.

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "energy.hpp"
#include "error.hpp"
#include "flow.hpp"
#include "grid.hpp"
#include "model.hpp"
#include "riesz.hpp"
#include "saddle.hpp"

namespace choquard::cli {

using json = nlohmann::ordered_json;

inline constexpr const char *kReportSchema = "choquard-report/1";
inline constexpr const char *kErrorSchema = "choquard-error/1";

enum class Mode { minimize, saddle, scan, check, oracle };

constexpr const char *to_string(Mode m) {
  switch (m) {
  case Mode::minimize: return "minimize";
  case Mode::saddle: return "saddle";
  case Mode::scan: return "scan";
  case Mode::check: return "check";
  case Mode::oracle: return "oracle";
  }
  return "minimize";
}

enum ExitCode : int {
  exit_ok = 0,
  exit_config = 2,
  exit_solver = 3,
  exit_validation = 4,
};

struct InitSpec {
  std::vector<double> widths; ///< Gaussian start widths; best run is kept
  double jitter = 0.0;        ///< widths scaled by U[1 - jitter, 1 + jitter]
};

struct ScanSpec {
  std::vector<double> xi{0.5, 1.0};
  std::vector<double> eta{0.5, 1.0};
  std::vector<double> widths{1.0, 2.0, 3.5};
  double jitter = 0.1;
};

struct OracleCase {
  int dim = 3;
  int points_per_axis = 16;
  double half_extent = 5.0;
  double alpha = 2.0;
};

struct OracleSpec {
  std::vector<OracleCase> cases{{1, 64, 5.0, 0.5}, {2, 32, 5.0, 1.0}, {3, 16, 5.0, 2.0}};
  int fields = 3;
  double tolerance = 1e-8;
};

struct OutputSpec {
  std::string dir = "out";
  std::string report = "report.json";
  std::string profiles = "profiles.csv";
  std::string scan = "scan.csv";
  std::string error = "error.json";
};

struct RunConfig {
  Mode mode = Mode::minimize;
  GridSpec grid;
  ModelParams model;
  FlowOptions flow;
  SaddleOptions saddle;
  InitSpec init;
  ScanSpec scan;
  OracleSpec oracle;
  OutputSpec output;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline std::string join(const std::string &path, const std::string &key) {
  return path.empty() ? key : path + "." + key;
}

/// Object reader that tracks the key path and rejects unknown keys.
class Reader {
public:
  Reader(const json &j, std::string path) : j_(j), path_(std::move(path)) {
    require(j_.is_object(), ErrorCode::SchemaError,
            (path_.empty() ? std::string("config") : path_) + ": expected an object");
  }

  bool has(const std::string &key) const { return j_.contains(key); }

  Reader child(const std::string &key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Reader(has(key) ? j_.at(key) : empty, join(path_, key));
  }

  const json *raw(const std::string &key) {
    seen_.insert(key);
    return has(key) ? &j_.at(key) : nullptr;
  }

  void get(const std::string &key, double &out) {
    if (const json *v = raw(key)) {
      require(v->is_number(), ErrorCode::SchemaError,
              join(path_, key) + ": expected a number");
      out = v->get<double>();
    }
  }
  void get(const std::string &key, int &out) {
    if (const json *v = raw(key)) {
      require(v->is_number_integer(), ErrorCode::SchemaError,
              join(path_, key) + ": expected an integer");
      out = v->get<int>();
    }
  }
  void get(const std::string &key, std::uint64_t &out) {
    if (const json *v = raw(key)) {
      require(v->is_number_unsigned() ||
                  (v->is_number_integer() && v->get<std::int64_t>() >= 0),
              ErrorCode::SchemaError,
              join(path_, key) + ": expected a nonnegative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string &key, bool &out) {
    if (const json *v = raw(key)) {
      require(v->is_boolean(), ErrorCode::SchemaError,
              join(path_, key) + ": expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string &key, std::string &out) {
    if (const json *v = raw(key)) {
      require(v->is_string(), ErrorCode::SchemaError,
              join(path_, key) + ": expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const std::string &key, std::optional<double> &out) {
    if (const json *v = raw(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      require(v->is_number(), ErrorCode::SchemaError,
              join(path_, key) + ": expected a number or null");
      out = v->get<double>();
    }
  }
  void get(const std::string &key, std::vector<double> &out) {
    if (const json *v = raw(key)) {
      require(v->is_array(), ErrorCode::SchemaError,
              join(path_, key) + ": expected an array of numbers");
      std::vector<double> r;
      for (std::size_t i = 0; i < v->size(); ++i) {
        require((*v)[i].is_number(), ErrorCode::SchemaError,
                join(path_, key) + "[" + std::to_string(i) + "]: expected a number");
        r.push_back((*v)[i].get<double>());
      }
      out = std::move(r);
    }
  }

  template <typename E>
  void get_enum(const std::string &key, E &out,
                std::initializer_list<std::pair<const char *, E>> names) {
    std::string s;
    if (!has(key)) {
      seen_.insert(key);
      return;
    }
    get(key, s);
    std::string allowed;
    for (const auto &[n, e] : names) {
      if (s == n) {
        out = e;
        return;
      }
      allowed += allowed.empty() ? n : std::string(", ") + n;
    }
    fail(ErrorCode::SchemaError,
         join(path_, key) + ": unknown value \"" + s + "\" (expected one of " +
             allowed + ")");
  }

  const std::string &path() const { return path_; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      require(seen_.count(it.key()) > 0, ErrorCode::SchemaError,
              join(path_, it.key()) + ": unknown field");
  }

private:
  const json &j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_table(Reader r, RadialTable &t) {
  r.get("radius", t.radius);
  r.get("value", t.value);
  r.finish();
}

inline void read_coupling(Reader r, CouplingSpec &c) {
  r.get_enum("kind", c.kind,
             {{"constant", CouplingKind::constant},
              {"rational_decay", CouplingKind::rational_decay},
              {"gaussian", CouplingKind::gaussian},
              {"tabulated", CouplingKind::tabulated}});
  r.get("beta0", c.beta0);
  r.get("decay", c.decay);
  r.get("width", c.width);
  if (r.has("table"))
    read_table(r.child("table"), c.table);
  r.finish();
}

inline void read_potential(Reader r, PotentialSpec &v) {
  r.get_enum("kind", v.kind,
             {{"zero", PotentialKind::zero},
              {"gaussian_well", PotentialKind::gaussian_well},
              {"harmonic", PotentialKind::harmonic},
              {"tabulated", PotentialKind::tabulated}});
  r.get("depth", v.depth);
  r.get("width", v.width);
  r.get("omega", v.omega);
  if (r.has("table"))
    read_table(r.child("table"), v.table);
  r.finish();
}

inline void read_flow(Reader r, FlowOptions &f) {
  r.get("max_iters", f.max_iters);
  r.get_enum("step_rule", f.step_rule,
             {{"adaptive", StepRule::adaptive}, {"fixed", StepRule::fixed}});
  r.get("initial_step", f.initial_step);
  r.get("max_step", f.max_step);
  r.get("energy_tol", f.energy_tol);
  r.get("grad_tol", f.grad_tol);
  r.get("window", f.window);
  r.get("symmetrize_every", f.symmetrize_every);
  r.get("min_shift", f.min_shift);
  r.get("armijo", f.armijo);
  r.finish();
}

inline void read_saddle(Reader r, SaddleOptions &s) {
  r.get("s_min", s.s_min);
  r.get("s_max", s.s_max);
  r.get("fiber_tol", s.fiber_tol);
  r.get("max_iters", s.max_iters);
  r.get("grad_tol", s.grad_tol);
  r.get("energy_tol", s.energy_tol);
  r.get("window", s.window);
  r.get("initial_step", s.initial_step);
  r.get("max_step", s.max_step);
  r.get("min_shift", s.min_shift);
  r.get("armijo", s.armijo);
  r.get("symmetrize_every", s.symmetrize_every);
  r.get("check_geometry", s.check_geometry);
  r.finish();
}

inline void read_oracle(Reader r, OracleSpec &o) {
  if (const json *cases = r.raw("cases")) {
    const std::string path = join(r.path(), "cases");
    require(cases->is_array(), ErrorCode::SchemaError, path + ": expected an array");
    o.cases.clear();
    for (std::size_t i = 0; i < cases->size(); ++i) {
      OracleCase c;
      Reader cr((*cases)[i], path + "[" + std::to_string(i) + "]");
      cr.get("dim", c.dim);
      cr.get("points_per_axis", c.points_per_axis);
      cr.get("half_extent", c.half_extent);
      cr.get("alpha", c.alpha);
      cr.finish();
      o.cases.push_back(c);
    }
  }
  r.get("fields", o.fields);
  r.get("tolerance", o.tolerance);
  r.finish();
}

} // namespace detail

inline void RunConfig::validate() const {
  grid.validate();
  model.validate();
  require(model.dim == grid.dim, ErrorCode::RangeError,
          "model dimension must equal grid.dim");
  require(threads >= 1, ErrorCode::RangeError, "threads must be >= 1");
  flow.validate();
  saddle.validate();
  require(!init.widths.empty(), ErrorCode::RangeError,
          "init.widths needs at least one width");
  for (double w : init.widths)
    require(w > 0.0 && std::isfinite(w), ErrorCode::RangeError,
            "init.widths must be positive");
  require(init.jitter >= 0.0 && init.jitter < 1.0, ErrorCode::RangeError,
          "init.jitter must lie in [0, 1)");
  require(scan.jitter >= 0.0 && scan.jitter < 1.0, ErrorCode::RangeError,
          "scan.jitter must lie in [0, 1)");
  require(!scan.widths.empty(), ErrorCode::RangeError,
          "scan.widths needs at least one width");
  require(oracle.fields >= 1, ErrorCode::RangeError, "oracle.fields must be >= 1");
  require(oracle.tolerance > 0.0, ErrorCode::RangeError,
          "oracle.tolerance must be positive");
  for (const auto &c : oracle.cases) {
    GridSpec{c.dim, c.half_extent, c.points_per_axis}.validate();
    require(c.alpha > 0.0 && c.alpha < c.dim, ErrorCode::RangeError,
            "oracle case alpha must satisfy 0 < alpha < N");
  }
  if (mode == Mode::scan) {
    auto increasing = [](const std::vector<double> &a) {
      for (std::size_t i = 1; i < a.size(); ++i)
        if (!(a[i] > a[i - 1]))
          return false;
      return a.size() >= 2 && a.front() >= 0.0;
    };
    require(increasing(scan.xi) && increasing(scan.eta), ErrorCode::RangeError,
            "scan.xi and scan.eta need >= 2 nonnegative, strictly increasing "
            "masses");
  }
}

/// Builds a validated config from parsed JSON. Schema problems raise
/// SchemaError naming the key path; out-of-range values raise RangeError.
inline RunConfig parse_config_json(const json &j) {
  RunConfig c;
  detail::Reader root(j, "");
  require(root.has("mode"), ErrorCode::SchemaError, "mode: required field is missing");
  root.get_enum("mode", c.mode,
                {{"minimize", Mode::minimize},
                 {"saddle", Mode::saddle},
                 {"scan", Mode::scan},
                 {"check", Mode::check},
                 {"oracle", Mode::oracle}});
  c.init.widths = {c.mode == Mode::saddle ? 1.5 : 2.0};

  {
    detail::Reader g = root.child("grid");
    g.get("dim", c.grid.dim);
    g.get("half_extent", c.grid.half_extent);
    g.get("points_per_axis", c.grid.points_per_axis);
    g.finish();
  }
  {
    detail::Reader m = root.child("model");
    m.get("alpha", c.model.alpha);
    m.get("p", c.model.p);
    m.get("q", c.model.q);
    m.get("mu1", c.model.mu1);
    m.get("mu2", c.model.mu2);
    m.get("xi", c.model.xi);
    m.get("eta", c.model.eta);
    detail::read_coupling(m.child("coupling"), c.model.coupling);
    detail::read_potential(m.child("v1"), c.model.v1);
    detail::read_potential(m.child("v2"), c.model.v2);
    m.finish();
    c.model.dim = c.grid.dim;
  }
  detail::read_flow(root.child("flow"), c.flow);
  detail::read_saddle(root.child("saddle"), c.saddle);
  {
    detail::Reader r = root.child("init");
    r.get("widths", c.init.widths);
    r.get("jitter", c.init.jitter);
    r.finish();
  }
  {
    detail::Reader r = root.child("scan");
    r.get("xi", c.scan.xi);
    r.get("eta", c.scan.eta);
    r.get("widths", c.scan.widths);
    r.get("jitter", c.scan.jitter);
    r.finish();
  }
  detail::read_oracle(root.child("oracle"), c.oracle);
  {
    detail::Reader r = root.child("output");
    r.get("dir", c.output.dir);
    r.get("report", c.output.report);
    r.get("profiles", c.output.profiles);
    r.get("scan", c.output.scan);
    r.get("error", c.output.error);
    r.finish();
  }
  root.get("seed", c.seed);
  root.get("threads", c.threads);
  root.finish();

  // Materialize the rational_decay default so the echo is self-contained.
  if (c.model.coupling.kind == CouplingKind::rational_decay &&
      !c.model.coupling.decay)
    c.model.coupling.decay = c.model.coupling_decay();
  c.validate();
  return c;
}

inline json read_json_file(const std::string &path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::SchemaError, path + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str(), nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error &e) {
    fail(ErrorCode::SchemaError, path + ": not valid JSON (" + e.what() + ")");
  }
}

inline RunConfig parse_config(const std::string &path) {
  return parse_config_json(read_json_file(path));
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline json table_json(const RadialTable &t) {
  return json{{"radius", t.radius}, {"value", t.value}};
}

inline json coupling_json(const ModelParams &m) {
  const auto &c = m.coupling;
  json j;
  switch (c.kind) {
  case CouplingKind::constant: j["kind"] = "constant"; break;
  case CouplingKind::rational_decay: j["kind"] = "rational_decay"; break;
  case CouplingKind::gaussian: j["kind"] = "gaussian"; break;
  case CouplingKind::tabulated: j["kind"] = "tabulated"; break;
  }
  j["beta0"] = c.beta0;
  j["decay"] = c.decay ? json(*c.decay) : json(nullptr);
  j["width"] = c.width;
  if (c.kind == CouplingKind::tabulated)
    j["table"] = table_json(c.table);
  return j;
}

inline json potential_json(const PotentialSpec &v) {
  json j;
  switch (v.kind) {
  case PotentialKind::zero: j["kind"] = "zero"; break;
  case PotentialKind::gaussian_well: j["kind"] = "gaussian_well"; break;
  case PotentialKind::harmonic: j["kind"] = "harmonic"; break;
  case PotentialKind::tabulated: j["kind"] = "tabulated"; break;
  }
  j["depth"] = v.depth;
  j["width"] = v.width;
  j["omega"] = v.omega;
  if (v.kind == PotentialKind::tabulated)
    j["table"] = table_json(v.table);
  return j;
}

inline json grid_json(const GridSpec &g) {
  return json{{"dim", g.dim},
              {"half_extent", g.half_extent},
              {"points_per_axis", g.points_per_axis}};
}

} // namespace detail

/// The resolved config; parse_config_json(to_json(c)) reproduces c.
inline json to_json(const RunConfig &c) {
  json j;
  j["mode"] = to_string(c.mode);
  j["grid"] = detail::grid_json(c.grid);
  const auto &m = c.model;
  j["model"] = json{{"alpha", m.alpha}, {"p", m.p},     {"q", m.q},
                    {"mu1", m.mu1},     {"mu2", m.mu2}, {"xi", m.xi},
                    {"eta", m.eta}};
  j["model"]["coupling"] = detail::coupling_json(m);
  j["model"]["v1"] = detail::potential_json(m.v1);
  j["model"]["v2"] = detail::potential_json(m.v2);
  const auto &f = c.flow;
  j["flow"] = json{{"max_iters", f.max_iters},
                   {"step_rule", f.step_rule == StepRule::fixed ? "fixed" : "adaptive"},
                   {"initial_step", f.initial_step},
                   {"max_step", f.max_step},
                   {"energy_tol", f.energy_tol},
                   {"grad_tol", f.grad_tol},
                   {"window", f.window},
                   {"symmetrize_every", f.symmetrize_every},
                   {"min_shift", f.min_shift},
                   {"armijo", f.armijo}};
  const auto &s = c.saddle;
  j["saddle"] = json{{"s_min", s.s_min},
                     {"s_max", s.s_max},
                     {"fiber_tol", s.fiber_tol},
                     {"max_iters", s.max_iters},
                     {"grad_tol", s.grad_tol},
                     {"energy_tol", s.energy_tol},
                     {"window", s.window},
                     {"initial_step", s.initial_step},
                     {"max_step", s.max_step},
                     {"min_shift", s.min_shift},
                     {"armijo", s.armijo},
                     {"symmetrize_every", s.symmetrize_every},
                     {"check_geometry", s.check_geometry}};
  j["init"] = json{{"widths", c.init.widths}, {"jitter", c.init.jitter}};
  j["scan"] = json{{"xi", c.scan.xi},
                   {"eta", c.scan.eta},
                   {"widths", c.scan.widths},
                   {"jitter", c.scan.jitter}};
  json cases = json::array();
  for (const auto &oc : c.oracle.cases)
    cases.push_back(json{{"dim", oc.dim},
                         {"points_per_axis", oc.points_per_axis},
                         {"half_extent", oc.half_extent},
                         {"alpha", oc.alpha}});
  j["oracle"] = json{{"cases", cases},
                     {"fields", c.oracle.fields},
                     {"tolerance", c.oracle.tolerance}};
  j["output"] = json{{"dir", c.output.dir},
                     {"report", c.output.report},
                     {"profiles", c.output.profiles},
                     {"scan", c.output.scan},
                     {"error", c.output.error}};
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  return j;
}

inline json to_json(const EnergyBreakdown &e) {
  return json{{"kinetic_u", e.kinetic_u},       {"kinetic_v", e.kinetic_v},
              {"kinetic", e.kinetic},           {"potential_v1", e.potential_v1},
              {"potential_v2", e.potential_v2}, {"nonlocal_u", e.nonlocal_u},
              {"nonlocal_v", e.nonlocal_v},     {"coupling", e.coupling},
              {"total", e.total}};
}

inline json to_json(const ValidationReport &r) {
  json checks = json::array();
  for (const auto &c : r.checks) {
    json cj{{"name", c.name},       {"applicable", c.applicable},
            {"passed", c.passed},   {"value", c.value},
            {"threshold", c.threshold}, {"detail", c.detail}};
    if (c.location)
      cj["location"] = std::vector<double>(c.location->begin(), c.location->end());
    checks.push_back(cj);
  }
  return json{{"subject", r.subject},
              {"label", r.label},
              {"passed", r.passed()},
              {"checks", checks}};
}

inline json to_json(const GeometryReport &g) {
  return json{{"constant", g.constant},
              {"K1", g.K1},
              {"K2", g.K2},
              {"hmax", g.hmax},
              {"beta_sup", g.beta_sup},
              {"beta_limit", g.beta_limit},
              {"beta_ok", g.beta_ok},
              {"inf_pi_lower_estimate", g.inf_pi_lower},
              {"inf_pi_sampled", g.inf_pi_sampled},
              {"sup_omega_upper_estimate", g.sup_omega_upper},
              {"sup_omega_sampled", g.sup_omega_sampled},
              {"consistent", g.consistent()}};
}

inline json to_json(const SolveReport &r) {
  json j;
  j["converged"] = r.converged;
  j["iterations"] = r.iterations;
  j["regime"] = r.regime;
  j["energy"] = to_json(r.energy);
  j["multipliers"] = json{{"lambda1", r.multipliers.lambda1},
                          {"lambda2", r.multipliers.lambda2}};
  j["residuals"] = json{{"projected_gradient", r.projected_gradient},
                        {"el", r.el_residual},
                        {"el_u", r.el_residual_u},
                        {"el_v", r.el_residual_v},
                        {"mass_drift", r.mass_drift}};
  if (r.pohozaev)
    j["pohozaev_residual"] = *r.pohozaev;
  if (r.identity)
    j["multiplier_sum_identity"] = json{{"lhs", r.identity->lhs},
                                        {"rhs", r.identity->rhs},
                                        {"gap", r.identity->gap()}};
  if (r.fiber_shift) {
    j["fiber_shift"] = *r.fiber_shift;
    j["physical_grid"] = detail::grid_json(r.state.grid());
  }
  j["warnings"] = r.warnings;
  j["trace"] = r.trace;
  return j;
}

// ---------------------------------------------------------------------------
// Running

struct RunResult {
  int exit_code = exit_ok;
  json report;                ///< full report.json content
  std::string profiles_csv;   ///< empty when the mode has no profiles
  std::string scan_csv;       ///< empty unless mode == scan
};

namespace detail {

inline std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// r, u, v, V1, V2, beta along the positive first axis.
inline std::string profiles_csv(const StatePair &s, const ModelParams &m) {
  std::string out = "r,u,v,V1,V2,beta\n";
  const auto pu = axis_profile(s.u);
  const auto pv = axis_profile(s.v);
  for (std::size_t i = 0; i < pu.size(); ++i) {
    const double r = pu[i].first;
    out += num(r) + "," + num(pu[i].second) + "," + num(pv[i].second) + "," +
           num(potential_value(m.v1, r)) + "," + num(potential_value(m.v2, r)) +
           "," + num(coupling_value(m, r)) + "\n";
  }
  return out;
}

inline std::string scan_csv(const ScanTable &t) {
  std::string out =
      "xi,eta,energy,lambda1,lambda2,el_residual,iterations,converged,width,error\n";
  for (const auto &c : t.cells) {
    std::string err = c.error;
    for (char &ch : err)
      if (ch == ',' || ch == '\n' || ch == '"')
        ch = ';';
    out += num(c.xi) + "," + num(c.eta) + "," + num(c.energy) + "," +
           num(c.lambda1) + "," + num(c.lambda2) + "," + num(c.el_residual) + "," +
           std::to_string(c.iterations) + "," + (c.converged ? "1" : "0") + "," +
           num(c.width) + "," + err + "\n";
  }
  return out;
}

/// Start widths for minimize/saddle, jittered from the seed.
inline std::vector<double> start_widths(const RunConfig &c) {
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> u(1.0 - c.init.jitter, 1.0 + c.init.jitter);
  std::vector<double> w;
  for (double base : c.init.widths)
    w.push_back(c.init.jitter > 0.0 ? base * u(rng) : base);
  return w;
}

inline bool better(const SolveReport &a, const SolveReport &b) {
  if (a.converged != b.converged)
    return a.converged;
  return a.energy.total < b.energy.total;
}

inline RunResult run_minimize(const RunConfig &c, json &rep) {
  const Problem pb(c.model, c.grid);
  const std::vector<double> widths = start_widths(c);
  std::vector<std::optional<SolveReport>> out(widths.size());
  std::vector<std::optional<Error>> errors(widths.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < widths.size(); k = next++) {
      try {
        out[k] = minimize_normalized(
            pb, gaussian_pair(c.grid, widths[k], widths[k], c.model.xi, c.model.eta),
            c.flow);
      } catch (const Error &e) {
        errors[k] = e;
      }
    }
  };
  const int nt = std::max(1, std::min<int>(c.threads, int(widths.size())));
  std::vector<std::thread> pool;
  for (int k = 1; k < nt; ++k)
    pool.emplace_back(worker);
  worker();
  for (auto &t : pool)
    t.join();
  std::optional<std::size_t> best;
  for (std::size_t k = 0; k < out.size(); ++k)
    if (out[k] && (!best || better(*out[k], *out[*best])))
      best = k;
  if (!best)
    throw *errors.front(); // every start failed
  const SolveReport &r = *out[*best];
  RunResult res;
  rep["result"] = to_json(r);
  rep["result"]["start_width"] = widths[*best];
  res.profiles_csv = profiles_csv(r.state, c.model);
  res.exit_code = r.converged ? exit_ok : exit_solver;
  return res;
}

inline RunResult run_saddle(const RunConfig &c, json &rep) {
  const Problem pb(c.model, c.grid);
  choquard::detail::require_saddle_mode(c.model);
  rep["geometry"] = to_json(check_geometry(c.model, c.grid));
  const SolveReport r =
      mountain_pass_multistart(pb, start_widths(c), c.saddle, c.threads);
  RunResult res;
  rep["result"] = to_json(r);
  if (r.converged) {
    const KineticBounds kb = kinetic_bounds_check(r, c.model);
    rep["result"]["kinetic_bounds"] = json{{"kinetic", kb.kinetic},
                                           {"lower", kb.lower},
                                           {"upper", kb.upper},
                                           {"lower_ok", kb.lower_ok},
                                           {"upper_ok", kb.upper_ok},
                                           {"identity_gap", kb.identity_gap}};
  }
  res.profiles_csv = profiles_csv(r.state, c.model);
  res.exit_code = r.converged ? exit_ok : exit_solver;
  return res;
}

inline RunResult run_scan(const RunConfig &c, json &rep) {
  const Problem pb(c.model, c.grid);
  ScanOptions o;
  o.flow = c.flow;
  o.widths = c.scan.widths;
  o.jitter = c.scan.jitter;
  o.seed = c.seed;
  o.threads = c.threads;
  const ScanTable t = mass_scan(pb, c.scan.xi, c.scan.eta, o);
  json cells = json::array();
  bool all = true;
  for (const auto &cell : t.cells) {
    all = all && cell.converged;
    cells.push_back(json{{"xi", cell.xi},
                         {"eta", cell.eta},
                         {"energy", cell.energy},
                         {"lambda1", cell.lambda1},
                         {"lambda2", cell.lambda2},
                         {"el_residual", cell.el_residual},
                         {"iterations", cell.iterations},
                         {"converged", cell.converged},
                         {"width", cell.width},
                         {"error", cell.error}});
  }
  // Monotonicity along each axis: e is nonincreasing as a mass grows.
  json mono = json::array();
  bool monotone = true;
  const std::size_t nx = t.xi.size(), ny = t.eta.size();
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = 0; j < ny; ++j) {
      auto cmp = [&](std::size_t i2, std::size_t j2, const char *axis) {
        const double a = t.at(i, j).energy, b = t.at(i2, j2).energy;
        const bool ok = b <= a + 10.0 * c.flow.energy_tol * std::max(1.0, std::abs(a));
        monotone = monotone && ok;
        mono.push_back(json{{"axis", axis},
                            {"from", json::array({t.xi[i], t.eta[j]})},
                            {"to", json::array({t.xi[i2], t.eta[j2]})},
                            {"ok", ok}});
      };
      if (i + 1 < nx)
        cmp(i + 1, j, "xi");
      if (j + 1 < ny)
        cmp(i, j + 1, "eta");
    }
  rep["result"] = json{{"cells", cells},
                       {"all_converged", all},
                       {"monotone", monotone},
                       {"monotonicity", mono}};
  RunResult res;
  res.scan_csv = scan_csv(t);
  res.exit_code = all ? exit_ok : exit_solver;
  return res;
}

inline RunResult run_check(const RunConfig &c, json &rep) {
  const Regime reg = c.model.regime();
  bool ok = true;
  json r;
  r["regime"] = json{{"label", reg.label()},
                     {"p", to_string(reg.label_p)},
                     {"q", to_string(reg.label_q)},
                     {"delta_p", reg.delta_p},
                     {"delta_q", reg.delta_q}};
  const ValidationReport coupling = validate_coupling(c.model, c.grid);
  ok = ok && coupling.passed();
  r["coupling"] = to_json(coupling);
  json pots = json::object();
  for (const auto *v : {&c.model.v1, &c.model.v2}) {
    const ValidationReport pr = validate_potential(*v, c.grid);
    // A nonzero potential has to fall into one of the two classes.
    ok = ok && pr.label != to_string(PotentialClass::none);
    pots[v == &c.model.v1 ? "v1" : "v2"] = to_json(pr);
  }
  r["potentials"] = pots;
  if (reg.supercritical() && c.model.p == c.model.q) {
    try {
      const GeometryReport g = check_geometry(c.model, c.grid);
      ok = ok && g.consistent();
      r["geometry"] = to_json(g);
    } catch (const Error &e) {
      ok = false;
      r["geometry"] = json{{"error", std::string(to_string(e.code()))},
                           {"message", e.detail()}};
    }
  } else {
    r["geometry"] = nullptr;
  }
  r["passed"] = ok;
  rep["result"] = r;
  RunResult res;
  res.exit_code = ok ? exit_ok : exit_validation;
  return res;
}

inline RunResult run_oracle(const RunConfig &c, json &rep) {
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  json cases = json::array();
  bool ok = true;
  for (const auto &oc : c.oracle.cases) {
    const GridSpec g{oc.dim, oc.half_extent, oc.points_per_axis};
    const auto conv = build_convolver(g, oc.alpha);
    double worst = 0.0;
    for (int f = 0; f < c.oracle.fields; ++f) {
      ScalarField rho(g);
      for (std::size_t i = 0; i < rho.size(); ++i)
        rho[i] = u01(rng);
      const ScalarField fast = conv->convolve(rho);
      const ScalarField slow = riesz_convolve_oracle(g, oc.alpha, rho);
      double diff = 0.0;
      for (std::size_t i = 0; i < fast.size(); ++i)
        diff = std::max(diff, std::abs(fast[i] - slow[i]));
      worst = std::max(worst, diff / slow.max_abs());
    }
    const bool pass = worst < c.oracle.tolerance;
    ok = ok && pass;
    cases.push_back(json{{"dim", oc.dim},
                         {"points_per_axis", oc.points_per_axis},
                         {"half_extent", oc.half_extent},
                         {"alpha", oc.alpha},
                         {"max_rel_linf_error", worst},
                         {"passed", pass}});
  }
  rep["result"] = json{{"cases", cases}, {"passed", ok}};
  RunResult res;
  res.exit_code = ok ? exit_ok : exit_validation;
  return res;
}

} // namespace detail

/// Runs one mode. Library errors propagate; the caller maps them to exit 3.
inline RunResult run(const RunConfig &c) {
  json rep;
  rep["schema"] = kReportSchema;
  rep["mode"] = to_string(c.mode);
  rep["config"] = to_json(c);
  RunResult res;
  switch (c.mode) {
  case Mode::minimize: res = detail::run_minimize(c, rep); break;
  case Mode::saddle: res = detail::run_saddle(c, rep); break;
  case Mode::scan: res = detail::run_scan(c, rep); break;
  case Mode::check: res = detail::run_check(c, rep); break;
  case Mode::oracle: res = detail::run_oracle(c, rep); break;
  }
  rep["status"] = res.exit_code == exit_ok ? "ok"
                  : res.exit_code == exit_solver ? "not_converged"
                                                 : "validation_failed";
  rep["exit_code"] = res.exit_code;
  res.report = std::move(rep);
  return res;
}

inline json error_record(ErrorCode code, const std::string &message, int exit_code,
                         const std::optional<RunConfig> &c = std::nullopt) {
  json j;
  j["schema"] = kErrorSchema;
  j["code"] = std::string(to_string(code));
  j["message"] = message;
  j["exit_code"] = exit_code;
  if (c) {
    j["mode"] = to_string(c->mode);
    j["config"] = to_json(*c);
  }
  return j;
}

inline int exit_code_for(ErrorCode code) {
  switch (code) {
  case ErrorCode::SchemaError:
  case ErrorCode::RangeError:
  case ErrorCode::AlphaOutOfRange:
  case ErrorCode::InvalidArgument:
    return exit_config;
  default:
    return exit_solver;
  }
}

inline void write_text(const std::filesystem::path &p, const std::string &s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::InvalidArgument,
          "cannot write " + p.string());
  out << s;
}

/// Writes report.json and the mode's data file into c.output.dir.
inline void write_outputs(const RunConfig &c, const RunResult &r) {
  const std::filesystem::path dir(c.output.dir);
  std::filesystem::create_directories(dir);
  write_text(dir / c.output.report, r.report.dump(2) + "\n");
  if (!r.profiles_csv.empty())
    write_text(dir / c.output.profiles, r.profiles_csv);
  if (!r.scan_csv.empty())
    write_text(dir / c.output.scan, r.scan_csv);
}

} // namespace choquard::cli

#endif
