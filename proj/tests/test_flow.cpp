#include <catch_amalgamated.hpp>

#include <choquard/flow.hpp>

#include <cmath>
#include <random>

using namespace choquard;
using Catch::Approx;

namespace {

// 1D model: alpha = 0.5, p = 2 gives p delta_p = 1/4, well inside the
// subcritical range, and a cheap, well-resolved grid.
GridSpec line_grid() { return GridSpec{1, 20.0, 512}; }

ModelParams line_params(double beta0 = 0.1) {
  ModelParams m;
  m.dim = 1;
  m.alpha = 0.5;
  m.p = m.q = 2.0;
  m.mu1 = m.mu2 = 2.0;
  m.xi = m.eta = 1.0;
  m.coupling.beta0 = beta0;
  return m;
}

bool trace_nonincreasing(const std::vector<double> &t) {
  for (std::size_t i = 1; i < t.size(); ++i)
    if (t[i] > t[i - 1] + 1e-12 * std::max(1.0, std::abs(t[i - 1])))
      return false;
  return true;
}

} // namespace

TEST_CASE("project_masses restores the constraint") {
  const GridSpec g = line_grid();
  const StatePair s = gaussian_pair(g, 1.0, 2.0, 0.7, 1.3);
  CHECK(s.u.mass() == Approx(0.49).epsilon(1e-12));
  CHECK(s.v.mass() == Approx(1.69).epsilon(1e-12));

  const StatePair same = project_masses(s, 0.7, 1.3);
  for (std::size_t i = 0; i < s.u.size(); ++i) {
    CHECK(same.u[i] == Approx(s.u[i]).epsilon(1e-14).margin(1e-300));
    CHECK(same.v[i] == Approx(s.v[i]).epsilon(1e-14).margin(1e-300));
  }

  StatePair doubled(2.0 * s.u, 2.0 * s.v);
  const StatePair back = project_masses(doubled, 0.7, 1.3);
  for (std::size_t i = 0; i < s.u.size(); i += 17)
    CHECK(back.u[i] == Approx(0.5 * doubled.u[i]).epsilon(1e-12).margin(1e-300));

  const StatePair half = project_masses(s, 0.0, 1.3);
  CHECK(half.u.max_abs() == 0.0);
  CHECK(half.v.mass() == Approx(1.69).epsilon(1e-12));

  StatePair zero(g);
  CHECK_THROWS_AS(project_masses(zero, 1.0, 1.0), Error);
  try {
    project_masses(zero, 1.0, 1.0);
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::ZeroMass);
  }
}

TEST_CASE("coupled minimization converges with monotone trace") {
  const Problem pb(line_params(), line_grid());
  FlowOptions o;
  const SolveReport r =
      minimize_normalized(pb, gaussian_pair(pb.grid, 2.0, 2.0, 1.0, 1.0), o);
  REQUIRE(r.converged);
  CHECK(r.energy.total < 0.0);
  CHECK(r.mass_drift < 1e-10);
  CHECK(r.el_residual <= 10.0 * o.grad_tol);
  CHECK(trace_nonincreasing(r.trace));
  CHECK(r.state.u.max_abs() > 0.0);
  CHECK(r.state.v.max_abs() > 0.0);
  CHECK(r.regime == "subcritical");
  // Residual recomputed from scratch.
  const Evaluation ev = evaluate(r.state, pb);
  CHECK(el_residuals(r.state, ev).el == Approx(r.el_residual).epsilon(1e-6));
}

TEST_CASE("fixed step rule also converges") {
  const Problem pb(line_params(), line_grid());
  FlowOptions o;
  o.step_rule = StepRule::fixed;
  o.initial_step = o.max_step = 0.5;
  const SolveReport r =
      minimize_normalized(pb, gaussian_pair(pb.grid, 2.0, 2.0, 1.0, 1.0), o);
  REQUIRE(r.converged);
  FlowOptions a;
  const SolveReport ra =
      minimize_normalized(pb, gaussian_pair(pb.grid, 2.0, 2.0, 1.0, 1.0), a);
  CHECK(r.energy.total == Approx(ra.energy.total).epsilon(1e-9));
}

TEST_CASE("decoupled system splits into two scalar problems") {
  ModelParams m = line_params(0.0);
  m.mu2 = 3.0;
  m.eta = 0.8;
  const Problem pb(m, line_grid());
  const SolveReport r =
      minimize_normalized(pb, gaussian_pair(pb.grid, 2.0, 2.0, m.xi, m.eta));
  REQUIRE(r.converged);
  const SolveReport a = scalar_ground_state(pb, m.xi, m.mu1, m.p);
  const SolveReport b = scalar_ground_state(pb, m.eta, m.mu2, m.q);
  REQUIRE(a.converged);
  REQUIRE(b.converged);
  CHECK(std::abs(r.energy.total - (a.energy.total + b.energy.total)) < 1e-4);
  CHECK(r.multipliers.lambda1 == Approx(a.multipliers.lambda1).epsilon(1e-5));
  CHECK(r.multipliers.lambda2 == Approx(b.multipliers.lambda1).epsilon(1e-5));
}

TEST_CASE("coupling lowers the energy below the decoupled sum") {
  const Problem pb(line_params(0.1), line_grid());
  const SolveReport r =
      minimize_normalized(pb, gaussian_pair(pb.grid, 2.0, 2.0, 1.0, 1.0));
  const SolveReport a = scalar_ground_state(pb, 1.0, 2.0, 2.0);
  REQUIRE(r.converged);
  CHECK(r.energy.total < 2.0 * a.energy.total);
}

TEST_CASE("symmetrized run gives nonnegative radial profiles") {
  const Problem pb(line_params(), line_grid());
  FlowOptions o;
  o.symmetrize_every = 5;
  // Off-centre, sign-changing start.
  ScalarField u = ScalarField::from_function(pb.grid, [](const Point &x) {
    return std::exp(-(x[0] - 1.5) * (x[0] - 1.5)) - 0.3 * std::exp(-(x[0] + 3) * (x[0] + 3));
  });
  ScalarField v = ScalarField::from_function(
      pb.grid, [](const Point &x) { return std::exp(-0.2 * (x[0] + 1) * (x[0] + 1)); });
  const SolveReport r = minimize_normalized(pb, StatePair(u, v), o);
  INFO("res " << r.el_residual << " it " << r.iterations);
  REQUIRE(r.converged);
  CHECK(r.state.u.min_value() >= -1e-8);
  CHECK(r.state.v.min_value() >= -1e-8);
  CHECK(is_radially_nonincreasing(r.state.u, 1e-8));
  CHECK(is_radially_nonincreasing(r.state.v, 1e-8));
}

TEST_CASE("rearrangement never raises the energy") {
  const GridSpec g{3, 6.0, 24};
  ModelParams m;
  m.mu1 = 2.0;
  m.mu2 = 3.0;
  m.coupling.beta0 = 0.3;
  m.v1 = PotentialSpec{PotentialKind::gaussian_well, 1.0, 1.5};
  const Problem pb(m, g);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-2.0, 2.0), W(0.5, 1.5);
  for (int trial = 0; trial < 10; ++trial) {
    auto bumps = [&] {
      const double c1 = U(rng), c2 = U(rng), c3 = U(rng), w = W(rng);
      const double d1 = U(rng), d2 = U(rng), d3 = U(rng), w2 = W(rng);
      return ScalarField::from_function(g, [=](const Point &x) {
        const double a = (x[0] - c1) * (x[0] - c1) + (x[1] - c2) * (x[1] - c2) +
                         (x[2] - c3) * (x[2] - c3);
        const double b = (x[0] - d1) * (x[0] - d1) + (x[1] - d2) * (x[1] - d2) +
                         (x[2] - d3) * (x[2] - d3);
        return std::exp(-a / (w * w)) + 0.5 * std::exp(-b / (w2 * w2));
      });
    };
    const StatePair s(bumps(), bumps());
    const StatePair r(rearrange_radial_decreasing(s.u),
                      rearrange_radial_decreasing(s.v));
    CHECK(energy_total(r, pb).total <= energy_total(s, pb).total + 1e-8);
  }
}

TEST_CASE("scalar level: negative, monotone in mu, strictly subadditive") {
  const Problem core(line_params(), line_grid());
  for (double c : {0.5, 0.8, 1.0, 1.2}) {
    const SolveReport r = scalar_ground_state(core, c, 2.0, 2.0);
    REQUIRE(r.converged);
    CHECK(r.energy.total < 0.0);
    CHECK(r.multipliers.lambda1 > 0.0);
    CHECK(r.state.v.max_abs() == 0.0);
  }
  const double m1 = scalar_ground_state(core, 1.0, 2.0, 2.0).energy.total;
  const double m2 = scalar_ground_state(core, 1.0, 4.0, 2.0).energy.total;
  CHECK(m2 < m1);
  // Split of the norm, as stated, and of the squared mass.
  const double half = scalar_ground_state(core, 0.5, 2.0, 2.0).energy.total;
  CHECK(m1 < 2.0 * half);
  const double root = scalar_ground_state(core, std::sqrt(0.5), 2.0, 2.0).energy.total;
  CHECK(m1 < 2.0 * root);
}

TEST_CASE("subcritical flow refuses the supercritical regime") {
  ModelParams m;
  m.p = m.q = 3.0;
  const GridSpec g{3, 6.0, 16};
  const Problem pb(m, g);
  try {
    minimize_normalized(pb, gaussian_pair(g, 1.0, 1.0, 1.0, 1.0));
    FAIL("expected NotSubcritical");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::NotSubcritical);
  }
}

TEST_CASE("options validation") {
  FlowOptions o;
  o.grad_tol = 0.0;
  CHECK_THROWS_AS(o.validate(), Error);
  o = FlowOptions{};
  o.max_iters = 0;
  CHECK_THROWS_AS(o.validate(), Error);
  o = FlowOptions{};
  o.symmetrize_every = -1;
  CHECK_THROWS_AS(o.validate(), Error);
}

TEST_CASE("potential well lowers the level") {
  ModelParams m = line_params();
  const Problem free_pb(m, line_grid());
  m.v1 = PotentialSpec{PotentialKind::gaussian_well, 0.5, 1.0};
  m.v2 = PotentialSpec{PotentialKind::gaussian_well, 0.5, 1.0};
  const Problem well_pb(m, line_grid());
  const auto init = gaussian_pair(free_pb.grid, 2.0, 2.0, 1.0, 1.0);
  const SolveReport e = minimize_normalized(free_pb, init);
  const SolveReport ev = minimize_normalized(well_pb, init);
  REQUIRE(e.converged);
  REQUIRE(ev.converged);
  CHECK(ev.energy.total < e.energy.total);
  CHECK(e.energy.total < 0.0);
}

TEST_CASE("trap preconditioner is symmetric and positive") {
  const GridSpec g = line_grid();
  PotentialSpec trap;
  trap.kind = PotentialKind::harmonic;
  trap.omega = 0.8;
  const ScalarField V = sample_potential(trap, g);
  const detail::Preconditioner P(0.5, &V, 1e-2);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  ScalarField a(g), b(g);
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    a[i] = nd(rng);
    b[i] = nd(rng);
  }
  const double ab = dot(a, P(b)), ba = dot(b, P(a));
  CHECK(std::abs(ab - ba) <= 1e-10 * std::sqrt(dot(a, P(a)) * dot(b, P(b))));
  CHECK(dot(a, P(a)) > 0.0);
  // Close to the exact inverse on a smooth field.
  const ScalarField f = ScalarField::from_radial(g, [](double r) { return std::exp(-r * r); });
  ScalarField af = neg_laplacian(f);
  af.axpy(P.shift, f);
  for (std::size_t i = 0; i < af.values().size(); ++i)
    af[i] += V[i] * f[i];
  CHECK((P(af) - f).max_abs() < 1e-2 * f.max_abs());
}

TEST_CASE("harmonic trap converges in few iterations") {
  ModelParams m = line_params();
  m.v1.kind = m.v2.kind = PotentialKind::harmonic;
  m.v1.omega = 1.0;
  m.v2.omega = 0.5;
  const Problem pb(m, line_grid());
  const SolveReport r = minimize_normalized(pb, gaussian_pair(pb.grid, 2.0, 2.0, 1.0, 1.0));
  REQUIRE(r.converged);
  CHECK(r.iterations < 200);
  CHECK(trace_nonincreasing(r.trace));
  CHECK(r.energy.potential_v1 > r.energy.potential_v2);
}

TEST_CASE("mass scan: edges, determinism, subadditivity") {
  const Problem pb(line_params(), line_grid());
  ScanOptions o;
  o.seed = 11;
  const std::vector<double> axis{0.0, std::sqrt(0.5), 1.0};
  const ScanTable t = mass_scan(pb, axis, axis, o);
  REQUIRE(t.cells.size() == 9);
  for (const auto &c : t.cells) {
    INFO(c.xi << " " << c.eta << " res " << c.el_residual << " it " << c.iterations << " " << c.error);
    CHECK(c.converged);
  }
  CHECK(t.at(0, 0).energy == 0.0);

  // Edge cells are scalar levels.
  const SolveReport s = scalar_ground_state(pb, 1.0, 2.0, 2.0);
  CHECK(t.at(0, 2).energy == Approx(s.energy.total).epsilon(1e-8));
  CHECK(t.at(2, 0).energy == Approx(s.energy.total).epsilon(1e-8));

  // Squared-mass splits: index k carries mass k/2.
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int a = 0; a <= i; ++a)
        for (int b = 0; b <= j; ++b)
          CHECK(t.at(i, j).energy <=
                t.at(a, b).energy + t.at(i - a, j - b).energy + 1e-3);

  // Energy decreases as masses grow.
  for (int i = 0; i < 3; ++i)
    for (int j = 1; j < 3; ++j) {
      CHECK(t.at(i, j).energy < t.at(i, j - 1).energy);
      CHECK(t.at(j, i).energy < t.at(j - 1, i).energy);
    }

  const ScanTable again = mass_scan(pb, axis, axis, o);
  ScanOptions par = o;
  par.threads = 4;
  const ScanTable threaded = mass_scan(pb, axis, axis, par);
  for (std::size_t k = 0; k < t.cells.size(); ++k) {
    CHECK(again.cells[k].energy == t.cells[k].energy);
    CHECK(again.cells[k].width == t.cells[k].width);
    CHECK(std::abs(threaded.cells[k].energy - t.cells[k].energy) <= 1e-10);
  }
}

TEST_CASE("scan widths follow the seed") {
  ScanOptions a, b;
  a.seed = b.seed = 3;
  CHECK(scan_widths(a, 4) == scan_widths(b, 4));
  b.seed = 4;
  CHECK(scan_widths(a, 4) != scan_widths(b, 4));
  for (double w : scan_widths(a, 5))
    CHECK((w > 0.89 && w < 3.86));
}

TEST_CASE("scan axes are validated") {
  const Problem pb(line_params(), line_grid());
  CHECK_THROWS_AS(mass_scan(pb, {1.0}, {0.5, 1.0}), Error);
  CHECK_THROWS_AS(mass_scan(pb, {1.0, 0.5}, {0.5, 1.0}), Error);
  CHECK_THROWS_AS(mass_scan(pb, {-1.0, 0.5}, {0.5, 1.0}), Error);
}
