#include <catch_amalgamated.hpp>

#include <choquard/riesz.hpp>

#include <cmath>
#include <numbers>
#include <random>

using namespace choquard;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

const double pi = std::numbers::pi;

ScalarField random_field(const GridSpec &g, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ScalarField f(g);
  for (std::size_t i = 0; i < f.size(); ++i)
    f[i] = u(rng);
  return f;
}

double rel_linf(const ScalarField &a, const ScalarField &b) {
  double err = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    err = std::max(err, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return err / scale;
}

bool has_code(const Error &e, ErrorCode c) { return e.code() == c; }

} // namespace

TEST_CASE("lattice zeta values") {
  // Reference values from an independent arbitrary-precision evaluation.
  CHECK_THAT(special::epstein_zeta(1.0, 3), WithinAbs(-2.8372974794806, 1e-11));
  CHECK_THAT(special::epstein_zeta(-1.0, 3), WithinAbs(-0.2665962787184, 1e-11));
  CHECK_THAT(special::epstein_zeta(2.0, 3), WithinAbs(-8.91363291758515, 1e-10));
  CHECK(special::epstein_zeta(0.0, 2) == -1.0);
  // 1D: Z(s) = 2 zeta(s); zeta(-1) = -1/12, zeta(2) = pi^2/6.
  CHECK_THAT(special::epstein_zeta(-1.0, 1), WithinAbs(-1.0 / 6.0, 1e-12));
  CHECK_THAT(special::epstein_zeta(2.0, 1), WithinAbs(pi * pi / 3.0, 1e-12));
  CHECK_THROWS_AS(special::epstein_zeta(3.0, 3), Error);
}

TEST_CASE("alpha outside (0, N) is rejected") {
  GridSpec g{3, 4.0, 16};
  for (double a : {0.0, 3.0, -1.0, 3.5}) {
    CHECK_THROWS_MATCHES(build_convolver(g, a), Error,
                         Catch::Matchers::Predicate<Error>([](const Error &e) {
                           return has_code(e, ErrorCode::AlphaOutOfRange);
                         }));
  }
  GridSpec g1{1, 4.0, 16};
  CHECK_THROWS_AS(build_convolver(g1, 1.0), Error);
  CHECK_NOTHROW(build_convolver(g1, 0.5));
}

TEST_CASE("N = 3, alpha = 2 samples the Coulomb kernel") {
  GridSpec g{3, 12.0, 64};
  const auto w = kernel_weights(g, 2.0, SingularCell::corrected);
  const double h = g.spacing();
  CHECK_THAT(w({3, 0, 0}), WithinRel(h * h * h / (3.0 * h), 1e-15));
  CHECK_THAT(w({2, 2, 1}), WithinRel(h * h * h / (3.0 * h), 1e-15));
  CHECK_THAT(w({1, 1, 0}), WithinRel(h * h * h / (std::sqrt(2.0) * h), 1e-15));
}

TEST_CASE("cell average weight is the kernel integral over one cell") {
  // 1D: int_{-h/2}^{h/2} |x|^{a-1} dx = 2 (h/2)^a / a.
  GridSpec g{1, 4.0, 16};
  const double h = g.spacing();
  for (double a : {0.3, 0.7}) {
    const auto w = kernel_weights(g, a, SingularCell::cell_average);
    CHECK_THAT(w.center, WithinRel(2.0 * std::pow(h / 2, a) / a, 1e-12));
  }
  // 3D Coulomb: the cube integral of 1/|x| over [-1/2,1/2]^3 is 2.38008...
  // (closed form 3 ln((sqrt(3)+1)/(sqrt(3)-1)) - pi/2), scaling as h^2.
  GridSpec g3{3, 4.0, 16};
  const double h3 = g3.spacing();
  const auto w3 = kernel_weights(g3, 2.0, SingularCell::cell_average);
  const double unit = 3.0 * std::log((std::sqrt(3.0) + 1.0) / (std::sqrt(3.0) - 1.0)) -
                      pi / 2.0;
  CHECK_THAT(w3.center, WithinRel(unit * h3 * h3, 1e-10));
}

TEST_CASE("fast convolution matches the direct-sum oracle") {
  std::mt19937_64 rng(11);
  struct Case { int dim, m; double alpha; };
  for (auto [dim, m, alpha] : {Case{1, 64, 0.5}, Case{2, 32, 1.0}, Case{2, 32, 1.7},
                               Case{3, 16, 2.0}, Case{3, 16, 0.8}}) {
    GridSpec g{dim, 5.0, m};
    for (auto rule : {SingularCell::corrected, SingularCell::cell_average}) {
      const auto conv = build_convolver(g, alpha, rule);
      const ScalarField rho = random_field(g, rng);
      const ScalarField fast = conv->convolve(rho);
      const ScalarField slow = riesz_convolve_oracle(g, alpha, rho, rule);
      CHECK(rel_linf(fast, slow) < 1e-8);
    }
  }
}

TEST_CASE("oracle refuses large grids") {
  GridSpec g{3, 4.0, 18};
  ScalarField rho(g);
  CHECK_THROWS_MATCHES(riesz_convolve_oracle(g, 2.0, rho), Error,
                       Catch::Matchers::Predicate<Error>([](const Error &e) {
                         return has_code(e, ErrorCode::TooLarge);
                       }));
  GridSpec g2{2, 4.0, 34};
  CHECK_THROWS_AS(riesz_convolve_oracle(g2, 1.0, ScalarField(g2)), Error);
}

TEST_CASE("zero density gives zero potential") {
  GridSpec g{3, 4.0, 16};
  const auto conv = build_convolver(g, 2.0);
  const ScalarField out = conv->convolve(ScalarField(g));
  CHECK(out.max_abs() == 0.0);
  CHECK(riesz_convolve_oracle(g, 2.0, ScalarField(g)).max_abs() == 0.0);
}

TEST_CASE("grid mismatch is rejected") {
  const auto conv = build_convolver(GridSpec{3, 4.0, 16}, 2.0);
  CHECK_THROWS_MATCHES(conv->convolve(ScalarField(GridSpec{3, 5.0, 16})), Error,
                       Catch::Matchers::Predicate<Error>([](const Error &e) {
                         return has_code(e, ErrorCode::GridMismatch);
                       }));
}

TEST_CASE("Newtonian potential of a Gaussian") {
  GridSpec g{3, 12.0, 64};
  const auto conv = build_convolver(g, 2.0);
  const ScalarField rho =
      ScalarField::from_radial(g, [](double r) { return std::exp(-r * r); });
  const ScalarField phi = conv->convolve(rho);
  double worst = 0.0;
  for_each_point(g, [&](std::size_t i, const Point &x) {
    const double r = norm(x);
    if (r > 6.0)
      return;
    const double want = r == 0.0 ? 2.0 * pi : std::pow(pi, 1.5) * std::erf(r) / r;
    worst = std::max(worst, std::abs(phi[i] - want) / want);
  });
  CHECK(worst < 1e-4);
}

TEST_CASE("convolution converges under grid refinement") {
  GridSpec coarse{3, 8.0, 48}, fine{3, 8.0, 96};
  auto gauss = [](double r) { return std::exp(-0.7 * r * r); };
  const ScalarField a = build_convolver(coarse, 1.5)->convolve(
      ScalarField::from_radial(coarse, gauss));
  const ScalarField b = build_convolver(fine, 1.5)->convolve(
      ScalarField::from_radial(fine, gauss));
  double worst = 0.0, scale = b.max_abs();
  for (int i = 0; i < 48; ++i)
    for (int j = 0; j < 48; ++j)
      for (int k = 0; k < 48; ++k) {
        const double va = a[(std::size_t(i) * 48 + j) * 48 + k];
        const double vb = b[(std::size_t(2 * i) * 96 + 2 * j) * 96 + 2 * k];
        worst = std::max(worst, std::abs(va - vb));
      }
  CHECK(worst / scale < 1e-4);
}

TEST_CASE("convolution is linear, symmetric and positivity preserving") {
  GridSpec g{3, 6.0, 24};
  const auto conv = build_convolver(g, 1.3);
  std::mt19937_64 rng(5);
  const ScalarField r1 = random_field(g, rng), r2 = random_field(g, rng);
  const double a = 0.7, b = -2.1;
  const ScalarField lhs = conv->convolve(a * r1 + b * r2);
  const ScalarField rhs = a * conv->convolve(r1) + b * conv->convolve(r2);
  CHECK(rel_linf(lhs, rhs) < 1e-12);

  const double d12 = dot(conv->convolve(r1), r2);
  const double d21 = dot(r1, conv->convolve(r2));
  CHECK_THAT(d12, WithinRel(d21, 1e-10));

  const ScalarField pos = abs(r1);
  const ScalarField out = conv->convolve(pos);
  CHECK(out.min_value() >= -1e-12 * out.max_abs());
}
