#ifndef CHOQUARD_SPECIAL_HPP
#define CHOQUARD_SPECIAL_HPP

#include <cmath>
#include <limits>
#include <numbers>

#include "error.hpp"

namespace choquard::special {

/// Upper incomplete gamma Gamma(a, x) by the modified Lentz continued
/// fraction. Valid for any real `a`; intended for x >= 1 where the fraction
/// converges in a few dozen terms.
inline double upper_incomplete_gamma(double a, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double f = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny)
      d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny)
      c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    f *= delta;
    if (std::abs(delta - 1.0) < eps)
      break;
  }
  return std::exp(-x + a * std::log(x)) * f;
}

/// Analytically continued lattice sum Z(s) = sum'_{j in Z^dim} |j|^{-s}.
///
/// Evaluated with the Crandall/Ewald split at the self-dual scale, which is
/// valid for every s != dim. These constants are the weights that make the
/// punctured trapezoidal rule consistent for |x|^{-s} singularities.
inline double epstein_zeta(double s, int dim) {
  require(dim >= 1 && dim <= 3, ErrorCode::InvalidArgument,
          "epstein_zeta supports dim in {1,2,3}");
  require(std::abs(s - dim) > 1e-12, ErrorCode::InvalidArgument,
          "epstein_zeta has a pole at s = dim");
  if (std::abs(s) < 1e-12)
    return -1.0;
  constexpr double pi = std::numbers::pi;
  constexpr int R = 6;
  const double a1 = 0.5 * s;
  const double a2 = 0.5 * (dim - s);
  double total = 0.0;
  const int ry = dim >= 2 ? R : 0;
  const int rz = dim >= 3 ? R : 0;
  for (int i = -R; i <= R; ++i)
    for (int j = -ry; j <= ry; ++j)
      for (int k = -rz; k <= rz; ++k) {
        const int r2 = i * i + j * j + k * k;
        if (r2 == 0)
          continue;
        const double x = pi * r2;
        total += upper_incomplete_gamma(a1, x) / std::pow(x, a1) +
                 upper_incomplete_gamma(a2, x) / std::pow(x, a2);
      }
  total += -2.0 / (dim - s) - 2.0 / s;
  return std::pow(pi, a1) / std::tgamma(a1) * total;
}

/// Surface area of the unit sphere in R^dim.
inline double sphere_area(int dim) {
  return 2.0 * std::pow(std::numbers::pi, 0.5 * dim) / std::tgamma(0.5 * dim);
}

} // namespace choquard::special

#endif
