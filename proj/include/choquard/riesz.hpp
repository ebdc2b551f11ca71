#ifndef CHOQUARD_RIESZ_HPP
#define CHOQUARD_RIESZ_HPP

// Free-space convolution with the bare Riesz kernel |x|^{-(N - alpha)}.
//
// The kernel is sampled in real space on a box of twice the extent per axis
// and applied by FFT, so the convolution is linear (no periodic images) for
// data supported in the original box. Quadrature is the punctured
// trapezoidal rule; the singular point is handled by one of two rules:
//
//   corrected     : locally corrected trapezoidal rule. The center weight
//                   and the 2N nearest-neighbour weights absorb the first two
//                   terms of the lattice-sum error expansion (Epstein zeta
//                   values Z(N - alpha) and Z(N - alpha - 2)), giving
//                   O(h^{alpha + 4}) accuracy for smooth data.
//   cell_average  : the center weight is the exact average of the kernel
//                   over one grid cell; second order.

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "error.hpp"
#include "fft.hpp"
#include "grid.hpp"
#include "special.hpp"

namespace choquard {

enum class SingularCell { corrected, cell_average };

struct KernelWeights {
  double alpha = 0.0;
  double exponent = 0.0; ///< N - alpha
  double spacing = 0.0;
  double cell_volume = 0.0;
  double center = 0.0;   ///< weight at offset 0 (includes h^N)
  double neighbor = 0.0; ///< weight at offsets +-e_i (includes h^N)
  int dim = 0;

  /// Quadrature weight for the integer offset o (in grid units).
  double operator()(const std::array<int, 3> &o) const {
    const long r2 = long(o[0]) * o[0] + long(o[1]) * o[1] + long(o[2]) * o[2];
    if (r2 == 0)
      return center;
    if (r2 == 1)
      return neighbor;
    return cell_volume * std::pow(spacing * std::sqrt(double(r2)), -exponent);
  }
};

namespace detail {

/// Integral of |y|^{-s} over the cube face {y_1 = h/2, |y_i| <= h/2}.
inline double face_integral(int dim, double h, double s) {
  using boost::math::quadrature::gauss;
  const double a = 0.5 * h;
  if (dim == 1)
    return std::pow(a, -s);
  if (dim == 2)
    return gauss<double, 30>::integrate(
        [&](double t) { return std::pow(a * a + t * t, -0.5 * s); }, -a, a);
  return gauss<double, 30>::integrate(
      [&](double t) {
        return gauss<double, 30>::integrate(
            [&](double w) {
              return std::pow(a * a + t * t + w * w, -0.5 * s);
            },
            -a, a);
      },
      -a, a);
}

} // namespace detail

inline void check_alpha(int dim, double alpha) {
  require(alpha > 0.0 && alpha < dim && std::isfinite(alpha),
          ErrorCode::AlphaOutOfRange,
          "alpha must lie in (0, N); got alpha = " + std::to_string(alpha) +
              ", N = " + std::to_string(dim));
}

inline KernelWeights kernel_weights(const GridSpec &grid, double alpha,
                                    SingularCell rule) {
  check_alpha(grid.dim, alpha);
  KernelWeights w;
  w.dim = grid.dim;
  w.alpha = alpha;
  w.exponent = grid.dim - alpha;
  w.spacing = grid.spacing();
  w.cell_volume = grid.cell_volume();
  const double h = w.spacing;
  const double s = w.exponent;
  const int n = grid.dim;
  if (rule == SingularCell::corrected) {
    const double z0 = special::epstein_zeta(s, n);
    const double z2 = special::epstein_zeta(s - 2.0, n);
    w.center = -w.cell_volume * std::pow(h, -s) * (z0 - z2);
    w.neighbor = w.cell_volume * std::pow(h, -s) * (1.0 - z2 / (2.0 * n));
  } else {
    // Cube split into 2N pyramids with apex at the origin; the radial part
    // of each pyramid integral is exact: int_0^1 t^{alpha-1} dt = 1/alpha.
    w.center = 2.0 * n * (0.5 * h) / alpha * detail::face_integral(n, h, s);
    w.neighbor = w.cell_volume * std::pow(h, -s);
  }
  return w;
}

class RieszConvolver {
public:
  RieszConvolver(const GridSpec &grid, double alpha,
                 SingularCell rule = SingularCell::corrected)
      : grid_(grid), alpha_(alpha), rule_(rule),
        weights_(kernel_weights(grid, alpha, rule)) {
    grid_.validate();
    padded_ = 2 * grid_.points_per_axis;
    transform_ = fft::real_transform(std::vector<int>(grid_.dim, padded_));
    build_spectrum();
  }

  const GridSpec &grid() const noexcept { return grid_; }
  double alpha() const noexcept { return alpha_; }
  SingularCell rule() const noexcept { return rule_; }
  const KernelWeights &weights() const noexcept { return weights_; }

  /// (I_alpha * rho) sampled on the grid.
  ScalarField convolve(const ScalarField &rho) const {
    require(rho.grid() == grid_, ErrorCode::GridMismatch,
            "density is not on the convolver's grid");
    Scratch scratch = acquire();
    double *pad = scratch.real.data();
    std::fill(pad, pad + transform_->real_size(), 0.0);
    for_each_index([&](std::size_t src, std::size_t dst) {
      pad[dst] = rho[src];
    });
    transform_->forward(pad, scratch.spec.data());
    for (std::size_t i = 0; i < kernel_hat_.size(); ++i) {
      scratch.spec[i][0] *= kernel_hat_[i];
      scratch.spec[i][1] *= kernel_hat_[i];
    }
    transform_->backward(scratch.spec.data(), pad);
    const double scale = 1.0 / static_cast<double>(transform_->real_size());
    ScalarField out(grid_);
    double *o = out.data();
    for_each_index([&](std::size_t src, std::size_t dst) {
      o[src] = pad[dst] * scale;
    });
    release(std::move(scratch));
    return out;
  }

private:
  struct Scratch {
    fft::AlignedBuffer<double> real;
    fft::AlignedBuffer<fft::Complex> spec;
  };

  /// fn(grid_index, padded_index) over the original box.
  template <typename Fn> void for_each_index(Fn &&fn) const {
    const int m = grid_.points_per_axis;
    const std::size_t P = static_cast<std::size_t>(padded_);
    const int n1 = grid_.dim >= 2 ? m : 1;
    const int n2 = grid_.dim >= 3 ? m : 1;
    std::size_t src = 0;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n1; ++j)
        for (int k = 0; k < n2; ++k) {
          std::size_t dst;
          if (grid_.dim == 1)
            dst = i;
          else if (grid_.dim == 2)
            dst = std::size_t(i) * P + j;
          else
            dst = (std::size_t(i) * P + j) * P + k;
          fn(src++, dst);
        }
  }

  void build_spectrum() {
    const std::size_t P = static_cast<std::size_t>(padded_);
    fft::AlignedBuffer<double> kern(transform_->real_size());
    const auto offset = [&](std::size_t i) {
      return i < P / 2 ? int(i) : int(i) - int(P);
    };
    const std::size_t n1 = grid_.dim >= 2 ? P : 1;
    const std::size_t n2 = grid_.dim >= 3 ? P : 1;
    std::size_t idx = 0;
    for (std::size_t i = 0; i < P; ++i)
      for (std::size_t j = 0; j < n1; ++j)
        for (std::size_t k = 0; k < n2; ++k) {
          std::array<int, 3> o{offset(i), grid_.dim >= 2 ? offset(j) : 0,
                               grid_.dim >= 3 ? offset(k) : 0};
          kern[idx++] = weights_(o);
        }
    fft::AlignedBuffer<fft::Complex> spec(transform_->complex_size());
    transform_->forward(kern.data(), spec.data());
    // The padded kernel is even, so its spectrum is real.
    kernel_hat_.resize(spec.size());
    for (std::size_t i = 0; i < spec.size(); ++i)
      kernel_hat_[i] = spec[i][0];
  }

  Scratch acquire() const {
    std::lock_guard lock(pool_mutex_);
    if (!pool_.empty()) {
      Scratch s = std::move(pool_.back());
      pool_.pop_back();
      return s;
    }
    return Scratch{fft::AlignedBuffer<double>(transform_->real_size()),
                   fft::AlignedBuffer<fft::Complex>(transform_->complex_size())};
  }
  void release(Scratch s) const {
    std::lock_guard lock(pool_mutex_);
    pool_.push_back(std::move(s));
  }

  GridSpec grid_;
  double alpha_;
  SingularCell rule_;
  KernelWeights weights_;
  int padded_ = 0;
  std::shared_ptr<const fft::RealTransform> transform_;
  std::vector<double> kernel_hat_;
  mutable std::mutex pool_mutex_;
  mutable std::vector<Scratch> pool_;
};

inline std::shared_ptr<const RieszConvolver>
build_convolver(const GridSpec &grid, double alpha,
                SingularCell rule = SingularCell::corrected) {
  return std::make_shared<const RieszConvolver>(grid, alpha, rule);
}

inline ScalarField riesz_convolve(const RieszConvolver &c,
                                  const ScalarField &rho) {
  return c.convolve(rho);
}

/// Largest M the direct-sum oracle accepts for each dimension.
inline int oracle_cap(int dim) {
  switch (dim) {
  case 1: return 4096;
  case 2: return 32;
  default: return 16;
  }
}

/// Direct O(M^{2N}) double sum with the same quadrature weights as the fast
/// path. Ground truth for RieszConvolver.
inline ScalarField riesz_convolve_oracle(const GridSpec &grid, double alpha,
                                         const ScalarField &rho,
                                         SingularCell rule =
                                             SingularCell::corrected) {
  grid.validate();
  require(rho.grid() == grid, ErrorCode::GridMismatch,
          "density is not on the oracle's grid");
  require(grid.points_per_axis <= oracle_cap(grid.dim), ErrorCode::TooLarge,
          "direct-sum oracle is capped at M = " +
              std::to_string(oracle_cap(grid.dim)) + " for N = " +
              std::to_string(grid.dim));
  const KernelWeights w = kernel_weights(grid, alpha, rule);
  const int m = grid.points_per_axis;
  const int n1 = grid.dim >= 2 ? m : 1;
  const int n2 = grid.dim >= 3 ? m : 1;
  // Weight table over offsets in (-M, M)^N.
  const int span = 2 * m - 1;
  const int s1 = grid.dim >= 2 ? span : 1;
  const int s2 = grid.dim >= 3 ? span : 1;
  std::vector<double> table(std::size_t(span) * s1 * s2);
  for (int a = 0; a < span; ++a)
    for (int b = 0; b < s1; ++b)
      for (int c = 0; c < s2; ++c)
        table[(std::size_t(a) * s1 + b) * s2 + c] =
            w({a - (m - 1), grid.dim >= 2 ? b - (m - 1) : 0,
               grid.dim >= 3 ? c - (m - 1) : 0});
  const int off1 = grid.dim >= 2 ? m - 1 : 0;
  const int off2 = grid.dim >= 3 ? m - 1 : 0;
  ScalarField out(grid);
  std::size_t dst = 0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n1; ++j)
      for (int k = 0; k < n2; ++k) {
        double acc = 0.0;
        std::size_t src = 0;
        for (int a = 0; a < m; ++a)
          for (int b = 0; b < n1; ++b)
            for (int c = 0; c < n2; ++c) {
              const std::size_t t =
                  (std::size_t(i - a + m - 1) * s1 + (j - b + off1)) * s2 +
                  (k - c + off2);
              acc += table[t] * rho[src++];
            }
        out[dst++] = acc;
      }
  return out;
}

} // namespace choquard

#endif
