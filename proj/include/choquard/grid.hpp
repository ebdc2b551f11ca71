#ifndef CHOQUARD_GRID_HPP
#define CHOQUARD_GRID_HPP

// Uniform Cartesian discretization of R^N (N <= 3) on the box [-L, L)^N.
//
// Point i along an axis sits at x_i = -L + i h with h = 2L / M, so the origin
// is the grid point i = M/2. Integrals use the midpoint rule (weight h^N per
// point). Derivatives are spectral on the periodic box; fields are expected
// to have decayed at the boundary.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "error.hpp"
#include "fft.hpp"

namespace choquard {

using Point = std::array<double, 3>;

struct GridSpec {
  int dim = 3;
  double half_extent = 12.0;
  int points_per_axis = 64;

  double spacing() const { return 2.0 * half_extent / points_per_axis; }
  double cell_volume() const { return std::pow(spacing(), dim); }
  std::size_t size() const {
    std::size_t n = 1;
    for (int a = 0; a < dim; ++a)
      n *= static_cast<std::size_t>(points_per_axis);
    return n;
  }
  double coordinate(int i) const { return -half_extent + i * spacing(); }
  std::size_t stride(int axis) const {
    std::size_t s = 1;
    for (int a = axis + 1; a < dim; ++a)
      s *= static_cast<std::size_t>(points_per_axis);
    return s;
  }

  void validate() const {
    require(dim >= 1 && dim <= 3, ErrorCode::RangeError,
            "grid.dim must be 1, 2 or 3");
    require(half_extent > 0.0 && std::isfinite(half_extent),
            ErrorCode::RangeError, "grid.half_extent must be positive");
    require(points_per_axis >= 8 && points_per_axis % 2 == 0,
            ErrorCode::RangeError,
            "grid.points_per_axis must be an even integer >= 8");
    require(std::pow(static_cast<double>(points_per_axis), dim) <= 1 << 27,
            ErrorCode::RangeError, "grid has too many points");
  }

  friend bool operator==(const GridSpec &, const GridSpec &) = default;
};

/// Calls fn(flat_index, x) for every grid point in row-major order.
template <typename Fn> void for_each_point(const GridSpec &g, Fn &&fn) {
  const int m = g.points_per_axis;
  const int n1 = g.dim >= 2 ? m : 1;
  const int n2 = g.dim >= 3 ? m : 1;
  std::size_t idx = 0;
  Point x{0.0, 0.0, 0.0};
  for (int i = 0; i < m; ++i) {
    x[0] = g.coordinate(i);
    for (int j = 0; j < n1; ++j) {
      if (g.dim >= 2)
        x[1] = g.coordinate(j);
      for (int k = 0; k < n2; ++k) {
        if (g.dim >= 3)
          x[2] = g.coordinate(k);
        fn(idx++, static_cast<const Point &>(x));
      }
    }
  }
}

/// Integer squared distance to the origin, in units of h^2, for every point.
inline std::vector<std::int64_t> index_radius_squared(const GridSpec &g) {
  std::vector<std::int64_t> r2(g.size());
  const int m = g.points_per_axis;
  const int half = m / 2;
  const int n1 = g.dim >= 2 ? m : 1;
  const int n2 = g.dim >= 3 ? m : 1;
  std::size_t idx = 0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n1; ++j)
      for (int k = 0; k < n2; ++k) {
        std::int64_t s = std::int64_t(i - half) * (i - half);
        if (g.dim >= 2)
          s += std::int64_t(j - half) * (j - half);
        if (g.dim >= 3)
          s += std::int64_t(k - half) * (k - half);
        r2[idx++] = s;
      }
  return r2;
}

inline double norm(const Point &x) {
  return std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
}

class ScalarField {
public:
  explicit ScalarField(const GridSpec &grid)
      : grid_(grid), values_(grid.size(), 0.0) {}
  ScalarField(const GridSpec &grid, std::vector<double> values)
      : grid_(grid), values_(std::move(values)) {
    require(values_.size() == grid_.size(), ErrorCode::GridMismatch,
            "value count does not match grid size");
  }

  template <typename Fn>
  static ScalarField from_function(const GridSpec &grid, Fn &&fn) {
    ScalarField f(grid);
    for_each_point(grid, [&](std::size_t i, const Point &x) {
      f.values_[i] = fn(x);
    });
    return f;
  }

  /// Samples a radial profile f(|x|).
  template <typename Fn>
  static ScalarField from_radial(const GridSpec &grid, Fn &&fn) {
    return from_function(grid, [&](const Point &x) { return fn(norm(x)); });
  }

  const GridSpec &grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept {
    mass_.reset();
    return values_;
  }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  double &operator[](std::size_t i) noexcept {
    mass_.reset();
    return values_[i];
  }
  double *data() noexcept {
    mass_.reset();
    return values_.data();
  }
  const double *data() const noexcept { return values_.data(); }

  /// Discrete L^2 mass h^N sum f_i^2, cached until the next mutable access.
  double mass() const {
    if (!mass_) {
      double s = 0.0;
      for (double v : values_)
        s += v * v;
      mass_ = s * grid_.cell_volume();
    }
    return *mass_;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : values_)
      m = std::max(m, std::abs(v));
    return m;
  }
  double min_value() const {
    return *std::min_element(values_.begin(), values_.end());
  }
  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  ScalarField &operator*=(double c) {
    for (double &v : values_)
      v *= c;
    mass_.reset();
    return *this;
  }
  ScalarField &operator+=(const ScalarField &o) {
    check_same(o);
    for (std::size_t i = 0; i < values_.size(); ++i)
      values_[i] += o.values_[i];
    mass_.reset();
    return *this;
  }
  ScalarField &operator-=(const ScalarField &o) {
    check_same(o);
    for (std::size_t i = 0; i < values_.size(); ++i)
      values_[i] -= o.values_[i];
    mass_.reset();
    return *this;
  }
  /// this += a * o
  ScalarField &axpy(double a, const ScalarField &o) {
    check_same(o);
    for (std::size_t i = 0; i < values_.size(); ++i)
      values_[i] += a * o.values_[i];
    mass_.reset();
    return *this;
  }

  friend ScalarField operator*(double c, ScalarField f) { return f *= c; }
  friend ScalarField operator+(ScalarField a, const ScalarField &b) {
    return a += b;
  }
  friend ScalarField operator-(ScalarField a, const ScalarField &b) {
    return a -= b;
  }

private:
  void check_same(const ScalarField &o) const {
    require(grid_ == o.grid_, ErrorCode::GridMismatch,
            "fields live on different grids");
  }

  GridSpec grid_;
  std::vector<double> values_;
  mutable std::optional<double> mass_;
};

inline void require_same_grid(const ScalarField &a, const ScalarField &b) {
  require(a.grid() == b.grid(), ErrorCode::GridMismatch,
          "fields live on different grids");
}

/// A point of S_xi x S_eta: two components on one grid.
struct StatePair {
  ScalarField u;
  ScalarField v;

  StatePair(ScalarField u_, ScalarField v_) : u(std::move(u_)), v(std::move(v_)) {
    require_same_grid(u, v);
  }
  explicit StatePair(const GridSpec &g) : u(g), v(g) {}
  const GridSpec &grid() const noexcept { return u.grid(); }
};

inline double dot(const ScalarField &f, const ScalarField &g) {
  require_same_grid(f, g);
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i)
    s += f[i] * g[i];
  return s * f.grid().cell_volume();
}

/// Weighted inner product h^N sum w f g.
inline double weighted_dot(const ScalarField &w, const ScalarField &f,
                           const ScalarField &g) {
  require_same_grid(f, g);
  require_same_grid(w, f);
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i)
    s += w[i] * f[i] * g[i];
  return s * f.grid().cell_volume();
}

inline double l2_norm_sq(const ScalarField &f) { return f.mass(); }

inline double l2_norm(const ScalarField &f) { return std::sqrt(f.mass()); }

inline ScalarField abs(ScalarField f) {
  for (double &v : f.values())
    v = std::abs(v);
  return f;
}

// ---------------------------------------------------------------------------
// Spectral operators on the periodic box

namespace detail {

/// Wave-number tables for one grid; shared by all fields on that grid.
class SpectralGrid {
public:
  explicit SpectralGrid(const GridSpec &g) : grid_(g) {
    std::vector<int> shape(g.dim, g.points_per_axis);
    transform_ = fft::real_transform(shape);
    const int m = g.points_per_axis;
    const int mh = m / 2 + 1;
    wave_.resize(m);
    for (int i = 0; i < m; ++i) {
      const int j = i <= m / 2 ? i : i - m;
      wave_[i] = std::numbers::pi * j / g.half_extent;
    }
    const std::size_t nc = transform_->complex_size();
    k2_.resize(nc);
    parseval_.resize(nc);
    axis_index_.resize(nc);
    std::size_t idx = 0;
    const int n0 = g.dim >= 2 ? m : 1;
    const int n1 = g.dim >= 3 ? m : 1;
    for (int a = 0; a < n0; ++a)
      for (int b = 0; b < n1; ++b)
        for (int c = 0; c < mh; ++c) {
          std::array<int, 3> ix{0, 0, 0};
          if (g.dim == 1)
            ix = {c, 0, 0};
          else if (g.dim == 2)
            ix = {a, c, 0};
          else
            ix = {a, b, c};
          double k2 = 0.0;
          for (int d = 0; d < g.dim; ++d)
            k2 += wave_[ix[d]] * wave_[ix[d]];
          k2_[idx] = k2;
          parseval_[idx] = (c == 0 || c == m / 2) ? 1.0 : 2.0;
          axis_index_[idx] = ix;
          ++idx;
        }
  }

  const GridSpec &grid() const { return grid_; }
  const fft::RealTransform &transform() const { return *transform_; }
  std::span<const double> k2() const { return k2_; }
  std::span<const double> parseval_weight() const { return parseval_; }
  /// Wave number of a spectral index along `axis`; zero at Nyquist, which
  /// has no well-defined odd derivative.
  double odd_wave(std::size_t spectral_index, int axis) const {
    const int i = axis_index_[spectral_index][axis];
    if (i == grid_.points_per_axis / 2)
      return 0.0;
    return wave_[i];
  }

private:
  GridSpec grid_;
  std::shared_ptr<const fft::RealTransform> transform_;
  std::vector<double> wave_;
  std::vector<double> k2_;
  std::vector<double> parseval_;
  std::vector<std::array<int, 3>> axis_index_;
};

inline std::shared_ptr<const SpectralGrid> spectral(const GridSpec &g) {
  static std::mutex m;
  static std::map<std::tuple<int, double, int>,
                  std::shared_ptr<const SpectralGrid>>
      cache;
  std::lock_guard lock(m);
  auto &slot = cache[{g.dim, g.half_extent, g.points_per_axis}];
  if (!slot)
    slot = std::make_shared<const SpectralGrid>(g);
  return slot;
}

struct Spectrum {
  std::shared_ptr<const SpectralGrid> sg;
  fft::AlignedBuffer<fft::Complex> coeffs;
};

inline Spectrum forward(const ScalarField &f) {
  auto sg = spectral(f.grid());
  const auto &t = sg->transform();
  fft::AlignedBuffer<double> in(t.real_size());
  std::copy(f.values().begin(), f.values().end(), in.data());
  fft::AlignedBuffer<fft::Complex> out(t.complex_size());
  t.forward(in.data(), out.data());
  return {std::move(sg), std::move(out)};
}

inline ScalarField backward(Spectrum spec) {
  const auto &t = spec.sg->transform();
  fft::AlignedBuffer<double> out(t.real_size());
  t.backward(spec.coeffs.data(), out.data());
  const double scale = 1.0 / static_cast<double>(t.real_size());
  std::vector<double> v(out.data(), out.data() + t.real_size());
  for (double &x : v)
    x *= scale;
  return ScalarField(spec.sg->grid(), std::move(v));
}

template <typename Multiplier>
ScalarField apply_real_multiplier(const ScalarField &f, Multiplier &&mult) {
  auto spec = forward(f);
  const auto k2 = spec.sg->k2();
  for (std::size_t i = 0; i < k2.size(); ++i) {
    const double w = mult(k2[i]);
    spec.coeffs[i][0] *= w;
    spec.coeffs[i][1] *= w;
  }
  return backward(std::move(spec));
}

} // namespace detail

/// ||grad f||_2^2 evaluated with the Fourier multiplier |k|^2.
inline double grad_norm_sq(const ScalarField &f) {
  const auto spec = detail::forward(f);
  const auto k2 = spec.sg->k2();
  const auto w = spec.sg->parseval_weight();
  double s = 0.0;
  for (std::size_t i = 0; i < k2.size(); ++i) {
    const double a = spec.coeffs[i][0];
    const double b = spec.coeffs[i][1];
    s += w[i] * k2[i] * (a * a + b * b);
  }
  const double n = static_cast<double>(f.size());
  return s * f.grid().cell_volume() / n;
}

/// -Delta f, spectrally. Consistent with grad_norm_sq: <f, -Delta f> equals
/// grad_norm_sq(f) to rounding.
inline ScalarField neg_laplacian(const ScalarField &f) {
  return detail::apply_real_multiplier(f, [](double k2) { return k2; });
}

/// (shift - Delta)^{-1} f; shift must be positive.
inline ScalarField inverse_shifted_laplacian(const ScalarField &f,
                                             double shift) {
  require(shift > 0.0, ErrorCode::InvalidArgument,
          "preconditioner shift must be positive");
  return detail::apply_real_multiplier(
      f, [shift](double k2) { return 1.0 / (shift + k2); });
}

/// x . grad f with spectral partial derivatives.
inline ScalarField x_dot_grad(const ScalarField &f) {
  const GridSpec &g = f.grid();
  const auto base = detail::forward(f);
  ScalarField out(g);
  for (int axis = 0; axis < g.dim; ++axis) {
    detail::Spectrum d{base.sg, fft::AlignedBuffer<fft::Complex>(
                                    base.coeffs.size())};
    for (std::size_t i = 0; i < base.coeffs.size(); ++i) {
      const double k = base.sg->odd_wave(i, axis);
      // i k (a + i b) = -k b + i k a
      d.coeffs[i][0] = -k * base.coeffs[i][1];
      d.coeffs[i][1] = k * base.coeffs[i][0];
    }
    const ScalarField deriv = detail::backward(std::move(d));
    for_each_point(g, [&](std::size_t idx, const Point &x) {
      out[idx] += x[axis] * deriv[idx];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dilation s * f = e^{N s / 2} f(e^s x)

enum class Interpolation { spectral, linear };

namespace detail {

/// Row j maps grid samples to the value at e^s x_j along one axis; rows whose
/// target leaves the box are zero (fields vanish outside).
inline std::vector<double> dilation_matrix(const GridSpec &g, double s,
                                           Interpolation method) {
  const int m = g.points_per_axis;
  const double h = g.spacing();
  const double L = g.half_extent;
  const double scale = std::exp(s);
  std::vector<double> t(static_cast<std::size_t>(m) * m, 0.0);
  for (int j = 0; j < m; ++j) {
    const double y = scale * g.coordinate(j);
    if (y < -L || y > L - h)
      continue;
    double *row = &t[static_cast<std::size_t>(j) * m];
    if (method == Interpolation::linear) {
      const double pos = (y + L) / h;
      int i0 = static_cast<int>(std::floor(pos));
      i0 = std::clamp(i0, 0, m - 2);
      const double w = pos - i0;
      row[i0] += 1.0 - w;
      row[i0 + 1] += w;
    } else {
      // Trigonometric interpolant with the Nyquist mode split evenly.
      for (int l = 0; l < m; ++l) {
        const double d = y - g.coordinate(l);
        double acc = 1.0;
        for (int q = 1; q < m / 2; ++q)
          acc += 2.0 * std::cos(std::numbers::pi * q * d / L);
        acc += std::cos(std::numbers::pi * (m / 2) * d / L);
        row[l] = acc / m;
      }
    }
  }
  return t;
}

inline void apply_along_axis(const GridSpec &g, std::span<const double> mat,
                             std::vector<double> &data, int axis) {
  const int m = g.points_per_axis;
  const std::size_t stride = g.stride(axis);
  const std::size_t outer = g.size() / (stride * m);
  std::vector<double> line(m), res(m);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < stride; ++in) {
      const std::size_t base = o * stride * m + in;
      for (int l = 0; l < m; ++l)
        line[l] = data[base + l * stride];
      for (int j = 0; j < m; ++j) {
        const double *row = &mat[static_cast<std::size_t>(j) * m];
        double acc = 0.0;
        for (int l = 0; l < m; ++l)
          acc += row[l] * line[l];
        res[j] = acc;
      }
      for (int j = 0; j < m; ++j)
        data[base + j * stride] = res[j];
    }
}

} // namespace detail

/// s * f by interpolation, without the mass correction.
inline ScalarField dilate_raw(const ScalarField &f, double s,
                              Interpolation method = Interpolation::spectral) {
  const GridSpec &g = f.grid();
  if (s == 0.0)
    return f;
  const auto mat = detail::dilation_matrix(g, s, method);
  std::vector<double> data(f.values().begin(), f.values().end());
  for (int axis = 0; axis < g.dim; ++axis)
    detail::apply_along_axis(g, mat, data, axis);
  const double amp = std::exp(0.5 * g.dim * s);
  for (double &x : data)
    x *= amp;
  return ScalarField(g, std::move(data));
}

/// s * f with the L^2 mass restored exactly. Throws DilationOutOfBox when
/// more than 1% of the mass is lost to the box edge or to interpolation.
inline ScalarField dilate(const ScalarField &f, double s,
                          Interpolation method = Interpolation::spectral) {
  if (s == 0.0)
    return f;
  ScalarField out = dilate_raw(f, s, method);
  const double m0 = f.mass();
  if (m0 == 0.0)
    return out;
  const double m1 = out.mass();
  require(m1 > 0.0 && std::abs(1.0 - m1 / m0) <= 0.01,
          ErrorCode::DilationOutOfBox,
          "dilation by s = " + std::to_string(s) + " changed the mass by " +
              std::to_string(100.0 * std::abs(1.0 - m1 / m0)) + "%");
  out *= std::sqrt(m0 / m1);
  return out;
}

inline StatePair dilate(const StatePair &st, double s,
                        Interpolation method = Interpolation::spectral) {
  return StatePair(dilate(st.u, s, method), dilate(st.v, s, method));
}

// ---------------------------------------------------------------------------
// Radial structure

/// Schwarz symmetrization on the grid: the values, sorted descending, refill
/// grid points in order of increasing distance to the origin (ties by index).
inline ScalarField rearrange_radial_decreasing(const ScalarField &f) {
  const GridSpec &g = f.grid();
  require(f.min_value() >= 0.0, ErrorCode::NegativeInput,
          "rearrangement needs a nonnegative field (take |f| first)");
  const auto r2 = index_radius_squared(g);
  std::vector<std::size_t> order(g.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return r2[a] < r2[b]; });
  std::vector<double> vals(f.values().begin(), f.values().end());
  std::sort(vals.begin(), vals.end(), std::greater<>());
  ScalarField out(g);
  for (std::size_t k = 0; k < order.size(); ++k)
    out[order[k]] = vals[k];
  return out;
}

struct RadialShell {
  double radius;
  double mean;
  double min;
  double max;
  std::size_t count;
};

/// Per-shell statistics for shells fully inside the box (radius < L).
inline std::vector<RadialShell> radial_shells(const ScalarField &f) {
  const GridSpec &g = f.grid();
  const auto r2 = index_radius_squared(g);
  const std::int64_t half = g.points_per_axis / 2;
  std::map<std::int64_t, RadialShell> shells;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (r2[i] >= half * half)
      continue;
    auto [it, fresh] = shells.try_emplace(
        r2[i], RadialShell{std::sqrt(double(r2[i])) * g.spacing(), 0.0, f[i],
                           f[i], 0});
    auto &sh = it->second;
    sh.mean += f[i];
    sh.min = std::min(sh.min, f[i]);
    sh.max = std::max(sh.max, f[i]);
    ++sh.count;
  }
  std::vector<RadialShell> out;
  out.reserve(shells.size());
  for (auto &[key, sh] : shells) {
    sh.mean /= static_cast<double>(sh.count);
    out.push_back(sh);
  }
  return out;
}

/// True when shell means never increase by more than tol * max|f|, looking
/// only at shells of radius <= max_radius.
inline bool is_radially_nonincreasing(
    const ScalarField &f, double tol,
    double max_radius = std::numeric_limits<double>::infinity()) {
  const auto shells = radial_shells(f);
  const double slack = tol * f.max_abs();
  for (std::size_t k = 1; k < shells.size() && shells[k].radius <= max_radius; ++k)
    if (shells[k].mean > shells[k - 1].mean + slack)
      return false;
  return true;
}

/// Largest relative spread (max - min) / max|f| within any shell.
inline double radial_asymmetry(const ScalarField &f) {
  const double scale = f.max_abs();
  if (scale == 0.0)
    return 0.0;
  double worst = 0.0;
  for (const auto &sh : radial_shells(f))
    worst = std::max(worst, (sh.max - sh.min) / scale);
  return worst;
}

/// Samples along the positive first axis from the origin: (r, f(r)).
inline std::vector<std::pair<double, double>>
axis_profile(const ScalarField &f) {
  const GridSpec &g = f.grid();
  const int m = g.points_per_axis;
  std::vector<std::pair<double, double>> out;
  for (int i = m / 2; i < m; ++i) {
    std::size_t idx = static_cast<std::size_t>(i) * g.stride(0);
    for (int a = 1; a < g.dim; ++a)
      idx += static_cast<std::size_t>(m / 2) * g.stride(a);
    out.emplace_back(g.coordinate(i), f[idx]);
  }
  return out;
}

} // namespace choquard

#endif
