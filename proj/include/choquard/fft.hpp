#ifndef CHOQUARD_FFT_HPP
#define CHOQUARD_FFT_HPP

// Thin RAII layer over FFTW's real-to-complex transforms.
//
// Plans are created once per shape, under a global lock (FFTW's planner is
// not reentrant), and executed through the new-array interface so that any
// number of threads may share one plan. FFTW_ESTIMATE is used on purpose:
// measured plans can differ between runs and break bitwise reproducibility.

#include <fftw3.h>

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <vector>

namespace choquard::fft {

namespace detail {
inline std::mutex &planner_mutex() {
  static std::mutex m;
  return m;
}
struct FftwFree {
  void operator()(void *p) const noexcept { fftw_free(p); }
};
} // namespace detail

/// SIMD-aligned heap array, as required by plans executed on new arrays.
template <typename T> class AlignedBuffer {
public:
  AlignedBuffer() = default;
  explicit AlignedBuffer(std::size_t n)
      : data_(static_cast<T *>(fftw_malloc(sizeof(T) * (n == 0 ? 1 : n)))),
        size_(n) {
    if (!data_)
      throw std::bad_alloc();
  }
  T *data() noexcept { return data_.get(); }
  const T *data() const noexcept { return data_.get(); }
  std::size_t size() const noexcept { return size_; }
  T &operator[](std::size_t i) noexcept { return data_.get()[i]; }
  const T &operator[](std::size_t i) const noexcept { return data_.get()[i]; }

private:
  std::unique_ptr<T, detail::FftwFree> data_;
  std::size_t size_ = 0;
};

using Complex = fftw_complex;

/// Forward (r2c) and backward (c2r) plans for one row-major real shape.
/// The last axis is halved in the spectrum: shape[0..d-2] x (shape[d-1]/2+1).
class RealTransform {
public:
  explicit RealTransform(std::vector<int> shape) : shape_(std::move(shape)) {
    real_size_ = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1},
                                 std::multiplies<>());
    complex_size_ = real_size_ / static_cast<std::size_t>(shape_.back()) *
                    static_cast<std::size_t>(shape_.back() / 2 + 1);
    AlignedBuffer<double> r(real_size_);
    AlignedBuffer<Complex> c(complex_size_);
    std::lock_guard lock(detail::planner_mutex());
    const int rank = static_cast<int>(shape_.size());
    forward_ = fftw_plan_dft_r2c(rank, shape_.data(), r.data(), c.data(),
                                 FFTW_ESTIMATE);
    backward_ = fftw_plan_dft_c2r(rank, shape_.data(), c.data(), r.data(),
                                  FFTW_ESTIMATE);
  }
  RealTransform(const RealTransform &) = delete;
  RealTransform &operator=(const RealTransform &) = delete;
  ~RealTransform() {
    std::lock_guard lock(detail::planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
  }

  const std::vector<int> &shape() const noexcept { return shape_; }
  std::size_t real_size() const noexcept { return real_size_; }
  std::size_t complex_size() const noexcept { return complex_size_; }

  void forward(double *in, Complex *out) const {
    fftw_execute_dft_r2c(forward_, in, out);
  }
  /// Unnormalized; destroys `in`.
  void backward(Complex *in, double *out) const {
    fftw_execute_dft_c2r(backward_, in, out);
  }

private:
  std::vector<int> shape_;
  std::size_t real_size_ = 0;
  std::size_t complex_size_ = 0;
  fftw_plan forward_ = nullptr;
  fftw_plan backward_ = nullptr;
};

/// Process-wide cache; plans live until exit.
inline std::shared_ptr<const RealTransform>
real_transform(const std::vector<int> &shape) {
  static std::mutex m;
  static std::map<std::vector<int>, std::shared_ptr<const RealTransform>> cache;
  std::lock_guard lock(m);
  auto &slot = cache[shape];
  if (!slot)
    slot = std::make_shared<const RealTransform>(shape);
  return slot;
}

} // namespace choquard::fft

#endif
