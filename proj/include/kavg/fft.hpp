#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

namespace kavg::fft {

namespace detail {
// FFTW's planner is not reentrant.
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
}  // namespace detail

/// Real-to-complex / complex-to-real transform pair of one length with owned buffers.
/// Unnormalized: backward(forward(x)) == n * x.
class RealTransform {
 public:
  explicit RealTransform(std::size_t n)
      : n_(n),
        real_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        spectrum_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    std::lock_guard lock(detail::planner_mutex());
    forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), real_.get(), spectrum_.get(), FFTW_ESTIMATE);
    backward_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), spectrum_.get(), real_.get(), FFTW_ESTIMATE);
  }

  RealTransform(const RealTransform&) = delete;
  RealTransform& operator=(const RealTransform&) = delete;

  ~RealTransform() {
    std::lock_guard lock(detail::planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
  }

  std::size_t size() const { return n_; }
  std::size_t spectrum_size() const { return n_ / 2 + 1; }

  std::span<double> real() { return {real_.get(), n_}; }
  std::span<std::complex<double>> spectrum() {
    return {reinterpret_cast<std::complex<double>*>(spectrum_.get()), spectrum_size()};
  }

  void forward() { fftw_execute(forward_); }
  /// Note: c2r destroys the spectrum buffer.
  void backward() { fftw_execute(backward_); }

 private:
  std::size_t n_;
  std::unique_ptr<double, detail::FftwFree> real_;
  std::unique_ptr<fftw_complex, detail::FftwFree> spectrum_;
  fftw_plan forward_{};
  fftw_plan backward_{};
};

/// Smallest 2^a 3^b 5^c 7^d >= n; FFTW is fast on these lengths.
inline std::size_t good_size(std::size_t n) {
  for (std::size_t m = n;; ++m) {
    std::size_t r = m;
    for (std::size_t p : {2u, 3u, 5u, 7u})
      while (r % p == 0) r /= p;
    if (r == 1) return m;
  }
}

}  // namespace kavg::fft
