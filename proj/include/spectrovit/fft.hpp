#pragma once

// In-repo discrete Fourier transform: iterative radix-2 for power-of-two
// lengths, Bluestein's chirp-z algorithm for everything else.
//
// Convention: X[k] = sum_n x[n] exp(-2*pi*i*k*n/N), no scaling on the forward
// transform and 1/N on the inverse.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "spectrovit/errors.hpp"

namespace spectrovit {

using cdouble = std::complex<double>;

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Radix-2 Cooley-Tukey on a power-of-two buffer. `twiddles` holds
// exp(-2*pi*i*k/n) for k < n/2.
inline void radix2_inplace(std::span<cdouble> a, const std::vector<cdouble>& twiddles, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        cdouble w = twiddles[k * stride];
        if (inverse) w = std::conj(w);
        const cdouble u = a[i + k];
        const cdouble v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

inline std::vector<cdouble> make_twiddles(std::size_t n) {
  std::vector<cdouble> tw(n / 2);
  for (std::size_t k = 0; k < tw.size(); ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    tw[k] = {std::cos(angle), std::sin(angle)};
  }
  return tw;
}

}  // namespace detail

// Precomputed transform of a fixed length. Immutable after construction, so a
// single plan may be shared between threads.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n) {
    if (n == 0) fail(ErrorKind::Usage, "fft length must be >= 1");
    if (detail::is_pow2(n)) {
      twiddles_ = detail::make_twiddles(n);
      return;
    }
    // Bluestein: chirp w[k] = exp(-i*pi*k^2/n), convolution length m >= 2n-1.
    m_ = detail::next_pow2(2 * n - 1);
    twiddles_ = detail::make_twiddles(m_);
    chirp_.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      // k^2 mod 2n keeps the angle argument small for large k.
      const std::size_t k2 = (k * k) % (2 * n);
      const double angle = -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
      chirp_[k] = {std::cos(angle), std::sin(angle)};
    }
    kernel_fft_.assign(m_, cdouble{});
    kernel_fft_[0] = std::conj(chirp_[0]);
    for (std::size_t k = 1; k < n; ++k) {
      kernel_fft_[k] = std::conj(chirp_[k]);
      kernel_fft_[m_ - k] = std::conj(chirp_[k]);
    }
    detail::radix2_inplace(kernel_fft_, twiddles_, false);
  }

  std::size_t size() const { return n_; }

  // out may alias in.
  void forward(std::span<const cdouble> in, std::span<cdouble> out) const { run(in, out, false); }
  void inverse(std::span<const cdouble> in, std::span<cdouble> out) const {
    run(in, out, true);
    const double scale = 1.0 / static_cast<double>(n_);
    for (auto& v : out) v *= scale;
  }

  std::vector<cdouble> forward(std::span<const cdouble> in) const {
    std::vector<cdouble> out(n_);
    forward(in, out);
    return out;
  }

 private:
  void run(std::span<const cdouble> in, std::span<cdouble> out, bool inverse) const {
    if (in.size() != n_ || out.size() != n_) fail(ErrorKind::Usage, "fft buffer length does not match plan");
    if (m_ == 0) {
      if (in.data() != out.data()) std::copy(in.begin(), in.end(), out.begin());
      detail::radix2_inplace(out, twiddles_, inverse);
      return;
    }
    // The inverse uses the conjugation identity ifft(x) = conj(fft(conj(x))).
    std::vector<cdouble> work(m_, cdouble{});
    for (std::size_t k = 0; k < n_; ++k) {
      const cdouble x = inverse ? std::conj(in[k]) : in[k];
      work[k] = x * chirp_[k];
    }
    detail::radix2_inplace(work, twiddles_, false);
    for (std::size_t k = 0; k < m_; ++k) work[k] *= kernel_fft_[k];
    detail::radix2_inplace(work, twiddles_, true);
    const double scale = 1.0 / static_cast<double>(m_);
    for (std::size_t k = 0; k < n_; ++k) {
      const cdouble y = work[k] * scale * chirp_[k];
      out[k] = inverse ? std::conj(y) : y;
    }
  }

  std::size_t n_ = 0;
  std::size_t m_ = 0;  // Bluestein convolution length, 0 for radix-2 plans
  std::vector<cdouble> twiddles_;
  std::vector<cdouble> chirp_;
  std::vector<cdouble> kernel_fft_;
};

}  // namespace spectrovit
