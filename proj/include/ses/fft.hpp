#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ses/errors.hpp"
#include "ses/exploration.hpp"

namespace ses {

// Iterative radix-2 complex FFT, in place.  The optional counter accumulates
// an arithmetic-operation tally (used by the sub-quadratic cost assertions);
// each butterfly counts as 10 real operations and each final inverse scaling
// as 2 per element.
inline void fft(std::vector<std::complex<double>>& a, bool inverse,
                std::uint64_t* op_counter = nullptr) {
  const std::size_t n = a.size();
  if (!is_pow2(static_cast<Eigen::Index>(n)))
    throw ConfigError("fft: length must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(angle), std::sin(angle));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> t = a[i + j + len / 2] * w;
        a[i + j] = u + t;
        a[i + j + len / 2] = u - t;
        w *= wlen;
        if (op_counter) *op_counter += 10;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
    if (op_counter) *op_counter += 2 * n;
  }
}

// Circular convolution via three FFTs; both inputs are zero-padded to the
// same power-of-two length before the call.
inline std::vector<std::complex<double>> fft_convolve(
    std::vector<std::complex<double>> x, std::vector<std::complex<double>> y,
    std::uint64_t* op_counter = nullptr) {
  if (x.size() != y.size())
    throw ConfigError("fft_convolve: length mismatch");
  fft(x, false, op_counter);
  fft(y, false, op_counter);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] *= y[i];
    if (op_counter) *op_counter += 6;
  }
  fft(x, true, op_counter);
  return x;
}

}  // namespace ses
