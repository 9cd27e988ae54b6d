#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "ses/fft.hpp"
#include "ses/rng.hpp"

using namespace ses;
using cd = std::complex<double>;

namespace {

// Quadratic-time reference DFT.
std::vector<cd> naive_dft(const std::vector<cd>& x, bool inverse) {
  const std::size_t n = x.size();
  std::vector<cd> out(n);
  const double sign = inverse ? 2.0 : -2.0;
  for (std::size_t k = 0; k < n; ++k) {
    cd acc(0.0, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      double angle = sign * M_PI * static_cast<double>(k * j) /
                     static_cast<double>(n);
      acc += x[j] * cd(std::cos(angle), std::sin(angle));
    }
    out[k] = inverse ? acc / static_cast<double>(n) : acc;
  }
  return out;
}

std::vector<cd> random_signal(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<cd> x(n);
  for (auto& v : x) v = cd(rng.next_gaussian(), rng.next_gaussian());
  return x;
}

double max_err(const std::vector<cd>& a, const std::vector<cd>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("fft of a delta is flat and fft of ones is a scaled delta") {
  std::vector<cd> delta(8, cd(0.0, 0.0));
  delta[0] = cd(1.0, 0.0);
  fft(delta, false);
  for (const cd& v : delta) CHECK(std::abs(v - cd(1.0, 0.0)) < 1e-14);

  std::vector<cd> ones(8, cd(1.0, 0.0));
  fft(ones, false);
  CHECK(std::abs(ones[0] - cd(8.0, 0.0)) < 1e-13);
  for (std::size_t i = 1; i < 8; ++i) CHECK(std::abs(ones[i]) < 1e-13);
}

TEST_CASE("fft matches the quadratic DFT") {
  for (std::size_t n : {2u, 4u, 16u, 64u}) {
    std::vector<cd> x = random_signal(n, 10 + n);
    std::vector<cd> expected = naive_dft(x, false);
    std::vector<cd> got = x;
    fft(got, false);
    CHECK(max_err(got, expected) < 1e-10);

    std::vector<cd> inv = naive_dft(x, true);
    std::vector<cd> got_inv = x;
    fft(got_inv, true);
    CHECK(max_err(got_inv, inv) < 1e-10);
  }
}

TEST_CASE("inverse fft undoes the forward transform") {
  std::vector<cd> x = random_signal(128, 3);
  std::vector<cd> y = x;
  fft(y, false);
  fft(y, true);
  CHECK(max_err(x, y) < 1e-12);
}

TEST_CASE("fft rejects non-power-of-two lengths") {
  std::vector<cd> x(12, cd(1.0, 0.0));
  CHECK_THROWS_AS(fft(x, false), ConfigError);
}

TEST_CASE("fft_convolve computes circular convolution") {
  const std::size_t n = 16;
  std::vector<cd> x = random_signal(n, 5);
  std::vector<cd> y = random_signal(n, 6);
  std::vector<cd> expected(n, cd(0.0, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) expected[(i + j) % n] += x[i] * y[j];
  std::vector<cd> got = fft_convolve(x, y);
  CHECK(max_err(got, expected) < 1e-10);

  std::vector<cd> shorter(8, cd(0.0, 0.0));
  CHECK_THROWS_AS(fft_convolve(x, shorter), ConfigError);
}

TEST_CASE("operation counter matches the butterfly tally") {
  // Forward transform of length n performs (n/2) log2(n) butterflies at 10
  // operations each; the inverse adds 2n scaling operations.
  for (std::size_t n : {8u, 64u, 256u}) {
    std::vector<cd> x = random_signal(n, 1);
    std::uint64_t ops = 0;
    fft(x, false, &ops);
    const std::uint64_t log2n =
        static_cast<std::uint64_t>(std::lround(std::log2(n)));
    CHECK(ops == 10 * (n / 2) * log2n);
    std::uint64_t inv_ops = 0;
    fft(x, true, &inv_ops);
    CHECK(inv_ops == 10 * (n / 2) * log2n + 2 * n);
  }
}

TEST_CASE("fft cost is sub-quadratic") {
  std::vector<cd> big = random_signal(4096, 2);
  std::uint64_t ops = 0;
  fft(big, false, &ops);
  // n log n scaling with a generous constant, far below n^2 / 2.
  CHECK(ops <= 12ull * 4096ull * 12ull);
  CHECK(ops < 4096ull * 4096ull / 2);
}
