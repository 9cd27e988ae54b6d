#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Core>

namespace ses {

// Stateless 64-bit mixer (splitmix64 finalizer).  Used both as the stream
// generator below and to derive independent child seeds from (seed, index)
// pairs without any shared mutable state.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ull;

// Child seed for a (parent, index) pair.  Every per-iteration, per-row and
// per-evaluation stream in the library is derived through this function, so
// results are reproducible across platforms and across worker layouts.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return mix64(seed + kGoldenGamma * (index + 1));
}

// Iteration seed used by the trainer and by distributed workers.
// derive_iteration_seed(0, 0) == 0xe220a8397b1dcdaf, frozen in the tests.
constexpr std::uint64_t derive_iteration_seed(std::uint64_t master_seed,
                                              std::uint64_t iteration) {
  return derive_seed(master_seed, iteration);
}

// Deterministic splitmix64 stream.  Not std::mt19937 + std::normal_distribution
// on purpose: the standard distributions are implementation-defined, and the
// distributed protocol needs bit-identical draws everywhere.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += kGoldenGamma;
    return mix64(state_);
  }

  // Uniform on the open interval (0, 1); never returns 0 or 1.
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller.  Draws are generated in pairs; the spare
  // is cached so consecutive calls consume the stream deterministically.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = next_uniform();
    double u2 = next_uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * M_PI * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

  double next_rademacher() { return (next_u64() >> 63) ? 1.0 : -1.0; }

  Eigen::VectorXd gaussian_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = next_gaussian();
    return v;
  }

private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Norm of a fresh standard Gaussian vector in dimension d (a chi_d draw).
inline double chi_length(Rng& rng, Eigen::Index d) {
  double sq = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    double g = rng.next_gaussian();
    sq += g * g;
  }
  return std::sqrt(sq);
}

}  // namespace ses
