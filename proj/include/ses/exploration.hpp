#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ses/errors.hpp"
#include "ses/rng.hpp"

namespace ses {

inline Eigen::Index next_pow2(Eigen::Index n) {
  Eigen::Index p = 1;
  while (p < n) p <<= 1;
  return p;
}

inline bool is_pow2(Eigen::Index n) { return n >= 1 && (n & (n - 1)) == 0; }

// In-place Walsh-Hadamard transform for H1 = [[-1, 1], [1, 1]], i.e. the
// butterfly (a, b) -> (b - a, a + b).  The full transform equals the Kronecker
// power H1^{(x)l} with the leading factor acting on the highest-order bit;
// H is symmetric and H^2 = n I.  With +-1 inputs the arithmetic is exact.
template <typename Scalar>
void fwht(Scalar* data, Eigen::Index n) {
  if (!is_pow2(n)) throw ConfigError("fwht: length must be a power of two");
  for (Eigen::Index len = 1; len < n; len <<= 1) {
    for (Eigen::Index i = 0; i < n; i += len << 1) {
      for (Eigen::Index j = i; j < i + len; ++j) {
        Scalar a = data[j];
        Scalar b = data[j + len];
        data[j] = b - a;
        data[j + len] = a + b;
      }
    }
  }
}

template <typename Derived>
void fwht(Eigen::MatrixBase<Derived>& v) {
  static_assert(Derived::ColsAtCompileTime == 1,
                "fwht operates on column vectors");
  fwht(v.derived().data(), v.size());
}

// ---------------------------------------------------------------------------
// Inverse normal CDF: rational minimax approximation followed by one Newton
// step through the machine erfc, giving absolute error well below 1e-8.

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

inline double norm_pdf(double x) {
  return 0.3989422804014326779 * std::exp(-0.5 * x * x);
}

inline double inv_norm_cdf(double u) {
  if (!(u > 0.0 && u < 1.0))
    throw NumericError("inv_norm_cdf: argument must lie strictly in (0,1)");

  static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                              -2.759285104469687e+02, 1.383577518672690e+02,
                              -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                              -1.556989798598866e+02, 6.680131188771972e+01,
                              -1.328068155288572e+01};
  static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                              -2.400758277161838e+00, -2.549732539343734e+00,
                              4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;

  double x;
  if (u < plow) {
    double q = std::sqrt(-2.0 * std::log(u));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (u <= 1.0 - plow) {
    double q = u - 0.5;
    double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log1p(-u));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  double p = norm_pdf(x);
  if (p > 1e-300) x -= (norm_cdf(x) - u) / p;
  return x;
}

// ---------------------------------------------------------------------------
// Generalized Halton sequence with leap and skip offsets.

struct QmcParams {
  int leap = 700;
  int skip = 1000;
};

inline std::vector<std::uint32_t> first_primes(Eigen::Index n) {
  std::vector<std::uint32_t> primes;
  primes.reserve(static_cast<std::size_t>(n));
  std::uint32_t candidate = 2;
  while (primes.size() < static_cast<std::size_t>(n)) {
    bool prime = true;
    for (std::uint32_t p : primes) {
      if (p * p > candidate) break;
      if (candidate % p == 0) {
        prime = false;
        break;
      }
    }
    if (prime) primes.push_back(candidate);
    ++candidate;
  }
  return primes;
}

inline double radical_inverse(std::uint64_t index, std::uint32_t base) {
  double inv_base = 1.0 / base;
  double f = inv_base;
  double r = 0.0;
  while (index > 0) {
    r += f * static_cast<double>(index % base);
    index /= base;
    f *= inv_base;
  }
  return r;
}

// index is 1-based; the effective Halton index of coordinate j is
// skip + 1 + (index - 1) * (leap + 1), shared across dimensions.
inline Eigen::VectorXd halton_point(std::uint64_t index,
                                    const std::vector<std::uint32_t>& bases,
                                    const QmcParams& params = QmcParams{}) {
  if (index < 1) throw ConfigError("halton_point: index must be >= 1");
  const std::uint64_t effective =
      static_cast<std::uint64_t>(params.skip) + 1 +
      (index - 1) * (static_cast<std::uint64_t>(params.leap) + 1);
  Eigen::VectorXd u(static_cast<Eigen::Index>(bases.size()));
  for (Eigen::Index j = 0; j < u.size(); ++j)
    u[j] = radical_inverse(effective, bases[static_cast<std::size_t>(j)]);
  return u;
}

// ---------------------------------------------------------------------------
// Exploration matrices.

enum class Scheme { IID, GaussOrt, HD, GaussOrtRenorm, HDRenorm, QMC };

enum class RenormKind { DeterministicSqrtD, ChiD };

struct ExplorationMatrix {
  Eigen::MatrixXd rows;         // N x d, one direction per row
  Scheme scheme = Scheme::IID;
  int hd_blocks = 0;            // k for the HD schemes
  Eigen::Index padded_dim = 0;  // d' for the HD schemes, d otherwise
  std::uint64_t seed = 0;       // 0 for QMC (stream position indexed instead)
};

inline ExplorationMatrix sample_iid(Eigen::Index d, Eigen::Index N,
                                    std::uint64_t seed) {
  if (d < 1 || N < 1) throw ConfigError("sample_iid: d and N must be >= 1");
  Rng rng(seed);
  ExplorationMatrix m;
  m.rows.resize(N, d);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m.rows(i, j) = rng.next_gaussian();
  m.scheme = Scheme::IID;
  m.padded_dim = d;
  m.seed = seed;
  return m;
}

namespace detail {

// Orthonormalizes b <= d Gaussian columns by modified Gram-Schmidt with one
// reorthogonalization pass.  A numerically degenerate draw discards the
// whole block and resamples it, up to 3 attempts.
inline void orthonormal_columns(Rng& rng, Eigen::MatrixXd& q) {
  const Eigen::Index d = q.rows();
  const Eigen::Index b = q.cols();
  for (int attempt = 0; attempt < 3; ++attempt) {
    for (Eigen::Index i = 0; i < b; ++i)
      for (Eigen::Index r = 0; r < d; ++r) q(r, i) = rng.next_gaussian();
    bool degenerate = false;
    for (Eigen::Index i = 0; i < b && !degenerate; ++i) {
      for (int pass = 0; pass < 2; ++pass)
        for (Eigen::Index j = 0; j < i; ++j)
          q.col(i).noalias() -= q.col(j).dot(q.col(i)) * q.col(j);
      double norm = q.col(i).norm();
      if (norm > 1e-8)
        q.col(i) /= norm;
      else
        degenerate = true;
    }
    if (!degenerate) return;
  }
  throw NumericError("sample_gauss_ort: degenerate Gaussian block");
}

}  // namespace detail

// Gaussian orthogonal exploration: rows come in consecutive blocks of up to d
// exactly orthogonal directions (independent blocks for N > d); row lengths
// are norms of independent fresh Gaussian vectors, so each row is marginally
// N(0, I_d).
inline ExplorationMatrix sample_gauss_ort(Eigen::Index d, Eigen::Index N,
                                          std::uint64_t seed) {
  if (d < 1 || N < 1)
    throw ConfigError("sample_gauss_ort: d and N must be >= 1");
  Rng rng(seed);
  ExplorationMatrix m;
  m.rows.resize(N, d);
  Eigen::MatrixXd block;
  Eigen::Index done = 0;
  while (done < N) {
    Eigen::Index b = std::min(d, N - done);
    block.resize(d, b);
    detail::orthonormal_columns(rng, block);
    for (Eigen::Index i = 0; i < b; ++i)
      m.rows.row(done + i) = chi_length(rng, d) * block.col(i).transpose();
    done += b;
  }
  m.scheme = Scheme::GaussOrt;
  m.padded_dim = d;
  m.seed = seed;
  return m;
}

inline std::vector<Eigen::VectorXd> rademacher_diagonals(Eigen::Index dprime,
                                                         int k,
                                                         std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Eigen::VectorXd> diags(static_cast<std::size_t>(k));
  for (auto& dvec : diags) {
    dvec.resize(dprime);
    for (Eigen::Index i = 0; i < dprime; ++i) dvec[i] = rng.next_rademacher();
  }
  return diags;
}

// Hadamard-Rademacher exploration: rows of M = d'^{-(k-1)/2} HD_1 HD_2...HD_k
// with H the Kronecker power of H1 and D_j fresh Rademacher diagonals.  Row i
// is M^T e_i computed by k FWHT passes in the padded dimension d' = next
// power of two, then truncated to the first d coordinates without rescaling.
// For k = 1 entries are exactly +-1.
inline ExplorationMatrix sample_hd(Eigen::Index d, Eigen::Index N, int k,
                                   std::uint64_t seed) {
  if (d < 1 || N < 1) throw ConfigError("sample_hd: d and N must be >= 1");
  if (k < 1) throw ConfigError("sample_hd: k must be >= 1");
  const Eigen::Index dprime = next_pow2(d);
  if (N > dprime)
    throw ConfigError("sample_hd: N may not exceed the padded dimension");
  const auto diags = rademacher_diagonals(dprime, k, seed);
  const double scale = std::pow(static_cast<double>(dprime), -0.5 * (k - 1));

  ExplorationMatrix m;
  m.rows.resize(N, d);
  Eigen::VectorXd v(dprime);
  for (Eigen::Index i = 0; i < N; ++i) {
    v.setZero();
    v[i] = 1.0;
    for (int j = 0; j < k; ++j) {
      fwht(v.data(), dprime);
      v.array() *= diags[static_cast<std::size_t>(j)].array();
    }
    m.rows.row(i) = scale * v.head(d).transpose();
  }
  m.scheme = Scheme::HD;
  m.hd_blocks = k;
  m.padded_dim = dprime;
  m.seed = seed;
  return m;
}

// Rescales every row to a target length, preserving direction: either exactly
// sqrt(d') (the HD row-length law) or an independent chi_d draw per row (the
// Gaussian-orthogonal row-length law).
inline ExplorationMatrix renormalize(const ExplorationMatrix& m,
                                     RenormKind kind, std::uint64_t seed) {
  if (m.scheme != Scheme::GaussOrt && m.scheme != Scheme::HD &&
      m.scheme != Scheme::GaussOrtRenorm && m.scheme != Scheme::HDRenorm)
    throw ConfigError("renormalize: scheme must be GaussOrt or HD");
  const Eigen::Index d = m.rows.cols();
  const double sqrt_target = std::sqrt(static_cast<double>(m.padded_dim));
  Rng rng(seed);
  ExplorationMatrix out = m;
  for (Eigen::Index i = 0; i < out.rows.rows(); ++i) {
    double target = (kind == RenormKind::DeterministicSqrtD)
                        ? sqrt_target
                        : chi_length(rng, d);
    double norm = out.rows.row(i).norm();
    if (!(norm > 0.0))
      throw NumericError("renormalize: zero-norm exploration row");
    out.rows.row(i) *= target / norm;
  }
  if (m.scheme == Scheme::GaussOrt)
    out.scheme = Scheme::GaussOrtRenorm;
  else if (m.scheme == Scheme::HD)
    out.scheme = Scheme::HDRenorm;
  return out;
}

// Stream state for the deterministic QMC generator: the Halton parameters
// plus a cursor counting points already emitted.
struct QmcStream {
  QmcParams params;
  std::uint64_t position = 0;
};

// Next N Halton points mapped coordinate-wise through the inverse normal CDF.
// The stream advances so successive calls continue the sequence.
inline ExplorationMatrix sample_qmc(Eigen::Index d, Eigen::Index N,
                                    QmcStream& stream) {
  if (d < 1 || N < 1) throw ConfigError("sample_qmc: d and N must be >= 1");
  const auto primes = first_primes(d);
  ExplorationMatrix m;
  m.rows.resize(N, d);
  for (Eigen::Index i = 0; i < N; ++i) {
    Eigen::VectorXd u = halton_point(
        stream.position + static_cast<std::uint64_t>(i) + 1, primes,
        stream.params);
    for (Eigen::Index j = 0; j < d; ++j) m.rows(i, j) = inv_norm_cdf(u[j]);
  }
  stream.position += static_cast<std::uint64_t>(N);
  m.scheme = Scheme::QMC;
  m.padded_dim = d;
  return m;
}

// ---------------------------------------------------------------------------
// Scheme dispatch.

// Generator descriptor: which scheme to draw from plus its knobs.
struct ExplorationScheme {
  Scheme kind = Scheme::IID;
  int hd_blocks = 1;
  RenormKind renorm = RenormKind::DeterministicSqrtD;
  QmcParams qmc;
};

inline const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::IID:
      return "iid";
    case Scheme::GaussOrt:
      return "gauss-ort";
    case Scheme::HD:
      return "hd";
    case Scheme::GaussOrtRenorm:
      return "gauss-ort-renorm";
    case Scheme::HDRenorm:
      return "hd-renorm";
    case Scheme::QMC:
      return "qmc";
  }
  throw ConfigError("scheme_name: unknown scheme");
}

inline Scheme scheme_from_string(const std::string& s) {
  if (s == "iid") return Scheme::IID;
  if (s == "gauss-ort") return Scheme::GaussOrt;
  if (s == "hd") return Scheme::HD;
  if (s == "gauss-ort-renorm") return Scheme::GaussOrtRenorm;
  if (s == "hd-renorm") return Scheme::HDRenorm;
  if (s == "qmc") return Scheme::QMC;
  throw ConfigError("unknown exploration scheme \"" + s +
                    "\" (expected iid, gauss-ort, hd, gauss-ort-renorm, "
                    "hd-renorm, or qmc)");
}

inline const char* renorm_name(RenormKind k) {
  switch (k) {
    case RenormKind::DeterministicSqrtD:
      return "sqrt-d";
    case RenormKind::ChiD:
      return "chi-d";
  }
  throw ConfigError("renorm_name: unknown renormalization kind");
}

inline RenormKind renorm_from_string(const std::string& s) {
  if (s == "sqrt-d") return RenormKind::DeterministicSqrtD;
  if (s == "chi-d") return RenormKind::ChiD;
  throw ConfigError("unknown renormalization \"" + s +
                    "\" (expected sqrt-d or chi-d)");
}

namespace seed_tag {
constexpr std::uint64_t kExploration = 1;
constexpr std::uint64_t kRenorm = 2;
constexpr std::uint64_t kEstimator = 3;
constexpr std::uint64_t kEvalRollout = 4;
}  // namespace seed_tag

// Seed fed to the estimator's objective evaluations at one iteration.  Local
// and distributed evaluation share this so the two paths stay bit-identical.
inline std::uint64_t estimator_eval_seed(std::uint64_t master_seed,
                                         std::uint64_t iteration) {
  return derive_seed(derive_iteration_seed(master_seed, iteration),
                     seed_tag::kEstimator);
}

// Exploration matrix for one optimization iteration.  All randomized schemes
// are freshly seeded from (master_seed, iteration); QMC instead continues the
// deterministic stream at position iteration * N, so it is the only scheme
// whose consecutive iterations share state.
inline ExplorationMatrix sample_for_iteration(const ExplorationScheme& cfg,
                                              Eigen::Index d, Eigen::Index N,
                                              std::uint64_t master_seed,
                                              std::uint64_t iteration) {
  const std::uint64_t iter_seed = derive_iteration_seed(master_seed, iteration);
  const std::uint64_t sample_seed =
      derive_seed(iter_seed, seed_tag::kExploration);
  switch (cfg.kind) {
    case Scheme::IID:
      return sample_iid(d, N, sample_seed);
    case Scheme::GaussOrt:
      return sample_gauss_ort(d, N, sample_seed);
    case Scheme::HD:
      return sample_hd(d, N, cfg.hd_blocks, sample_seed);
    case Scheme::GaussOrtRenorm:
      return renormalize(sample_gauss_ort(d, N, sample_seed), cfg.renorm,
                         derive_seed(iter_seed, seed_tag::kRenorm));
    case Scheme::HDRenorm:
      return renormalize(sample_hd(d, N, cfg.hd_blocks, sample_seed),
                         cfg.renorm, derive_seed(iter_seed, seed_tag::kRenorm));
    case Scheme::QMC: {
      QmcStream stream{cfg.qmc, iteration * static_cast<std::uint64_t>(N)};
      return sample_qmc(d, N, stream);
    }
  }
  throw ConfigError("sample_for_iteration: unknown scheme");
}

}  // namespace ses
