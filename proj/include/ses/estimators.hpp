#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ses/errors.hpp"
#include "ses/exploration.hpp"
#include "ses/rng.hpp"

namespace ses {

// A blackbox function of the parameters.  The seed argument drives stochastic
// targets (episode rollouts); deterministic objectives ignore it.
struct Objective {
  Eigen::Index dim = 0;
  std::function<double(const Eigen::VectorXd&, std::uint64_t)> fn;

  double operator()(const Eigen::VectorXd& x, std::uint64_t seed = 0) const {
    return fn(x, seed);
  }
};

inline Objective make_objective(
    Eigen::Index dim, std::function<double(const Eigen::VectorXd&)> f) {
  Objective obj;
  obj.dim = dim;
  obj.fn = [f = std::move(f)](const Eigen::VectorXd& x, std::uint64_t) {
    return f(x);
  };
  return obj;
}

// Wraps an objective so every call bumps a shared counter.  Used for
// evaluation accounting in the benchmark driver and the tests.
inline Objective make_counting(const Objective& base,
                               std::shared_ptr<long long> counter) {
  Objective obj;
  obj.dim = base.dim;
  obj.fn = [base, counter](const Eigen::VectorXd& x, std::uint64_t seed) {
    ++*counter;
    return base(x, seed);
  };
  return obj;
}

// Additive Gaussian observation noise.  The noise value is derived from
// (noise_seed, evaluation counter), so a fixed call sequence is reproducible
// while repeated evaluations at the same point differ.
inline Objective make_noisy_additive(const Objective& base, double noise_sigma,
                                     std::uint64_t noise_seed) {
  auto counter = std::make_shared<std::uint64_t>(0);
  Objective obj;
  obj.dim = base.dim;
  obj.fn = [base, noise_sigma, noise_seed,
            counter](const Eigen::VectorXd& x, std::uint64_t seed) {
    Rng rng(derive_seed(noise_seed, (*counter)++));
    return base(x, seed) + noise_sigma * rng.next_gaussian();
  };
  return obj;
}

enum class EstimatorKind { Vanilla, Antithetic, ForwardFD };

inline const char* estimator_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Vanilla:
      return "vanilla";
    case EstimatorKind::Antithetic:
      return "antithetic";
    case EstimatorKind::ForwardFD:
      return "forward-fd";
  }
  throw ConfigError("estimator_name: unknown estimator");
}

inline EstimatorKind estimator_from_string(const std::string& s) {
  if (s == "vanilla") return EstimatorKind::Vanilla;
  if (s == "antithetic") return EstimatorKind::Antithetic;
  if (s == "forward-fd") return EstimatorKind::ForwardFD;
  throw ConfigError("unknown estimator \"" + s +
                    "\" (expected vanilla, antithetic, or forward-fd)");
}

struct SmoothingConfig {
  double sigma = 0.1;
  Eigen::Index num_directions = 0;  // N; 0 means "use the problem dimension"
  EstimatorKind estimator = EstimatorKind::Antithetic;
};

struct GradientEstimate {
  Eigen::VectorXd gradient;
  long long function_evaluations = 0;
  EstimatorKind estimator = EstimatorKind::Vanilla;
  // Center value F(theta); only populated by the forward-FD estimator.
  double center_value = std::numeric_limits<double>::quiet_NaN();
};

// Per-row scalar evaluations.  f_minus is meaningful for Antithetic only.
struct RowEvaluations {
  double f_plus = 0.0;
  double f_minus = 0.0;
};

inline double row_coefficient(EstimatorKind kind, const RowEvaluations& e,
                              double f_center) {
  switch (kind) {
    case EstimatorKind::Vanilla:
      return e.f_plus;
    case EstimatorKind::Antithetic:
      return e.f_plus - e.f_minus;
    case EstimatorKind::ForwardFD:
      return e.f_plus - f_center;
  }
  throw ConfigError("row_coefficient: unknown estimator");
}

inline long long expected_evaluations(EstimatorKind kind, Eigen::Index N) {
  switch (kind) {
    case EstimatorKind::Vanilla:
      return N;
    case EstimatorKind::Antithetic:
      return 2 * N;
    case EstimatorKind::ForwardFD:
      return N + 1;
  }
  throw ConfigError("expected_evaluations: unknown estimator");
}

// The single reduction both the local estimators and the distributed master
// use: accumulate coefficient-weighted rows in ascending row order, then
// divide once.  Keeping one code path makes local and distributed gradients
// bit-identical for the same scalar inputs.
inline Eigen::VectorXd combine_rows(EstimatorKind kind, double sigma,
                                    const Eigen::MatrixXd& rows,
                                    const std::vector<double>& coefficients) {
  const Eigen::Index N = rows.rows();
  if (static_cast<Eigen::Index>(coefficients.size()) != N)
    throw ConfigError("combine_rows: coefficient count mismatch");
  Eigen::VectorXd g = Eigen::VectorXd::Zero(rows.cols());
  for (Eigen::Index i = 0; i < N; ++i)
    g.noalias() +=
        coefficients[static_cast<std::size_t>(i)] * rows.row(i).transpose();
  const double denom = sigma * static_cast<double>(N) *
                       (kind == EstimatorKind::Antithetic ? 2.0 : 1.0);
  return g / denom;
}

namespace detail {

inline void check_dims(const Eigen::VectorXd& theta,
                       const ExplorationMatrix& expl,
                       const SmoothingConfig& cfg, EstimatorKind expected,
                       const char* where) {
  if (theta.size() != expl.rows.cols())
    throw ConfigError(std::string(where) +
                      ": theta dimension does not match direction rows");
  if (!(cfg.sigma > 0.0))
    throw ConfigError(std::string(where) + ": sigma must be positive");
  if (cfg.num_directions > 0 && cfg.num_directions != expl.rows.rows())
    throw ConfigError(std::string(where) +
                      ": num_directions does not match the direction matrix");
  if (cfg.estimator != expected)
    throw ConfigError(std::string(where) + ": estimator kind mismatch");
}

inline double checked_eval(const Objective& f, const Eigen::VectorXd& x,
                           std::uint64_t seed, const char* where,
                           Eigen::Index row) {
  double v = f(x, seed);
  if (!std::isfinite(v))
    throw NumericError(std::string("non-finite objective value in ") + where +
                       " at direction " + std::to_string(row));
  return v;
}

}  // namespace detail

// Monte Carlo gradient of the Gaussian smoothing F_sigma at theta:
// (1/(N sigma)) sum F(theta + sigma eps_i) eps_i, reduced in ascending row
// order for bit-reproducibility.
inline GradientEstimate vanilla_grad(const Objective& f,
                                     const Eigen::VectorXd& theta,
                                     const SmoothingConfig& cfg,
                                     const ExplorationMatrix& expl,
                                     std::uint64_t eval_seed = 0) {
  detail::check_dims(theta, expl, cfg, EstimatorKind::Vanilla, "vanilla_grad");
  const Eigen::Index N = expl.rows.rows();
  std::vector<double> coeffs(static_cast<std::size_t>(N));
  for (Eigen::Index i = 0; i < N; ++i) {
    RowEvaluations e;
    e.f_plus = detail::checked_eval(
        f, theta + cfg.sigma * expl.rows.row(i).transpose(),
        derive_seed(eval_seed, static_cast<std::uint64_t>(i)), "vanilla_grad",
        i);
    coeffs[static_cast<std::size_t>(i)] =
        row_coefficient(EstimatorKind::Vanilla, e, 0.0);
  }
  GradientEstimate out;
  out.gradient =
      combine_rows(EstimatorKind::Vanilla, cfg.sigma, expl.rows, coeffs);
  out.function_evaluations = expected_evaluations(EstimatorKind::Vanilla, N);
  out.estimator = EstimatorKind::Vanilla;
  return out;
}

// Antithetic estimator: (1/(2 N sigma)) sum (F(theta + sigma eps_i) -
// F(theta - sigma eps_i)) eps_i.  The +- pair of row i shares one evaluation
// seed, so stochastic targets see common random numbers.
inline GradientEstimate antithetic_grad(const Objective& f,
                                        const Eigen::VectorXd& theta,
                                        const SmoothingConfig& cfg,
                                        const ExplorationMatrix& expl,
                                        std::uint64_t eval_seed = 0) {
  detail::check_dims(theta, expl, cfg, EstimatorKind::Antithetic,
                     "antithetic_grad");
  const Eigen::Index N = expl.rows.rows();
  std::vector<double> coeffs(static_cast<std::size_t>(N));
  for (Eigen::Index i = 0; i < N; ++i) {
    const std::uint64_t row_seed =
        derive_seed(eval_seed, static_cast<std::uint64_t>(i));
    const Eigen::VectorXd delta = cfg.sigma * expl.rows.row(i).transpose();
    RowEvaluations e;
    e.f_plus =
        detail::checked_eval(f, theta + delta, row_seed, "antithetic_grad", i);
    e.f_minus =
        detail::checked_eval(f, theta - delta, row_seed, "antithetic_grad", i);
    coeffs[static_cast<std::size_t>(i)] =
        row_coefficient(EstimatorKind::Antithetic, e, 0.0);
  }
  GradientEstimate out;
  out.gradient =
      combine_rows(EstimatorKind::Antithetic, cfg.sigma, expl.rows, coeffs);
  out.function_evaluations = expected_evaluations(EstimatorKind::Antithetic, N);
  out.estimator = EstimatorKind::Antithetic;
  return out;
}

inline constexpr std::uint64_t kCenterSeedIndex = ~std::uint64_t{0};

// Forward finite-difference estimator: (1/(N sigma)) sum (F(theta + sigma
// eps_i) - F(theta)) eps_i with one shared center evaluation (N+1 calls).
inline GradientEstimate forward_fd_grad(const Objective& f,
                                        const Eigen::VectorXd& theta,
                                        const SmoothingConfig& cfg,
                                        const ExplorationMatrix& expl,
                                        std::uint64_t eval_seed = 0) {
  detail::check_dims(theta, expl, cfg, EstimatorKind::ForwardFD,
                     "forward_fd_grad");
  const Eigen::Index N = expl.rows.rows();
  const double center = detail::checked_eval(
      f, theta, derive_seed(eval_seed, kCenterSeedIndex), "forward_fd_grad",
      -1);
  std::vector<double> coeffs(static_cast<std::size_t>(N));
  for (Eigen::Index i = 0; i < N; ++i) {
    RowEvaluations e;
    e.f_plus = detail::checked_eval(
        f, theta + cfg.sigma * expl.rows.row(i).transpose(),
        derive_seed(eval_seed, static_cast<std::uint64_t>(i)),
        "forward_fd_grad", i);
    coeffs[static_cast<std::size_t>(i)] =
        row_coefficient(EstimatorKind::ForwardFD, e, center);
  }
  GradientEstimate out;
  out.gradient =
      combine_rows(EstimatorKind::ForwardFD, cfg.sigma, expl.rows, coeffs);
  out.function_evaluations = expected_evaluations(EstimatorKind::ForwardFD, N);
  out.estimator = EstimatorKind::ForwardFD;
  out.center_value = center;
  return out;
}

inline GradientEstimate estimate_gradient(const Objective& f,
                                          const Eigen::VectorXd& theta,
                                          const SmoothingConfig& cfg,
                                          const ExplorationMatrix& expl,
                                          std::uint64_t eval_seed = 0) {
  switch (cfg.estimator) {
    case EstimatorKind::Vanilla:
      return vanilla_grad(f, theta, cfg, expl, eval_seed);
    case EstimatorKind::Antithetic:
      return antithetic_grad(f, theta, cfg, expl, eval_seed);
    case EstimatorKind::ForwardFD:
      return forward_fd_grad(f, theta, cfg, expl, eval_seed);
  }
  throw ConfigError("estimate_gradient: unknown estimator");
}

// Analytic gradient of the Gaussian smoothing for the test-oracle functions.
// Linear(a): grad F_sigma = a for every sigma.  SquaredNorm: F_sigma(theta) =
// |theta|^2 + sigma^2 d, so grad = 2 theta.
enum class FunctionKind { Linear, SquaredNorm };

inline Eigen::VectorXd analytic_smoothed_gradient(FunctionKind kind,
                                                  const Eigen::VectorXd& a,
                                                  const Eigen::VectorXd& theta,
                                                  double /*sigma*/) {
  switch (kind) {
    case FunctionKind::Linear:
      return a;
    case FunctionKind::SquaredNorm:
      return 2.0 * theta;
  }
  throw ConfigError("analytic_smoothed_gradient: unsupported function kind");
}

// Empirical mean squared error E || ghat - true_grad ||^2 over independent
// trials.  Trial t draws its directions exactly like optimization iteration t,
// so QMC trials walk the deterministic stream while the random schemes are
// freshly seeded per trial.
inline double mse_estimate(const Objective& f, const Eigen::VectorXd& theta,
                           const SmoothingConfig& cfg,
                           const ExplorationScheme& generator,
                           const Eigen::VectorXd& true_grad, long long trials,
                           std::uint64_t seed) {
  if (trials < 1) throw ConfigError("mse_estimate: trials must be >= 1");
  const Eigen::Index d = theta.size();
  const Eigen::Index N = cfg.num_directions > 0 ? cfg.num_directions : d;
  SmoothingConfig local = cfg;
  local.num_directions = N;
  double acc = 0.0;
  for (long long t = 0; t < trials; ++t) {
    ExplorationMatrix expl =
        sample_for_iteration(generator, d, N, seed, static_cast<std::uint64_t>(t));
    const std::uint64_t eval_seed =
        estimator_eval_seed(seed, static_cast<std::uint64_t>(t));
    GradientEstimate g = estimate_gradient(f, theta, local, expl, eval_seed);
    acc += (g.gradient - true_grad).squaredNorm();
  }
  return acc / static_cast<double>(trials);
}

}  // namespace ses
