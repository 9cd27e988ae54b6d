#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ses/errors.hpp"
#include "ses/estimators.hpp"
#include "ses/exploration.hpp"
#include "ses/trainer.hpp"

namespace ses {

enum class BenchVariant { Smooth, NonDiff, NoisyDeterministic, NoisyStochastic };

const char* variant_name(BenchVariant v);
BenchVariant variant_from_string(const std::string& s);

// Least-squares test problem under one of the four perturbation variants.
// The stochastic variant draws its multiplier from (noise_seed, evaluation
// index), so values are reproducible given the call sequence.
struct BenchProblem {
  std::string name;
  Eigen::Index dim = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> residuals;
  BenchVariant variant = BenchVariant::Smooth;
  Eigen::VectorXd start;
  double noise_scale = 1e-3;
  std::uint64_t noise_seed = 0;
  std::shared_ptr<std::uint64_t> eval_index =
      std::make_shared<std::uint64_t>(0);
};

// Fixed-order names of the shipped problems.
const std::vector<std::string>& bench_problem_names();

BenchProblem make_bench_problem(const std::string& name,
                                BenchVariant variant = BenchVariant::Smooth,
                                double noise_scale = 1e-3,
                                std::uint64_t noise_seed = 0);

// Smooth: sum f_i^2.  NonDiff: sum |f_i|.  NoisyDeterministic: smooth value
// times (1 + noise_scale * phi(x)) with phi a fixed high-frequency
// oscillation.  NoisyStochastic: smooth value times (1 + noise_scale * u),
// u uniform in [-1, 1] drawn per evaluation.
double evaluate_problem(const BenchProblem& problem, const Eigen::VectorXd& x);

// The deterministic oscillation used by NoisyDeterministic; exposed for the
// tests.
double bench_oscillation(const Eigen::VectorXd& x);

struct MethodResult {
  std::string method_name;
  double final_objective = 0.0;
  long long function_evaluations = 0;
};

// Per-task scores: best method 0, worst 1, linear in between; all-equal
// inputs score 0 for everyone.  Requires at least two methods.
std::vector<double> normalized_score(const std::vector<double>& values,
                                     bool lower_is_better = true);

// Mean rank per method over tasks (rank 1 = best); ties share the mean of
// their rank positions.  task_values holds one row per task, one column per
// method, no missing cells.
std::vector<double> average_rank(
    const std::vector<std::vector<double>>& task_values,
    bool lower_is_better = true);

struct BenchDriverConfig {
  BfgsOptions bfgs;
  std::uint64_t seed = 0;
};

// Minimizes the problem with the BFGS driver fed by ES gradients; gradient
// call t draws its directions like optimization iteration t.  The evaluation
// count is the instrumented number of objective calls.
MethodResult run_bench(const BenchProblem& problem,
                       const SmoothingConfig& estimator_cfg,
                       const ExplorationScheme& exploration_scheme,
                       const BenchDriverConfig& driver_cfg);

}  // namespace ses
