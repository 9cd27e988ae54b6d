#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ses/errors.hpp"
#include "ses/estimators.hpp"
#include "ses/exploration.hpp"

namespace ses {

enum class OptimizerKind { Adam, SGD, BFGS };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int max_iterations = 200;
  int termination_window = 50;
  // < 0 selects the default rule 1e-3 * (|current running max| + 1).
  double termination_delta = -1.0;
};

struct RunRecord {
  int iteration = 0;
  double total_reward = 0.0;
  double max_total_reward = 0.0;
  long long function_evaluations_cumulative = 0;
  double wall_time_seconds = 0.0;
};

// ---------------------------------------------------------------------------
// Adam.

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long long t = 0;
};

// One bias-corrected Adam update.  Returns the step to ADD to the parameters
// for ascent along `gradient`; pass the negated gradient to descend.
Eigen::VectorXd adam_step(AdamState& state, const Eigen::VectorXd& gradient,
                          const OptimizerConfig& cfg);

// ---------------------------------------------------------------------------
// BFGS with backtracking Armijo line search (the benchmark driver).

struct BfgsOptions {
  int max_iterations = 200;
  double grad_tol = 1e-8;
  int max_backtracks = 50;
  double armijo_c = 1e-4;
  double shrink = 0.5;
  int stall_window = 5;
  double stall_delta = 1e-12;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int iterations = 0;
  // Objective calls made by the driver itself (line search + bookkeeping);
  // gradient-provider calls are whatever the provider spends.
  long long evaluations = 0;
  bool stalled = false;
  std::string stop_reason;
};

BfgsResult bfgs_minimize(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad,
    const Eigen::VectorXd& x0, const BfgsOptions& options);

// ---------------------------------------------------------------------------
// Termination: true when the running-max reward improved by less than delta
// over the last W entries of the history.  delta < 0 selects the default
// rule.  History shorter than W never terminates.
bool should_terminate(const std::vector<double>& max_reward_history, int window,
                      double delta);

// ---------------------------------------------------------------------------
// Training loop.

// Supplies the per-iteration gradient estimate; either local evaluation or
// the distributed coordinator.
class GradientEvaluator {
 public:
  virtual ~GradientEvaluator() = default;
  virtual GradientEstimate evaluate(int iteration,
                                    const Eigen::VectorXd& theta) = 0;
};

class LocalEvaluator final : public GradientEvaluator {
 public:
  LocalEvaluator(Objective target, SmoothingConfig smoothing,
                 ExplorationScheme scheme, std::uint64_t master_seed);
  GradientEstimate evaluate(int iteration,
                            const Eigen::VectorXd& theta) override;

 private:
  Objective target_;
  SmoothingConfig smoothing_;
  ExplorationScheme scheme_;
  std::uint64_t master_seed_;
};

struct TrainOptions {
  Eigen::VectorXd theta0;  // empty selects the zero vector
  int eval_rollouts = 4;   // reward evaluations averaged per RunRecord
};

struct TrainResult {
  std::vector<RunRecord> records;
  Eigen::VectorXd final_params;
  Eigen::VectorXd best_params;
  double best_reward = 0.0;
};

// Ascent loop theta_{k+1} = theta_k + step(grad F_sigma estimate).  The raw
// estimator output feeds the optimizer unchanged (no fitness shaping or any
// other reward transformation).  Deterministic given all arguments including
// master_seed.
TrainResult train(const Objective& target, const SmoothingConfig& smoothing,
                  const ExplorationScheme& scheme, const OptimizerConfig& opt,
                  std::uint64_t master_seed, GradientEvaluator& evaluator,
                  const TrainOptions& options = {});

}  // namespace ses
