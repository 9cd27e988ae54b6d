#include "ses/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <utility>

#include "ses/rng.hpp"

namespace ses {
namespace {

double elapsed_seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

BfgsResult make_result(Eigen::VectorXd x, double f, int iters, long long evals,
                       bool stalled, std::string reason) {
  BfgsResult r;
  r.x = std::move(x);
  r.f = f;
  r.iterations = iters;
  r.evaluations = evals;
  r.stalled = stalled;
  r.stop_reason = std::move(reason);
  return r;
}

}  // namespace

Eigen::VectorXd adam_step(AdamState& state, const Eigen::VectorXd& gradient,
                          const OptimizerConfig& cfg) {
  if (!gradient.allFinite()) throw NumericError("adam_step: non-finite gradient");
  if (state.t == 0) {
    state.m = Eigen::VectorXd::Zero(gradient.size());
    state.v = Eigen::VectorXd::Zero(gradient.size());
  }
  if (state.m.size() != gradient.size()) {
    throw ConfigError("adam_step: gradient dimension changed mid-run");
  }
  state.t += 1;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  state.m = b1 * state.m + (1.0 - b1) * gradient;
  state.v = b2 * state.v.array().matrix() +
            (1.0 - b2) * gradient.array().square().matrix();
  const double mc = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double vc = 1.0 - std::pow(b2, static_cast<double>(state.t));
  Eigen::ArrayXd m_hat = state.m.array() / mc;
  Eigen::ArrayXd v_hat = state.v.array() / vc;
  return (cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon))
      .matrix();
}

BfgsResult bfgs_minimize(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad,
    const Eigen::VectorXd& x0, const BfgsOptions& options) {
  if (x0.size() == 0) throw ConfigError("bfgs_minimize: empty start point");
  const Eigen::Index d = x0.size();

  Eigen::VectorXd x = x0;
  double fx = f(x);
  long long evals = 1;
  if (!std::isfinite(fx)) {
    throw NumericError("bfgs_minimize: objective non-finite at start point");
  }
  Eigen::VectorXd g = grad(x);
  if (g.size() != d) throw ConfigError("bfgs_minimize: gradient dimension mismatch");

  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(d, d);
  bool h_scaled = false;

  Eigen::VectorXd best_x = x;
  double best_f = fx;
  std::vector<double> best_history{best_f};

  int iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() <= options.grad_tol) {
      return make_result(best_x, best_f, iter, evals, false, "gradient");
    }

    Eigen::VectorXd p = -(H * g);
    double gp = g.dot(p);
    if (!(gp < 0.0) || !p.allFinite()) {
      H.setIdentity();
      p = -g;
      gp = g.dot(p);
      if (!(gp < 0.0)) {
        return make_result(best_x, best_f, iter, evals, true, "no-descent");
      }
    }

    double alpha = 1.0;
    double f_new = 0.0;
    bool accepted = false;
    for (int bt = 0; bt <= options.max_backtracks; ++bt) {
      f_new = f(x + alpha * p);
      ++evals;
      if (std::isfinite(f_new) && f_new <= fx + options.armijo_c * alpha * gp) {
        accepted = true;
        break;
      }
      alpha *= options.shrink;
    }
    if (!accepted) {
      return make_result(best_x, best_f, iter, evals, true, "line-search");
    }

    Eigen::VectorXd x_new = x + alpha * p;
    Eigen::VectorXd g_new = grad(x_new);
    Eigen::VectorXd s = x_new - x;
    Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm() && y.allFinite()) {
      if (!h_scaled) {
        H *= sy / y.squaredNorm();
        h_scaled = true;
      }
      const double rho = 1.0 / sy;
      Eigen::MatrixXd outer = Eigen::MatrixXd::Identity(d, d) -
                              rho * s * y.transpose();
      H = outer * H * outer.transpose() + rho * s * s.transpose();
    }

    x = std::move(x_new);
    fx = f_new;
    g = std::move(g_new);
    if (fx < best_f) {
      best_f = fx;
      best_x = x;
    }
    best_history.push_back(best_f);

    const int w = options.stall_window;
    if (static_cast<int>(best_history.size()) > w) {
      const double old_best = best_history[best_history.size() - 1 - w];
      if (old_best - best_f < options.stall_delta * (1.0 + std::abs(best_f))) {
        return make_result(best_x, best_f, iter + 1, evals, true, "stall");
      }
    }
  }
  return make_result(best_x, best_f, iter, evals, false, "max-iterations");
}

bool should_terminate(const std::vector<double>& max_reward_history, int window,
                      double delta) {
  if (window < 1) throw ConfigError("should_terminate: window must be >= 1");
  const std::size_t n = max_reward_history.size();
  if (n < static_cast<std::size_t>(window)) return false;
  const double current = max_reward_history.back();
  if (delta < 0.0) delta = 1e-3 * (std::abs(current) + 1.0);
  const double improvement =
      current - max_reward_history[n - static_cast<std::size_t>(window)];
  return improvement < delta;
}

LocalEvaluator::LocalEvaluator(Objective target, SmoothingConfig smoothing,
                               ExplorationScheme scheme,
                               std::uint64_t master_seed)
    : target_(std::move(target)),
      smoothing_(smoothing),
      scheme_(scheme),
      master_seed_(master_seed) {
  if (smoothing_.num_directions == 0) smoothing_.num_directions = target_.dim;
}

GradientEstimate LocalEvaluator::evaluate(int iteration,
                                          const Eigen::VectorXd& theta) {
  const auto k = static_cast<std::uint64_t>(iteration);
  ExplorationMatrix expl = sample_for_iteration(
      scheme_, target_.dim, smoothing_.num_directions, master_seed_, k);
  return estimate_gradient(target_, theta, smoothing_, expl,
                           estimator_eval_seed(master_seed_, k));
}

TrainResult train(const Objective& target, const SmoothingConfig& smoothing,
                  const ExplorationScheme& scheme, const OptimizerConfig& opt,
                  std::uint64_t master_seed, GradientEvaluator& evaluator,
                  const TrainOptions& options) {
  (void)scheme;  // sampling lives inside the evaluator; kept for config echo
  if (opt.kind == OptimizerKind::BFGS) {
    throw ConfigError("train: BFGS drives benchmarks via bfgs_minimize, not the ascent loop");
  }
  if (opt.max_iterations < 1) throw ConfigError("train: max_iterations must be >= 1");
  if (options.eval_rollouts < 1) throw ConfigError("train: eval_rollouts must be >= 1");

  Eigen::VectorXd theta = options.theta0;
  if (theta.size() == 0) theta = Eigen::VectorXd::Zero(target.dim);
  if (theta.size() != target.dim) {
    throw ConfigError("train: theta0 does not match the target dimension");
  }

  TrainResult result;
  result.records.reserve(static_cast<std::size_t>(opt.max_iterations));
  AdamState adam;
  std::vector<double> max_history;
  long long evals = 0;
  double max_reward = -std::numeric_limits<double>::infinity();
  const auto t0 = std::chrono::steady_clock::now();
  SmoothingConfig local = smoothing;
  if (local.num_directions == 0) local.num_directions = target.dim;

  for (int k = 0; k < opt.max_iterations; ++k) {
    GradientEstimate est = evaluator.evaluate(k, theta);
    evals += est.function_evaluations;
    if (!est.gradient.allFinite()) {
      throw NumericError("train: non-finite gradient estimate at iteration " +
                         std::to_string(k));
    }
    if (opt.kind == OptimizerKind::Adam) {
      theta += adam_step(adam, est.gradient, opt);
    } else {
      theta += opt.learning_rate * est.gradient;
    }

    const std::uint64_t iter_seed =
        derive_iteration_seed(master_seed, static_cast<std::uint64_t>(k));
    const std::uint64_t eval_base =
        derive_seed(iter_seed, seed_tag::kEvalRollout);
    double reward = 0.0;
    for (int j = 0; j < options.eval_rollouts; ++j) {
      reward += target(theta, derive_seed(eval_base, static_cast<std::uint64_t>(j)));
    }
    reward /= options.eval_rollouts;
    evals += options.eval_rollouts;

    if (reward > max_reward ||
        max_reward == -std::numeric_limits<double>::infinity()) {
      max_reward = reward;
      result.best_params = theta;
      result.best_reward = reward;
    }
    max_history.push_back(max_reward);

    RunRecord rec;
    rec.iteration = k;
    rec.total_reward = reward;
    rec.max_total_reward = max_reward;
    rec.function_evaluations_cumulative = evals;
    rec.wall_time_seconds = elapsed_seconds(t0);
    result.records.push_back(rec);

    if (should_terminate(max_history, opt.termination_window,
                         opt.termination_delta)) {
      break;
    }
  }
  result.final_params = std::move(theta);
  return result;
}

}  // namespace ses
