#include "ses/benchsuite.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ses/rng.hpp"

namespace ses {

const char* variant_name(BenchVariant v) {
  switch (v) {
    case BenchVariant::Smooth:
      return "smooth";
    case BenchVariant::NonDiff:
      return "nondiff";
    case BenchVariant::NoisyDeterministic:
      return "noisy-det";
    case BenchVariant::NoisyStochastic:
      return "noisy-stoch";
  }
  throw ConfigError("variant_name: unknown variant");
}

BenchVariant variant_from_string(const std::string& s) {
  if (s == "smooth") return BenchVariant::Smooth;
  if (s == "nondiff") return BenchVariant::NonDiff;
  if (s == "noisy-det") return BenchVariant::NoisyDeterministic;
  if (s == "noisy-stoch") return BenchVariant::NoisyStochastic;
  throw ConfigError("unknown bench variant \"" + s +
                    "\" (expected smooth, nondiff, noisy-det, or noisy-stoch)");
}

namespace {

using Vec = Eigen::VectorXd;

Vec from_list(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

Vec sphere_res(const Vec& x) { return x; }

Vec rosenbrock_res(const Vec& x) {
  Vec r(2);
  r[0] = 10.0 * (x[1] - x[0] * x[0]);
  r[1] = 1.0 - x[0];
  return r;
}

Vec rosenbrock_ext_res(const Vec& x) {
  const Eigen::Index d = x.size();
  Vec r(d);
  for (Eigen::Index i = 0; i < d / 2; ++i) {
    r[2 * i] = 10.0 * (x[2 * i + 1] - x[2 * i] * x[2 * i]);
    r[2 * i + 1] = 1.0 - x[2 * i];
  }
  return r;
}

Vec powell_block(double x1, double x2, double x3, double x4) {
  Vec r(4);
  r[0] = x1 + 10.0 * x2;
  r[1] = std::sqrt(5.0) * (x3 - x4);
  r[2] = (x2 - 2.0 * x3) * (x2 - 2.0 * x3);
  r[3] = std::sqrt(10.0) * (x1 - x4) * (x1 - x4);
  return r;
}

Vec powell_singular_res(const Vec& x) {
  return powell_block(x[0], x[1], x[2], x[3]);
}

Vec powell_singular_ext_res(const Vec& x) {
  const Eigen::Index blocks = x.size() / 4;
  Vec r(4 * blocks);
  for (Eigen::Index b = 0; b < blocks; ++b)
    r.segment(4 * b, 4) =
        powell_block(x[4 * b], x[4 * b + 1], x[4 * b + 2], x[4 * b + 3]);
  return r;
}

Vec trigonometric_res(const Vec& x) {
  const Eigen::Index d = x.size();
  const double cos_sum = x.array().cos().sum();
  Vec r(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    r[i] = static_cast<double>(d) - cos_sum +
           static_cast<double>(i + 1) * (1.0 - std::cos(x[i])) - std::sin(x[i]);
  }
  return r;
}

Vec beale_res(const Vec& x) {
  const double y[3] = {1.5, 2.25, 2.625};
  Vec r(3);
  for (int i = 0; i < 3; ++i)
    r[i] = y[i] - x[0] * (1.0 - std::pow(x[1], i + 1));
  return r;
}

Vec freudenstein_roth_res(const Vec& x) {
  Vec r(2);
  r[0] = -13.0 + x[0] + ((5.0 - x[1]) * x[1] - 2.0) * x[1];
  r[1] = -29.0 + x[0] + ((x[1] + 1.0) * x[1] - 14.0) * x[1];
  return r;
}

Vec helical_valley_res(const Vec& x) {
  const double two_pi = 2.0 * M_PI;
  double theta;
  if (x[0] > 0.0)
    theta = std::atan(x[1] / x[0]) / two_pi;
  else if (x[0] < 0.0)
    theta = std::atan(x[1] / x[0]) / two_pi + 0.5;
  else
    theta = x[1] >= 0.0 ? 0.25 : -0.25;
  Vec r(3);
  r[0] = 10.0 * (x[2] - 10.0 * theta);
  r[1] = 10.0 * (std::sqrt(x[0] * x[0] + x[1] * x[1]) - 1.0);
  r[2] = x[2];
  return r;
}

Vec bard_res(const Vec& x) {
  static const double y[15] = {0.14, 0.18, 0.22, 0.25, 0.29,
                               0.32, 0.35, 0.39, 0.37, 0.58,
                               0.73, 0.96, 1.34, 2.10, 4.39};
  Vec r(15);
  for (int u = 1; u <= 15; ++u) {
    const double vu = 16.0 - u;
    const double wu = std::min<double>(u, vu);
    r[u - 1] = y[u - 1] - (x[0] + u / (vu * x[1] + wu * x[2]));
  }
  return r;
}

Vec box3d_res(const Vec& x) {
  Vec r(10);
  for (int i = 1; i <= 10; ++i) {
    const double t = 0.1 * i;
    r[i - 1] = std::exp(-t * x[0]) - std::exp(-t * x[1]) -
               x[2] * (std::exp(-t) - std::exp(-10.0 * t));
  }
  return r;
}

Vec wood_res(const Vec& x) {
  Vec r(6);
  r[0] = 10.0 * (x[1] - x[0] * x[0]);
  r[1] = 1.0 - x[0];
  r[2] = std::sqrt(90.0) * (x[3] - x[2] * x[2]);
  r[3] = 1.0 - x[2];
  r[4] = std::sqrt(10.0) * (x[1] + x[3] - 2.0);
  r[5] = (x[1] - x[3]) / std::sqrt(10.0);
  return r;
}

struct ProblemDef {
  const char* name;
  Eigen::Index dim;
  Vec (*residuals)(const Vec&);
  Vec start;
};

const std::vector<ProblemDef>& problem_defs() {
  static const std::vector<ProblemDef> defs = [] {
    std::vector<ProblemDef> d;
    d.push_back({"sphere", 10, sphere_res, Vec::Ones(10)});
    d.push_back({"rosenbrock", 2, rosenbrock_res, from_list({-1.2, 1.0})});
    Vec rb10(10);
    for (Eigen::Index i = 0; i < 10; i += 2) {
      rb10[i] = -1.2;
      rb10[i + 1] = 1.0;
    }
    d.push_back({"rosenbrock-ext", 10, rosenbrock_ext_res, rb10});
    d.push_back({"powell-singular", 4, powell_singular_res,
                 from_list({3.0, -1.0, 0.0, 1.0})});
    Vec ps12(12);
    for (Eigen::Index b = 0; b < 3; ++b) {
      ps12[4 * b] = 3.0;
      ps12[4 * b + 1] = -1.0;
      ps12[4 * b + 2] = 0.0;
      ps12[4 * b + 3] = 1.0;
    }
    d.push_back({"powell-singular-ext", 12, powell_singular_ext_res, ps12});
    d.push_back({"trigonometric", 10, trigonometric_res,
                 Vec::Constant(10, 1.0 / 10.0)});
    d.push_back({"beale", 2, beale_res, from_list({1.0, 1.0})});
    d.push_back({"freudenstein-roth", 2, freudenstein_roth_res,
                 from_list({0.5, -2.0})});
    d.push_back({"helical-valley", 3, helical_valley_res,
                 from_list({-1.0, 0.0, 0.0})});
    d.push_back({"bard", 3, bard_res, from_list({1.0, 1.0, 1.0})});
    d.push_back({"box3d", 3, box3d_res, from_list({0.0, 10.0, 20.0})});
    d.push_back({"wood", 4, wood_res, from_list({-3.0, -1.0, -3.0, -1.0})});
    return d;
  }();
  return defs;
}

}  // namespace

const std::vector<std::string>& bench_problem_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& def : problem_defs()) n.emplace_back(def.name);
    return n;
  }();
  return names;
}

BenchProblem make_bench_problem(const std::string& name, BenchVariant variant,
                                double noise_scale, std::uint64_t noise_seed) {
  for (const auto& def : problem_defs()) {
    if (name == def.name) {
      BenchProblem p;
      p.name = name;
      p.dim = def.dim;
      p.residuals = def.residuals;
      p.variant = variant;
      p.start = def.start;
      p.noise_scale = noise_scale;
      p.noise_seed = noise_seed;
      return p;
    }
  }
  throw ConfigError("unknown bench problem \"" + name + "\"");
}

double bench_oscillation(const Eigen::VectorXd& x) {
  const double alpha = 0.9 * std::sin(100.0 * x.lpNorm<1>()) *
                           std::cos(100.0 * x.lpNorm<Eigen::Infinity>()) +
                       0.1 * std::cos(x.norm());
  return alpha * (4.0 * alpha * alpha - 3.0);
}

double evaluate_problem(const BenchProblem& problem, const Eigen::VectorXd& x) {
  if (x.size() != problem.dim)
    throw ConfigError("evaluate_problem: x has dimension " +
                      std::to_string(x.size()) + ", expected " +
                      std::to_string(problem.dim));
  const Eigen::VectorXd r = problem.residuals(x);
  if (!r.allFinite())
    throw NumericError("evaluate_problem: non-finite residual in \"" +
                       problem.name + "\"");
  switch (problem.variant) {
    case BenchVariant::Smooth:
      return r.squaredNorm();
    case BenchVariant::NonDiff:
      return r.lpNorm<1>();
    case BenchVariant::NoisyDeterministic:
      return r.squaredNorm() *
             (1.0 + problem.noise_scale * bench_oscillation(x));
    case BenchVariant::NoisyStochastic: {
      Rng rng(derive_seed(problem.noise_seed, (*problem.eval_index)++));
      const double u = 2.0 * rng.next_uniform() - 1.0;
      return r.squaredNorm() * (1.0 + problem.noise_scale * u);
    }
  }
  throw ConfigError("evaluate_problem: unknown variant");
}

std::vector<double> normalized_score(const std::vector<double>& values,
                                     bool lower_is_better) {
  if (values.size() < 2)
    throw ConfigError("normalized_score: need at least two methods");
  for (double v : values)
    if (!std::isfinite(v))
      throw NumericError("normalized_score: non-finite value");
  const double lo = *std::min_element(values.begin(), values.end());
  const double hi = *std::max_element(values.begin(), values.end());
  std::vector<double> scores(values.size(), 0.0);
  if (lo == hi) return scores;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double s = (values[i] - lo) / (hi - lo);
    scores[i] = lower_is_better ? s : 1.0 - s;
  }
  return scores;
}

std::vector<double> average_rank(
    const std::vector<std::vector<double>>& task_values, bool lower_is_better) {
  if (task_values.empty())
    throw ConfigError("average_rank: no tasks");
  const std::size_t methods = task_values.front().size();
  if (methods == 0) throw ConfigError("average_rank: no methods");
  std::vector<double> total(methods, 0.0);
  for (const auto& row : task_values) {
    if (row.size() != methods)
      throw ConfigError("average_rank: a task is missing method values");
    std::vector<std::size_t> order(methods);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return lower_is_better ? row[a] < row[b] : row[a] > row[b];
    });
    std::size_t i = 0;
    while (i < methods) {
      std::size_t j = i;
      while (j + 1 < methods && row[order[j + 1]] == row[order[i]]) ++j;
      // positions i..j (0-based) tie; they share the mean 1-based rank
      const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) total[order[k]] += rank;
      i = j + 1;
    }
  }
  for (double& t : total) t /= static_cast<double>(task_values.size());
  return total;
}

MethodResult run_bench(const BenchProblem& problem,
                       const SmoothingConfig& estimator_cfg,
                       const ExplorationScheme& exploration_scheme,
                       const BenchDriverConfig& driver_cfg) {
  const Eigen::Index d = problem.dim;
  Objective base;
  base.dim = d;
  base.fn = [problem](const Eigen::VectorXd& x, std::uint64_t) {
    return evaluate_problem(problem, x);
  };
  auto counter = std::make_shared<long long>(0);
  const Objective counted = make_counting(base, counter);

  SmoothingConfig cfg = estimator_cfg;
  if (cfg.num_directions == 0) cfg.num_directions = d;

  auto call_index = std::make_shared<std::uint64_t>(0);
  const auto scheme = exploration_scheme;
  const auto seed = driver_cfg.seed;
  auto grad = [counted, cfg, scheme, seed, call_index,
               d](const Eigen::VectorXd& x) {
    const std::uint64_t t = (*call_index)++;
    ExplorationMatrix expl =
        sample_for_iteration(scheme, d, cfg.num_directions, seed, t);
    return estimate_gradient(counted, x, cfg, expl,
                             estimator_eval_seed(seed, t))
        .gradient;
  };
  auto f = [counted](const Eigen::VectorXd& x) { return counted(x, 0); };

  const BfgsResult r = bfgs_minimize(f, grad, problem.start, driver_cfg.bfgs);

  MethodResult out;
  out.method_name = std::string(estimator_name(cfg.estimator)) + "/" +
                    scheme_name(scheme.kind);
  out.final_objective = r.f;
  out.function_evaluations = *counter;
  return out;
}

}  // namespace ses
