#include "ses/environments.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <Eigen/Cholesky>

#include "ses/rng.hpp"

namespace ses {

namespace {

double clip(double v, double lo, double hi) {
  return std::min(std::max(v, lo), hi);
}

double wrap_angle(double theta) {
  double wrapped = std::fmod(theta + M_PI, 2.0 * M_PI);
  if (wrapped < 0) wrapped += 2.0 * M_PI;
  return wrapped - M_PI;
}

constexpr double kPendulumDt = 0.05;
constexpr double kPendulumG = 10.0;
constexpr double kPendulumMaxSpeed = 8.0;
constexpr double kPendulumMaxTorque = 2.0;

constexpr double kCarPower = 0.0015;
constexpr double kCarGravity = 0.0025;
constexpr double kCarMinPos = -1.2;
constexpr double kCarMaxPos = 0.6;
constexpr double kCarMaxSpeed = 0.07;
constexpr double kCarGoal = 0.45;

}  // namespace

PendulumStepResult pendulum_step(const PendulumState& state, double torque) {
  if (!std::isfinite(torque))
    throw NumericError("pendulum_step: non-finite torque");
  const double u = clip(torque, -kPendulumMaxTorque, kPendulumMaxTorque);
  const double angle = wrap_angle(state.theta);
  const double reward =
      -(angle * angle + 0.1 * state.theta_dot * state.theta_dot +
        0.001 * u * u);

  PendulumStepResult out;
  double theta_dot =
      state.theta_dot +
      (3.0 * kPendulumG / 2.0 * std::sin(state.theta) + 3.0 * u) * kPendulumDt;
  theta_dot = clip(theta_dot, -kPendulumMaxSpeed, kPendulumMaxSpeed);
  out.state.theta = state.theta + theta_dot * kPendulumDt;
  out.state.theta_dot = theta_dot;
  out.state.step_index = state.step_index + 1;
  out.reward = reward;
  return out;
}

Eigen::Vector3d pendulum_observation(const PendulumState& state) {
  return {std::cos(state.theta), std::sin(state.theta), state.theta_dot};
}

MountainCarStepResult mountain_car_step(const MountainCarState& state,
                                        double force) {
  if (!std::isfinite(force))
    throw NumericError("mountain_car_step: non-finite force");
  const double f = clip(force, -1.0, 1.0);

  MountainCarStepResult out;
  double velocity =
      state.velocity + f * kCarPower - kCarGravity * std::cos(3.0 * state.position);
  velocity = clip(velocity, -kCarMaxSpeed, kCarMaxSpeed);
  double position = clip(state.position + velocity, kCarMinPos, kCarMaxPos);
  if (position <= kCarMinPos && velocity < 0.0) velocity = 0.0;

  out.state.position = position;
  out.state.velocity = velocity;
  out.state.step_index = state.step_index + 1;
  out.done = position >= kCarGoal;
  out.reward = -0.1 * f * f + (out.done ? 100.0 : 0.0);
  return out;
}

double quadratic_env(const Eigen::MatrixXd& Q, const Eigen::VectorXd& theta) {
  if (Q.rows() != Q.cols() || Q.rows() != theta.size())
    throw ConfigError("quadratic_env: dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(Q);
  if (llt.info() != Eigen::Success)
    throw ConfigError("quadratic_env: Q must be positive definite");
  return -theta.dot(Q * theta);
}

namespace {

class PendulumEnv final : public Environment {
 public:
  Eigen::Index observation_dim() const override { return 3; }
  Eigen::Index action_dim() const override { return 1; }
  double action_bound() const override { return kPendulumMaxTorque; }

  EnvState reset(std::uint64_t seed) override {
    Rng rng(seed);
    state_.theta = (2.0 * rng.next_uniform() - 1.0) * M_PI;
    state_.theta_dot = 2.0 * rng.next_uniform() - 1.0;
    state_.step_index = 0;
    return {pendulum_observation(state_), 0, false};
  }

  EnvState step(const Eigen::VectorXd& action, double& reward) override {
    PendulumStepResult r = pendulum_step(state_, action[0]);
    state_ = r.state;
    reward = r.reward;
    return {pendulum_observation(state_), state_.step_index, false};
  }

 private:
  PendulumState state_;
};

class MountainCarEnv final : public Environment {
 public:
  Eigen::Index observation_dim() const override { return 2; }
  Eigen::Index action_dim() const override { return 1; }
  double action_bound() const override { return 1.0; }

  EnvState reset(std::uint64_t seed) override {
    Rng rng(seed);
    state_.position = -0.6 + 0.2 * rng.next_uniform();
    state_.velocity = 0.0;
    state_.step_index = 0;
    return {observation(), 0, state_.position >= kCarGoal};
  }

  EnvState step(const Eigen::VectorXd& action, double& reward) override {
    MountainCarStepResult r = mountain_car_step(state_, action[0]);
    state_ = r.state;
    reward = r.reward;
    return {observation(), state_.step_index, r.done};
  }

 private:
  Eigen::VectorXd observation() const {
    Eigen::VectorXd obs(2);
    obs << state_.position, state_.velocity;
    return obs;
  }

  MountainCarState state_;
};

}  // namespace

std::unique_ptr<Environment> make_env(EnvKind kind) {
  switch (kind) {
    case EnvKind::Pendulum:
      return std::make_unique<PendulumEnv>();
    case EnvKind::MountainCar:
      return std::make_unique<MountainCarEnv>();
  }
  throw ConfigError("make_env: unknown environment kind");
}

EnvKind env_kind_from_string(const std::string& name) {
  if (name == "pendulum") return EnvKind::Pendulum;
  if (name == "cont-mountain-car") return EnvKind::MountainCar;
  throw ConfigError("unknown environment \"" + name +
                    "\" (expected pendulum or cont-mountain-car)");
}

const char* env_name(EnvKind kind) {
  switch (kind) {
    case EnvKind::Pendulum:
      return "pendulum";
    case EnvKind::MountainCar:
      return "cont-mountain-car";
  }
  throw ConfigError("env_name: unknown environment kind");
}

std::unique_ptr<Environment> make_env(const std::string& name) {
  return make_env(env_kind_from_string(name));
}

namespace {

RolloutResult rollout_impl(EnvKind kind, const PolicySpec& spec,
                           const Eigen::VectorXd& params, int max_steps,
                           std::uint64_t seed, std::ostream* trace) {
  if (max_steps < 1) throw ConfigError("rollout: max_steps must be >= 1");
  auto env = make_env(kind);
  if (spec.input_dim != env->observation_dim() ||
      spec.output_dim != env->action_dim())
    throw ConfigError("rollout: policy dimensions do not match environment");

  EnvState s = env->reset(seed);
  const double bound = env->action_bound();
  // One devectorize per rollout; the policy is fixed across the episode.
  const PolicyLayers layers = devectorize(spec, params);
  const Eigen::Index largest =
      std::max({spec.input_dim, spec.hidden1, spec.hidden2, spec.output_dim});
  const MatvecMode mode =
      largest < 64 ? MatvecMode::Direct : MatvecMode::FFT;
  RolloutResult result;
  result.seed = seed;
  while (result.steps < max_steps && !s.done) {
    Eigen::VectorXd action = bound * forward(layers, s.observation, mode);
    double reward = 0.0;
    EnvState next = env->step(action, reward);
    if (trace) {
      *trace << "{\"step\":" << result.steps << ",\"observation\":[";
      for (Eigen::Index i = 0; i < s.observation.size(); ++i)
        *trace << (i ? "," : "") << s.observation[i];
      *trace << "],\"action\":[";
      for (Eigen::Index i = 0; i < action.size(); ++i)
        *trace << (i ? "," : "") << action[i];
      *trace << "],\"reward\":" << reward << "}\n";
    }
    result.total_reward += reward;
    ++result.steps;
    s = next;
  }
  return result;
}

}  // namespace

RolloutResult rollout(EnvKind kind, const PolicySpec& spec,
                      const Eigen::VectorXd& params, int max_steps,
                      std::uint64_t seed) {
  return rollout_impl(kind, spec, params, max_steps, seed, nullptr);
}

RolloutResult rollout_trace(EnvKind kind, const PolicySpec& spec,
                            const Eigen::VectorXd& params, int max_steps,
                            std::uint64_t seed, std::ostream& trace) {
  return rollout_impl(kind, spec, params, max_steps, seed, &trace);
}

Objective make_env_objective(EnvKind kind, const PolicySpec& spec,
                             int max_steps, int rollouts_per_eval) {
  if (rollouts_per_eval < 1)
    throw ConfigError("make_env_objective: rollouts_per_eval must be >= 1");
  Objective obj;
  obj.dim = param_count(spec);
  obj.fn = [kind, spec, max_steps, rollouts_per_eval](
               const Eigen::VectorXd& params, std::uint64_t seed) {
    double total = 0.0;
    for (int r = 0; r < rollouts_per_eval; ++r)
      total += rollout(kind, spec, params, max_steps,
                       derive_seed(seed, static_cast<std::uint64_t>(r)))
                   .total_reward;
    return total / rollouts_per_eval;
  };
  return obj;
}

Objective make_quadratic_objective(const Eigen::MatrixXd& Q) {
  Eigen::LLT<Eigen::MatrixXd> llt(Q);
  if (llt.info() != Eigen::Success)
    throw ConfigError("make_quadratic_objective: Q must be positive definite");
  Objective obj;
  obj.dim = Q.rows();
  obj.fn = [Q](const Eigen::VectorXd& theta, std::uint64_t) {
    return -theta.dot(Q * theta);
  };
  return obj;
}

}  // namespace ses
