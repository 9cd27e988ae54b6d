#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include <Eigen/Core>

#include "ses/errors.hpp"
#include "ses/estimators.hpp"
#include "ses/policies.hpp"

namespace ses {

// ---------------------------------------------------------------------------
// Pendulum swing-up.  Observation (cos th, sin th, th_dot), one torque input
// clipped to [-2, 2].  Reward -(angle^2 + 0.1 th_dot^2 + 0.001 torque^2) with
// the angle wrapped to [-pi, pi]; upright at rest with zero torque scores 0.
// Initial state: th ~ U[-pi, pi], th_dot ~ U[-1, 1].

struct PendulumState {
  double theta = 0.0;
  double theta_dot = 0.0;
  int step_index = 0;
};

struct PendulumStepResult {
  PendulumState state;
  double reward = 0.0;
};

PendulumStepResult pendulum_step(const PendulumState& state, double torque);
Eigen::Vector3d pendulum_observation(const PendulumState& state);

// ---------------------------------------------------------------------------
// Continuous mountain car.  Observation (position, velocity), one force input
// clipped to [-1, 1].  Reward -0.1 force^2 per step plus +100 on reaching the
// goal position; the engine is too weak to climb directly, so solving
// requires rocking.  Initial state: position ~ U[-0.6, -0.4], velocity 0.

struct MountainCarState {
  double position = -0.5;
  double velocity = 0.0;
  int step_index = 0;
};

struct MountainCarStepResult {
  MountainCarState state;
  double reward = 0.0;
  bool done = false;
};

MountainCarStepResult mountain_car_step(const MountainCarState& state,
                                        double force);

// ---------------------------------------------------------------------------
// Reward-convention quadratic: -theta^T Q theta for positive-definite Q.

double quadratic_env(const Eigen::MatrixXd& Q, const Eigen::VectorXd& theta);

// ---------------------------------------------------------------------------
// Generic episodic interface used by rollout and the registry.

struct EnvState {
  Eigen::VectorXd observation;
  int step_index = 0;
  bool done = false;
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual Eigen::Index observation_dim() const = 0;
  virtual Eigen::Index action_dim() const = 0;
  // Largest admissible |action| coordinate; policy outputs in (-1,1) are
  // scaled by this bound before stepping.
  virtual double action_bound() const = 0;
  virtual EnvState reset(std::uint64_t seed) = 0;
  virtual EnvState step(const Eigen::VectorXd& action, double& reward) = 0;
};

enum class EnvKind { Pendulum, MountainCar };

EnvKind env_kind_from_string(const std::string& name);
const char* env_name(EnvKind kind);

std::unique_ptr<Environment> make_env(EnvKind kind);
// Registry names: "pendulum", "cont-mountain-car".
std::unique_ptr<Environment> make_env(const std::string& name);

struct RolloutResult {
  double total_reward = 0.0;
  int steps = 0;
  std::uint64_t seed = 0;
};

RolloutResult rollout(EnvKind kind, const PolicySpec& spec,
                      const Eigen::VectorXd& params, int max_steps,
                      std::uint64_t seed);

// Rollout that also appends one JSON line per step (observation, action,
// reward) to the given stream, for debugging.
RolloutResult rollout_trace(EnvKind kind, const PolicySpec& spec,
                            const Eigen::VectorXd& params, int max_steps,
                            std::uint64_t seed, std::ostream& trace);

// Blackbox objective F(theta, seed) = mean total reward over rollouts_per_eval
// episodes with rollout seeds derived from the evaluation seed.
Objective make_env_objective(EnvKind kind, const PolicySpec& spec,
                             int max_steps, int rollouts_per_eval);

// Objective view of the quadratic reward (ignores the seed argument).
Objective make_quadratic_objective(const Eigen::MatrixXd& Q);

}  // namespace ses
