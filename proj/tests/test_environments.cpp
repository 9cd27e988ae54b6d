#include <doctest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ses/environments.hpp"
#include "ses/policies.hpp"
#include "ses/rng.hpp"
#include "test_util.hpp"

using namespace ses;

namespace {

// Independent re-statement of the documented angle convention: wrap to
// [-pi, pi] before scoring.
double wrap_to_pi(double theta) {
  double w = std::fmod(theta + M_PI, 2.0 * M_PI);
  if (w < 0) w += 2.0 * M_PI;
  return w - M_PI;
}

double pendulum_reward_oracle(double theta, double theta_dot, double u) {
  const double angle = wrap_to_pi(theta);
  return -(angle * angle + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
}

}  // namespace

TEST_CASE("pendulum upright at rest with zero torque scores zero and stays") {
  PendulumState s;  // theta = 0, theta_dot = 0
  PendulumStepResult r = pendulum_step(s, 0.0);
  CHECK(r.reward == 0.0);
  CHECK(r.state.theta == 0.0);      // sin(0) = 0, no torque
  CHECK(r.state.theta_dot == 0.0);
  CHECK(r.state.step_index == 1);
}

TEST_CASE("pendulum step matches the Euler dynamics oracle") {
  PendulumState s;
  s.theta = 1.0;
  s.theta_dot = 0.5;
  const double u = 1.5;
  PendulumStepResult r = pendulum_step(s, u);

  CHECK(r.reward == pendulum_reward_oracle(1.0, 0.5, 1.5));
  // theta_dot' = theta_dot + (3 g / 2 sin(theta) + 3 u) dt with g = 10,
  // dt = 0.05; theta' = theta + theta_dot' dt.
  const double expected_dot = 0.5 + (15.0 * std::sin(1.0) + 4.5) * 0.05;
  CHECK(r.state.theta_dot == expected_dot);
  CHECK(r.state.theta == 1.0 + expected_dot * 0.05);
}

TEST_CASE("pendulum torque is clipped to [-2, 2]") {
  PendulumState s;
  s.theta = 0.4;
  s.theta_dot = -0.3;
  PendulumStepResult clipped = pendulum_step(s, 5.0);
  PendulumStepResult at_max = pendulum_step(s, 2.0);
  CHECK(clipped.reward == at_max.reward);
  CHECK(clipped.state.theta == at_max.state.theta);
  CHECK(clipped.state.theta_dot == at_max.state.theta_dot);

  PendulumStepResult neg = pendulum_step(s, -100.0);
  PendulumStepResult at_min = pendulum_step(s, -2.0);
  CHECK(neg.state.theta_dot == at_min.state.theta_dot);
}

TEST_CASE("pendulum angular velocity saturates at 8") {
  PendulumState s;
  s.theta = M_PI / 2.0;  // maximum gravitational lever arm
  s.theta_dot = 7.9;
  PendulumStepResult r = pendulum_step(s, 2.0);
  // Unclipped update is 7.9 + (15 sin(pi/2) + 6) * 0.05 = 8.95.
  CHECK(r.state.theta_dot == 8.0);
  CHECK(r.state.theta == M_PI / 2.0 + 8.0 * 0.05);
}

TEST_CASE("pendulum reward wraps the angle") {
  PendulumState s;
  s.theta = 3.0 * M_PI / 2.0;  // wraps to -pi/2
  PendulumStepResult r = pendulum_step(s, 0.0);
  CHECK(r.reward == pendulum_reward_oracle(3.0 * M_PI / 2.0, 0.0, 0.0));
  const double wrapped = wrap_to_pi(3.0 * M_PI / 2.0);
  CHECK(std::abs(wrapped + M_PI / 2.0) < 1e-12);

  // Symmetric angles score the same.
  PendulumState a, b;
  a.theta = 0.3;
  b.theta = -0.3;
  CHECK(pendulum_step(a, 0.0).reward == pendulum_step(b, 0.0).reward);
}

TEST_CASE("pendulum rewards are never positive and bounded below") {
  Rng rng(11);
  const double floor =
      -(M_PI * M_PI + 0.1 * 64.0 + 0.001 * 4.0);  // worst wrapped state
  for (int t = 0; t < 200; ++t) {
    PendulumState s;
    s.theta = 10.0 * (2.0 * rng.next_uniform() - 1.0);
    s.theta_dot = 8.0 * (2.0 * rng.next_uniform() - 1.0);
    const double u = 2.0 * (2.0 * rng.next_uniform() - 1.0);
    PendulumStepResult r = pendulum_step(s, u);
    CHECK(r.reward <= 0.0);
    CHECK(r.reward >= floor);
  }
}

TEST_CASE("pendulum observation is (cos, sin, velocity)") {
  PendulumState s;
  s.theta = 0.7;
  s.theta_dot = -2.5;
  Eigen::Vector3d obs = pendulum_observation(s);
  CHECK(obs[0] == std::cos(0.7));
  CHECK(obs[1] == std::sin(0.7));
  CHECK(obs[2] == -2.5);
}

TEST_CASE("pendulum step rejects non-finite torque") {
  PendulumState s;
  CHECK_THROWS_AS(pendulum_step(s, std::nan("")), NumericError);
  CHECK_THROWS_AS(
      pendulum_step(s, std::numeric_limits<double>::infinity()), NumericError);
}

TEST_CASE("mountain car step matches the dynamics oracle") {
  MountainCarState s;  // position -0.5, velocity 0
  MountainCarStepResult r = mountain_car_step(s, 1.0);
  // velocity' = velocity + f * 0.0015 - 0.0025 cos(3 position), clipped to
  // [-0.07, 0.07]; position' = position + velocity', clipped to [-1.2, 0.6].
  const double v = 0.0 + 1.0 * 0.0015 - 0.0025 * std::cos(3.0 * -0.5);
  CHECK(r.state.velocity == v);
  CHECK(r.state.position == -0.5 + v);
  CHECK(r.reward == -0.1 * 1.0 * 1.0);
  CHECK_FALSE(r.done);
  CHECK(r.state.step_index == 1);
}

TEST_CASE("mountain car force is clipped to [-1, 1]") {
  MountainCarState s;
  MountainCarStepResult big = mountain_car_step(s, 3.0);
  MountainCarStepResult one = mountain_car_step(s, 1.0);
  CHECK(big.state.velocity == one.state.velocity);
  CHECK(big.state.position == one.state.position);
  CHECK(big.reward == one.reward);  // -0.1, not -0.9
}

TEST_CASE("mountain car zeroes velocity at the left wall") {
  MountainCarState s;
  s.position = -1.19;
  s.velocity = -0.07;
  MountainCarStepResult r = mountain_car_step(s, -1.0);
  CHECK(r.state.position == -1.2);
  CHECK(r.state.velocity == 0.0);
  CHECK_FALSE(r.done);
}

TEST_CASE("mountain car pays the goal bonus when crossing 0.45") {
  MountainCarState s;
  s.position = 0.4;
  s.velocity = 0.07;
  MountainCarStepResult r = mountain_car_step(s, 1.0);
  CHECK(r.done);
  CHECK(r.state.position >= 0.45);
  CHECK(r.reward == -0.1 * 1.0 * 1.0 + 100.0);
}

TEST_CASE("mountain car step rejects non-finite force") {
  MountainCarState s;
  CHECK_THROWS_AS(mountain_car_step(s, std::nan("")), NumericError);
}

TEST_CASE("bang-bang rocking solves mountain car well under the step cap") {
  // Push in the direction of travel; this pumps energy each half-swing, so
  // the car must escape even though full throttle from rest cannot.
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    auto env = make_env(EnvKind::MountainCar);
    EnvState s = env->reset(seed);
    double total = 0.0;
    int steps = 0;
    bool done = false;
    while (steps < 200 && !done) {
      Eigen::VectorXd action(1);
      action[0] = s.observation[1] >= 0.0 ? 1.0 : -1.0;
      double reward = 0.0;
      s = env->step(action, reward);
      total += reward;
      done = s.done;
      ++steps;
    }
    CHECK(done);
    CHECK(steps < 150);
    CHECK(total == doctest::Approx(100.0 - 0.1 * steps));
  }
}

TEST_CASE("full throttle from rest cannot climb directly") {
  MountainCarState s;
  s.position = -0.5;
  s.velocity = 0.0;
  double best = s.position;
  for (int i = 0; i < 200; ++i) {
    MountainCarStepResult r = mountain_car_step(s, 1.0);
    s = r.state;
    best = std::max(best, s.position);
    if (r.done) break;
  }
  CHECK(best < 0.45);
}

TEST_CASE("quadratic env evaluates -theta^T Q theta") {
  Eigen::MatrixXd Q(2, 2);
  Q << 2.0, 0.0, 0.0, 3.0;
  Eigen::VectorXd theta(2);
  theta << 1.0, 2.0;
  CHECK(quadratic_env(Q, theta) == -14.0);
  CHECK(quadratic_env(Q, Eigen::VectorXd::Zero(2)) == 0.0);
}

TEST_CASE("quadratic env validates its inputs") {
  Eigen::MatrixXd Q(2, 2);
  Q << 2.0, 0.0, 0.0, 3.0;
  CHECK_THROWS_AS(quadratic_env(Q, Eigen::VectorXd::Zero(3)), ConfigError);

  Eigen::MatrixXd indefinite(2, 2);
  indefinite << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
  CHECK_THROWS_AS(quadratic_env(indefinite, Eigen::VectorXd::Zero(2)),
                  ConfigError);
}

TEST_CASE("quadratic objective ignores the seed and rejects non-PD matrices") {
  Eigen::MatrixXd Q(3, 3);
  Q.setIdentity();
  Q(1, 1) = 4.0;
  Objective obj = make_quadratic_objective(Q);
  CHECK(obj.dim == 3);
  Eigen::VectorXd theta(3);
  theta << 0.5, -1.0, 2.0;
  CHECK(obj.fn(theta, 1) == obj.fn(theta, 999));
  CHECK(obj.fn(theta, 0) == -theta.dot(Q * theta));

  Eigen::MatrixXd indefinite(2, 2);
  indefinite << 0.0, 1.0, 1.0, 0.0;
  CHECK_THROWS_AS(make_quadratic_objective(indefinite), ConfigError);
}

TEST_CASE("environment registry round trips names") {
  CHECK(env_kind_from_string("pendulum") == EnvKind::Pendulum);
  CHECK(env_kind_from_string("cont-mountain-car") == EnvKind::MountainCar);
  CHECK(std::string(env_name(EnvKind::Pendulum)) == "pendulum");
  CHECK(std::string(env_name(EnvKind::MountainCar)) == "cont-mountain-car");
  CHECK_THROWS_AS(env_kind_from_string("cartpole"), ConfigError);
  CHECK_THROWS_AS(make_env("lunar-lander"), ConfigError);
}

TEST_CASE("environments report their dimensions and action bounds") {
  auto pend = make_env("pendulum");
  CHECK(pend->observation_dim() == 3);
  CHECK(pend->action_dim() == 1);
  CHECK(pend->action_bound() == 2.0);

  auto car = make_env("cont-mountain-car");
  CHECK(car->observation_dim() == 2);
  CHECK(car->action_dim() == 1);
  CHECK(car->action_bound() == 1.0);
}

TEST_CASE("reset is deterministic in the seed and samples documented ranges") {
  auto pend = make_env(EnvKind::Pendulum);
  EnvState a = pend->reset(5);
  EnvState b = pend->reset(5);
  CHECK(testutil::all_equal(a.observation, b.observation));
  CHECK_FALSE(pend->reset(6).observation.isApprox(a.observation));

  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    EnvState s = pend->reset(seed);
    REQUIRE(s.observation.size() == 3);
    // (cos, sin) lies on the unit circle; velocity starts in [-1, 1].
    CHECK(std::abs(s.observation.head(2).squaredNorm() - 1.0) < 1e-12);
    CHECK(std::abs(s.observation[2]) <= 1.0);
    CHECK_FALSE(s.done);
  }

  auto car = make_env(EnvKind::MountainCar);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    EnvState s = car->reset(seed);
    REQUIRE(s.observation.size() == 2);
    CHECK(s.observation[0] >= -0.6);
    CHECK(s.observation[0] <= -0.4);
    CHECK(s.observation[1] == 0.0);
    CHECK_FALSE(s.done);
  }
}

TEST_CASE("rollout is deterministic and runs pendulum to the step cap") {
  Rng rng(21);
  const PolicySpec spec = toeplitz_spec(3, 1, 8);
  Eigen::VectorXd params = rng.gaussian_vector(param_count(spec));

  RolloutResult a = rollout(EnvKind::Pendulum, spec, params, 50, 77);
  RolloutResult b = rollout(EnvKind::Pendulum, spec, params, 50, 77);
  CHECK(a.total_reward == b.total_reward);
  CHECK(a.steps == 50);  // pendulum episodes never terminate early
  CHECK(a.seed == 77);

  RolloutResult other = rollout(EnvKind::Pendulum, spec, params, 50, 78);
  CHECK(a.total_reward != other.total_reward);
}

TEST_CASE("rollout validates policy shape and step cap") {
  const PolicySpec wrong = toeplitz_spec(4, 1, 8);
  Eigen::VectorXd params = Eigen::VectorXd::Zero(param_count(wrong));
  CHECK_THROWS_AS(rollout(EnvKind::Pendulum, wrong, params, 10, 0),
                  ConfigError);

  const PolicySpec spec = toeplitz_spec(3, 1, 8);
  Eigen::VectorXd ok = Eigen::VectorXd::Zero(param_count(spec));
  CHECK_THROWS_AS(rollout(EnvKind::Pendulum, spec, ok, 0, 0), ConfigError);
}

TEST_CASE("zero policy on mountain car stays in the valley at zero cost") {
  const PolicySpec spec = toeplitz_spec(2, 1, 8);
  Eigen::VectorXd params = Eigen::VectorXd::Zero(param_count(spec));
  RolloutResult r = rollout(EnvKind::MountainCar, spec, params, 200, 3);
  CHECK(r.steps == 200);
  CHECK(r.total_reward == 0.0);  // zero force costs nothing, never reaches goal
}

TEST_CASE("rollout trace emits one JSON line per step") {
  Rng rng(22);
  const PolicySpec spec = toeplitz_spec(3, 1, 8);
  Eigen::VectorXd params = rng.gaussian_vector(param_count(spec));

  std::ostringstream trace;
  RolloutResult traced =
      rollout_trace(EnvKind::Pendulum, spec, params, 5, 9, trace);
  RolloutResult plain = rollout(EnvKind::Pendulum, spec, params, 5, 9);
  CHECK(traced.total_reward == plain.total_reward);

  std::istringstream lines(trace.str());
  std::string line;
  int index = 0;
  double reward_sum = 0.0;
  while (std::getline(lines, line)) {
    nlohmann::json row = nlohmann::json::parse(line);
    CHECK(row.at("step").get<int>() == index);
    REQUIRE(row.at("observation").size() == 3);
    REQUIRE(row.at("action").size() == 1);
    CHECK(std::abs(row.at("action")[0].get<double>()) <= 2.0);
    reward_sum += row.at("reward").get<double>();
    ++index;
  }
  CHECK(index == 5);
  // Stream printing rounds to ~6 significant digits.
  CHECK(reward_sum == doctest::Approx(traced.total_reward).epsilon(1e-4));
}

TEST_CASE("zero policy traces zero actions scaled by the bound") {
  const PolicySpec spec = toeplitz_spec(3, 1, 8);
  Eigen::VectorXd params = Eigen::VectorXd::Zero(param_count(spec));
  std::ostringstream trace;
  rollout_trace(EnvKind::Pendulum, spec, params, 3, 4, trace);
  std::istringstream lines(trace.str());
  std::string line;
  while (std::getline(lines, line)) {
    nlohmann::json row = nlohmann::json::parse(line);
    CHECK(row.at("action")[0].get<double>() == 0.0);
  }
}

TEST_CASE("env objective averages rollouts with derived seeds") {
  Rng rng(23);
  const PolicySpec spec = toeplitz_spec(3, 1, 5);
  Eigen::VectorXd params = rng.gaussian_vector(param_count(spec));
  const int rollouts = 3;
  Objective obj = make_env_objective(EnvKind::Pendulum, spec, 20, rollouts);
  CHECK(obj.dim == param_count(spec));

  const std::uint64_t seed = 42;
  double total = 0.0;
  for (int r = 0; r < rollouts; ++r)
    total += rollout(EnvKind::Pendulum, spec, params, 20,
                     derive_seed(seed, static_cast<std::uint64_t>(r)))
                 .total_reward;
  CHECK(obj.fn(params, seed) == total / rollouts);

  CHECK(obj.fn(params, seed) == obj.fn(params, seed));
  CHECK(obj.fn(params, seed) != obj.fn(params, seed + 1));

  CHECK_THROWS_AS(make_env_objective(EnvKind::Pendulum, spec, 20, 0),
                  ConfigError);
}
