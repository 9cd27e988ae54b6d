#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ses/benchsuite.hpp"
#include "ses/distributed.hpp"
#include "ses/errors.hpp"
#include "ses/estimators.hpp"
#include "ses/exploration.hpp"
#include "ses/trainer.hpp"

namespace ses {

enum class RunMode { MseStudy, Bench, Train, GradCheck };
enum class DistRole { Local, Coordinator, Worker };

RunMode mode_from_string(const std::string& s);
const char* mode_name(RunMode m);
DistRole role_from_string(const std::string& s);
const char* role_name(DistRole r);

struct BenchSettings {
  std::string problem = "all";   // registry name or "all"
  std::string variant = "smooth";  // variant name or "all"
  double noise_scale = 1e-3;
  std::vector<std::string> methods;  // "estimator/scheme" pairs
};

struct MseSettings {
  long long trials = 10000;
  Eigen::Index dim = 32;
};

struct DistSettings {
  DistRole role = DistRole::Local;
  std::string address = "127.0.0.1";
  int port = 7070;
  int num_workers = 1;
  double timeout_seconds = 30.0;
};

struct ExperimentConfig {
  RunMode mode = RunMode::Train;
  EstimatorKind estimator = EstimatorKind::Antithetic;
  ExplorationScheme scheme;
  Eigen::Index num_directions = 0;  // 0 resolves to the target dimension
  double sigma = 0.0;               // 0 resolves to the mode default
  TargetSpec target;
  BenchSettings bench;
  MseSettings mse;
  OptimizerConfig optimizer;
  int eval_rollouts = 4;
  std::uint64_t master_seed = 0;
  std::string output_dir = "out";
  DistSettings distributed;
  // Fully merged JSON image; written as effective-config.json.
  nlohmann::json effective;
};

// The complete default configuration tree.  Every legal config key appears
// here; file and flag values are validated against it.
nlohmann::json default_config_json();

// Defaults, then the config file (optional), then SES_OUTPUT_DIR, then
// dotted-key overrides like "exploration.sigma=1e-5" in order.  Unknown keys
// and constraint violations raise ConfigError naming the field.
ExperimentConfig parse_config(const std::string& config_path,
                              const std::vector<std::string>& overrides = {});

// Mode-resolved smoothing width: explicit value, else 1e-6 for bench-style
// modes and 0.1 for training.
double resolved_sigma(const ExperimentConfig& cfg);

// Distributed view of the config with target dim and N resolved; used for
// hashing on both sides of the handshake.
DistributedConfig resolve_distributed(const ExperimentConfig& cfg);

// Runners.  Each writes its artifacts under cfg.output_dir (plus
// effective-config.json) and throws on failure.
void run_mse_study(const ExperimentConfig& cfg);
void run_bench_suite(const ExperimentConfig& cfg);
TrainResult run_train(const ExperimentConfig& cfg);
void run_grad_check(const ExperimentConfig& cfg);
void run_coordinator(const ExperimentConfig& cfg);
void run_worker(const ExperimentConfig& cfg);

// Dispatches on mode and distributed role; returns the process exit code.
int run_experiment(const ExperimentConfig& cfg);

// Stderr logging gated by SES_LOG_LEVEL (error|info|debug; default info).
enum class LogLevel { Error = 0, Info = 1, Debug = 2 };
LogLevel log_level();
void log_error(const std::string& message);
void log_info(const std::string& message);
void log_debug(const std::string& message);

}  // namespace ses
