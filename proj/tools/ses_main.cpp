#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "ses/errors.hpp"
#include "ses/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("-c,--config", args.config_path, "JSON config file");
  sub->add_option("--set", args.overrides,
                  "Override a config key, e.g. --set exploration.sigma=0.05")
      ->take_all();
}

// Convenience flags append to the override list so they win over the file.
void add_value_flag(CLI::App* sub, CommonArgs& args, const std::string& flag,
                    const std::string& key, const std::string& help) {
  sub->add_option_function<std::string>(
         flag,
         [&args, key](const std::string& v) {
           args.overrides.push_back(key + "=" + v);
         },
         help);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured evolution strategies toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string mode;
  std::string role = "local";

  auto* mse = app.add_subcommand("mse-study", "Estimator MSE comparison grid");
  auto* bench = app.add_subcommand("bench", "Derivative-free benchmark suite");
  auto* train = app.add_subcommand("train", "Optimize a target with ES");
  auto* grad = app.add_subcommand("grad-check", "Estimator sanity check");
  auto* coord = app.add_subcommand("coordinator", "Serve distributed training");
  auto* worker = app.add_subcommand("worker", "Evaluate rows for a coordinator");

  for (CLI::App* sub : {mse, bench, train, grad, coord, worker}) {
    add_common(sub, args);
    add_value_flag(sub, args, "--seed", "master_seed", "Master seed");
    add_value_flag(sub, args, "--sigma", "exploration.sigma",
                   "Smoothing radius");
    add_value_flag(sub, args, "-N,--directions", "exploration.N",
                   "Directions per iteration (0 = dimension)");
    add_value_flag(sub, args, "--scheme", "exploration.scheme",
                   "iid | gauss-ort | hd | gauss-ort-renorm | hd-renorm | qmc");
    add_value_flag(sub, args, "--estimator", "estimator",
                   "vanilla | antithetic | forward-fd");
    add_value_flag(sub, args, "-o,--output-dir", "output_dir",
                   "Artifact directory");
  }
  for (CLI::App* sub : {train, coord, worker}) {
    add_value_flag(sub, args, "--env", "target.env", "Environment name");
    add_value_flag(sub, args, "--iterations", "optimizer.max_iterations",
                   "Training iterations");
    add_value_flag(sub, args, "--lr", "optimizer.learning_rate",
                   "Learning rate");
  }
  for (CLI::App* sub : {coord, worker}) {
    add_value_flag(sub, args, "--address", "distributed.address",
                   "Coordinator address");
    add_value_flag(sub, args, "--port", "distributed.port",
                   "Coordinator port (0 = ephemeral)");
    add_value_flag(sub, args, "--workers", "distributed.num_workers",
                   "Worker count");
  }
  add_value_flag(bench, args, "--problem", "bench.problem",
                 "Problem name or \"all\"");
  add_value_flag(bench, args, "--variant", "bench.variant",
                 "smooth | nondiff | noisy-det | noisy-stoch | all");
  add_value_flag(mse, args, "--trials", "mse.trials", "Monte Carlo trials");
  add_value_flag(mse, args, "--dim", "mse.dim", "Problem dimension");

  mse->callback([&] { mode = "mse-study"; });
  bench->callback([&] { mode = "bench"; });
  train->callback([&] { mode = "train"; });
  grad->callback([&] { mode = "grad-check"; });
  coord->callback([&] {
    mode = "train";
    role = "coordinator";
  });
  worker->callback([&] {
    mode = "train";
    role = "worker";
  });

  CLI11_PARSE(app, argc, argv);

  try {
    std::vector<std::string> overrides;
    overrides.push_back("mode=" + mode);
    overrides.push_back("distributed.role=" + role);
    overrides.insert(overrides.end(), args.overrides.begin(),
                     args.overrides.end());
    const ses::ExperimentConfig cfg =
        ses::parse_config(args.config_path, overrides);
    return ses::run_experiment(cfg);
  } catch (const ses::ConfigError& e) {
    ses::log_error(std::string("config: ") + e.what());
    return 2;
  } catch (const ses::ProtocolError& e) {
    ses::log_error(std::string("protocol: ") + e.what());
    return 3;
  } catch (const ses::NumericError& e) {
    ses::log_error(std::string("numeric: ") + e.what());
    return 4;
  } catch (const std::exception& e) {
    ses::log_error(e.what());
    return 1;
  }
}
