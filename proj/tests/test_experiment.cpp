// Experiment layer: config parsing/precedence, sigma and distributed
// resolution, every runner's artifact contract, and the coordinator/worker
// round trip over real sockets.
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ses/distributed.hpp"
#include "ses/environments.hpp"
#include "ses/errors.hpp"
#include "ses/experiment.hpp"
#include "ses/policies.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Keep runner logging out of the test output.  This object is constructed
// before main, i.e. before the first log_level() call latches the level.
struct QuietLogs {
  QuietLogs() { ::setenv("SES_LOG_LEVEL", "error", 1); }
} quiet_logs;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ses-experiment-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(static_cast<bool>(in));
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cols;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cols.push_back(cell);
  return cols;
}

ses::ExperimentConfig parse_with(const std::vector<std::string>& overrides) {
  return ses::parse_config("", overrides);
}

// Restores (or removes) an environment variable when the scope ends.
struct EnvVarGuard {
  std::string name;
  bool had;
  std::string old;
  EnvVarGuard(const char* n, const char* value) : name(n) {
    const char* cur = std::getenv(n);
    had = cur != nullptr;
    if (had) old = cur;
    ::setenv(n, value, 1);
  }
  ~EnvVarGuard() {
    if (had)
      ::setenv(name.c_str(), old.c_str(), 1);
    else
      ::unsetenv(name.c_str());
  }
};

fs::path write_config_file(const fs::path& dir, const std::string& body) {
  const fs::path path = dir / "config.json";
  std::ofstream out(path, std::ios::binary);
  out << body;
  REQUIRE(static_cast<bool>(out));
  return path;
}

}  // namespace

TEST_CASE("default config tree carries every documented key and default") {
  const json j = ses::default_config_json();

  CHECK(j.at("mode") == "train");
  CHECK(j.at("estimator") == "antithetic");

  const json& ex = j.at("exploration");
  CHECK(ex.at("scheme") == "gauss-ort");
  CHECK(ex.at("k") == 1);
  CHECK(ex.at("N") == 0);
  CHECK(ex.at("sigma") == 0.0);
  CHECK(ex.at("renorm") == "sqrt-d");
  CHECK(ex.at("qmc_leap") == 700);
  CHECK(ex.at("qmc_skip") == 1000);

  const json& t = j.at("target");
  CHECK(t.at("kind") == "env");
  CHECK(t.at("env") == "pendulum");
  CHECK(t.at("layer_kind") == "toeplitz");
  CHECK(t.at("hidden") == 41);
  CHECK(t.at("max_steps") == 200);
  CHECK(t.at("rollouts_per_eval") == 1);
  CHECK(t.at("dim") == 0);
  CHECK(t.at("q_diag").is_array());
  CHECK(t.at("q_diag").empty());
  CHECK(t.at("a").is_array());
  CHECK(t.at("a").empty());

  const json& b = j.at("bench");
  CHECK(b.at("problem") == "all");
  CHECK(b.at("variant") == "smooth");
  CHECK(b.at("noise_scale") == 1e-3);
  const std::vector<std::string> methods = b.at("methods");
  REQUIRE(methods.size() == 4);
  CHECK(methods[0] == "antithetic/iid");
  CHECK(methods[1] == "antithetic/gauss-ort");
  CHECK(methods[2] == "antithetic/hd");
  CHECK(methods[3] == "forward-fd/gauss-ort");

  CHECK(j.at("mse").at("trials") == 10000);
  CHECK(j.at("mse").at("dim") == 32);

  const json& o = j.at("optimizer");
  CHECK(o.at("kind") == "adam");
  CHECK(o.at("learning_rate") == 0.01);
  CHECK(o.at("max_iterations") == 200);
  CHECK(o.at("termination_window") == 50);
  CHECK(o.at("termination_delta") == -1.0);
  CHECK(o.at("adam_beta1") == 0.9);
  CHECK(o.at("adam_beta2") == 0.999);
  CHECK(o.at("adam_epsilon") == 1e-8);

  CHECK(j.at("eval_rollouts") == 4);
  CHECK(j.at("master_seed") == 0);
  CHECK(j.at("output_dir") == "out");

  const json& d = j.at("distributed");
  CHECK(d.at("role") == "local");
  CHECK(d.at("address") == "127.0.0.1");
  CHECK(d.at("port") == 7070);
  CHECK(d.at("num_workers") == 1);
  CHECK(d.at("timeout_seconds") == 30.0);
}

TEST_CASE("parse_config with no file resolves the defaults into a typed config") {
  const ses::ExperimentConfig cfg = ses::parse_config("");

  CHECK(cfg.mode == ses::RunMode::Train);
  CHECK(cfg.estimator == ses::EstimatorKind::Antithetic);
  CHECK(cfg.scheme.kind == ses::Scheme::GaussOrt);
  CHECK(cfg.scheme.hd_blocks == 1);
  CHECK(cfg.scheme.renorm == ses::RenormKind::DeterministicSqrtD);
  CHECK(cfg.scheme.qmc.leap == 700);
  CHECK(cfg.scheme.qmc.skip == 1000);
  CHECK(cfg.num_directions == 0);
  CHECK(cfg.sigma == 0.0);
  CHECK(cfg.target.kind == "env");
  CHECK(cfg.target.env_name == "pendulum");
  CHECK(cfg.target.layer_kind == "toeplitz");
  CHECK(cfg.target.hidden == 41);
  CHECK(cfg.target.max_steps == 200);
  CHECK(cfg.target.rollouts_per_eval == 1);
  CHECK(cfg.target.dim == 0);
  CHECK(cfg.bench.problem == "all");
  CHECK(cfg.bench.variant == "smooth");
  CHECK(cfg.bench.methods.size() == 4);
  CHECK(cfg.mse.trials == 10000);
  CHECK(cfg.mse.dim == 32);
  CHECK(cfg.optimizer.kind == ses::OptimizerKind::Adam);
  CHECK(cfg.optimizer.learning_rate == 0.01);
  CHECK(cfg.optimizer.max_iterations == 200);
  CHECK(cfg.eval_rollouts == 4);
  CHECK(cfg.master_seed == 0);
  CHECK(cfg.output_dir == "out");
  CHECK(cfg.distributed.role == ses::DistRole::Local);
  CHECK(cfg.distributed.port == 7070);
  CHECK(cfg.distributed.num_workers == 1);

  // The effective image is exactly the default tree.
  CHECK(cfg.effective == ses::default_config_json());
}

TEST_CASE("config files override defaults and unknown keys are rejected") {
  const fs::path dir = fresh_dir("cfgfile");

  SUBCASE("known keys merge into the defaults") {
    const fs::path path = write_config_file(
        dir,
        R"({"exploration": {"sigma": 0.25, "N": 12}, "optimizer": {"learning_rate": 0.05}})");
    const ses::ExperimentConfig cfg = ses::parse_config(path.string());
    CHECK(cfg.sigma == 0.25);
    CHECK(cfg.num_directions == 12);
    CHECK(cfg.optimizer.learning_rate == 0.05);
    // Untouched keys keep their defaults.
    CHECK(cfg.optimizer.max_iterations == 200);
    CHECK(cfg.effective.at("exploration").at("sigma") == 0.25);
  }

  SUBCASE("unknown top-level key names the key") {
    const fs::path path = write_config_file(dir, R"({"explorations": {}})");
    CHECK_THROWS_WITH_AS(ses::parse_config(path.string()),
                         doctest::Contains("unknown key \"explorations\""),
                         ses::ConfigError);
  }

  SUBCASE("unknown nested key names the dotted path") {
    const fs::path path =
        write_config_file(dir, R"({"exploration": {"sigm": 1.0}})");
    CHECK_THROWS_WITH_AS(ses::parse_config(path.string()),
                         doctest::Contains("unknown key \"exploration.sigm\""),
                         ses::ConfigError);
  }

  SUBCASE("a non-object root is rejected") {
    const fs::path path = write_config_file(dir, "[1, 2, 3]");
    CHECK_THROWS_WITH_AS(ses::parse_config(path.string()),
                         doctest::Contains("must be a JSON object"),
                         ses::ConfigError);
  }

  SUBCASE("missing and malformed files are explicit errors") {
    CHECK_THROWS_WITH_AS(ses::parse_config((dir / "nope.json").string()),
                         doctest::Contains("cannot open"), ses::ConfigError);
    const fs::path path = write_config_file(dir, "{not json");
    CHECK_THROWS_WITH_AS(ses::parse_config(path.string()),
                         doctest::Contains("not valid JSON"),
                         ses::ConfigError);
  }

  SUBCASE("wrongly typed values name the field") {
    const fs::path path =
        write_config_file(dir, R"({"exploration": {"sigma": "big"}})");
    CHECK_THROWS_WITH_AS(ses::parse_config(path.string()),
                         doctest::Contains("exploration.sigma must be a number"),
                         ses::ConfigError);
  }
}

TEST_CASE("SES_OUTPUT_DIR overrides the file but yields to explicit flags") {
  const fs::path dir = fresh_dir("precedence");
  const fs::path path = write_config_file(dir, R"({"output_dir": "fileout"})");

  {
    const ses::ExperimentConfig cfg = ses::parse_config(path.string());
    CHECK(cfg.output_dir == "fileout");
  }
  {
    EnvVarGuard env("SES_OUTPUT_DIR", "envout");
    const ses::ExperimentConfig cfg = ses::parse_config(path.string());
    CHECK(cfg.output_dir == "envout");
    const ses::ExperimentConfig flagged =
        ses::parse_config(path.string(), {"output_dir=flagout"});
    CHECK(flagged.output_dir == "flagout");
  }
  {
    // An empty value is treated as unset.
    EnvVarGuard env("SES_OUTPUT_DIR", "");
    const ses::ExperimentConfig cfg = ses::parse_config(path.string());
    CHECK(cfg.output_dir == "fileout");
  }
}

TEST_CASE("dotted overrides parse typed values and reject malformed entries") {
  const ses::ExperimentConfig cfg =
      parse_with({"exploration.sigma=0.5", "exploration.N=12", "mode=bench",
                  "target.kind=linear", "target.a=[1.0,2.0]",
                  "optimizer.kind=sgd", "master_seed=77"});
  CHECK(cfg.sigma == 0.5);
  CHECK(cfg.num_directions == 12);
  CHECK(cfg.mode == ses::RunMode::Bench);
  CHECK(cfg.target.kind == "linear");
  REQUIRE(cfg.target.a.size() == 2);
  CHECK(cfg.target.a[0] == 1.0);
  CHECK(cfg.target.a[1] == 2.0);
  CHECK(cfg.optimizer.kind == ses::OptimizerKind::SGD);
  CHECK(cfg.master_seed == 77);

  // Later overrides win over earlier ones.
  CHECK(parse_with({"exploration.sigma=0.5", "exploration.sigma=0.75"}).sigma ==
        0.75);

  CHECK_THROWS_WITH_AS(parse_with({"exploration.sigma"}),
                       doctest::Contains("not of the form key=value"),
                       ses::ConfigError);
  CHECK_THROWS_WITH_AS(parse_with({"=5"}),
                       doctest::Contains("not of the form key=value"),
                       ses::ConfigError);
  CHECK_THROWS_WITH_AS(parse_with({"exploration.sig=1"}),
                       doctest::Contains("unknown key \"exploration.sig\""),
                       ses::ConfigError);
  CHECK_THROWS_WITH_AS(parse_with({"exploration=5"}),
                       doctest::Contains("is a section, not a value"),
                       ses::ConfigError);
  CHECK_THROWS_WITH_AS(parse_with({"exploration.sigma=abc"}),
                       doctest::Contains("could not parse value"),
                       ses::ConfigError);
}

TEST_CASE("field constraints raise ConfigError naming the offending field") {
  const std::vector<std::pair<std::string, std::string>> bad = {
      {"mode=foo", "mode"},
      {"estimator=foo", "estimator"},
      {"exploration.scheme=foo", "scheme"},
      {"exploration.k=0", "exploration.k"},
      {"exploration.renorm=bar", "renorm"},
      {"exploration.qmc_leap=-1", "qmc_leap"},
      {"exploration.N=-1", "exploration.N"},
      {"exploration.sigma=-0.5", "exploration.sigma"},
      {"target.kind=foo", "target.kind"},
      {"target.layer_kind=foo", "target.layer_kind"},
      {"target.hidden=0", "target.hidden"},
      {"target.max_steps=0", "target.max_steps"},
      {"target.rollouts_per_eval=0", "target.rollouts_per_eval"},
      {"target.dim=-1", "target.dim"},
      {"bench.noise_scale=-1", "bench.noise_scale"},
      {"bench.methods=[\"antithetic/iid\"]", "at least two"},
      {"bench.methods=[\"antithetic/iid\",\"vanilla\"]",
       "not of the form estimator/scheme"},
      {"mse.trials=0", "mse.trials"},
      {"mse.dim=0", "mse.dim"},
      {"optimizer.kind=foo", "optimizer.kind"},
      {"optimizer.learning_rate=0", "optimizer.learning_rate"},
      {"optimizer.max_iterations=0", "optimizer.max_iterations"},
      {"optimizer.termination_window=0", "optimizer.termination_window"},
      {"optimizer.adam_beta1=1.0", "adam_beta1"},
      {"optimizer.adam_epsilon=0", "adam_epsilon"},
      {"eval_rollouts=0", "eval_rollouts"},
      {"master_seed=-1", "master_seed"},
      {"output_dir=", "output_dir"},
      {"distributed.role=foo", "distributed.role"},
      {"distributed.port=70000", "distributed.port"},
      {"distributed.port=-1", "distributed.port"},
      {"distributed.num_workers=0", "distributed.num_workers"},
      {"distributed.timeout_seconds=0", "distributed.timeout_seconds"},
  };
  for (const auto& [entry, substring] : bad) {
    CAPTURE(entry);
    CHECK_THROWS_WITH_AS(parse_with({entry}),
                         doctest::Contains(substring.c_str()),
                         ses::ConfigError);
  }
  // Unknown estimator inside a method string is caught at parse time too.
  CHECK_THROWS_AS(parse_with({"bench.methods=[\"foo/iid\",\"antithetic/iid\"]"}),
                  ses::ConfigError);
  // Unknown environment names are validated when the target is an env.
  CHECK_THROWS_AS(parse_with({"target.env=foo"}), ses::ConfigError);
}

TEST_CASE("mode and role names round trip") {
  for (const char* s : {"mse-study", "bench", "train", "grad-check"})
    CHECK(std::string(ses::mode_name(ses::mode_from_string(s))) == s);
  for (const char* s : {"local", "coordinator", "worker"})
    CHECK(std::string(ses::role_name(ses::role_from_string(s))) == s);
  CHECK_THROWS_AS(ses::mode_from_string("training"), ses::ConfigError);
  CHECK_THROWS_AS(ses::role_from_string("master"), ses::ConfigError);
}

TEST_CASE("resolved sigma picks the mode default when unset") {
  CHECK(ses::resolved_sigma(ses::parse_config("")) == 0.1);  // train + env
  CHECK(ses::resolved_sigma(parse_with({"mode=mse-study"})) == 1e-6);
  CHECK(ses::resolved_sigma(parse_with({"mode=bench"})) == 1e-6);
  CHECK(ses::resolved_sigma(parse_with({"mode=grad-check"})) == 1e-6);
  CHECK(ses::resolved_sigma(
            parse_with({"target.kind=sphere", "target.dim=4"})) == 1e-6);
  // An explicit sigma always wins.
  CHECK(ses::resolved_sigma(parse_with({"exploration.sigma=0.3"})) == 0.3);
  CHECK(ses::resolved_sigma(
            parse_with({"mode=bench", "exploration.sigma=0.3"})) == 0.3);
}

TEST_CASE("resolve_distributed fills in dimensions and hashes the shared view") {
  const ses::ExperimentConfig cfg =
      parse_with({"target.kind=sphere", "target.dim=6"});
  const ses::DistributedConfig d = ses::resolve_distributed(cfg);
  CHECK(d.target.dim == 6);
  CHECK(d.smoothing.num_directions == 6);  // N = 0 resolves to the dimension
  CHECK(d.smoothing.sigma == 1e-6);
  CHECK(d.master_seed == 0);

  const ses::DistributedConfig d4 = ses::resolve_distributed(
      parse_with({"target.kind=sphere", "target.dim=6", "exploration.N=4"}));
  CHECK(d4.smoothing.num_directions == 4);

  // Inconsistent dimension declarations are rejected as ConfigError, whether
  // by the target factory's validation or the resolver's cross-check.
  CHECK_THROWS_AS(ses::resolve_distributed(parse_with(
                      {"target.kind=quadratic", "target.dim=3",
                       "target.q_diag=[1,2]"})),
                  ses::ConfigError);

  // Hash covers the evaluation contract, not the transport settings.
  const auto hash_of = [](const std::vector<std::string>& ov) {
    return ses::config_hash(ses::resolve_distributed(parse_with(ov)));
  };
  const std::vector<std::string> base = {"target.kind=sphere", "target.dim=6"};
  CHECK(hash_of(base) == hash_of(base));
  CHECK(hash_of(base) ==
        hash_of({"target.kind=sphere", "target.dim=6",
                 "distributed.num_workers=5", "distributed.port=9999",
                 "distributed.timeout_seconds=1"}));
  CHECK(hash_of(base) != hash_of({"target.kind=sphere", "target.dim=6",
                                  "exploration.sigma=0.5"}));
  CHECK(hash_of(base) !=
        hash_of({"target.kind=sphere", "target.dim=6", "master_seed=1"}));
}

TEST_CASE("grad check rejects env targets and writes the three-row report") {
  CHECK_THROWS_WITH_AS(ses::run_grad_check(parse_with({"mode=grad-check"})),
                       doctest::Contains("analytic target"), ses::ConfigError);

  const fs::path dir = fresh_dir("gradcheck");
  const ses::ExperimentConfig cfg = parse_with(
      {"mode=grad-check", "target.kind=sphere", "target.dim=6",
       "exploration.scheme=gauss-ort-renorm", "master_seed=2",
       "output_dir=" + dir.string()});
  ses::run_grad_check(cfg);

  const std::vector<std::string> lines = read_lines(dir / "gradcheck.csv");
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "# ses.grad-check.v1");
  CHECK(lines[1] ==
        "estimator,scheme,dim,num_directions,sigma,err_l2,err_inf,evaluations");

  const std::vector<std::string> estimators = {"vanilla", "antithetic",
                                               "forward-fd"};
  const std::vector<long long> evals = {6, 12, 7};
  std::vector<double> err_l2(3);
  for (int i = 0; i < 3; ++i) {
    const std::vector<std::string> cols = split_csv(lines[2 + i]);
    REQUIRE(cols.size() == 8);
    CHECK(cols[0] == estimators[static_cast<std::size_t>(i)]);
    CHECK(cols[1] == "gauss-ort-renorm");
    CHECK(cols[2] == "6");
    CHECK(cols[3] == "6");
    CHECK(std::stod(cols[4]) == 1e-6);
    err_l2[static_cast<std::size_t>(i)] = std::stod(cols[5]);
    CHECK(std::stod(cols[6]) <= err_l2[static_cast<std::size_t>(i)]);
    CHECK(std::stoll(cols[7]) == evals[static_cast<std::size_t>(i)]);
  }
  // With a complete renormalized orthogonal basis the antithetic estimate of
  // a quadratic is exact; the forward difference adds an O(sigma) bias; the
  // vanilla estimate at sigma = 1e-6 is dominated by F(theta)/sigma noise and
  // is only required to be finite.
  CHECK(std::isfinite(err_l2[0]));
  CHECK(err_l2[0] > 1.0);
  CHECK(err_l2[1] < 1e-8);
  CHECK(err_l2[2] < 1e-3);
  CHECK(err_l2[1] < err_l2[0]);
  CHECK(err_l2[2] < err_l2[0]);
}

TEST_CASE("mse study writes the schema-tagged table") {
  const fs::path dir = fresh_dir("msestudy");
  const ses::ExperimentConfig cfg =
      parse_with({"mode=mse-study", "mse.dim=8", "mse.trials=200",
                  "exploration.N=8", "master_seed=1",
                  "output_dir=" + dir.string()});
  ses::run_mse_study(cfg);

  // effective-config.json echoes the merged tree under the schema tag.
  const json eff = json::parse(read_file(dir / "effective-config.json"));
  CHECK(eff.at("schema") == "ses.config.v1");
  CHECK(eff.at("mse").at("dim") == 8);
  CHECK(eff.at("mse").at("trials") == 200);

  const std::vector<std::string> lines = read_lines(dir / "mse.csv");
  REQUIRE(lines.size() == 10);
  CHECK(lines[0] == "# ses.mse-study.v1");
  CHECK(lines[1] == "function,scheme,estimator,mse,gap_vs_iid,normalized_score");

  const std::vector<std::string> schemes = {"iid", "gauss-ort", "hd", "qmc"};
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 2; i < lines.size(); ++i)
    rows.push_back(split_csv(lines[i]));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    REQUIRE(rows[i].size() == 6);
    CHECK(rows[i][0] == (i < 4 ? "linear" : "sqnorm"));
    CHECK(rows[i][1] == schemes[i % 4]);
    CHECK(rows[i][2] == "antithetic");
  }

  // Linear: orthogonal directions beat IID, and the gap column is literally
  // mse_iid - mse_scheme (zero for the IID row itself).
  const double mse_iid = std::stod(rows[0][3]);
  const double mse_ort = std::stod(rows[1][3]);
  CHECK(mse_iid > 0.0);
  CHECK(mse_ort < mse_iid);
  CHECK(std::stod(rows[0][4]) == 0.0);
  CHECK(std::stod(rows[1][4]) == mse_iid - mse_ort);
  for (std::size_t i = 0; i < 4; ++i) {
    const double score = std::stod(rows[i][5]);
    CHECK(score >= 0.0);
    CHECK(score <= 1.0);
  }

  // sqnorm is even and theta = 0, so every antithetic estimate is exactly the
  // (zero) smoothed gradient: the whole block is zeros.
  for (std::size_t i = 4; i < 8; ++i) {
    CHECK(std::stod(rows[i][3]) == 0.0);
    CHECK(std::stod(rows[i][4]) == 0.0);
    CHECK(std::stod(rows[i][5]) == 0.0);
  }
}

namespace {

std::vector<std::string> tiny_pendulum_overrides(const fs::path& dir) {
  return {"target.hidden=8",          "target.max_steps=60",
          "exploration.N=8",          "optimizer.max_iterations=10",
          "eval_rollouts=2",          "master_seed=7",
          "output_dir=" + dir.string()};
}

}  // namespace

TEST_CASE("train writes the full artifact set for an env target") {
  const fs::path dir = fresh_dir("train-env");
  const ses::ExperimentConfig cfg = parse_with(tiny_pendulum_overrides(dir));
  const ses::TrainResult result = ses::run_train(cfg);
  REQUIRE(result.records.size() == 10);

  const std::vector<std::string> lines = read_lines(dir / "run.jsonl");
  REQUIRE(lines.size() == 11);
  CHECK(json::parse(lines[0]) == json{{"schema", "ses.train.run.v1"}});

  double running_max = -std::numeric_limits<double>::infinity();
  long long prev_evals = 0;
  double prev_wall = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    const json rec = json::parse(lines[1 + i]);
    REQUIRE(rec.size() == 5);
    for (const char* key : {"iteration", "total_reward", "max_total_reward",
                            "function_evaluations", "wall_time_seconds"})
      CHECK(rec.contains(key));

    CHECK(rec.at("iteration").get<std::size_t>() == i);
    // JSON round trips doubles exactly, so the file mirrors the result bitwise.
    CHECK(rec.at("total_reward").get<double>() ==
          result.records[i].total_reward);
    running_max = std::max(running_max, rec.at("total_reward").get<double>());
    CHECK(rec.at("max_total_reward").get<double>() == running_max);

    const long long evals = rec.at("function_evaluations").get<long long>();
    CHECK(evals - prev_evals == 2 * 8 + 2);  // antithetic pairs + eval rollouts
    prev_evals = evals;

    const double wall = rec.at("wall_time_seconds").get<double>();
    CHECK(wall >= prev_wall);
    prev_wall = wall;
  }

  const std::vector<std::string> summary = read_lines(dir / "summary.csv");
  REQUIRE(summary.size() == 3);
  CHECK(summary[0] == "# ses.train.summary.v1");
  CHECK(summary[1] == "final_reward,max_reward,iterations,evaluations");
  const std::vector<std::string> cols = split_csv(summary[2]);
  REQUIRE(cols.size() == 4);
  CHECK(std::stod(cols[0]) == result.records.back().total_reward);
  CHECK(std::stod(cols[1]) == result.records.back().max_total_reward);
  CHECK(std::stoll(cols[2]) == 10);
  CHECK(std::stoll(cols[3]) ==
        result.records.back().function_evaluations_cumulative);

  // The serialized policy is the best parameter vector under the env's
  // observation/action shape, in both binary and text form.
  const ses::PolicySpec expected = ses::toeplitz_spec(3, 1, 8);
  REQUIRE(result.best_params.size() == ses::param_count(expected));

  std::ifstream bin(dir / "policy.bin", std::ios::binary);
  REQUIRE(static_cast<bool>(bin));
  const auto [bin_spec, bin_params] = ses::parse_policy_binary(bin);
  CHECK(ses::param_count(bin_spec) == ses::param_count(expected));
  REQUIRE(bin_params.size() == result.best_params.size());
  CHECK(bin_params == result.best_params);

  std::ifstream txt(dir / "policy.txt");
  REQUIRE(static_cast<bool>(txt));
  const auto [txt_spec, txt_params] = ses::parse_policy_text(txt);
  CHECK(ses::param_count(txt_spec) == ses::param_count(expected));
  REQUIRE(txt_params.size() == result.best_params.size());
  CHECK(txt_params == result.best_params);

  // Identical forward responses confirm the specs match structurally.
  Eigen::VectorXd obs(3);
  obs << 0.3, -0.5, 0.9;
  CHECK(ses::forward(bin_spec, bin_params, obs) ==
        ses::forward(expected, result.best_params, obs));
}

TEST_CASE("train artifacts are byte-reproducible across identical runs") {
  const fs::path dir_a = fresh_dir("train-repro-a");
  const fs::path dir_b = fresh_dir("train-repro-b");
  ses::run_train(parse_with(tiny_pendulum_overrides(dir_a)));
  ses::run_train(parse_with(tiny_pendulum_overrides(dir_b)));

  CHECK(read_file(dir_a / "policy.bin") == read_file(dir_b / "policy.bin"));
  CHECK(read_file(dir_a / "policy.txt") == read_file(dir_b / "policy.txt"));
  CHECK(read_file(dir_a / "summary.csv") == read_file(dir_b / "summary.csv"));

  // run.jsonl matches once wall-clock timings are stripped.
  const std::vector<std::string> lines_a = read_lines(dir_a / "run.jsonl");
  const std::vector<std::string> lines_b = read_lines(dir_b / "run.jsonl");
  REQUIRE(lines_a.size() == lines_b.size());
  for (std::size_t i = 0; i < lines_a.size(); ++i) {
    json ja = json::parse(lines_a[i]);
    json jb = json::parse(lines_b[i]);
    ja.erase("wall_time_seconds");
    jb.erase("wall_time_seconds");
    CHECK(ja == jb);
  }

  // The effective configs differ only in the output directory.
  json ea = json::parse(read_file(dir_a / "effective-config.json"));
  json eb = json::parse(read_file(dir_b / "effective-config.json"));
  ea.erase("output_dir");
  eb.erase("output_dir");
  CHECK(ea == eb);
}

TEST_CASE("a quadratic target writes params.txt instead of a policy pair") {
  const fs::path dir = fresh_dir("train-quadratic");
  const ses::ExperimentConfig cfg = parse_with(
      {"target.kind=quadratic", "target.dim=5", "target.q_diag=[1,2,3,4,5]",
       "estimator=forward-fd", "exploration.N=5", "exploration.sigma=0.5",
       "optimizer.max_iterations=6", "eval_rollouts=1", "master_seed=9",
       "output_dir=" + dir.string()});
  const ses::TrainResult result = ses::run_train(cfg);
  REQUIRE(result.records.size() == 6);

  CHECK(!fs::exists(dir / "policy.bin"));
  CHECK(!fs::exists(dir / "policy.txt"));
  const std::vector<std::string> lines = read_lines(dir / "params.txt");
  REQUIRE(result.final_params.size() == 5);
  REQUIRE(lines.size() == 5);
  for (Eigen::Index i = 0; i < 5; ++i)
    CHECK(std::stod(lines[static_cast<std::size_t>(i)]) ==
          result.final_params[i]);
}

TEST_CASE("in-process distributed training matches the local run bitwise") {
  const std::vector<std::string> base = {
      "target.kind=linear", "target.dim=4", "target.a=[0.3,-0.7,1.1,0.4]",
      "exploration.N=4",    "exploration.sigma=0.1",
      "optimizer.max_iterations=6", "eval_rollouts=1", "master_seed=3"};

  const fs::path dir_local = fresh_dir("train-local");
  std::vector<std::string> local = base;
  local.push_back("output_dir=" + dir_local.string());
  const ses::TrainResult r_local = ses::run_train(parse_with(local));

  const fs::path dir_dist = fresh_dir("train-inproc");
  std::vector<std::string> dist = base;
  dist.push_back("output_dir=" + dir_dist.string());
  dist.push_back("distributed.num_workers=3");
  const ses::TrainResult r_dist = ses::run_train(parse_with(dist));

  REQUIRE(r_local.records.size() == r_dist.records.size());
  for (std::size_t i = 0; i < r_local.records.size(); ++i) {
    CHECK(r_dist.records[i].total_reward == r_local.records[i].total_reward);
    CHECK(r_dist.records[i].function_evaluations_cumulative ==
          r_local.records[i].function_evaluations_cumulative);
  }
  CHECK(r_dist.final_params == r_local.final_params);
  CHECK(r_dist.best_params == r_local.best_params);

  // The on-disk reward trace is identical too.
  const std::vector<std::string> la = read_lines(dir_local / "run.jsonl");
  const std::vector<std::string> lb = read_lines(dir_dist / "run.jsonl");
  REQUIRE(la.size() == lb.size());
  for (std::size_t i = 1; i < la.size(); ++i)
    CHECK(json::parse(la[i]).at("total_reward") ==
          json::parse(lb[i]).at("total_reward"));
}

TEST_CASE("run_train rejects non-local roles") {
  CHECK_THROWS_AS(ses::run_train(parse_with({"distributed.role=worker"})),
                  ses::ConfigError);
  CHECK_THROWS_AS(ses::run_train(parse_with({"distributed.role=coordinator"})),
                  ses::ConfigError);
}

TEST_CASE("run_experiment dispatches on mode and returns zero") {
  const fs::path mse_dir = fresh_dir("dispatch-mse");
  CHECK(ses::run_experiment(parse_with(
            {"mode=mse-study", "mse.dim=4", "mse.trials=50",
             "exploration.N=4", "output_dir=" + mse_dir.string()})) == 0);
  CHECK(fs::exists(mse_dir / "mse.csv"));

  const fs::path gc_dir = fresh_dir("dispatch-gradcheck");
  CHECK(ses::run_experiment(parse_with(
            {"mode=grad-check", "target.kind=sphere", "target.dim=3",
             "output_dir=" + gc_dir.string()})) == 0);
  CHECK(fs::exists(gc_dir / "gradcheck.csv"));
}

TEST_CASE("bench suite writes scores and results for a single task") {
  const fs::path dir = fresh_dir("bench");
  const ses::ExperimentConfig cfg = parse_with(
      {"mode=bench", "bench.problem=sphere", "bench.variant=smooth",
       "exploration.N=4", "optimizer.max_iterations=5", "master_seed=4",
       "output_dir=" + dir.string()});
  ses::run_bench_suite(cfg);

  const std::vector<std::string> lines = read_lines(dir / "scores.csv");
  REQUIRE(lines.size() == 6);  // schema + header + 4 methods x 1 task
  CHECK(lines[0] == "# ses.bench.scores.v1");
  CHECK(lines[1] == "method,task,value,score,rank");
  const std::vector<std::string> methods = {
      "antithetic/iid", "antithetic/gauss-ort", "antithetic/hd",
      "forward-fd/gauss-ort"};
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::vector<std::string> cols = split_csv(lines[2 + i]);
    REQUIRE(cols.size() == 5);
    CHECK(cols[0] == methods[i]);
    CHECK(cols[1] == "sphere:smooth");
    CHECK(std::isfinite(std::stod(cols[2])));
    const double score = std::stod(cols[3]);
    CHECK(score >= 0.0);
    CHECK(score <= 1.0);
    const double rank = std::stod(cols[4]);
    CHECK(rank >= 1.0);
    CHECK(rank <= 4.0);
    rank_sum += rank;
  }
  CHECK(rank_sum == doctest::Approx(10.0));  // 1+2+3+4, ties preserve the sum

  const json results = json::parse(read_file(dir / "results.json"));
  CHECK(results.at("schema") == "ses.bench.results.v1");
  CHECK(results.at("tasks") == json::array({"sphere:smooth"}));
  REQUIRE(results.at("methods").size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    const json& m = results.at("methods").at(i);
    CHECK(m.at("method") == methods[i]);
    CHECK(m.at("average_rank").get<double>() >= 1.0);
    CHECK(m.at("average_rank").get<double>() <= 4.0);
    CHECK(m.at("average_score").get<double>() >= 0.0);
    CHECK(m.at("average_score").get<double>() <= 1.0);
    CHECK(m.at("total_evaluations").get<long long>() > 0);
  }
}

TEST_CASE("the coordinator and socket workers reproduce the local run") {
  const std::vector<std::string> shared = {
      "target.kind=quadratic", "target.dim=6", "target.q_diag=[1,2,1,2,1,2]",
      "estimator=forward-fd",  "exploration.N=6", "exploration.sigma=0.5",
      "optimizer.max_iterations=4", "eval_rollouts=2", "master_seed=11"};

  // Local reference run.
  const fs::path dir_local = fresh_dir("socket-local");
  std::vector<std::string> local = shared;
  local.push_back("output_dir=" + dir_local.string());
  const ses::TrainResult r_local = ses::run_train(parse_with(local));

  // Coordinator on an ephemeral port with two socket workers.
  const fs::path dir_coord = fresh_dir("socket-coord");
  std::vector<std::string> coord = shared;
  coord.push_back("output_dir=" + dir_coord.string());
  coord.push_back("distributed.role=coordinator");
  coord.push_back("distributed.port=0");
  coord.push_back("distributed.num_workers=2");
  const ses::ExperimentConfig ccfg = parse_with(coord);

  std::exception_ptr coord_err;
  std::thread coord_thread([&] {
    try {
      ses::run_coordinator(ccfg);
    } catch (...) {
      coord_err = std::current_exception();
    }
  });

  int port = -1;
  for (int attempt = 0; attempt < 1000 && port < 0; ++attempt) {
    std::ifstream in(dir_coord / "coordinator-port.txt");
    int p = 0;
    if (in >> p && p > 0)
      port = p;
    else
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }

  std::vector<std::exception_ptr> worker_errs(2);
  std::vector<std::thread> workers;
  if (port > 0) {
    for (int w = 0; w < 2; ++w) {
      std::vector<std::string> wov = shared;
      wov.push_back("distributed.role=worker");
      wov.push_back("distributed.port=" + std::to_string(port));
      const ses::ExperimentConfig wcfg = parse_with(wov);
      workers.emplace_back([wcfg, w, &worker_errs] {
        try {
          ses::run_worker(wcfg);
        } catch (...) {
          worker_errs[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
  }
  for (auto& t : workers) t.join();
  coord_thread.join();

  if (coord_err) std::rethrow_exception(coord_err);
  for (const std::exception_ptr& e : worker_errs)
    if (e) std::rethrow_exception(e);
  REQUIRE(port > 0);

  // The distributed reward trace and summary match the local run bitwise.
  const std::vector<std::string> la = read_lines(dir_local / "run.jsonl");
  const std::vector<std::string> lc = read_lines(dir_coord / "run.jsonl");
  REQUIRE(lc.size() == la.size());
  REQUIRE(la.size() == 1 + r_local.records.size());
  for (std::size_t i = 1; i < la.size(); ++i) {
    const json ja = json::parse(la[i]);
    const json jc = json::parse(lc[i]);
    CHECK(jc.at("total_reward") == ja.at("total_reward"));
    CHECK(jc.at("max_total_reward") == ja.at("max_total_reward"));
    CHECK(jc.at("function_evaluations") == ja.at("function_evaluations"));
  }
  CHECK(read_file(dir_coord / "summary.csv") ==
        read_file(dir_local / "summary.csv"));
  CHECK(read_file(dir_coord / "params.txt") ==
        read_file(dir_local / "params.txt"));
}

TEST_CASE("log level helpers expose a latched level") {
  const ses::LogLevel lvl = ses::log_level();
  CHECK((lvl == ses::LogLevel::Error || lvl == ses::LogLevel::Info ||
         lvl == ses::LogLevel::Debug));
  // These must not throw regardless of level.
  ses::log_error("test error line");
  ses::log_info("test info line");
  ses::log_debug("test debug line");
}
