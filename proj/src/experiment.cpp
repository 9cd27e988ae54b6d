#include "ses/experiment.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "ses/environments.hpp"
#include "ses/policies.hpp"
#include "ses/rng.hpp"

namespace ses {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Logging.

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* raw = std::getenv("SES_LOG_LEVEL");
    if (raw == nullptr) return LogLevel::Info;
    const std::string s(raw);
    if (s == "error") return LogLevel::Error;
    if (s == "info") return LogLevel::Info;
    if (s == "debug") return LogLevel::Debug;
    std::fprintf(stderr, "[ses] error: unknown SES_LOG_LEVEL \"%s\"\n",
                 raw);
    return LogLevel::Info;
  }();
  return level;
}

namespace {
void log_at(LogLevel lvl, const char* prefix, const std::string& message) {
  if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
  std::fprintf(stderr, "[ses] %s%s\n", prefix, message.c_str());
}
}  // namespace

void log_error(const std::string& message) {
  log_at(LogLevel::Error, "error: ", message);
}
void log_info(const std::string& message) { log_at(LogLevel::Info, "", message); }
void log_debug(const std::string& message) {
  log_at(LogLevel::Debug, "debug: ", message);
}

// ---------------------------------------------------------------------------
// Enum names.

RunMode mode_from_string(const std::string& s) {
  if (s == "mse-study") return RunMode::MseStudy;
  if (s == "bench") return RunMode::Bench;
  if (s == "train") return RunMode::Train;
  if (s == "grad-check") return RunMode::GradCheck;
  throw ConfigError("mode: unknown value \"" + s +
                    "\" (expected mse-study, bench, train, or grad-check)");
}

const char* mode_name(RunMode m) {
  switch (m) {
    case RunMode::MseStudy:
      return "mse-study";
    case RunMode::Bench:
      return "bench";
    case RunMode::Train:
      return "train";
    case RunMode::GradCheck:
      return "grad-check";
  }
  throw ConfigError("mode_name: unknown mode");
}

DistRole role_from_string(const std::string& s) {
  if (s == "local") return DistRole::Local;
  if (s == "coordinator") return DistRole::Coordinator;
  if (s == "worker") return DistRole::Worker;
  throw ConfigError("distributed.role: unknown value \"" + s +
                    "\" (expected local, coordinator, or worker)");
}

const char* role_name(DistRole r) {
  switch (r) {
    case DistRole::Local:
      return "local";
    case DistRole::Coordinator:
      return "coordinator";
    case DistRole::Worker:
      return "worker";
  }
  throw ConfigError("role_name: unknown role");
}

// ---------------------------------------------------------------------------
// Config tree.

json default_config_json() {
  json j;
  j["mode"] = "train";
  j["estimator"] = "antithetic";
  j["exploration"] = {{"scheme", "gauss-ort"}, {"k", 1},       {"N", 0},
                      {"sigma", 0.0},          {"renorm", "sqrt-d"},
                      {"qmc_leap", 700},       {"qmc_skip", 1000}};
  j["target"] = {{"kind", "env"},
                 {"env", "pendulum"},
                 {"layer_kind", "toeplitz"},
                 {"hidden", 41},
                 {"max_steps", 200},
                 {"rollouts_per_eval", 1},
                 {"dim", 0},
                 {"q_diag", json::array()},
                 {"a", json::array()}};
  j["bench"] = {{"problem", "all"},
                {"variant", "smooth"},
                {"noise_scale", 1e-3},
                {"methods", json::array({"antithetic/iid", "antithetic/gauss-ort",
                                         "antithetic/hd",
                                         "forward-fd/gauss-ort"})}};
  j["mse"] = {{"trials", 10000}, {"dim", 32}};
  j["optimizer"] = {{"kind", "adam"},
                    {"learning_rate", 0.01},
                    {"max_iterations", 200},
                    {"termination_window", 50},
                    {"termination_delta", -1.0},
                    {"adam_beta1", 0.9},
                    {"adam_beta2", 0.999},
                    {"adam_epsilon", 1e-8}};
  j["eval_rollouts"] = 4;
  j["master_seed"] = 0;
  j["output_dir"] = "out";
  j["distributed"] = {{"role", "local"},
                      {"address", "127.0.0.1"},
                      {"port", 7070},
                      {"num_workers", 1},
                      {"timeout_seconds", 30.0}};
  return j;
}

namespace {

void merge_checked(json& base, const json& overlay, const std::string& path) {
  if (!overlay.is_object())
    throw ConfigError("config: \"" + (path.empty() ? "<root>" : path) +
                      "\" must be a JSON object");
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    const std::string key_path = path.empty() ? it.key() : path + "." + it.key();
    auto slot = base.find(it.key());
    if (slot == base.end())
      throw ConfigError("config: unknown key \"" + key_path + "\"");
    if (slot->is_object()) {
      merge_checked(*slot, it.value(), key_path);
    } else {
      *slot = it.value();
    }
  }
}

void apply_override(json& base, const std::string& entry) {
  const std::size_t eq = entry.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override \"" + entry + "\" is not of the form key=value");
  const std::string key = entry.substr(0, eq);
  const std::string raw = entry.substr(eq + 1);

  json* node = &base;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot - pos);
    if (!node->is_object() || node->find(part) == node->end())
      throw ConfigError("override: unknown key \"" + key + "\"");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  if (node->is_object())
    throw ConfigError("override: \"" + key + "\" is a section, not a value");

  if (node->is_string()) {
    *node = raw;
    return;
  }
  json value = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded())
    throw ConfigError("override: could not parse value for \"" + key + "\": " +
                      raw);
  *node = std::move(value);
}

long long get_int(const json& j, const char* key, const std::string& path) {
  const auto& v = j.at(key);
  if (!v.is_number_integer() && !v.is_number_unsigned())
    throw ConfigError(path + " must be an integer");
  return v.get<long long>();
}

double get_double(const json& j, const char* key, const std::string& path) {
  const auto& v = j.at(key);
  if (!v.is_number())
    throw ConfigError(path + " must be a number");
  return v.get<double>();
}

std::string get_string(const json& j, const char* key,
                       const std::string& path) {
  const auto& v = j.at(key);
  if (!v.is_string())
    throw ConfigError(path + " must be a string");
  return v.get<std::string>();
}

std::vector<double> get_double_array(const json& j, const char* key,
                                     const std::string& path) {
  const auto& v = j.at(key);
  if (!v.is_array())
    throw ConfigError(path + " must be an array of numbers");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& item : v) {
    if (!item.is_number())
      throw ConfigError(path + " must be an array of numbers");
    out.push_back(item.get<double>());
  }
  return out;
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::SGD;
  if (s == "bfgs") return OptimizerKind::BFGS;
  throw ConfigError("optimizer.kind: unknown value \"" + s +
                    "\" (expected adam, sgd, or bfgs)");
}

const char* optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Adam:
      return "adam";
    case OptimizerKind::SGD:
      return "sgd";
    case OptimizerKind::BFGS:
      return "bfgs";
  }
  throw ConfigError("optimizer_name: unknown kind");
}

ExperimentConfig extract_config(const json& j) {
  ExperimentConfig cfg;
  cfg.mode = mode_from_string(get_string(j, "mode", "mode"));
  cfg.estimator = estimator_from_string(get_string(j, "estimator", "estimator"));

  const json& ex = j.at("exploration");
  cfg.scheme.kind =
      scheme_from_string(get_string(ex, "scheme", "exploration.scheme"));
  const long long k = get_int(ex, "k", "exploration.k");
  if (k < 1) throw ConfigError("exploration.k must be >= 1");
  cfg.scheme.hd_blocks = static_cast<int>(k);
  cfg.scheme.renorm =
      renorm_from_string(get_string(ex, "renorm", "exploration.renorm"));
  const long long leap = get_int(ex, "qmc_leap", "exploration.qmc_leap");
  const long long skip = get_int(ex, "qmc_skip", "exploration.qmc_skip");
  if (leap < 0 || skip < 0)
    throw ConfigError("exploration.qmc_leap and exploration.qmc_skip must be >= 0");
  cfg.scheme.qmc.leap = static_cast<std::uint64_t>(leap);
  cfg.scheme.qmc.skip = static_cast<std::uint64_t>(skip);
  const long long N = get_int(ex, "N", "exploration.N");
  if (N < 0) throw ConfigError("exploration.N must be >= 0 (0 means dimension)");
  cfg.num_directions = static_cast<Eigen::Index>(N);
  cfg.sigma = get_double(ex, "sigma", "exploration.sigma");
  if (cfg.sigma < 0.0)
    throw ConfigError("exploration.sigma must be positive (0 selects the mode default)");

  const json& t = j.at("target");
  cfg.target.kind = get_string(t, "kind", "target.kind");
  if (cfg.target.kind != "env" && cfg.target.kind != "quadratic" &&
      cfg.target.kind != "sphere" && cfg.target.kind != "linear")
    throw ConfigError("target.kind: unknown value \"" + cfg.target.kind +
                      "\" (expected env, quadratic, sphere, or linear)");
  cfg.target.env_name = get_string(t, "env", "target.env");
  if (cfg.target.kind == "env")
    env_kind_from_string(cfg.target.env_name);  // validates
  cfg.target.layer_kind = get_string(t, "layer_kind", "target.layer_kind");
  if (cfg.target.layer_kind != "toeplitz" && cfg.target.layer_kind != "dense")
    throw ConfigError("target.layer_kind must be toeplitz or dense");
  const long long hidden = get_int(t, "hidden", "target.hidden");
  if (hidden < 1) throw ConfigError("target.hidden must be >= 1");
  cfg.target.hidden = static_cast<Eigen::Index>(hidden);
  const long long max_steps = get_int(t, "max_steps", "target.max_steps");
  if (max_steps < 1) throw ConfigError("target.max_steps must be >= 1");
  cfg.target.max_steps = static_cast<int>(max_steps);
  const long long rpe = get_int(t, "rollouts_per_eval", "target.rollouts_per_eval");
  if (rpe < 1) throw ConfigError("target.rollouts_per_eval must be >= 1");
  cfg.target.rollouts_per_eval = static_cast<int>(rpe);
  const long long dim = get_int(t, "dim", "target.dim");
  if (dim < 0) throw ConfigError("target.dim must be >= 0");
  cfg.target.dim = static_cast<Eigen::Index>(dim);
  cfg.target.q_diag = get_double_array(t, "q_diag", "target.q_diag");
  cfg.target.a = get_double_array(t, "a", "target.a");

  const json& b = j.at("bench");
  cfg.bench.problem = get_string(b, "problem", "bench.problem");
  if (cfg.bench.problem != "all") make_bench_problem(cfg.bench.problem);
  cfg.bench.variant = get_string(b, "variant", "bench.variant");
  if (cfg.bench.variant != "all") variant_from_string(cfg.bench.variant);
  cfg.bench.noise_scale = get_double(b, "noise_scale", "bench.noise_scale");
  if (cfg.bench.noise_scale < 0.0)
    throw ConfigError("bench.noise_scale must be >= 0");
  const auto& methods = b.at("methods");
  if (!methods.is_array() || methods.size() < 2)
    throw ConfigError("bench.methods must list at least two estimator/scheme pairs");
  for (const auto& m : methods) {
    if (!m.is_string())
      throw ConfigError("bench.methods entries must be strings");
    const std::string s = m.get<std::string>();
    const std::size_t slash = s.find('/');
    if (slash == std::string::npos)
      throw ConfigError("bench.methods: \"" + s +
                        "\" is not of the form estimator/scheme");
    estimator_from_string(s.substr(0, slash));
    scheme_from_string(s.substr(slash + 1));
    cfg.bench.methods.push_back(s);
  }

  const json& m = j.at("mse");
  cfg.mse.trials = get_int(m, "trials", "mse.trials");
  if (cfg.mse.trials < 1) throw ConfigError("mse.trials must be >= 1");
  const long long mdim = get_int(m, "dim", "mse.dim");
  if (mdim < 1) throw ConfigError("mse.dim must be >= 1");
  cfg.mse.dim = static_cast<Eigen::Index>(mdim);

  const json& o = j.at("optimizer");
  cfg.optimizer.kind = optimizer_from_string(get_string(o, "kind", "optimizer.kind"));
  cfg.optimizer.learning_rate =
      get_double(o, "learning_rate", "optimizer.learning_rate");
  if (!(cfg.optimizer.learning_rate > 0.0))
    throw ConfigError("optimizer.learning_rate must be > 0");
  const long long iters = get_int(o, "max_iterations", "optimizer.max_iterations");
  if (iters < 1) throw ConfigError("optimizer.max_iterations must be >= 1");
  cfg.optimizer.max_iterations = static_cast<int>(iters);
  const long long window =
      get_int(o, "termination_window", "optimizer.termination_window");
  if (window < 1) throw ConfigError("optimizer.termination_window must be >= 1");
  cfg.optimizer.termination_window = static_cast<int>(window);
  cfg.optimizer.termination_delta =
      get_double(o, "termination_delta", "optimizer.termination_delta");
  cfg.optimizer.adam_beta1 = get_double(o, "adam_beta1", "optimizer.adam_beta1");
  cfg.optimizer.adam_beta2 = get_double(o, "adam_beta2", "optimizer.adam_beta2");
  cfg.optimizer.adam_epsilon =
      get_double(o, "adam_epsilon", "optimizer.adam_epsilon");
  if (cfg.optimizer.adam_beta1 < 0.0 || cfg.optimizer.adam_beta1 >= 1.0 ||
      cfg.optimizer.adam_beta2 < 0.0 || cfg.optimizer.adam_beta2 >= 1.0)
    throw ConfigError("optimizer.adam_beta1 and optimizer.adam_beta2 must be in [0, 1)");
  if (!(cfg.optimizer.adam_epsilon > 0.0))
    throw ConfigError("optimizer.adam_epsilon must be > 0");

  const long long rollouts = get_int(j, "eval_rollouts", "eval_rollouts");
  if (rollouts < 1) throw ConfigError("eval_rollouts must be >= 1");
  cfg.eval_rollouts = static_cast<int>(rollouts);

  const long long seed = get_int(j, "master_seed", "master_seed");
  if (seed < 0) throw ConfigError("master_seed must be >= 0");
  cfg.master_seed = j.at("master_seed").get<std::uint64_t>();

  cfg.output_dir = get_string(j, "output_dir", "output_dir");
  if (cfg.output_dir.empty()) throw ConfigError("output_dir must be non-empty");

  const json& d = j.at("distributed");
  cfg.distributed.role = role_from_string(get_string(d, "role", "distributed.role"));
  cfg.distributed.address = get_string(d, "address", "distributed.address");
  const long long port = get_int(d, "port", "distributed.port");
  if (port < 0 || port > 65535)
    throw ConfigError("distributed.port must be in [0, 65535]");
  cfg.distributed.port = static_cast<int>(port);
  const long long workers = get_int(d, "num_workers", "distributed.num_workers");
  if (workers < 1) throw ConfigError("distributed.num_workers must be >= 1");
  cfg.distributed.num_workers = static_cast<int>(workers);
  cfg.distributed.timeout_seconds =
      get_double(d, "timeout_seconds", "distributed.timeout_seconds");
  if (!(cfg.distributed.timeout_seconds > 0.0))
    throw ConfigError("distributed.timeout_seconds must be > 0");

  cfg.effective = j;
  return cfg;
}

}  // namespace

ExperimentConfig parse_config(const std::string& config_path,
                              const std::vector<std::string>& overrides) {
  json merged = default_config_json();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config file \"" + config_path + "\"");
    json file = json::parse(in, nullptr, /*allow_exceptions=*/false);
    if (file.is_discarded())
      throw ConfigError("config file \"" + config_path + "\" is not valid JSON");
    merge_checked(merged, file, "");
  }
  if (const char* dir = std::getenv("SES_OUTPUT_DIR"); dir != nullptr && *dir)
    merged["output_dir"] = dir;
  for (const std::string& entry : overrides) apply_override(merged, entry);
  return extract_config(merged);
}

double resolved_sigma(const ExperimentConfig& cfg) {
  if (cfg.sigma > 0.0) return cfg.sigma;
  const bool rl = cfg.mode == RunMode::Train && cfg.target.kind == "env";
  return rl ? 0.1 : 1e-6;
}

DistributedConfig resolve_distributed(const ExperimentConfig& cfg) {
  DistributedConfig d;
  d.target = cfg.target;
  d.smoothing.sigma = resolved_sigma(cfg);
  d.smoothing.estimator = cfg.estimator;
  d.scheme = cfg.scheme;
  d.master_seed = cfg.master_seed;
  d.num_workers = cfg.distributed.num_workers;
  d.timeout_seconds = cfg.distributed.timeout_seconds;
  d.listen_port = cfg.distributed.port;
  d.connect_address = cfg.distributed.address;
  const Objective probe = make_target_objective(cfg.target);
  if (d.target.dim == 0) d.target.dim = probe.dim;
  if (d.target.dim != probe.dim)
    throw ConfigError("target.dim does not match the target's parameter count");
  d.smoothing.num_directions =
      cfg.num_directions > 0 ? cfg.num_directions : probe.dim;
  return d;
}

// ---------------------------------------------------------------------------
// Artifact helpers.

namespace {

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write \"" + path.string() + "\"");
  out << content;
  if (!out) throw ConfigError("write failed for \"" + path.string() + "\"");
}

fs::path prepare_output_dir(const ExperimentConfig& cfg) {
  const fs::path dir(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw ConfigError("cannot create output_dir \"" + cfg.output_dir +
                      "\": " + ec.message());
  json eff = cfg.effective;
  eff["schema"] = "ses.config.v1";
  write_file(dir / "effective-config.json", eff.dump(2) + "\n");
  return dir;
}

json record_to_json(const RunRecord& r) {
  json j;
  j["iteration"] = r.iteration;
  j["total_reward"] = r.total_reward;
  j["max_total_reward"] = r.max_total_reward;
  j["function_evaluations"] = r.function_evaluations_cumulative;
  j["wall_time_seconds"] = r.wall_time_seconds;
  return j;
}

void write_train_artifacts(const ExperimentConfig& cfg, const fs::path& dir,
                           const TrainResult& result) {
  std::ostringstream lines;
  lines << json{{"schema", "ses.train.run.v1"}}.dump() << "\n";
  for (const RunRecord& r : result.records)
    lines << record_to_json(r).dump() << "\n";
  write_file(dir / "run.jsonl", lines.str());

  std::ostringstream summary;
  summary << "# ses.train.summary.v1\n"
          << "final_reward,max_reward,iterations,evaluations\n";
  if (!result.records.empty()) {
    const RunRecord& last = result.records.back();
    summary << format_double(last.total_reward) << ","
            << format_double(last.max_total_reward) << ","
            << result.records.size() << ","
            << last.function_evaluations_cumulative << "\n";
  }
  write_file(dir / "summary.csv", summary.str());

  if (cfg.target.kind == "env") {
    const EnvKind kind = env_kind_from_string(cfg.target.env_name);
    const auto env = make_env(kind);
    const PolicySpec spec =
        cfg.target.layer_kind == "toeplitz"
            ? toeplitz_spec(env->observation_dim(), env->action_dim(),
                            cfg.target.hidden)
            : dense_spec(env->observation_dim(), env->action_dim());
    std::ofstream bin(dir / "policy.bin", std::ios::binary);
    if (!bin) throw ConfigError("cannot write policy.bin");
    serialize_policy_binary(spec, result.best_params, bin);
    std::ofstream txt(dir / "policy.txt", std::ios::binary);
    if (!txt) throw ConfigError("cannot write policy.txt");
    serialize_policy_text(spec, result.best_params, txt);
  } else {
    std::ostringstream params;
    for (Eigen::Index i = 0; i < result.final_params.size(); ++i)
      params << format_double(result.final_params[i]) << "\n";
    write_file(dir / "params.txt", params.str());
  }
}

struct MethodSpec {
  std::string name;
  EstimatorKind estimator;
  Scheme scheme;
};

MethodSpec parse_method(const std::string& s) {
  const std::size_t slash = s.find('/');
  MethodSpec m;
  m.name = s;
  m.estimator = estimator_from_string(s.substr(0, slash));
  m.scheme = scheme_from_string(s.substr(slash + 1));
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Runners.

void run_mse_study(const ExperimentConfig& cfg) {
  const fs::path dir = prepare_output_dir(cfg);
  const Eigen::Index d = cfg.mse.dim;
  const Eigen::Index N = cfg.num_directions > 0 ? cfg.num_directions : d;
  SmoothingConfig sc;
  sc.sigma = resolved_sigma(cfg);
  sc.num_directions = N;
  sc.estimator = cfg.estimator;

  const Eigen::VectorXd a =
      Eigen::VectorXd::Ones(d) / std::sqrt(static_cast<double>(d));
  const Eigen::VectorXd theta = Eigen::VectorXd::Zero(d);
  struct FunctionRow {
    const char* name;
    FunctionKind kind;
    Objective objective;
  };
  std::vector<FunctionRow> functions;
  functions.push_back(
      {"linear", FunctionKind::Linear,
       make_objective(d, [a](const Eigen::VectorXd& x) { return a.dot(x); })});
  functions.push_back(
      {"sqnorm", FunctionKind::SquaredNorm,
       make_objective(d, [](const Eigen::VectorXd& x) { return x.squaredNorm(); })});

  const Scheme schemes[] = {Scheme::IID, Scheme::GaussOrt, Scheme::HD,
                            Scheme::QMC};
  std::ostringstream csv;
  csv << "# ses.mse-study.v1\n"
      << "function,scheme,estimator,mse,gap_vs_iid,normalized_score\n";
  for (const FunctionRow& fn : functions) {
    const Eigen::VectorXd true_grad =
        analytic_smoothed_gradient(fn.kind, a, theta, sc.sigma);
    std::vector<double> mses;
    for (const Scheme s : schemes) {
      ExplorationScheme es = cfg.scheme;
      es.kind = s;
      mses.push_back(mse_estimate(fn.objective, theta, sc, es, true_grad,
                                  cfg.mse.trials, cfg.master_seed));
      log_debug(std::string("mse ") + fn.name + "/" + scheme_name(s) + " = " +
                format_double(mses.back()));
    }
    const std::vector<double> scores = normalized_score(mses, true);
    for (std::size_t i = 0; i < mses.size(); ++i) {
      csv << fn.name << "," << scheme_name(schemes[i]) << ","
          << estimator_name(sc.estimator) << "," << format_double(mses[i])
          << "," << format_double(mses[0] - mses[i]) << ","
          << format_double(scores[i]) << "\n";
    }
  }
  write_file(dir / "mse.csv", csv.str());
  log_info("mse-study written to " + (dir / "mse.csv").string());
}

void run_bench_suite(const ExperimentConfig& cfg) {
  const fs::path dir = prepare_output_dir(cfg);
  std::vector<std::string> problems;
  if (cfg.bench.problem == "all")
    problems = bench_problem_names();
  else
    problems.push_back(cfg.bench.problem);
  std::vector<BenchVariant> variants;
  if (cfg.bench.variant == "all")
    variants = {BenchVariant::Smooth, BenchVariant::NonDiff,
                BenchVariant::NoisyDeterministic,
                BenchVariant::NoisyStochastic};
  else
    variants.push_back(variant_from_string(cfg.bench.variant));

  std::vector<MethodSpec> methods;
  for (const std::string& s : cfg.bench.methods)
    methods.push_back(parse_method(s));
  const std::size_t M = methods.size();

  std::vector<std::string> task_names;
  std::vector<std::vector<double>> values;       // [task][method]
  std::vector<std::vector<long long>> evals;     // [task][method]
  std::uint64_t cell = 0;
  for (const std::string& pname : problems) {
    for (const BenchVariant variant : variants) {
      task_names.push_back(pname + ":" + variant_name(variant));
      std::vector<double> row(M);
      std::vector<long long> erow(M);
      for (std::size_t mi = 0; mi < M; ++mi) {
        const std::uint64_t cell_seed = derive_seed(cfg.master_seed, cell++);
        BenchProblem problem = make_bench_problem(
            pname, variant, cfg.bench.noise_scale, derive_seed(cell_seed, 17));
        SmoothingConfig sc;
        sc.sigma = resolved_sigma(cfg);
        sc.num_directions = cfg.num_directions;
        sc.estimator = methods[mi].estimator;
        ExplorationScheme es = cfg.scheme;
        es.kind = methods[mi].scheme;
        BenchDriverConfig drv;
        drv.bfgs.max_iterations = cfg.optimizer.max_iterations;
        drv.seed = cell_seed;
        const MethodResult r = run_bench(problem, sc, es, drv);
        row[mi] = r.final_objective;
        erow[mi] = r.function_evaluations;
        log_debug("bench " + task_names.back() + " " + methods[mi].name +
                  ": f=" + format_double(r.final_objective) +
                  " evals=" + std::to_string(r.function_evaluations));
      }
      values.push_back(std::move(row));
      evals.push_back(std::move(erow));
    }
  }

  const std::vector<double> avg_rank = average_rank(values, true);
  std::vector<double> avg_score(M, 0.0);
  std::ostringstream csv;
  csv << "# ses.bench.scores.v1\n"
      << "method,task,value,score,rank\n";
  for (std::size_t ti = 0; ti < values.size(); ++ti) {
    const std::vector<double> scores = normalized_score(values[ti], true);
    const std::vector<double> ranks = average_rank({values[ti]}, true);
    for (std::size_t mi = 0; mi < M; ++mi) {
      avg_score[mi] += scores[mi] / static_cast<double>(values.size());
      csv << methods[mi].name << "," << task_names[ti] << ","
          << format_double(values[ti][mi]) << "," << format_double(scores[mi])
          << "," << format_double(ranks[mi]) << "\n";
    }
  }
  write_file(dir / "scores.csv", csv.str());

  json results;
  results["schema"] = "ses.bench.results.v1";
  results["tasks"] = task_names;
  json per_method = json::array();
  for (std::size_t mi = 0; mi < M; ++mi) {
    long long total_evals = 0;
    for (const auto& erow : evals) total_evals += erow[mi];
    per_method.push_back({{"method", methods[mi].name},
                          {"average_rank", avg_rank[mi]},
                          {"average_score", avg_score[mi]},
                          {"total_evaluations", total_evals}});
  }
  results["methods"] = std::move(per_method);
  write_file(dir / "results.json", results.dump(2) + "\n");
  log_info("bench written to " + (dir / "scores.csv").string());
}

namespace {

TrainResult train_with_evaluator(const ExperimentConfig& cfg,
                                 const Objective& target,
                                 const SmoothingConfig& sc,
                                 GradientEvaluator& evaluator) {
  TrainOptions options;
  options.eval_rollouts = cfg.eval_rollouts;
  return train(target, sc, cfg.scheme, cfg.optimizer, cfg.master_seed,
               evaluator, options);
}

}  // namespace

TrainResult run_train(const ExperimentConfig& cfg) {
  if (cfg.distributed.role != DistRole::Local)
    throw ConfigError("run_train handles the local role; use run_coordinator or run_worker");
  const fs::path dir = prepare_output_dir(cfg);
  const Objective target = make_target_objective(cfg.target);
  SmoothingConfig sc;
  sc.sigma = resolved_sigma(cfg);
  sc.num_directions =
      cfg.num_directions > 0 ? cfg.num_directions : target.dim;
  sc.estimator = cfg.estimator;

  TrainResult result;
  if (cfg.distributed.num_workers <= 1) {
    LocalEvaluator evaluator(target, sc, cfg.scheme, cfg.master_seed);
    result = train_with_evaluator(cfg, target, sc, evaluator);
  } else {
    // In-process distributed evaluation: L worker threads over framed
    // channels, gradients via the coordinator path.
    const DistributedConfig dcfg = resolve_distributed(cfg);
    const int L = cfg.distributed.num_workers;
    std::vector<std::unique_ptr<WorkerChannel>> master_ends;
    std::vector<std::thread> threads;
    master_ends.reserve(static_cast<std::size_t>(L));
    for (int w = 0; w < L; ++w) {
      auto [master_end, worker_end] =
          make_inproc_pair(cfg.distributed.timeout_seconds);
      master_ends.push_back(std::move(master_end));
      threads.emplace_back([ch = std::move(worker_end)]() mutable {
        try {
          serve_worker(*ch);
        } catch (const std::exception& e) {
          log_error(std::string("worker thread: ") + e.what());
        }
      });
    }
    try {
      Coordinator coordinator(dcfg, std::move(master_ends));
      result = train_with_evaluator(cfg, target, sc, coordinator);
      coordinator.stop();
    } catch (...) {
      for (auto& t : threads)
        if (t.joinable()) t.join();
      throw;
    }
    for (auto& t : threads) t.join();
  }
  write_train_artifacts(cfg, dir, result);
  log_info("train artifacts written to " + dir.string());
  return result;
}

void run_grad_check(const ExperimentConfig& cfg) {
  if (cfg.target.kind == "env")
    throw ConfigError("target.kind: grad-check requires an analytic target "
                      "(quadratic, sphere, or linear)");
  const fs::path dir = prepare_output_dir(cfg);
  const Objective target = make_target_objective(cfg.target);
  const Eigen::Index d = target.dim;
  const Eigen::Index N = cfg.num_directions > 0 ? cfg.num_directions : d;
  const double sigma = resolved_sigma(cfg);

  Rng rng(derive_seed(cfg.master_seed, 0x5e5));
  const Eigen::VectorXd theta = rng.gaussian_vector(d);
  Eigen::VectorXd true_grad;
  if (cfg.target.kind == "linear") {
    true_grad = Eigen::Map<const Eigen::VectorXd>(
        cfg.target.a.data(), static_cast<Eigen::Index>(cfg.target.a.size()));
  } else if (cfg.target.kind == "sphere") {
    true_grad = -2.0 * theta;
  } else {
    Eigen::VectorXd diag = Eigen::VectorXd::Ones(d);
    if (!cfg.target.q_diag.empty())
      diag = Eigen::Map<const Eigen::VectorXd>(
          cfg.target.q_diag.data(),
          static_cast<Eigen::Index>(cfg.target.q_diag.size()));
    true_grad = -2.0 * diag.cwiseProduct(theta);
  }

  std::ostringstream csv;
  csv << "# ses.grad-check.v1\n"
      << "estimator,scheme,dim,num_directions,sigma,err_l2,err_inf,"
         "evaluations\n";
  const EstimatorKind kinds[] = {EstimatorKind::Vanilla,
                                 EstimatorKind::Antithetic,
                                 EstimatorKind::ForwardFD};
  std::uint64_t iteration = 0;
  for (const EstimatorKind kind : kinds) {
    SmoothingConfig sc;
    sc.sigma = sigma;
    sc.num_directions = N;
    sc.estimator = kind;
    const ExplorationMatrix expl =
        sample_for_iteration(cfg.scheme, d, N, cfg.master_seed, iteration);
    const GradientEstimate est =
        estimate_gradient(target, theta, sc, expl,
                          estimator_eval_seed(cfg.master_seed, iteration));
    ++iteration;
    const Eigen::VectorXd err = est.gradient - true_grad;
    csv << estimator_name(kind) << "," << scheme_name(cfg.scheme.kind) << ","
        << d << "," << N << "," << format_double(sigma) << ","
        << format_double(err.norm()) << ","
        << format_double(err.lpNorm<Eigen::Infinity>()) << ","
        << est.function_evaluations << "\n";
  }
  write_file(dir / "gradcheck.csv", csv.str());
  log_info("grad-check written to " + (dir / "gradcheck.csv").string());
}

void run_coordinator(const ExperimentConfig& cfg) {
  if (cfg.mode != RunMode::Train)
    throw ConfigError("distributed.role coordinator requires mode train");
  const fs::path dir = prepare_output_dir(cfg);
  const DistributedConfig dcfg = resolve_distributed(cfg);

  Listener listener(cfg.distributed.address, cfg.distributed.port);
  write_file(dir / "coordinator-port.txt",
             std::to_string(listener.port()) + "\n");
  log_info("coordinator listening on " + cfg.distributed.address + ":" +
           std::to_string(listener.port()));

  std::vector<std::unique_ptr<WorkerChannel>> channels;
  for (int w = 0; w < cfg.distributed.num_workers; ++w) {
    channels.push_back(
        listener.accept_worker(cfg.distributed.timeout_seconds));
    log_info("worker " + std::to_string(w) + " connected");
  }

  const Objective target = make_target_objective(cfg.target);
  SmoothingConfig sc = dcfg.smoothing;
  Coordinator coordinator(dcfg, std::move(channels));
  const TrainResult result =
      train_with_evaluator(cfg, target, sc, coordinator);
  coordinator.stop();
  write_train_artifacts(cfg, dir, result);
  log_info("train artifacts written to " + dir.string());
}

void run_worker(const ExperimentConfig& cfg) {
  const DistributedConfig local = resolve_distributed(cfg);
  auto channel = connect_to_coordinator(cfg.distributed.address,
                                        cfg.distributed.port,
                                        cfg.distributed.timeout_seconds);
  log_info("worker connected to " + cfg.distributed.address + ":" +
           std::to_string(cfg.distributed.port));
  serve_worker(*channel, &local);
  log_info("worker finished");
}

int run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.distributed.role) {
    case DistRole::Worker:
      run_worker(cfg);
      return 0;
    case DistRole::Coordinator:
      run_coordinator(cfg);
      return 0;
    case DistRole::Local:
      break;
  }
  switch (cfg.mode) {
    case RunMode::MseStudy:
      run_mse_study(cfg);
      break;
    case RunMode::Bench:
      run_bench_suite(cfg);
      break;
    case RunMode::Train:
      run_train(cfg);
      break;
    case RunMode::GradCheck:
      run_grad_check(cfg);
      break;
  }
  return 0;
}

}  // namespace ses
