#include "ses/distributed.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

#include "ses/environments.hpp"
#include "ses/policies.hpp"
#include "ses/rng.hpp"

namespace ses {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Wire encoding.

std::string to_hexfloat(double x) {
  if (!std::isfinite(x)) throw NumericError("to_hexfloat: non-finite value");
  char buf[48];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

double from_hexfloat(const std::string& s) {
  if (s.empty()) throw ProtocolError("from_hexfloat: empty string");
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v))
    throw ProtocolError("from_hexfloat: malformed value \"" + s + "\"");
  return v;
}

std::string encode_frame(const json& msg) {
  std::string body = msg.dump();
  if (body.size() > kMaxFrameBytes)
    throw ProtocolError("encode_frame: body exceeds the frame size limit");
  const auto n = static_cast<std::uint32_t>(body.size());
  std::string out;
  out.reserve(body.size() + 4);
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out += body;
  return out;
}

json decode_frame(const std::string& frame) {
  if (frame.size() < 4) throw ProtocolError("decode_frame: truncated header");
  const std::uint32_t n = (static_cast<std::uint32_t>(
                               static_cast<unsigned char>(frame[0]))
                           << 24) |
                          (static_cast<std::uint32_t>(
                               static_cast<unsigned char>(frame[1]))
                           << 16) |
                          (static_cast<std::uint32_t>(
                               static_cast<unsigned char>(frame[2]))
                           << 8) |
                          static_cast<std::uint32_t>(
                              static_cast<unsigned char>(frame[3]));
  if (n > kMaxFrameBytes)
    throw ProtocolError("decode_frame: frame exceeds the size limit");
  if (frame.size() != static_cast<std::size_t>(n) + 4)
    throw ProtocolError("decode_frame: header length does not match the body");
  json j = json::parse(frame.begin() + 4, frame.end(), nullptr,
                       /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object())
    throw ProtocolError("decode_frame: body is not a JSON object");
  return j;
}

// ---------------------------------------------------------------------------
// JSON field access with protocol-grade diagnostics.

namespace {

const json& require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end())
    throw ProtocolError(std::string("missing message field \"") + key + "\"");
  return *it;
}

std::string as_string(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_string())
    throw ProtocolError(std::string("field \"") + key + "\" must be a string");
  return v.get<std::string>();
}

long long as_int(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_number_integer())
    throw ProtocolError(std::string("field \"") + key +
                        "\" must be an integer");
  return v.get<long long>();
}

std::uint64_t as_uint64(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_number_unsigned() && !v.is_number_integer())
    throw ProtocolError(std::string("field \"") + key +
                        "\" must be an integer");
  if (v.is_number_integer() && !v.is_number_unsigned() &&
      v.get<long long>() < 0)
    throw ProtocolError(std::string("field \"") + key +
                        "\" must be non-negative");
  return v.get<std::uint64_t>();
}

std::vector<double> hex_array(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_array())
    throw ProtocolError(std::string("field \"") + key + "\" must be an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (const json& item : v) {
    if (!item.is_string())
      throw ProtocolError(std::string("field \"") + key +
                          "\" must hold hex-float strings");
    out.push_back(from_hexfloat(item.get<std::string>()));
  }
  return out;
}

json hex_array_json(const std::vector<double>& xs) {
  json a = json::array();
  for (double x : xs) a.push_back(to_hexfloat(x));
  return a;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t parse_hash_hex(const std::string& s) {
  if (s.size() != 16)
    throw ProtocolError("config hash must be 16 hex digits");
  std::uint64_t h = 0;
  for (char c : s) {
    h <<= 4;
    if (c >= '0' && c <= '9')
      h |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f')
      h |= static_cast<std::uint64_t>(c - 'a' + 10);
    else
      throw ProtocolError("config hash must be lowercase hex");
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Targets.

Objective make_target_objective(const TargetSpec& spec) {
  if (spec.kind == "quadratic") {
    if (spec.dim < 1)
      throw ConfigError("quadratic target requires a positive dim");
    Eigen::VectorXd diag;
    if (spec.q_diag.empty()) {
      diag = Eigen::VectorXd::Ones(spec.dim);
    } else {
      if (static_cast<Eigen::Index>(spec.q_diag.size()) != spec.dim)
        throw ConfigError("quadratic target: q_diag length must equal dim");
      diag = Eigen::Map<const Eigen::VectorXd>(
          spec.q_diag.data(), static_cast<Eigen::Index>(spec.q_diag.size()));
    }
    Eigen::MatrixXd Q = diag.asDiagonal();
    return make_quadratic_objective(Q);
  }
  if (spec.kind == "sphere") {
    if (spec.dim < 1) throw ConfigError("sphere target requires a positive dim");
    return make_objective(spec.dim,
                          [](const Eigen::VectorXd& x) { return -x.squaredNorm(); });
  }
  if (spec.kind == "linear") {
    if (spec.dim < 1) throw ConfigError("linear target requires a positive dim");
    if (static_cast<Eigen::Index>(spec.a.size()) != spec.dim)
      throw ConfigError("linear target: coefficient length must equal dim");
    Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(
        spec.a.data(), static_cast<Eigen::Index>(spec.a.size()));
    return make_objective(spec.dim,
                          [a](const Eigen::VectorXd& x) { return a.dot(x); });
  }
  if (spec.kind == "env") {
    const EnvKind kind = env_kind_from_string(spec.env_name);
    auto env = make_env(kind);
    PolicySpec policy;
    if (spec.layer_kind == "toeplitz") {
      policy = toeplitz_spec(env->observation_dim(), env->action_dim(),
                             spec.hidden);
    } else if (spec.layer_kind == "dense") {
      policy = dense_spec(env->observation_dim(), env->action_dim());
    } else {
      throw ConfigError("unknown policy layer kind \"" + spec.layer_kind +
                        "\" (expected toeplitz or dense)");
    }
    Objective obj =
        make_env_objective(kind, policy, spec.max_steps, spec.rollouts_per_eval);
    if (spec.dim > 0 && spec.dim != obj.dim)
      throw ConfigError("env target: dim does not match the policy parameter count");
    return obj;
  }
  throw ConfigError("unknown target kind \"" + spec.kind +
                    "\" (expected quadratic, sphere, linear, or env)");
}

json target_to_json(const TargetSpec& spec) {
  json j;
  j["kind"] = spec.kind;
  j["dim"] = static_cast<long long>(spec.dim);
  if (!spec.q_diag.empty()) j["q_diag"] = hex_array_json(spec.q_diag);
  if (!spec.a.empty()) j["a"] = hex_array_json(spec.a);
  if (spec.kind == "env") {
    j["env"] = spec.env_name;
    j["layer_kind"] = spec.layer_kind;
    j["hidden"] = static_cast<long long>(spec.hidden);
    j["max_steps"] = spec.max_steps;
    j["rollouts_per_eval"] = spec.rollouts_per_eval;
  }
  return j;
}

TargetSpec target_from_json(const json& j) {
  TargetSpec spec;
  spec.kind = as_string(j, "kind");
  spec.dim = static_cast<Eigen::Index>(as_int(j, "dim"));
  if (j.contains("q_diag")) spec.q_diag = hex_array(j, "q_diag");
  if (j.contains("a")) spec.a = hex_array(j, "a");
  if (spec.kind == "env") {
    spec.env_name = as_string(j, "env");
    spec.layer_kind = as_string(j, "layer_kind");
    spec.hidden = static_cast<Eigen::Index>(as_int(j, "hidden"));
    spec.max_steps = static_cast<int>(as_int(j, "max_steps"));
    spec.rollouts_per_eval = static_cast<int>(as_int(j, "rollouts_per_eval"));
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Shared configuration and its hash.

json shared_config_to_json(const DistributedConfig& cfg) {
  if (cfg.target.dim < 1 || cfg.smoothing.num_directions < 1)
    throw ConfigError(
        "shared config: dim and num_directions must be resolved before the "
        "handshake");
  json j;
  j["target"] = target_to_json(cfg.target);
  j["sigma"] = to_hexfloat(cfg.smoothing.sigma);
  j["num_directions"] = static_cast<long long>(cfg.smoothing.num_directions);
  j["estimator"] = estimator_name(cfg.smoothing.estimator);
  j["scheme"] = scheme_name(cfg.scheme.kind);
  j["hd_blocks"] = cfg.scheme.hd_blocks;
  j["renorm"] = renorm_name(cfg.scheme.renorm);
  j["qmc_leap"] = cfg.scheme.qmc.leap;
  j["qmc_skip"] = cfg.scheme.qmc.skip;
  j["master_seed"] = cfg.master_seed;
  return j;
}

DistributedConfig shared_config_from_json(const json& j) {
  DistributedConfig cfg;
  cfg.target = target_from_json(require(j, "target"));
  cfg.smoothing.sigma = from_hexfloat(as_string(j, "sigma"));
  cfg.smoothing.num_directions =
      static_cast<Eigen::Index>(as_int(j, "num_directions"));
  cfg.smoothing.estimator = estimator_from_string(as_string(j, "estimator"));
  cfg.scheme.kind = scheme_from_string(as_string(j, "scheme"));
  cfg.scheme.hd_blocks = static_cast<int>(as_int(j, "hd_blocks"));
  cfg.scheme.renorm = renorm_from_string(as_string(j, "renorm"));
  cfg.scheme.qmc.leap = as_uint64(j, "qmc_leap");
  cfg.scheme.qmc.skip = as_uint64(j, "qmc_skip");
  cfg.master_seed = as_uint64(j, "master_seed");
  return cfg;
}

std::uint64_t config_hash(const DistributedConfig& cfg) {
  const std::string bytes = shared_config_to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Row assignment.

std::vector<WorkerAssignment> assign_rows(Eigen::Index N, int L) {
  if (N < 1) throw ConfigError("assign_rows: N must be >= 1");
  if (L < 1 || static_cast<Eigen::Index>(L) > N)
    throw ConfigError("assign_rows: need 1 <= L <= N, got L=" +
                      std::to_string(L) + ", N=" + std::to_string(N));
  const Eigen::Index base = N / L;
  const Eigen::Index extra = N % L;
  std::vector<WorkerAssignment> out(static_cast<std::size_t>(L));
  Eigen::Index next = 0;
  for (int w = 0; w < L; ++w) {
    auto& a = out[static_cast<std::size_t>(w)];
    a.worker_id = w;
    const Eigen::Index count = base + (w < extra ? 1 : 0);
    a.row_indices.reserve(static_cast<std::size_t>(count));
    for (Eigen::Index r = 0; r < count; ++r) a.row_indices.push_back(next++);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Worker side.

WorkerState make_worker_state(const WorkerInit& init) {
  WorkerState st;
  st.init = init;
  st.target = make_target_objective(init.config.target);
  if (init.config.target.dim > 0 && st.target.dim != init.config.target.dim)
    throw ConfigError("worker target dimension does not match the config");
  return st;
}

json worker_evaluate(WorkerState& state, const json& params_msg) {
  const std::string type = as_string(params_msg, "type");
  if (type != "PARAMS")
    throw ProtocolError("worker_evaluate: expected PARAMS, got \"" + type +
                        "\"");
  const int iteration = static_cast<int>(as_int(params_msg, "iteration"));
  if (iteration != state.next_iteration)
    throw ProtocolError("worker_evaluate: expected iteration " +
                        std::to_string(state.next_iteration) + ", got " +
                        std::to_string(iteration));
  const json& payload = require(params_msg, "payload");
  const std::vector<double> theta_raw = hex_array(payload, "theta");
  const Eigen::Index d = state.target.dim;
  if (static_cast<Eigen::Index>(theta_raw.size()) != d)
    throw ProtocolError("worker_evaluate: theta has " +
                        std::to_string(theta_raw.size()) +
                        " coordinates, expected " + std::to_string(d));
  const Eigen::VectorXd theta =
      Eigen::Map<const Eigen::VectorXd>(theta_raw.data(), d);

  const DistributedConfig& cfg = state.init.config;
  const Eigen::Index N = cfg.smoothing.num_directions;
  const double sigma = cfg.smoothing.sigma;
  const EstimatorKind kind = cfg.smoothing.estimator;
  const ExplorationMatrix expl =
      sample_for_iteration(cfg.scheme, d, N, cfg.master_seed,
                           static_cast<std::uint64_t>(iteration));
  const std::uint64_t eval_seed = estimator_eval_seed(
      cfg.master_seed, static_cast<std::uint64_t>(iteration));

  auto checked = [&](double v, Eigen::Index row) {
    if (!std::isfinite(v))
      throw NumericError("worker_evaluate: non-finite value at direction " +
                         std::to_string(row));
    return v;
  };

  json entries = json::array();
  for (const Eigen::Index i : state.init.assignment.row_indices) {
    if (i < 0 || i >= N)
      throw ProtocolError("worker_evaluate: assigned row " +
                          std::to_string(i) + " is out of range");
    const std::uint64_t row_seed =
        derive_seed(eval_seed, static_cast<std::uint64_t>(i));
    json e;
    e["row"] = static_cast<long long>(i);
    if (kind == EstimatorKind::Antithetic) {
      // Same expression shape as the local estimator so the floats match
      // bit for bit.
      const Eigen::VectorXd delta = sigma * expl.rows.row(i).transpose();
      e["f_plus"] =
          to_hexfloat(checked(state.target(theta + delta, row_seed), i));
      e["f_minus"] =
          to_hexfloat(checked(state.target(theta - delta, row_seed), i));
    } else {
      e["f_plus"] = to_hexfloat(checked(
          state.target(theta + sigma * expl.rows.row(i).transpose(), row_seed),
          i));
    }
    entries.push_back(std::move(e));
  }

  json out_payload;
  out_payload["worker_id"] = state.init.assignment.worker_id;
  out_payload["entries"] = std::move(entries);
  if (kind == EstimatorKind::ForwardFD &&
      state.init.assignment.worker_id == 0) {
    const double center =
        state.target(theta, derive_seed(eval_seed, kCenterSeedIndex));
    out_payload["center"] = to_hexfloat(checked(center, -1));
  }

  json msg;
  msg["type"] = "EVALS";
  msg["iteration"] = iteration;
  msg["payload"] = std::move(out_payload);
  state.next_iteration = iteration + 1;
  return msg;
}

// ---------------------------------------------------------------------------
// Master side.

GradientEstimate master_aggregate(const std::vector<json>& messages,
                                  int iteration,
                                  const DistributedConfig& cfg) {
  const Eigen::Index d = cfg.target.dim;
  const Eigen::Index N = cfg.smoothing.num_directions;
  if (d < 1 || N < 1)
    throw ConfigError("master_aggregate: dim and num_directions must be set");
  const EstimatorKind kind = cfg.smoothing.estimator;

  std::vector<RowEvaluations> rows(static_cast<std::size_t>(N));
  std::vector<char> seen(static_cast<std::size_t>(N), 0);
  double center = std::numeric_limits<double>::quiet_NaN();
  bool have_center = false;

  for (const json& m : messages) {
    const std::string type = as_string(m, "type");
    if (type != "EVALS")
      throw ProtocolError("master_aggregate: expected EVALS, got \"" + type +
                          "\"");
    const int msg_iter = static_cast<int>(as_int(m, "iteration"));
    if (msg_iter != iteration)
      throw ProtocolError("master_aggregate: message for iteration " +
                          std::to_string(msg_iter) + ", expected " +
                          std::to_string(iteration));
    const json& payload = require(m, "payload");
    const json& entries = require(payload, "entries");
    if (!entries.is_array())
      throw ProtocolError("master_aggregate: entries must be an array");
    for (const json& e : entries) {
      const long long r = as_int(e, "row");
      if (r < 0 || r >= static_cast<long long>(N))
        throw ProtocolError("master_aggregate: row index " +
                            std::to_string(r) + " out of range");
      auto& slot = rows[static_cast<std::size_t>(r)];
      if (seen[static_cast<std::size_t>(r)])
        throw ProtocolError("master_aggregate: duplicate row " +
                            std::to_string(r));
      seen[static_cast<std::size_t>(r)] = 1;
      slot.f_plus = from_hexfloat(as_string(e, "f_plus"));
      if (kind == EstimatorKind::Antithetic)
        slot.f_minus = from_hexfloat(as_string(e, "f_minus"));
    }
    if (payload.contains("center")) {
      if (have_center)
        throw ProtocolError("master_aggregate: duplicate center value");
      center = from_hexfloat(as_string(payload, "center"));
      have_center = true;
    }
  }

  for (Eigen::Index r = 0; r < N; ++r) {
    if (!seen[static_cast<std::size_t>(r)])
      throw ProtocolError("incomplete iteration " + std::to_string(iteration) +
                          ": missing row " + std::to_string(r));
  }
  if (kind == EstimatorKind::ForwardFD && !have_center)
    throw ProtocolError("incomplete iteration " + std::to_string(iteration) +
                        ": missing center evaluation");

  const ExplorationMatrix expl =
      sample_for_iteration(cfg.scheme, d, N, cfg.master_seed,
                           static_cast<std::uint64_t>(iteration));
  std::vector<double> coeffs(static_cast<std::size_t>(N));
  for (Eigen::Index r = 0; r < N; ++r)
    coeffs[static_cast<std::size_t>(r)] = row_coefficient(
        kind, rows[static_cast<std::size_t>(r)], have_center ? center : 0.0);

  GradientEstimate out;
  out.gradient = combine_rows(kind, cfg.smoothing.sigma, expl.rows, coeffs);
  out.function_evaluations = expected_evaluations(kind, N);
  out.estimator = kind;
  if (kind == EstimatorKind::ForwardFD) out.center_value = center;
  return out;
}

// ---------------------------------------------------------------------------
// In-process transport.

namespace {

struct FrameQueue {
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<std::string> frames;
  bool closed = false;
};

class InProcChannel final : public WorkerChannel {
 public:
  InProcChannel(std::shared_ptr<FrameQueue> in, std::shared_ptr<FrameQueue> out,
                double timeout_seconds)
      : in_(std::move(in)), out_(std::move(out)), timeout_(timeout_seconds) {}

  ~InProcChannel() override { close(); }

  void send(const json& msg) override {
    std::string frame = encode_frame(msg);
    {
      std::lock_guard<std::mutex> lock(out_->mutex);
      if (out_->closed)
        throw ProtocolError("send on a closed channel");
      out_->frames.push_back(frame);
    }
    out_->cv.notify_all();
    bytes_sent_ += static_cast<long long>(frame.size());
  }

  json receive() override {
    std::unique_lock<std::mutex> lock(in_->mutex);
    const bool ready = in_->cv.wait_for(
        lock, std::chrono::duration<double>(timeout_),
        [&] { return !in_->frames.empty() || in_->closed; });
    if (!ready)
      throw ProtocolError("receive timed out after " +
                          std::to_string(timeout_) + " s");
    if (in_->frames.empty())
      throw ProtocolError("channel closed by peer");
    std::string frame = std::move(in_->frames.front());
    in_->frames.pop_front();
    lock.unlock();
    bytes_received_ += static_cast<long long>(frame.size());
    return decode_frame(frame);
  }

  void close() override {
    for (auto& q : {in_, out_}) {
      {
        std::lock_guard<std::mutex> lock(q->mutex);
        q->closed = true;
      }
      q->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<FrameQueue> in_;
  std::shared_ptr<FrameQueue> out_;
  double timeout_;
};

}  // namespace

std::pair<std::unique_ptr<WorkerChannel>, std::unique_ptr<WorkerChannel>>
make_inproc_pair(double timeout_seconds) {
  auto to_worker = std::make_shared<FrameQueue>();
  auto to_master = std::make_shared<FrameQueue>();
  auto master_end = std::make_unique<InProcChannel>(to_master, to_worker,
                                                    timeout_seconds);
  auto worker_end = std::make_unique<InProcChannel>(to_worker, to_master,
                                                    timeout_seconds);
  return {std::move(master_end), std::move(worker_end)};
}

// ---------------------------------------------------------------------------
// Socket transport.

namespace {

[[noreturn]] void throw_errno(const std::string& what) {
  throw ProtocolError(what + ": " + std::strerror(errno));
}

class SocketChannel final : public WorkerChannel {
 public:
  SocketChannel(int fd, double timeout_seconds) : fd_(fd) {
    timeval tv{};
    tv.tv_sec = static_cast<time_t>(timeout_seconds);
    tv.tv_usec = static_cast<suseconds_t>(
        (timeout_seconds - static_cast<double>(tv.tv_sec)) * 1e6);
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }

  ~SocketChannel() override { close(); }

  void send(const json& msg) override {
    const std::string frame = encode_frame(msg);
    send_all(frame.data(), frame.size());
    bytes_sent_ += static_cast<long long>(frame.size());
  }

  json receive() override {
    unsigned char header[4];
    recv_all(header, 4);
    const std::uint32_t n = (static_cast<std::uint32_t>(header[0]) << 24) |
                            (static_cast<std::uint32_t>(header[1]) << 16) |
                            (static_cast<std::uint32_t>(header[2]) << 8) |
                            static_cast<std::uint32_t>(header[3]);
    if (n > kMaxFrameBytes)
      throw ProtocolError("receive: frame exceeds the size limit");
    std::string frame(static_cast<std::size_t>(n) + 4, '\0');
    std::memcpy(frame.data(), header, 4);
    recv_all(frame.data() + 4, n);
    bytes_received_ += static_cast<long long>(frame.size());
    return decode_frame(frame);
  }

  void close() override {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  void send_all(const char* data, std::size_t size) {
    std::size_t sent = 0;
    while (sent < size) {
      const ssize_t k =
          ::send(fd_, data + sent, size - sent, MSG_NOSIGNAL);
      if (k < 0) {
        if (errno == EINTR) continue;
        throw_errno("send failed");
      }
      sent += static_cast<std::size_t>(k);
    }
  }

  void recv_all(void* data, std::size_t size) {
    std::size_t got = 0;
    auto* bytes = static_cast<char*>(data);
    while (got < size) {
      const ssize_t k = ::recv(fd_, bytes + got, size - got, 0);
      if (k == 0) throw ProtocolError("connection closed by peer");
      if (k < 0) {
        if (errno == EINTR) continue;
        if (errno == EAGAIN || errno == EWOULDBLOCK)
          throw ProtocolError("receive timed out");
        throw_errno("recv failed");
      }
      got += static_cast<std::size_t>(k);
    }
  }

  int fd_;
};

sockaddr_in make_address(const std::string& address, int port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, address.c_str(), &addr.sin_addr) != 1)
    throw ConfigError("invalid IPv4 address \"" + address + "\"");
  return addr;
}

}  // namespace

Listener::Listener(const std::string& address, int port) {
  if (port < 0 || port > 65535)
    throw ConfigError("listen port out of range: " + std::to_string(port));
  const sockaddr_in addr = make_address(address, port);
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw_errno("socket failed");
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    const int saved = errno;
    ::close(fd_);
    fd_ = -1;
    errno = saved;
    throw_errno("bind failed on " + address + ":" + std::to_string(port));
  }
  if (::listen(fd_, 16) != 0) {
    const int saved = errno;
    ::close(fd_);
    fd_ = -1;
    errno = saved;
    throw_errno("listen failed");
  }
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len) != 0)
    throw_errno("getsockname failed");
  port_ = static_cast<int>(ntohs(bound.sin_port));
}

Listener::~Listener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<WorkerChannel> Listener::accept_worker(
    double timeout_seconds) {
  pollfd pfd{};
  pfd.fd = fd_;
  pfd.events = POLLIN;
  const int r = ::poll(&pfd, 1, static_cast<int>(timeout_seconds * 1000.0));
  if (r == 0)
    throw ProtocolError("timed out waiting for a worker connection");
  if (r < 0) throw_errno("poll failed");
  const int fd = ::accept(fd_, nullptr, nullptr);
  if (fd < 0) throw_errno("accept failed");
  return std::make_unique<SocketChannel>(fd, timeout_seconds);
}

std::unique_ptr<WorkerChannel> connect_to_coordinator(
    const std::string& address, int port, double timeout_seconds) {
  const sockaddr_in addr = make_address(address, port);
  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration<double>(timeout_seconds);
  for (;;) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw_errno("socket failed");
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) ==
        0) {
      return std::make_unique<SocketChannel>(fd, timeout_seconds);
    }
    ::close(fd);
    if (std::chrono::steady_clock::now() >= deadline)
      throw ProtocolError("could not connect to coordinator at " + address +
                          ":" + std::to_string(port));
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
}

// ---------------------------------------------------------------------------
// Coordinator.

Coordinator::Coordinator(DistributedConfig cfg,
                         std::vector<std::unique_ptr<WorkerChannel>> channels)
    : cfg_(std::move(cfg)), channels_(std::move(channels)) {
  if (channels_.empty())
    throw ConfigError("Coordinator: at least one worker channel required");
  const int L = static_cast<int>(channels_.size());
  cfg_.num_workers = L;

  Objective probe = make_target_objective(cfg_.target);
  if (cfg_.target.dim == 0) cfg_.target.dim = probe.dim;
  if (cfg_.target.dim != probe.dim)
    throw ConfigError("Coordinator: target dim mismatch");
  if (cfg_.smoothing.num_directions == 0)
    cfg_.smoothing.num_directions = probe.dim;
  assign_rows(cfg_.smoothing.num_directions, L);  // validates L <= N

  const json shared = shared_config_to_json(cfg_);
  const std::string hash = hash_hex(config_hash(cfg_));
  for (int w = 0; w < L; ++w) {
    json init;
    init["type"] = "INIT";
    init["iteration"] = 0;
    init["payload"] = {{"config", shared},
                       {"config_hash", hash},
                       {"worker_id", w},
                       {"num_workers", L}};
    channels_[static_cast<std::size_t>(w)]->send(init);
  }
  for (int w = 0; w < L; ++w) {
    const json ack = channels_[static_cast<std::size_t>(w)]->receive();
    if (as_string(ack, "type") != "INIT")
      throw ProtocolError("worker " + std::to_string(w) +
                          " sent an unexpected handshake message");
    const std::string status = as_string(require(ack, "payload"), "status");
    if (status != "ok")
      throw ProtocolError("worker " + std::to_string(w) +
                          " refused INIT: " + status);
  }
}

Coordinator::~Coordinator() {
  try {
    stop();
  } catch (...) {
  }
}

GradientEstimate Coordinator::evaluate(int iteration,
                                       const Eigen::VectorXd& theta) {
  if (stopped_) throw ProtocolError("Coordinator: evaluate after stop");
  if (theta.size() != cfg_.target.dim)
    throw ConfigError("Coordinator: theta dimension mismatch");
  json params;
  params["type"] = "PARAMS";
  params["iteration"] = iteration;
  json th = json::array();
  for (Eigen::Index j = 0; j < theta.size(); ++j)
    th.push_back(to_hexfloat(theta[j]));
  params["payload"] = {{"theta", std::move(th)}};
  // Any worker failure, on either leg of the exchange, fails the whole
  // iteration explicitly; there is no partial aggregation.
  for (std::size_t w = 0; w < channels_.size(); ++w) {
    try {
      channels_[w]->send(params);
    } catch (const ProtocolError& e) {
      throw ProtocolError("incomplete iteration " + std::to_string(iteration) +
                          ": worker " + std::to_string(w) + ": " + e.what());
    }
  }

  std::vector<json> replies;
  replies.reserve(channels_.size());
  for (std::size_t w = 0; w < channels_.size(); ++w) {
    try {
      replies.push_back(channels_[w]->receive());
    } catch (const ProtocolError& e) {
      throw ProtocolError("incomplete iteration " + std::to_string(iteration) +
                          ": worker " + std::to_string(w) + ": " + e.what());
    }
  }
  return master_aggregate(replies, iteration, cfg_);
}

void Coordinator::stop() {
  if (stopped_) return;
  stopped_ = true;
  json msg;
  msg["type"] = "STOP";
  msg["iteration"] = 0;
  msg["payload"] = json::object();
  for (auto& ch : channels_) {
    try {
      ch->send(msg);
    } catch (...) {
    }
    ch->close();
  }
}

long long Coordinator::bytes_sent() const {
  long long total = 0;
  for (const auto& ch : channels_) total += ch->bytes_sent();
  return total;
}

long long Coordinator::bytes_received() const {
  long long total = 0;
  for (const auto& ch : channels_) total += ch->bytes_received();
  return total;
}

// ---------------------------------------------------------------------------
// Worker loop.

void serve_worker(WorkerChannel& channel,
                  const DistributedConfig* local_config) {
  const json init = channel.receive();
  if (as_string(init, "type") != "INIT")
    throw ProtocolError("worker: expected INIT, got \"" +
                        as_string(init, "type") + "\"");
  const json& payload = require(init, "payload");
  DistributedConfig cfg = shared_config_from_json(require(payload, "config"));
  const std::uint64_t advertised =
      parse_hash_hex(as_string(payload, "config_hash"));
  const int worker_id = static_cast<int>(as_int(payload, "worker_id"));
  const int num_workers = static_cast<int>(as_int(payload, "num_workers"));
  if (worker_id < 0 || worker_id >= num_workers)
    throw ProtocolError("worker: invalid worker_id in INIT");

  std::string status = "ok";
  if (config_hash(cfg) != advertised) status = "config-mismatch";
  if (local_config != nullptr && config_hash(*local_config) != advertised)
    status = "config-mismatch";

  json ack;
  ack["type"] = "INIT";
  ack["iteration"] = 0;
  ack["payload"] = {{"status", status}, {"worker_id", worker_id}};
  channel.send(ack);
  if (status != "ok")
    throw ProtocolError("worker " + std::to_string(worker_id) +
                        ": INIT config hash mismatch; refusing to serve");

  WorkerInit winit;
  winit.config = cfg;
  winit.assignment = assign_rows(cfg.smoothing.num_directions,
                                 num_workers)[static_cast<std::size_t>(
      worker_id)];
  winit.num_workers = num_workers;
  WorkerState state = make_worker_state(winit);

  for (;;) {
    const json msg = channel.receive();
    const std::string type = as_string(msg, "type");
    if (type == "STOP") return;
    if (type != "PARAMS")
      throw ProtocolError("worker: unexpected message type \"" + type + "\"");
    channel.send(worker_evaluate(state, msg));
  }
}

}  // namespace ses
