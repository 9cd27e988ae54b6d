#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ses/errors.hpp"
#include "ses/estimators.hpp"
#include "ses/exploration.hpp"
#include "ses/trainer.hpp"

#include <json.hpp>

namespace ses {

// ---------------------------------------------------------------------------
// Wire encoding.

// Exact round-trip encoding for doubles on the wire ("0x1.91eb851eb851fp+1").
std::string to_hexfloat(double x);
double from_hexfloat(const std::string& s);

// Frame = 4-byte big-endian body length + UTF-8 JSON body.
std::string encode_frame(const nlohmann::json& msg);
// Parses one complete frame (header + body); rejects truncated or oversized
// input and bodies that are not a JSON object.
nlohmann::json decode_frame(const std::string& frame);

constexpr std::size_t kMaxFrameBytes = std::size_t{1} << 28;

// ---------------------------------------------------------------------------
// Targets a worker can rebuild from a config description.

struct TargetSpec {
  // "quadratic" (reward -x'Qx, Q = diag(q_diag) or identity), "sphere"
  // (-|x|^2 shorthand), "linear" (<a, x>), or "env" (policy rollout reward).
  std::string kind = "quadratic";
  Eigen::Index dim = 0;
  std::vector<double> q_diag;  // quadratic only; empty selects identity
  std::vector<double> a;       // linear only
  // env targets
  std::string env_name = "pendulum";
  std::string layer_kind = "toeplitz";
  Eigen::Index hidden = 41;
  int max_steps = 200;
  int rollouts_per_eval = 1;
};

Objective make_target_objective(const TargetSpec& spec);
nlohmann::json target_to_json(const TargetSpec& spec);
TargetSpec target_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Shared run configuration.

struct DistributedConfig {
  TargetSpec target;
  SmoothingConfig smoothing;
  ExplorationScheme scheme;
  std::uint64_t master_seed = 0;
  int num_workers = 1;
  // Transport knobs; excluded from the config hash.
  double timeout_seconds = 30.0;
  int listen_port = 0;  // 0 picks an ephemeral port
  std::string connect_address = "127.0.0.1";
};

// JSON image of the seed-relevant subset (target, smoothing, scheme, N,
// master_seed).  Doubles are hex-float strings so both sides hash identical
// bytes.  Worker count and transport settings are deliberately excluded:
// results must not depend on them.
nlohmann::json shared_config_to_json(const DistributedConfig& cfg);
DistributedConfig shared_config_from_json(const nlohmann::json& j);

// FNV-1a (64-bit) over the canonical serialization of the shared subset.
std::uint64_t config_hash(const DistributedConfig& cfg);

// ---------------------------------------------------------------------------
// Row assignment.

struct WorkerAssignment {
  int worker_id = 0;
  std::vector<Eigen::Index> row_indices;  // sorted, contiguous
};

// Balanced contiguous partition of {0..N-1}: the first N mod L workers get
// ceil(N/L) rows, the rest floor(N/L).
std::vector<WorkerAssignment> assign_rows(Eigen::Index N, int L);

// ---------------------------------------------------------------------------
// Worker side.

struct WorkerInit {
  DistributedConfig config;
  WorkerAssignment assignment;
  int num_workers = 1;
};

struct WorkerState {
  WorkerInit init;
  Objective target;
  int next_iteration = 0;
};

WorkerState make_worker_state(const WorkerInit& init);

// Handles one PARAMS message: regenerates the iteration's exploration matrix
// from the shared seed, evaluates the assigned rows, and returns the EVALS
// message carrying scalars only.  Worker 0 also evaluates the forward-FD
// center.  Throws ProtocolError on malformed input or an out-of-order
// iteration, NumericError on a non-finite evaluation.
nlohmann::json worker_evaluate(WorkerState& state,
                               const nlohmann::json& params_msg);

// ---------------------------------------------------------------------------
// Master side.

// Validates and combines the workers' EVALS messages for one iteration.
// Directions are regenerated from the shared seed and reduced in ascending
// row order, so the result is bit-identical to local evaluation and
// independent of worker count and message arrival order.  Missing or
// duplicate rows raise ProtocolError naming the row.
GradientEstimate master_aggregate(const std::vector<nlohmann::json>& messages,
                                  int iteration, const DistributedConfig& cfg);

// ---------------------------------------------------------------------------
// Transport.

// Bidirectional message channel with byte accounting.  Implementations frame
// every message through encode_frame/decode_frame, including the in-process
// one, so the byte counters measure real wire traffic.
class WorkerChannel {
 public:
  virtual ~WorkerChannel() = default;
  virtual void send(const nlohmann::json& msg) = 0;
  // Blocks up to the channel timeout; throws ProtocolError on timeout or a
  // closed peer.
  virtual nlohmann::json receive() = 0;
  virtual void close() = 0;

  long long bytes_sent() const { return bytes_sent_; }
  long long bytes_received() const { return bytes_received_; }

 protected:
  long long bytes_sent_ = 0;
  long long bytes_received_ = 0;
};

// Connected pair of in-process endpoints (first: coordinator side, second:
// worker side).
std::pair<std::unique_ptr<WorkerChannel>, std::unique_ptr<WorkerChannel>>
make_inproc_pair(double timeout_seconds = 30.0);

// Loopback/TCP transport.
class Listener {
 public:
  // Binds and listens on address:port; port 0 picks an ephemeral port.
  Listener(const std::string& address, int port);
  ~Listener();
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  int port() const { return port_; }
  std::unique_ptr<WorkerChannel> accept_worker(double timeout_seconds);

 private:
  int fd_ = -1;
  int port_ = 0;
};

std::unique_ptr<WorkerChannel> connect_to_coordinator(
    const std::string& address, int port, double timeout_seconds);

// ---------------------------------------------------------------------------
// Coordinator and worker loops.

// Drives L workers over arbitrary channels and exposes the result as a
// GradientEvaluator, so train() is oblivious to distribution.  The
// constructor performs the INIT handshake; evaluate() broadcasts PARAMS and
// aggregates EVALS; stop() (also run by the destructor) broadcasts STOP.
class Coordinator final : public GradientEvaluator {
 public:
  Coordinator(DistributedConfig cfg,
              std::vector<std::unique_ptr<WorkerChannel>> channels);
  ~Coordinator() override;

  GradientEstimate evaluate(int iteration,
                            const Eigen::VectorXd& theta) override;
  void stop();

  long long bytes_sent() const;
  long long bytes_received() const;

 private:
  DistributedConfig cfg_;
  std::vector<std::unique_ptr<WorkerChannel>> channels_;
  bool stopped_ = false;
};

// Serves one worker connection until STOP or channel close.  If
// local_config is non-null the INIT config hash is checked against it and a
// mismatch is refused with status "config-mismatch" before raising
// ProtocolError; otherwise the coordinator's config is adopted.
void serve_worker(WorkerChannel& channel,
                  const DistributedConfig* local_config = nullptr);

}  // namespace ses
