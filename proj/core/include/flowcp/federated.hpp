#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "flowcp/conformal.hpp"
#include "flowcp/data.hpp"
#include "flowcp/flow.hpp"
#include "flowcp/optim.hpp"
#include "flowcp/rng.hpp"

namespace flowcp::fed {

/// Everything a simulated client owns: private splits, conditioner
/// parameters, and its own random stream.
struct ClientSpec {
  int id = 0;
  data::Dataset train;
  data::Dataset calib;
  data::Dataset test;
  std::vector<double> cond_mean;  // mu_k; empty in the no-conditioner ablation
  double cond_std = 0.1;          // sigma_k
  num::RngStream rng{0};
};

struct LocalUpdateConfig {
  std::size_t steps = 5;
  std::size_t batch_size = 64;
  num::AdamConfig adam;
  bool per_batch_conditioner = false;  // one draw per minibatch instead of per sample
  bool learn_cond_mean = false;        // local-only SGD on mu_k; never shared
};

/// The only message a client sends during training: a parameter delta, the
/// number of samples it consumed, and its mean minibatch loss.
struct ClientUpdate {
  int client_id = 0;
  std::vector<double> delta;
  std::size_t sample_count = 0;
  double mean_loss = 0.0;
  bool ok = true;
};

/// Holds a ClientSpec privately and exposes only the protocol surface:
/// gradient-style updates, conditioner draws, and local calibration /
/// evaluation results. Raw rows never leave through this interface.
class Client {
 public:
  explicit Client(ClientSpec spec);

  int id() const { return spec_.id; }
  std::size_t train_size() const { return spec_.train.n(); }
  std::size_t test_size() const { return spec_.test.n(); }
  std::size_t cond_dim() const { return spec_.cond_mean.size(); }

  /// One draw from N(mu_k, sigma_k^2 I); empty when cond_dim is zero.
  std::vector<double> draw_conditioner();

  /// Runs `steps` optimizer steps of the flow NLL on seeded minibatches,
  /// each row paired with a fresh conditioner draw. Optimizer state is
  /// ephemeral. Reports failure instead of throwing on non-finite loss.
  ClientUpdate local_update(const flow::FlowParams& broadcast, const LocalUpdateConfig& config,
                            const flow::ReferenceSpec& ref);

  /// Scores the client's own calibration split pushed through the flow,
  /// one conditioner draw per point.
  conformal::CalibrationResult calibrate_transformed(const flow::FlowParams& flow,
                                                     const conformal::QuantileModel& model,
                                                     double alpha);

  struct Eval {
    std::vector<conformal::PredictionSet> sets;
    std::vector<double> y_true;
    conformal::CoverageSummary summary;
    std::size_t unbounded_count = 0;
    std::size_t numeric_failures = 0;
    conformal::GridSpec grid;
  };

  /// Builds a pullback set per test point (fresh conditioner draw each) over
  /// a grid spanning the client's training labels.
  Eval evaluate_transformed(const flow::FlowParams& flow, const conformal::QuantileModel& model,
                            const conformal::CalibrationResult& calib, std::size_t grid_points,
                            double grid_pad);

  /// Interval baseline: membership and width evaluated directly on the
  /// client's standardized (x, y), no flow involved.
  Eval evaluate_intervals(const conformal::QuantileModel& model,
                          const conformal::CalibrationResult& calib, std::size_t grid_points,
                          double grid_pad);

 private:
  ClientSpec spec_;
  num::RngStream cond_rng_;
  num::RngStream batch_rng_;
};

struct FedConfig {
  std::size_t rounds = 50;
  std::size_t local_steps = 5;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::size_t clients_per_round = 0;  // 0 = all clients every round
  std::uint64_t seed = 0;
  bool per_batch_conditioner = false;
  bool learn_cond_mean = false;
  std::size_t checkpoint_every = 0;  // rounds between checkpoints; 0 = off
  std::string checkpoint_dir;
};

struct RoundLog {
  std::size_t round = 0;
  double mean_loss = 0.0;
  double update_norm = 0.0;
  std::vector<int> participants;
};

struct FedResult {
  flow::FlowParams flow;
  std::vector<RoundLog> logs;
};

/// Weighted mean of deltas, weights proportional to sample counts. Throws
/// ProtocolError on an empty list or mismatched shapes.
std::vector<double> server_aggregate(const std::vector<ClientUpdate>& updates);

/// The training protocol: broadcast, local updates on (sampled) clients,
/// weighted aggregation, apply. Clients that report failure are skipped and
/// logged; a round where every client fails aborts with ProtocolError.
/// Deterministic in (clients, config, initial flow).
FedResult fed_train(std::vector<Client>& clients, const FedConfig& config,
                    const flow::ReferenceSpec& ref, flow::FlowParams initial);

/// CSV: round,mean_loss,update_norm,participants (ids joined by ';').
void write_round_logs_csv(std::ostream& os, std::span<const RoundLog> logs);

}  // namespace flowcp::fed
