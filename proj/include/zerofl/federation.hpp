#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "zerofl/analysis.hpp"
#include "zerofl/codec.hpp"
#include "zerofl/dataset.hpp"
#include "zerofl/model.hpp"

namespace zerofl {

enum class Aggregator { FedAvg, FedAdam };

const char* to_string(Aggregator a);
Aggregator parse_aggregator(std::string_view name);

/// Server-side Adam without bias correction.
struct FedAdamParams {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double tau = 1e-3;
  double server_lr = 1e-2;

  friend bool operator==(const FedAdamParams&, const FedAdamParams&) = default;
};

struct FederationConfig {
  std::size_t total_clients = 32;
  std::size_t clients_per_round = 8;
  std::size_t rounds = 150;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 10;
  Strategy strategy = Strategy::TopKWeights;
  double sp = 0.9;
  double r_mask = 0.1;
  ActivationTopK activation_scope = ActivationTopK::PerBatch;
  Aggregator aggregator = Aggregator::FedAvg;
  FedAdamParams fedadam;
  double lr_start = 0.1;
  double lr_end = 0.01;
  std::uint64_t seed = 0;

  /// Throws ValueError naming the first out-of-range field.
  void validate() const;
  SparsityConfig sparsity() const { return {sp, activation_scope}; }

  friend bool operator==(const FederationConfig&, const FederationConfig&) = default;
};

/// lr_start * (lr_end / lr_start)^(t / T); both endpoints are returned exactly.
double lr_at(const FederationConfig& cfg, std::size_t t);

/// K distinct ids from [0, N), uniform without replacement, sorted ascending.
std::vector<std::size_t> sample_clients(std::size_t total, std::size_t per_round, std::size_t round,
                                        std::uint64_t seed);

/// Shuffles `indices` with `rng` and cuts them into batches; the last batch may be short.
std::vector<std::vector<std::size_t>> epoch_batches(std::span<const std::size_t> indices, std::size_t batch_size,
                                                    Rng& rng);

/// Seed of the local-training stream of one client in one round.
std::uint64_t local_training_seed(std::uint64_t seed, std::size_t round, std::size_t client_id);

struct LocalResult {
  ModelUpdate update;
  double mean_loss = 0.0;
  std::size_t steps = 0;
};

/// E epochs of SWAT mini-batch SGD from a copy of w_t, then build_update.
/// Pure: the client keeps nothing between calls.
LocalResult train_locally(std::size_t client_id, const ModelParams& w_t, const FederationConfig& cfg, double lr,
                          std::size_t round, const Dataset& data, std::span<const std::size_t> indices);

/// n_k / n for every update, n being the sum over this round's updates.
std::vector<double> aggregation_weights(std::span<const ModelUpdate> updates);

/// Weighted average of the decoded targets (weight strategies) or w_t plus the
/// weighted average of the decoded diffs (diff strategies).
ModelParams aggregate(const ModelParams& w_t, std::span<const ModelUpdate> updates);

/// sum_k (n_k / n) (target_k - w_t), one tensor per parameter.
std::vector<Tensor64> pseudo_gradient(const ModelParams& w_t, std::span<const ModelUpdate> updates);

struct ServerState {
  ModelParams model;
  std::size_t round = 0;
  std::vector<Tensor64> m;  // empty until the first FedAdam step
  std::vector<Tensor64> v;
};

/// m <- b1 m + (1-b1) d; v <- b2 v + (1-b2) d^2; w <- w + lr m / (sqrt(v) + tau).
void fedadam_aggregate(ServerState& state, const std::vector<Tensor64>& delta, const FedAdamParams& hyper);

struct RoundRecord {
  std::size_t round = 0;
  double lr = 0.0;
  std::vector<std::size_t> clients;
  double test_accuracy = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_accuracy;
  std::size_t bytes_up = 0;
  std::size_t bytes_dense = 0;
  double savings = 1.0;
  OverlapReport overlap;
};

struct RunOptions {
  std::size_t workers = 1;
  double validation_fraction = 0.1;
  std::size_t snapshot_every = 20;  // 0 disables heatmap snapshots
  std::vector<std::string> heatmap_layers;  // empty: every sparsifiable layer
  std::function<void(const RoundRecord&)> on_round;
};

struct ExperimentResult {
  std::vector<RoundRecord> records;
  ModelParams final_model;
  MaskHeatmap heatmap;
};

/// Runs cfg.rounds rounds of sampling, local training, uplink and aggregation.
/// Output is a pure function of the inputs, independent of opts.workers.
ExperimentResult run_experiment(const FederationConfig& cfg, const ModelParams& init, const Dataset& train,
                                const PartitionPlan& plan, const Dataset& test, const RunOptions& opts);

}  // namespace zerofl
