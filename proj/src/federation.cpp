#include "zerofl/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

namespace zerofl {

const char* to_string(Aggregator a) { return a == Aggregator::FedAvg ? "fedavg" : "fedadam"; }

Aggregator parse_aggregator(std::string_view name) {
  if (name == "fedavg") return Aggregator::FedAvg;
  if (name == "fedadam") return Aggregator::FedAdam;
  throw ValueError("unknown aggregator '" + std::string(name) + "'");
}

void FederationConfig::validate() const {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (total_clients == 0) throw ValueError("total_clients must be >= 1");
  if (clients_per_round == 0 || clients_per_round > total_clients) {
    throw ValueError("clients_per_round must lie in [1, total_clients]");
  }
  if (local_epochs == 0) throw ValueError("local_epochs must be >= 1");
  if (batch_size == 0) throw ValueError("batch_size must be >= 1");
  if (!in_unit(sp)) throw ValueError("sp must lie in [0, 1]");
  if (!in_unit(r_mask)) throw ValueError("r_mask must lie in [0, 1]");
  if (!(lr_start > 0.0) || !(lr_end > 0.0) || !std::isfinite(lr_start) || !std::isfinite(lr_end)) {
    throw ValueError("lr_start and lr_end must be positive");
  }
  if (!in_unit(fedadam.beta1) || !in_unit(fedadam.beta2)) throw ValueError("fedadam betas must lie in [0, 1]");
  if (!(fedadam.tau > 0.0)) throw ValueError("fedadam tau must be positive");
  if (!(fedadam.server_lr > 0.0)) throw ValueError("fedadam server_lr must be positive");
}

double lr_at(const FederationConfig& cfg, std::size_t t) {
  if (t > cfg.rounds) throw ValueError("round " + std::to_string(t) + " beyond T = " + std::to_string(cfg.rounds));
  if (t == 0) return cfg.lr_start;
  if (t == cfg.rounds) return cfg.lr_end;
  const double frac = static_cast<double>(t) / static_cast<double>(cfg.rounds);
  return cfg.lr_start * std::pow(cfg.lr_end / cfg.lr_start, frac);
}

std::vector<std::size_t> sample_clients(std::size_t total, std::size_t per_round, std::size_t round,
                                        std::uint64_t seed) {
  if (per_round == 0 || per_round > total) throw ValueError("need 1 <= K <= N");
  std::vector<std::size_t> ids(total);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  Rng rng(derive_seed(seed, Stream::Sampling, {round}));
  for (std::size_t i = 0; i < per_round; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(per_round);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::span<const std::size_t> indices, std::size_t batch_size,
                                                    Rng& rng) {
  if (batch_size == 0) throw ValueError("batch_size must be >= 1");
  std::vector<std::size_t> order(indices.begin(), indices.end());
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const auto end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::uint64_t local_training_seed(std::uint64_t seed, std::size_t round, std::size_t client_id) {
  return derive_seed(seed, Stream::LocalTraining, {round, client_id});
}

LocalResult train_locally(std::size_t client_id, const ModelParams& w_t, const FederationConfig& cfg, double lr,
                          std::size_t round, const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ValueError("client " + std::to_string(client_id) + " has no training data");
  const SparsityConfig sparsity = cfg.sparsity();
  Rng rng(local_training_seed(cfg.seed, round, client_id));
  ModelParams w = w_t;
  LocalResult res;
  double loss_sum = 0.0;
  for (std::size_t e = 0; e < cfg.local_epochs; ++e) {
    for (const auto& batch : epoch_batches(indices, cfg.batch_size, rng)) {
      const auto labels = data.batch_labels(batch);
      const auto trace = forward_swat(w, data.batch(batch), labels, sparsity, Mode::Train);
      sgd_step(w, backward_swat(w, trace), static_cast<float>(lr));
      loss_sum += trace.loss;
      ++res.steps;
    }
  }
  res.mean_loss = loss_sum / static_cast<double>(res.steps);
  res.update = build_update(w_t, w, cfg.strategy, cfg.sp, cfg.r_mask, static_cast<std::uint32_t>(indices.size()));
  return res;
}

namespace {

void check_updates(const ModelParams& w_t, std::span<const ModelUpdate> updates) {
  if (updates.empty()) throw ValueError("no updates to aggregate");
  const auto& first = updates.front();
  const auto infos = w_t.params();
  for (const auto& u : updates) {
    if (u.strategy != first.strategy) throw ValueError("updates mix strategies");
    if (u.sp != first.sp || u.r_mask != first.r_mask) throw ValueError("updates mix sp / r_mask settings");
    if (u.layers.size() != infos.size()) throw ShapeError("layers", "update layer count does not match the model");
    for (std::size_t p = 0; p < infos.size(); ++p) {
      if (u.layers[p].name != infos[p].name) {
        throw ShapeError(infos[p].name, "update layer '" + u.layers[p].name + "' where '" + infos[p].name +
                                            "' was expected");
      }
      require_same_shape(u.layers[p].dims, infos[p].shape, infos[p].name);
    }
  }
}

// sum_k c_k * decoded_k in double, one tensor per parameter.
std::vector<Tensor64> weighted_payload_sum(const ModelParams& w_t, std::span<const ModelUpdate> updates) {
  check_updates(w_t, updates);
  const auto coeffs = aggregation_weights(updates);
  const auto infos = w_t.params();
  std::vector<Tensor64> acc;
  for (const auto& info : infos) acc.emplace_back(info.shape);
  for (std::size_t k = 0; k < updates.size(); ++k) {
    for (std::size_t p = 0; p < infos.size(); ++p) {
      const Tensor payload = updates[k].layers[p].decode();
      auto dst = acc[p].values();
      const auto src = payload.values();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += coeffs[k] * static_cast<double>(src[j]);
    }
  }
  return acc;
}

}  // namespace

std::vector<double> aggregation_weights(std::span<const ModelUpdate> updates) {
  double n = 0.0;
  for (const auto& u : updates) {
    if (u.num_samples == 0) throw ValueError("update with zero samples");
    n += u.num_samples;
  }
  std::vector<double> w;
  w.reserve(updates.size());
  for (const auto& u : updates) w.push_back(static_cast<double>(u.num_samples) / n);
  return w;
}

ModelParams aggregate(const ModelParams& w_t, std::span<const ModelUpdate> updates) {
  const auto acc = weighted_payload_sum(w_t, updates);
  const bool diff = sends_diff(updates.front().strategy);
  ModelParams out = w_t;
  auto params = out.param_tensors();
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto w = params[p]->values();
    const auto a = acc[p].values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] = diff ? static_cast<float>(static_cast<double>(w[j]) + a[j]) : static_cast<float>(a[j]);
    }
  }
  return out;
}

std::vector<Tensor64> pseudo_gradient(const ModelParams& w_t, std::span<const ModelUpdate> updates) {
  auto acc = weighted_payload_sum(w_t, updates);
  if (sends_diff(updates.front().strategy)) return acc;
  // Weight strategies carry targets; the coefficients sum to one, so the
  // pseudo-gradient is the averaged target minus w_t.
  const auto params = w_t.param_tensors();
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto a = acc[p].values();
    const auto w = params[p]->values();
    for (std::size_t j = 0; j < a.size(); ++j) a[j] -= static_cast<double>(w[j]);
  }
  return acc;
}

void fedadam_aggregate(ServerState& state, const std::vector<Tensor64>& delta, const FedAdamParams& hyper) {
  auto params = state.model.param_tensors();
  if (delta.size() != params.size()) throw ShapeError("pseudo_gradient", "pseudo-gradient does not match the model");
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("moments", "FedAdam moments do not match the model");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    require_same_shape(delta[p].shape(), params[p]->shape(), "pseudo_gradient");
    require_same_shape(state.m[p].shape(), params[p]->shape(), "fedadam.m");
    auto w = params[p]->values();
    auto m = state.m[p].values();
    auto v = state.v[p].values();
    const auto d = delta[p].values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * d[j];
      v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * d[j] * d[j];
      w[j] = static_cast<float>(static_cast<double>(w[j]) + hyper.server_lr * m[j] / (std::sqrt(v[j]) + hyper.tau));
    }
  }
}

namespace {

struct ClientSlot {
  std::optional<LocalResult> result;
  std::size_t wire_bytes = 0;
  std::exception_ptr error;
};

template <typename Fn>
void run_parallel(std::size_t jobs, std::size_t workers, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  auto loop = [&] {
    for (std::size_t i = next++; i < jobs; i = next++) fn(i);
  };
  const std::size_t n_threads = std::min(std::max<std::size_t>(workers, 1), jobs);
  if (n_threads <= 1) {
    loop();
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(loop);
}

}  // namespace

ExperimentResult run_experiment(const FederationConfig& cfg, const ModelParams& init, const Dataset& train,
                                const PartitionPlan& plan, const Dataset& test, const RunOptions& opts) {
  cfg.validate();
  if (plan.num_clients() != cfg.total_clients) {
    throw ValueError("partition has " + std::to_string(plan.num_clients()) + " clients, config expects " +
                     std::to_string(cfg.total_clients));
  }
  std::vector<ValidationSplit> splits;
  splits.reserve(plan.num_clients());
  for (std::size_t c = 0; c < plan.num_clients(); ++c) {
    try {
      splits.push_back(client_validation_split(plan.assignments[c], opts.validation_fraction,
                                               derive_seed(cfg.seed, Stream::Validation, {c})));
    } catch (const std::exception& e) {
      throw Error("client " + std::to_string(c) + ": " + e.what());
    }
  }

  ExperimentResult out;
  ServerState state{init, 0, {}, {}};
  out.heatmap = MaskHeatmap(opts.heatmap_layers.empty() ? sparsifiable_layers(init) : opts.heatmap_layers);
  const std::size_t dense_bytes = dense_update_bytes(init);
  const SparsityConfig eval_sparsity = cfg.sparsity();
  const double uplink_keep = keep_fraction_for(cfg.sp, cfg.r_mask);

  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    RoundRecord rec;
    rec.round = t;
    rec.lr = lr_at(cfg, t);
    rec.clients = sample_clients(cfg.total_clients, cfg.clients_per_round, t, cfg.seed);

    std::vector<ClientSlot> slots(rec.clients.size());
    run_parallel(slots.size(), opts.workers, [&](std::size_t i) {
      try {
        const std::size_t id = rec.clients[i];
        LocalResult local = train_locally(id, state.model, cfg, rec.lr, t, train, splits[id].train);
        const auto wire = serialize_update(local.update);
        slots[i].wire_bytes = wire.size();
        local.update = deserialize_update(wire);
        slots[i].result = std::move(local);
      } catch (...) {
        slots[i].error = std::current_exception();
      }
    });

    std::vector<ModelUpdate> updates;
    updates.reserve(slots.size());
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (slots[i].error) {
        try {
          std::rethrow_exception(slots[i].error);
        } catch (const std::exception& e) {
          throw Error("round " + std::to_string(t) + ", client " + std::to_string(rec.clients[i]) + ": " + e.what());
        }
      }
      rec.bytes_up += slots[i].wire_bytes;
      loss_sum += slots[i].result->mean_loss;
      updates.push_back(std::move(slots[i].result->update));
    }
    rec.train_loss = loss_sum / static_cast<double>(updates.size());
    rec.bytes_dense = dense_bytes * updates.size();
    rec.savings = savings_factor(rec.bytes_dense, rec.bytes_up);

    try {
      if (cfg.aggregator == Aggregator::FedAvg) {
        state.model = aggregate(state.model, updates);
      } else {
        fedadam_aggregate(state, pseudo_gradient(state.model, updates), cfg.fedadam);
      }
    } catch (const std::exception& e) {
      throw Error("round " + std::to_string(t) + ", aggregation: " + e.what());
    }
    state.round = t + 1;

    rec.test_accuracy = evaluate(state.model, test, eval_sparsity).accuracy;
    std::vector<std::size_t> val;
    for (auto id : rec.clients) val.insert(val.end(), splits[id].val.begin(), splits[id].val.end());
    if (!val.empty()) rec.val_accuracy = evaluate(state.model, train, eval_sparsity, val).accuracy;
    rec.overlap = overlap_report(state.model, t, uplink_keep);
    if (opts.snapshot_every > 0 && t % opts.snapshot_every == 0) out.heatmap.snapshot(state.model, t);

    if (opts.on_round) opts.on_round(rec);
    out.records.push_back(std::move(rec));
  }
  out.final_model = std::move(state.model);
  return out;
}

}  // namespace zerofl
