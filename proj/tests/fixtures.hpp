#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <vector>

#include "zerofl/analysis.hpp"
#include "zerofl/codec.hpp"
#include "zerofl/federation.hpp"

namespace fixtures {

using namespace zerofl;

// Single linear layer [out, in] with the given weights, no bias.
inline ModelParams linear_model(std::size_t out, std::size_t in, std::vector<float> w) {
  BasicLayer<float> l;
  l.name = "fc";
  l.kind = LayerKind::Linear;
  l.weight = Tensor({out, in}, std::move(w));
  return ModelParams({l}, {in});
}

inline Tensor& param(ModelParams& m, const std::string& name) {
  const auto info = m.params();
  for (std::size_t i = 0; i < info.size(); ++i) {
    if (info[i].name == name) return *m.param_tensors()[i];
  }
  throw Error("no param " + name);
}

// Steps (out of 20) the one-client federation reproduces bitwise before the
// first mismatch against a plain SGD loop on the same data.
inline std::size_t centralized_match_steps() {
  const auto data = synth_blobs(3, 20, 5, 0.5, 17);
  PartitionPlan plan{1.0, {std::vector<std::size_t>(data.size())}};
  std::iota(plan.assignments[0].begin(), plan.assignments[0].end(), 0);
  Rng init_rng(3);
  const auto init = make_mlp(5, 12, 3, init_rng);

  FederationConfig cfg;
  cfg.total_clients = cfg.clients_per_round = 1;
  cfg.local_epochs = 1;
  cfg.batch_size = 15;  // four steps per round
  cfg.strategy = Strategy::FullDense;
  cfg.sp = cfg.r_mask = 0.0;
  cfg.lr_start = cfg.lr_end = 0.05;
  cfg.seed = 99;
  RunOptions opts;
  opts.validation_fraction = 0.0;
  opts.snapshot_every = 0;

  ModelParams w = init;
  std::size_t matched = 0;
  for (std::size_t t = 0; t < 5; ++t) {
    Rng rng(local_training_seed(cfg.seed, t, 0));
    for (const auto& batch : epoch_batches(plan.assignments[0], cfg.batch_size, rng)) {
      const auto labels = data.batch_labels(batch);
      const auto trace = forward_swat(w, data.batch(batch), labels, SparsityConfig{0.0}, Mode::Train);
      sgd_step(w, backward_swat(w, trace), 0.05f);
    }
    cfg.rounds = t + 1;
    const auto fed = run_experiment(cfg, init, data, plan, data, opts).final_model;
    const auto a = fed.param_tensors();
    const auto b = w.param_tensors();
    for (std::size_t p = 0; p < a.size(); ++p) {
      if (std::memcmp(a[p]->data(), b[p]->data(), a[p]->numel() * sizeof(float)) != 0) return matched;
    }
    matched += 4;
  }
  return matched;
}

// Worst relative deviation of each strategy's aggregate from plain FedAvg of
// the client models, with keep fraction 1 and five random clients.
inline double degeneracy_error(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  Rng r0(gen());
  const auto w_t = make_mlp(6, 16, 3, r0);
  std::vector<ModelParams> clients;
  std::vector<std::uint32_t> n;
  for (int k = 0; k < 5; ++k) {
    Rng rk(gen());
    clients.push_back(make_mlp(6, 16, 3, rk));
    n.push_back(1 + static_cast<std::uint32_t>(gen() % 50));
  }
  const double total = std::accumulate(n.begin(), n.end(), 0.0);
  const double sp = std::uniform_real_distribution<double>(0, 1)(gen);

  double worst = 0.0;
  for (auto s : {Strategy::TopKWeights, Strategy::DiffTopKWeights, Strategy::TopKWeightsDiff}) {
    std::vector<ModelUpdate> ups;
    for (int k = 0; k < 5; ++k) ups.push_back(build_update(w_t, clients[k], s, sp, sp, n[k]));
    const auto agg = aggregate(w_t, ups);
    const auto got = agg.param_tensors();
    for (std::size_t p = 0; p < got.size(); ++p) {
      double scale = 0.0, diff = 0.0;
      for (std::size_t j = 0; j < got[p]->numel(); ++j) {
        double want = 0.0;
        for (int k = 0; k < 5; ++k) want += n[k] / total * (*clients[k].param_tensors()[p])[j];
        scale = std::max(scale, std::abs(want));
        diff = std::max(diff, std::abs((*got[p])[j] - want));
      }
      worst = std::max(worst, diff / std::max(scale, 1e-12));
    }
  }
  return worst;
}

struct OverlapCase {
  double ratio = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

// K clients each send exactly m non-zeros of the sparsifiable fc2 layer. With
// `disjoint` the positions never collide.
inline OverlapCase overlap_case(std::mt19937_64& gen, bool disjoint) {
  const std::size_t hidden = 4 + gen() % 12;
  Rng r0(gen());
  const auto w_t = make_mlp(3, hidden, 2, r0);
  const std::size_t numel = hidden * hidden;
  const std::size_t k_clients = 1 + gen() % 8;
  const std::size_t m = disjoint ? 1 + gen() % (numel / k_clients) : 1 + gen() % numel;

  std::vector<std::uint32_t> pool(numel);
  std::iota(pool.begin(), pool.end(), 0u);
  std::shuffle(pool.begin(), pool.end(), gen);
  const auto layer_pos = [&] {
    const auto info = w_t.params();
    for (std::size_t i = 0; i < info.size(); ++i) {
      if (info[i].name == "fc2.weight") return i;
    }
    throw Error("fixture has no fc2");
  }();

  std::vector<ModelUpdate> ups;
  for (std::size_t k = 0; k < k_clients; ++k) {
    Tensor w({hidden, hidden});
    if (!disjoint) std::shuffle(pool.begin(), pool.end(), gen);
    for (std::size_t j = 0; j < m; ++j) {
      const auto pos = pool[disjoint ? k * m + j : j];
      w[pos] = std::uniform_real_distribution<float>(0.5f, 1.5f)(gen);
    }
    auto u = build_update(w_t, w_t, Strategy::FullDense, 0.0, 0.0, 1 + static_cast<std::uint32_t>(gen() % 20));
    u.strategy = Strategy::TopKWeights;
    u.layers[layer_pos].data = csr_encode(w);
    ups.push_back(std::move(u));
  }
  const auto agg = aggregate(w_t, ups);
  const double lo = static_cast<double>(m) / numel;
  return {nonzero_ratio(agg, "fc2"), lo, std::min(1.0, static_cast<double>(k_clients * m) / numel)};
}

// Random update: mixed dense and CSR layers, random names and shapes.
inline ModelUpdate random_update(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dim(1, 9);
  std::uniform_real_distribution<float> val(-3.0f, 3.0f);
  ModelUpdate u;
  u.strategy = static_cast<Strategy>(rng() % 4);
  u.sp = std::uniform_real_distribution<float>(0, 1)(rng);
  u.r_mask = std::uniform_real_distribution<float>(0, 1)(rng);
  u.num_samples = 1 + static_cast<std::uint32_t>(rng() % 1000);
  const int n_layers = 1 + static_cast<int>(rng() % 5);
  for (int l = 0; l < n_layers; ++l) {
    const std::size_t ndim = 1 + rng() % 4;
    Shape shape;
    for (std::size_t d = 0; d < ndim; ++d) shape.push_back(static_cast<std::size_t>(dim(rng)));
    Tensor t(shape);
    const double density = std::uniform_real_distribution<double>(0, 1)(rng);
    for (float& v : t.values()) {
      if (std::uniform_real_distribution<double>(0, 1)(rng) < density) v = val(rng);
    }
    const std::string name = "layer" + std::to_string(l) + (rng() % 2 ? ".weight" : ".bias");
    if (rng() % 2) {
      u.layers.push_back({name, shape, csr_encode(t)});
    } else {
      u.layers.push_back({name, shape, t});
    }
  }
  return u;
}

}  // namespace fixtures
