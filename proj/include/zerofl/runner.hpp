#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "zerofl/config.hpp"

namespace zerofl {

/// Everything a run needs before round 0, derived from the config and its seed.
struct RunInputs {
  Dataset train;
  Dataset test;
  PartitionPlan plan;
  ModelParams init;
};

RunInputs prepare_run(const ExperimentConfig& cfg);

/// Column names of metrics.csv for a model with these sparsifiable layers.
std::vector<std::string> metrics_header(std::span<const std::string> sparse_layers);

void write_metrics_csv(const std::filesystem::path& path, std::span<const RoundRecord> records,
                       std::span<const std::string> sparse_layers);

/// Runs the experiment and writes metrics.csv, heatmap.txt, overlap.csv,
/// jaccard.csv, flops.csv, final_model.zfu and config.txt into `out_dir`.
ExperimentResult run_to_dir(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                            std::function<void(const RoundRecord&)> on_round = {});

struct RunSummary {
  std::size_t rounds = 0;
  double final_accuracy = 0.0;
  double mean_savings = 0.0;
  std::uint64_t total_bytes_up = 0;
};

/// Reads a metrics.csv written by run_to_dir.
RunSummary summarize_run(const std::filesystem::path& run_dir);

struct Comparison {
  RunSummary a;
  RunSummary b;
  double accuracy_delta = 0.0;  // b - a
  double savings_delta = 0.0;
  double bytes_up_delta = 0.0;
};

Comparison compare_runs(const std::filesystem::path& run_a, const std::filesystem::path& run_b);
std::string format_comparison(const Comparison& c);

}  // namespace zerofl
