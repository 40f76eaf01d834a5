#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "zerofl/model.hpp"

namespace zerofl {

/// Fraction of entries that are exactly non-zero.
double nonzero_ratio(const Tensor& t);
/// Non-zero ratio of the weight tensor of layer `layer`.
double nonzero_ratio(const ModelParams& model, const std::string& layer);

/// Per-layer non-zero ratios of one aggregated model.
struct OverlapReport {
  std::size_t round = 0;
  double keep_fraction = 1.0;
  std::vector<std::pair<std::string, double>> ratios;  // sparsifiable layers, model order
};

OverlapReport overlap_report(const ModelParams& model, std::size_t round, double keep_fraction);

/// Names of the layers whose weights are sparsifiable, in model order.
std::vector<std::string> sparsifiable_layers(const ModelParams& model);

/// 0/1 non-zero pattern of the selected layers' weights, one column per
/// snapshot. Rows are the concatenated flattened weight indices.
class MaskHeatmap {
 public:
  MaskHeatmap() = default;
  explicit MaskHeatmap(std::vector<std::string> layers) : layers_(std::move(layers)) {}

  void snapshot(const ModelParams& model, std::size_t round);

  const std::vector<std::string>& layers() const noexcept { return layers_; }
  const std::vector<std::vector<std::uint8_t>>& columns() const noexcept { return columns_; }
  const std::vector<std::size_t>& rounds() const noexcept { return rounds_; }
  std::size_t rows() const { return columns_.empty() ? 0 : columns_.front().size(); }

  /// Whitespace-separated 0/1 matrix: one line per weight index, one column per snapshot.
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> layers_;
  std::vector<std::vector<std::uint8_t>> columns_;
  std::vector<std::size_t> rounds_;
};

/// |A n B| / |A u B| over 0/1 patterns; two empty patterns count as identical.
double jaccard(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

struct JaccardPair {
  std::size_t round_a = 0;
  std::size_t round_b = 0;
  double similarity = 0.0;
};

/// Jaccard similarity of every pair of snapshots (a < b).
std::vector<JaccardPair> mask_stability(const MaskHeatmap& heatmap);

struct FlopsReport {
  struct Row {
    std::string layer;
    bool sparsifiable = false;
    std::uint64_t dense_macs = 0;
    std::uint64_t sparse_macs = 0;
  };
  double sp = 0.0;
  std::vector<Row> rows;
  std::uint64_t dense_total = 0;
  std::uint64_t sparse_total = 0;

  double ratio() const { return dense_total == 0 ? 1.0 : static_cast<double>(sparse_total) / dense_total; }
};

/// Forward-pass MACs per sample: density 1 everywhere versus density 1 - sp
/// on sparsifiable layers.
FlopsReport flops_report(const ModelParams& model, double sp, std::size_t batch = 1);

void write_overlap_csv(const std::filesystem::path& path, std::span<const OverlapReport> reports);
void write_jaccard_csv(const std::filesystem::path& path, std::span<const JaccardPair> pairs);
void write_flops_csv(const std::filesystem::path& path, const FlopsReport& report);

}  // namespace zerofl
