#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "zerofl/tensor.hpp"

namespace zerofl {

/// Labelled examples stored contiguously; every sample has `sample_shape`.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Shape sample_shape, std::size_t num_classes, std::vector<float> features, std::vector<int> labels);

  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  const Shape& sample_shape() const noexcept { return sample_shape_; }
  std::size_t sample_numel() const { return shape_numel(sample_shape_); }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::span<const int> labels() const noexcept { return labels_; }
  std::span<const float> features() const noexcept { return features_; }
  std::span<const float> sample(std::size_t i) const;

  /// Stacks the selected samples into a [n, sample_shape...] tensor.
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;

  Dataset subset(std::span<const std::size_t> indices) const;

  /// Per-class counts over the given indices.
  std::vector<std::size_t> class_histogram(std::span<const std::size_t> indices) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  Shape sample_shape_;
  std::size_t num_classes_ = 0;
  std::vector<float> features_;
  std::vector<int> labels_;
};

/// Client -> sample-index assignment produced by Dirichlet partitioning.
struct PartitionPlan {
  double alpha = 1.0;
  std::vector<std::vector<std::size_t>> assignments;

  std::size_t num_clients() const { return assignments.size(); }
  friend bool operator==(const PartitionPlan&, const PartitionPlan&) = default;
};

/// Gaussian clusters around class means placed on the unit sphere.
Dataset synth_blobs(std::size_t num_classes, std::size_t samples_per_class, std::size_t dims, double spread,
                    std::uint64_t seed);

/// Latent Dirichlet allocation split into `num_clients` equal shares of
/// floor(size / num_clients) samples each. Each client draws class
/// proportions from Dirichlet(alpha * k * share), share being the class mix
/// still in the pool (Dirichlet(alpha) for balanced pools); exhausted classes
/// are dropped and the proportions renormalised over the classes that remain.
PartitionPlan lda_partition(const Dataset& ds, std::size_t num_clients, double alpha, std::uint64_t seed);

struct ValidationSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Random disjoint split with |val| = round(fraction * n). An empty train side is an error.
ValidationSplit client_validation_split(std::span<const std::size_t> samples, double fraction, std::uint64_t seed);

/// Random disjoint split of a whole dataset into (train, test) by index.
std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction, std::uint64_t seed);

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled to [0, 1]; samples get shape [1, rows, cols].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace zerofl
