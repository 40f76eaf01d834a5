#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "zerofl/federation.hpp"

namespace zerofl {

inline constexpr int kConfigVersion = 1;

struct DataConfig {
  enum class Source { Synthetic, Idx };
  Source source = Source::Synthetic;
  // synthetic blobs
  std::size_t classes = 3;
  std::size_t per_class = 300;
  std::size_t dims = 16;
  double spread = 0.3;
  double test_fraction = 0.2;
  // idx files
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;

  double validation_fraction = 0.1;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct ExperimentConfig {
  FederationConfig federation;
  DataConfig data;
  ModelSpec model;
  double alpha = 1.0;
  std::size_t snapshot_every = 20;
  std::string out_dir = "out";
  std::size_t workers = 1;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Parses the sectioned key = value format. Unknown keys, type errors and
/// range violations raise ConfigError carrying the "section.key" path.
/// `seed_override` stands in for a missing federation.seed.
ExperimentConfig parse_config_text(std::string_view text, std::optional<std::uint64_t> seed_override = {});
ExperimentConfig parse_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = {});

/// Every key, defaults included; parse_config_text(to_config_text(c)) == c.
std::string to_config_text(const ExperimentConfig& cfg);

/// Range checks across all sections.
void validate_config(const ExperimentConfig& cfg);

}  // namespace zerofl
