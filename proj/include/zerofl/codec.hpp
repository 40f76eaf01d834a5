#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "zerofl/model.hpp"
#include "zerofl/sparsify.hpp"
#include "zerofl/tensor.hpp"

namespace zerofl {

/// Uplink strategies. Values are the on-wire strategy byte.
enum class Strategy : std::uint8_t {
  FullDense = 0,
  TopKWeights = 1,
  DiffTopKWeights = 2,
  TopKWeightsDiff = 3,
};

const char* to_string(Strategy s);
/// Accepts the names produced by to_string ("full_dense", "topk_weights", ...).
Strategy parse_strategy(std::string_view name);

/// True for the two strategies that transmit w_E - w_t.
inline bool sends_diff(Strategy s) { return s == Strategy::DiffTopKWeights || s == Strategy::TopKWeightsDiff; }

/// A tensor viewed as rows = shape[0], cols = numel / shape[0].
struct CsrLayerPayload {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint32_t> row_ptr;
  std::vector<std::uint32_t> col_idx;
  std::vector<float> values;

  std::size_t nnz() const { return values.size(); }
  /// Throws FormatError(Invariant) describing the first broken invariant.
  void validate() const;

  friend bool operator==(const CsrLayerPayload&, const CsrLayerPayload&) = default;
};

/// Stores every entry that is not exactly 0.0.
CsrLayerPayload csr_encode(const Tensor& t);
/// Stores exactly the masked entries, zeros included.
CsrLayerPayload csr_encode_masked(const Tensor& t, const TopKMask& mask);
/// Dense [rows, cols] tensor.
Tensor csr_decode(const CsrLayerPayload& p);

struct LayerPayload {
  std::string name;
  Shape dims;
  std::variant<Tensor, CsrLayerPayload> data;

  bool is_csr() const { return std::holds_alternative<CsrLayerPayload>(data); }
  /// Zero-filled dense tensor of shape `dims`.
  Tensor decode() const;

  friend bool operator==(const LayerPayload&, const LayerPayload&) = default;
};

/// What one client sends back after local training.
struct ModelUpdate {
  Strategy strategy = Strategy::FullDense;
  float sp = 0.0f;
  float r_mask = 0.0f;
  std::uint32_t num_samples = 1;
  std::vector<LayerPayload> layers;

  friend bool operator==(const ModelUpdate&, const ModelUpdate&) = default;
};

/// Builds the uplink payload from the received model `w_t` and the locally
/// trained `w_e`. Sparsifiable weights are sent in CSR with keep fraction
/// keep_fraction_for(sp, r_mask); every other tensor is sent dense. Weight
/// strategies carry w_e, diff strategies carry w_e - w_t.
ModelUpdate build_update(const ModelParams& w_t, const ModelParams& w_e, Strategy strategy, double sp,
                         double r_mask, std::uint32_t num_samples);

/// Decoded per-tensor payloads in wire order.
std::vector<Tensor> decode_update(const ModelUpdate& u);

inline constexpr char kZfuMagic[4] = {'Z', 'F', 'U', '1'};

std::vector<std::uint8_t> serialize_update(const ModelUpdate& u);
/// Rejects bad magic, truncation and invariant violations with distinct FormatError kinds.
ModelUpdate deserialize_update(std::span<const std::uint8_t> bytes);

void write_update_file(const std::filesystem::path& path, const ModelUpdate& u);
ModelUpdate read_update_file(const std::filesystem::path& path);

/// Serialized size of a FullDense update of `model`.
std::size_t dense_update_bytes(const ModelParams& model);

double savings_factor(std::size_t dense_bytes, std::size_t update_bytes);

}  // namespace zerofl
