#pragma once

#include <cstdint>
#include <vector>

#include "zerofl/tensor.hpp"

namespace zerofl {

/// Active set of a top-K magnitude partition over one tensor.
struct TopKMask {
  Shape tensor_shape;
  std::vector<std::uint32_t> active_indices;  // strictly increasing flat indices
  double keep_fraction = 1.0;

  std::size_t numel() const { return shape_numel(tensor_shape); }
  std::size_t size() const { return active_indices.size(); }

  /// Dense 0/1 membership vector.
  std::vector<bool> membership() const;

  static TopKMask full(const Shape& shape);
};

/// How activation top-K is scoped inside a batch.
enum class ActivationTopK { PerBatch, PerSample };

struct SparsityConfig {
  double sp = 0.0;  // fraction of entries zeroed; keep fraction is 1 - sp
  ActivationTopK activation_scope = ActivationTopK::PerBatch;

  double keep_fraction() const { return 1.0 - sp; }
};

/// Number of entries kept: max(1, floor(keep_fraction * numel)) for a positive
/// keep fraction, 0 otherwise. A 1e-9 guard absorbs representation error so
/// that e.g. 1 - 0.9 keeps exactly 10% of 100 entries.
std::size_t topk_count(std::size_t numel, double keep_fraction);

/// Largest-magnitude entries; ties go to the lower flat index.
template <typename T>
TopKMask topk_mask(const BasicTensor<T>& t, double keep_fraction);

/// Copy of `t` with every entry outside the mask set to zero.
template <typename T>
BasicTensor<T> apply_mask(const BasicTensor<T>& t, const TopKMask& m);

/// Uplink keep fraction: min(1, 1 - sp + r_mask).
double keep_fraction_for(double sp, double r_mask);

}  // namespace zerofl
