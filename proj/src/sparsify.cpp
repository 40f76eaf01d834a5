#include "zerofl/sparsify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace zerofl {

std::vector<bool> TopKMask::membership() const {
  std::vector<bool> out(numel(), false);
  for (auto i : active_indices) out[i] = true;
  return out;
}

TopKMask TopKMask::full(const Shape& shape) {
  TopKMask m;
  m.tensor_shape = shape;
  m.keep_fraction = 1.0;
  m.active_indices.resize(shape_numel(shape));
  std::iota(m.active_indices.begin(), m.active_indices.end(), std::uint32_t{0});
  return m;
}

std::size_t topk_count(std::size_t numel, double keep_fraction) {
  if (!(keep_fraction >= 0.0 && keep_fraction <= 1.0)) {
    throw ValueError("keep_fraction must lie in [0, 1], got " + std::to_string(keep_fraction));
  }
  if (keep_fraction == 0.0) return 0;
  const auto raw = static_cast<std::size_t>(std::floor(keep_fraction * static_cast<double>(numel) + 1e-9));
  return std::clamp<std::size_t>(raw, 1, numel);
}

template <typename T>
TopKMask topk_mask(const BasicTensor<T>& t, double keep_fraction) {
  if (t.empty()) throw ValueError("topk_mask on an empty tensor");
  if (t.numel() > std::numeric_limits<std::uint32_t>::max()) {
    throw ValueError("tensor too large for 32-bit mask indices");
  }
  const std::size_t k = topk_count(t.numel(), keep_fraction);

  TopKMask mask;
  mask.tensor_shape = t.shape();
  mask.keep_fraction = keep_fraction;
  if (k == t.numel()) {
    mask = TopKMask::full(t.shape());
    mask.keep_fraction = keep_fraction;
    return mask;
  }

  std::vector<std::uint32_t> order(t.numel());
  std::iota(order.begin(), order.end(), std::uint32_t{0});
  const auto vals = t.values();
  // Strict total order: larger magnitude first, then lower index.
  auto before = [&](std::uint32_t a, std::uint32_t b) {
    const T ma = std::abs(vals[a]);
    const T mb = std::abs(vals[b]);
    if (ma != mb) return ma > mb;
    return a < b;
  };
  if (k > 0) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), order.end(), before);
  }
  mask.active_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(mask.active_indices.begin(), mask.active_indices.end());
  return mask;
}

template <typename T>
BasicTensor<T> apply_mask(const BasicTensor<T>& t, const TopKMask& m) {
  require_same_shape(t.shape(), m.tensor_shape, "mask");
  BasicTensor<T> out(t.shape());
  for (auto i : m.active_indices) out[i] = t[i];
  return out;
}

double keep_fraction_for(double sp, double r_mask) {
  if (!(sp >= 0.0 && sp <= 1.0)) throw ValueError("sp must lie in [0, 1]");
  if (!(r_mask >= 0.0 && r_mask <= 1.0)) throw ValueError("r_mask must lie in [0, 1]");
  return std::min(1.0, 1.0 - sp + r_mask);
}

template TopKMask topk_mask(const BasicTensor<float>&, double);
template TopKMask topk_mask(const BasicTensor<double>&, double);
template BasicTensor<float> apply_mask(const BasicTensor<float>&, const TopKMask&);
template BasicTensor<double> apply_mask(const BasicTensor<double>&, const TopKMask&);

}  // namespace zerofl
