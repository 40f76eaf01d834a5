#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "zerofl/tensor.hpp"

namespace testing {

inline zerofl::Tensor64 random64(const zerofl::Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  zerofl::Tensor64 t(shape);
  for (double& v : t.values()) v = d(rng);
  return t;
}

inline zerofl::Tensor random32(const zerofl::Shape& shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(lo, hi);
  zerofl::Tensor t(shape);
  for (float& v : t.values()) v = d(rng);
  return t;
}

// Central differences of f with respect to every entry of x.
inline zerofl::Tensor64 numeric_grad(zerofl::Tensor64 x, const std::function<double(const zerofl::Tensor64&)>& f,
                                     double eps = 1e-4) {
  zerofl::Tensor64 g(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double up = f(x);
    x[i] = orig - eps;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

inline double max_rel_err(const zerofl::Tensor64& a, const zerofl::Tensor64& b, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

inline double dot(const zerofl::Tensor64& a, const zerofl::Tensor64& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace testing
