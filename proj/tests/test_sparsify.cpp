#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "zerofl/error.hpp"
#include "zerofl/sparsify.hpp"

using namespace zerofl;

namespace {

std::vector<std::uint32_t> idx(std::initializer_list<std::uint32_t> v) { return v; }

// Reference selection: full stable sort by |v| descending, index ascending.
std::vector<std::uint32_t> sort_oracle(const Tensor& t, std::size_t k) {
  std::vector<std::uint32_t> order(t.numel());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return std::abs(t[a]) > std::abs(t[b]); });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace

TEST_CASE("topk examples") {
  const Tensor t({4}, std::vector<float>{0.5f, -0.9f, 0.1f, 0.3f});
  // |0.5| outranks |0.3|, so the top half is {0, 1}.
  CHECK(topk_mask(t, 0.5).active_indices == idx({0, 1}));
  CHECK(topk_mask(t, 0.5).active_indices == sort_oracle(t, 2));
  CHECK(topk_mask(t, 1.0).active_indices == idx({0, 1, 2, 3}));
  CHECK(topk_mask(Tensor({4}, 2.0f), 0.5).active_indices == idx({0, 1}));
  CHECK(topk_mask(t, 0.0).active_indices.empty());
  CHECK(topk_mask(t, 0.01).active_indices == idx({1}));
  CHECK_THROWS_AS(topk_mask(Tensor(), 0.5), ValueError);
}

TEST_CASE("topk count") {
  CHECK(topk_count(100, 1.0 - 0.9) == 10);
  CHECK(topk_count(100, 1.0 - 0.9 + 0.1) == 20);
  CHECK(topk_count(100, 0.0) == 0);
  CHECK(topk_count(7, 0.01) == 1);
  CHECK(topk_count(7, 1.0) == 7);
  CHECK_THROWS_AS(topk_count(7, 1.5), ValueError);
  CHECK_THROWS_AS(topk_count(7, -0.1), ValueError);
}

TEST_CASE("topk matches a sort oracle on random tensors") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 300;
    Tensor t({n});
    std::uniform_int_distribution<int> small(-3, 3);  // frequent ties
    for (float& v : t.values()) v = trial % 2 ? static_cast<float>(small(rng)) : std::uniform_real_distribution<float>(-1, 1)(rng);
    const double kf = std::uniform_real_distribution<double>(0, 1)(rng);
    const auto m = topk_mask(t, kf);
    CHECK(m.size() == topk_count(n, kf));
    CHECK(m.active_indices == sort_oracle(t, m.size()));
    CHECK(std::is_sorted(m.active_indices.begin(), m.active_indices.end()));
    CHECK(std::adjacent_find(m.active_indices.begin(), m.active_indices.end()) == m.active_indices.end());
  }
}

TEST_CASE("apply mask") {
  const Tensor t({4}, std::vector<float>{0.5f, -0.9f, 0.1f, 0.3f});
  TopKMask m{{4}, {1, 3}, 0.5};
  CHECK(apply_mask(t, m) == Tensor({4}, std::vector<float>{0, -0.9f, 0, 0.3f}));
  CHECK(apply_mask(t, TopKMask::full({4})) == t);
  CHECK(apply_mask(t, TopKMask{{4}, {}, 0.0}) == Tensor({4}));
  CHECK(t[0] == 0.5f);
  CHECK_THROWS_AS(apply_mask(t, TopKMask::full({2, 2})), ShapeError);
}

TEST_CASE("membership") {
  TopKMask m{{5}, {0, 4}, 0.4};
  CHECK(m.membership() == std::vector<bool>{true, false, false, false, true});
}

TEST_CASE("uplink keep fraction") {
  CHECK(keep_fraction_for(0.9, 0.1) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(keep_fraction_for(0.95, 0.0) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(keep_fraction_for(0.5, 0.9) == 1.0);
  CHECK_THROWS_AS(keep_fraction_for(1.2, 0.0), ValueError);
  CHECK_THROWS_AS(keep_fraction_for(0.5, -0.1), ValueError);
}
