#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "zerofl/error.hpp"
#include "zerofl/model.hpp"

using namespace zerofl;

namespace {

struct Toy {
  ModelParams model;
  Tensor batch;
  std::vector<int> labels;
};

Toy toy_mlp(std::uint64_t seed, std::size_t n = 6) {
  Rng rng(seed);
  Toy t{make_mlp(5, 8, 3, rng), testing::random32({n, 5}, seed + 1), {}};
  for (std::size_t i = 0; i < n; ++i) t.labels.push_back(static_cast<int>(i % 3));
  // non-zero biases so every path is exercised
  for (auto* p : t.model.param_tensors()) {
    if (p->rank() == 1) *p = testing::random32(p->shape(), seed + 2, -0.1f, 0.1f);
  }
  return t;
}

Toy toy_cnn(std::uint64_t seed) {
  Rng rng(seed);
  Toy t{make_cnn({1, 8, 8}, 6, 3, rng, true), testing::random32({3, 1, 8, 8}, seed + 1), {0, 1, 2}};
  return t;
}

// Plain-loop MLP forward with explicit masks, independent of the layer code.
std::vector<double> reference_mlp_logits(const ModelParams& m, const Tensor& x, double sp) {
  const auto& L = m.layers();
  auto dense = [&](const std::vector<double>& in, const BasicLayer<float>& l, bool masked) {
    Tensor w = l.weight;
    if (masked) w = apply_mask(w, topk_mask(w, 1.0 - sp));
    const std::size_t out = w.dim(0), inf = w.dim(1), n = in.size() / inf;
    std::vector<double> y(n * out);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o = 0; o < out; ++o) {
        double s = l.bias ? (*l.bias)[o] : 0.0;
        for (std::size_t i = 0; i < inf; ++i) s += in[b * inf + i] * w[o * inf + i];
        y[b * out + o] = s;
      }
    return y;
  };
  auto relu = [](std::vector<double> v) {
    for (double& e : v) e = std::max(0.0, e);
    return v;
  };
  std::vector<double> a(x.values().begin(), x.values().end());
  a = relu(dense(a, L[0], false));
  a = relu(dense(a, L[2], true));
  return dense(a, L[4], false);
}

}  // namespace

TEST_CASE("model invariants") {
  Rng rng(1);
  auto m = make_mlp(4, 6, 3, rng);
  CHECK(m.num_classes() == 3);
  const auto params = m.params();
  REQUIRE(params.size() == 5);
  CHECK(params[0].name == "fc1.weight");
  CHECK(params[2].name == "fc2.weight");
  CHECK(params[2].sparsifiable);
  CHECK_FALSE(params[0].sparsifiable);
  CHECK_FALSE(params[3].sparsifiable);

  auto layers = m.layers();
  layers[4].sparsifiable = true;
  CHECK_THROWS_AS(ModelParams(layers, {4}), ValueError);
  layers = m.layers();
  layers[2].name = "fc1";
  CHECK_THROWS_AS(ModelParams(layers, {4}), ValueError);
  layers = m.layers();
  layers[2].weight = Tensor({6, 5});
  CHECK_THROWS_AS(ModelParams(layers, {4}), ShapeError);
}

TEST_CASE("forward at sp 0 equals the dense reference") {
  const auto t = toy_mlp(3);
  const auto tr = forward_swat(t.model, t.batch, t.labels, {0.0}, Mode::Eval);
  const auto ref = reference_mlp_logits(t.model, t.batch, 0.0);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(tr.logits[i] == doctest::Approx(ref[i]).epsilon(1e-5));
}

TEST_CASE("forward with masks matches the reference") {
  const auto t = toy_mlp(4);
  for (double sp : {0.5, 0.9}) {
    const auto tr = forward_swat(t.model, t.batch, t.labels, {sp}, Mode::Train);
    const auto ref = reference_mlp_logits(t.model, t.batch, sp);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(tr.logits[i] == doctest::Approx(ref[i]).epsilon(1e-5));
    REQUIRE(tr.masks.weights[2].has_value());
    CHECK(tr.masks.weights[2]->size() == topk_count(64, 1.0 - sp));
    CHECK_FALSE(tr.masks.weights[0].has_value());
    CHECK_FALSE(tr.masks.weights[4].has_value());
  }
}

TEST_CASE("zero weights give a uniform softmax") {
  Rng rng(5);
  auto m = make_mlp(4, 6, 3, rng);
  for (auto* p : m.param_tensors()) *p = Tensor(p->shape());
  const auto tr = forward_swat(m, testing::random32({2, 4}, 6), std::vector<int>{0, 2}, {0.9}, Mode::Eval);
  CHECK(tr.loss == doctest::Approx(std::log(3.0)).epsilon(1e-6));
}

TEST_CASE("forward rejects bad input") {
  const auto t = toy_mlp(7);
  CHECK_THROWS_AS(forward_swat(t.model, Tensor({6, 4}), t.labels, {0.0}, Mode::Eval), ShapeError);
  CHECK_THROWS_AS(forward_swat(t.model, t.batch, std::vector<int>{0, 1}, {0.0}, Mode::Eval), ShapeError);
  std::vector<int> bad = t.labels;
  bad[0] = 7;
  CHECK_THROWS_AS(forward_swat(t.model, t.batch, bad, {0.0}, Mode::Eval), ValueError);
}

TEST_CASE("backward at sp 0 equals dense backprop") {
  const auto t = toy_mlp(8);
  const auto m64 = t.model.cast<double>();
  const auto x64 = t.batch.cast<double>();
  const auto grads = backward_swat(m64, forward_swat(m64, x64, t.labels, {0.0}, Mode::Train));
  auto perturbed = m64;
  auto tensors = perturbed.param_tensors();
  for (std::size_t p = 0; p < tensors.size(); ++p) {
    const auto numeric = testing::numeric_grad(*tensors[p], [&](const Tensor64& v) {
      const Tensor64 saved = *tensors[p];
      *tensors[p] = v;
      const double loss = forward_swat(perturbed, x64, t.labels, {0.0}, Mode::Eval).loss;
      *tensors[p] = saved;
      return loss;
    });
    CHECK(grads[p].shape() == tensors[p]->shape());
    CHECK(testing::max_rel_err(grads[p], numeric) < 1e-6);
  }
}

TEST_CASE("backward needs a training trace") {
  const auto t = toy_mlp(9);
  const auto tr = forward_swat(t.model, t.batch, t.labels, {0.5}, Mode::Eval);
  CHECK_THROWS_AS(backward_swat(t.model, tr), ValueError);
}

TEST_CASE("frozen-mask gradient check") {
  for (double sp : {0.0, 0.5, 0.9}) {
    CAPTURE(sp);
    const auto m = toy_mlp(11);
    CHECK(grad_check(m.model, m.batch, m.labels, {sp}) < 1e-4);
    const auto c = toy_cnn(12);
    CHECK(grad_check(c.model, c.batch, c.labels, {sp}) < 1e-4);
  }
}

TEST_CASE("gradient check detects a corrupted gradient") {
  const auto t = toy_mlp(13);
  const auto m64 = t.model.cast<double>();
  const auto x64 = t.batch.cast<double>();
  const auto tr = forward_swat(m64, x64, t.labels, {0.5}, Mode::Train);
  auto analytic = backward_swat(m64, tr);
  const auto numeric = numeric_gradients(m64, tr, x64, t.labels, 1e-4);
  CHECK(max_relative_error(analytic, numeric) < 1e-4);
  analytic[2][0] += 0.05;
  CHECK(max_relative_error(analytic, numeric) > 1e-2);
}

TEST_CASE("sgd step") {
  Rng rng(14);
  auto m = make_mlp(2, 3, 2, rng);
  const auto before = m;
  Gradients g;
  for (const auto* p : m.param_tensors()) g.push_back(testing::random32(p->shape(), 15));
  sgd_step(m, g, 0.0f);
  CHECK(m == before);

  std::vector<BasicLayer<float>> layers(1);
  layers[0].name = "w";
  layers[0].kind = LayerKind::Linear;
  layers[0].weight = Tensor({1, 1}, 1.0f);
  ModelParams scalar(layers, {1});
  sgd_step(scalar, Gradients{Tensor({1, 1}, 2.0f)}, 0.1f);
  CHECK(scalar.layers()[0].weight[0] == doctest::Approx(0.8f));
  CHECK_THROWS_AS(sgd_step(scalar, Gradients{}, 0.1f), ShapeError);
}

TEST_CASE("evaluate") {
  std::vector<BasicLayer<float>> layers(1);
  layers[0].name = "out";
  layers[0].kind = LayerKind::Linear;
  layers[0].weight = Tensor({2, 1}, std::vector<float>{1.0f, -1.0f});
  const ModelParams m(layers, {1});
  const Dataset one({1}, 2, {1.0f}, {0});
  const auto r = evaluate(m, one, {0.0});
  CHECK(r.accuracy == 1.0);
  CHECK(r.correct == 1);
  const Dataset empty({1}, 2, {}, {});
  CHECK_THROWS_AS(evaluate(m, empty, {0.0}), ValueError);

  // hand-counted: x=2 -> class 0, x=-1 -> class 1, x=0.5 -> class 0 but labelled 1
  const Dataset three({1}, 2, {2.0f, -1.0f, 0.5f}, {0, 1, 1});
  CHECK(evaluate(m, three, {0.0}).correct == 2);
}

TEST_CASE("evaluation honours the configured sparsity") {
  // fc2 weights: one large entry and small ones; at sp 0.9 only the large one survives.
  auto t = toy_mlp(16);
  const Dataset ds({5}, 3, std::vector<float>(t.batch.values().begin(), t.batch.values().end()), t.labels);
  const auto masked = forward_swat(t.model, t.batch, t.labels, {0.9}, Mode::Eval);
  auto zeroed = t.model;
  auto& w = const_cast<Tensor&>(zeroed.layers()[2].weight);
  const auto m = topk_mask(w, 0.1);
  w = apply_mask(w, m);
  const auto dense_of_zeroed = forward_swat(zeroed, t.batch, t.labels, {0.0}, Mode::Eval);
  CHECK(masked.logits == dense_of_zeroed.logits);
  CHECK(evaluate(t.model, ds, {0.9}).accuracy == evaluate(zeroed, ds, {0.0}).accuracy);
}

TEST_CASE("loss decreases on a separable toy set at sp 0.5") {
  Rng rng(17);
  auto m = make_mlp(2, 16, 2, rng);
  Tensor x({40, 2});
  std::vector<int> y(40);
  std::mt19937_64 g(18);
  std::normal_distribution<float> noise(0.0f, 0.2f);
  for (std::size_t i = 0; i < 40; ++i) {
    const float c = i % 2 ? 1.0f : -1.0f;
    x[2 * i] = c + noise(g);
    x[2 * i + 1] = c + noise(g);
    y[i] = i % 2;
  }
  std::vector<double> losses;
  for (int step = 0; step < 50; ++step) {
    const auto tr = forward_swat(m, x, y, {0.5}, Mode::Train);
    losses.push_back(tr.loss);
    sgd_step(m, backward_swat(m, tr), 0.1f);
  }
  auto window = [&](std::size_t s) { return (losses[s] + losses[s + 1] + losses[s + 2] + losses[s + 3] + losses[s + 4]) / 5; };
  for (std::size_t s = 5; s + 5 <= losses.size(); s += 5) CHECK(window(s) < window(s - 5));
  CHECK(losses.back() < 0.5 * losses.front());
}

TEST_CASE("gradients are dense and shaped like the weights") {
  const auto c = toy_cnn(19);
  const auto tr = forward_swat(c.model, c.batch, c.labels, {0.9}, Mode::Train);
  const auto g = backward_swat(c.model, tr);
  const auto infos = c.model.params();
  REQUIRE(g.size() == infos.size());
  for (std::size_t p = 0; p < g.size(); ++p) {
    CHECK(g[p].shape() == infos[p].shape);
    if (infos[p].sparsifiable) {
      // inactive weights still receive gradient
      const auto& mask = *tr.masks.weights[infos[p].layer];
      const auto active = mask.membership();
      std::size_t outside = 0;
      for (std::size_t j = 0; j < g[p].numel(); ++j) outside += (!active[j] && g[p][j] != 0.0f) ? 1 : 0;
      CHECK(outside > 0);
    }
  }
}

TEST_CASE("cnn shapes") {
  const auto c = toy_cnn(20);
  const auto shapes = c.model.activation_shapes();
  CHECK(shapes.front() == Shape{1, 8, 8});
  CHECK(shapes.back() == Shape{3});
  Rng rng(1);
  CHECK_THROWS_AS(make_cnn({1, 2, 2}, 4, 3, rng), ShapeError);
}
