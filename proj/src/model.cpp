#include "zerofl/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace zerofl {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Linear: return "linear";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Flatten: return "flatten";
  }
  return "unknown";
}

template <typename T>
BasicModel<T>::BasicModel(std::vector<BasicLayer<T>> layers, Shape input_shape)
    : layers_(std::move(layers)), input_shape_(std::move(input_shape)) {
  validate();
}

template <typename T>
std::vector<Shape> BasicModel<T>::activation_shapes() const {
  std::vector<Shape> shapes{input_shape_};
  Shape cur = input_shape_;
  for (const auto& l : layers_) {
    switch (l.kind) {
      case LayerKind::Conv: {
        if (cur.size() != 3) throw ShapeError(l.name, l.name + ": conv expects a [C,H,W] input");
        if (cur[0] != l.conv.in_channels) throw ShapeError(l.name, l.name + ": input channel mismatch");
        cur = {l.conv.out_channels, l.conv.output_size(cur[1], l.conv.kernel_h),
               l.conv.output_size(cur[2], l.conv.kernel_w)};
        break;
      }
      case LayerKind::Linear: {
        if (cur.size() != 1) throw ShapeError(l.name, l.name + ": linear expects a flat input");
        if (cur[0] != l.weight.dim(1)) {
          throw ShapeError(l.name, l.name + ": in_features " + std::to_string(l.weight.dim(1)) +
                                       " does not match input width " + std::to_string(cur[0]));
        }
        cur = {l.weight.dim(0)};
        break;
      }
      case LayerKind::Relu: break;
      case LayerKind::MaxPool: {
        if (cur.size() != 3 || cur[1] < 2 || cur[2] < 2) {
          throw ShapeError(l.name, l.name + ": maxpool expects [C,H,W] with H,W >= 2");
        }
        cur = {cur[0], cur[1] / 2, cur[2] / 2};
        break;
      }
      case LayerKind::Flatten: cur = {shape_numel(cur)}; break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

template <typename T>
void BasicModel<T>::validate() const {
  if (input_shape_.empty()) throw ShapeError("input", "model input shape is empty");
  std::set<std::string> names;
  std::optional<std::size_t> last_trainable;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.name.empty()) throw ValueError("layer " + std::to_string(i) + " has no name");
    if (!names.insert(l.name).second) throw ValueError("duplicate layer name '" + l.name + "'");
    if (!l.trainable()) {
      if (l.sparsifiable || l.bias) throw ValueError(l.name + ": only conv/linear layers carry parameters");
      continue;
    }
    last_trainable = i;
    if (l.kind == LayerKind::Conv) {
      require_same_shape(l.weight.shape(), l.conv.weight_shape(), l.name + ".weight");
    } else if (l.weight.rank() != 2) {
      throw ShapeError(l.name, l.name + ".weight must be [out, in]");
    }
    if (l.bias) require_same_shape(l.bias->shape(), Shape{l.weight.dim(0)}, l.name + ".bias");
  }
  if (!last_trainable) throw ValueError("model has no trainable layer");
  const auto& classifier = layers_[*last_trainable];
  if (classifier.kind != LayerKind::Linear) throw ValueError("final trainable layer must be linear");
  if (classifier.sparsifiable) throw ValueError(classifier.name + ": the classifier layer must stay dense");
  const auto shapes = activation_shapes();
  if (shapes.back().size() != 1) throw ShapeError("output", "model output must be a flat logit vector");
}

template <typename T>
std::size_t BasicModel<T>::num_classes() const {
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    if (it->trainable()) return it->weight.dim(0);
  }
  return 0;
}

template <typename T>
std::vector<ParamInfo> BasicModel<T>::params() const {
  std::vector<ParamInfo> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (!l.trainable()) continue;
    out.push_back({l.name + ".weight", l.weight.shape(), l.sparsifiable, i, false});
    if (l.bias) out.push_back({l.name + ".bias", l.bias->shape(), false, i, true});
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>*> BasicModel<T>::param_tensors() {
  std::vector<BasicTensor<T>*> out;
  for (auto& l : layers_) {
    if (!l.trainable()) continue;
    out.push_back(&l.weight);
    if (l.bias) out.push_back(&*l.bias);
  }
  return out;
}

template <typename T>
std::vector<const BasicTensor<T>*> BasicModel<T>::param_tensors() const {
  std::vector<const BasicTensor<T>*> out;
  for (const auto& l : layers_) {
    if (!l.trainable()) continue;
    out.push_back(&l.weight);
    if (l.bias) out.push_back(&*l.bias);
  }
  return out;
}

template <typename T>
std::size_t BasicModel<T>::layer_index(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  throw ValueError("no layer named '" + name + "'");
}

template class BasicModel<float>;
template class BasicModel<double>;

// ---------------------------------------------------------------------------
// Model zoo

namespace {

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  const float bound = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in)));
  std::uniform_real_distribution<float> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = dist(rng);
  return t;
}

BasicLayer<float> linear_layer(std::string name, std::size_t in, std::size_t out, bool sparsifiable, bool bias,
                               Rng& rng) {
  BasicLayer<float> l;
  l.name = std::move(name);
  l.kind = LayerKind::Linear;
  l.weight = uniform_init({out, in}, in, rng);
  if (bias) l.bias = Tensor({out});
  l.sparsifiable = sparsifiable;
  return l;
}

BasicLayer<float> conv_layer(std::string name, const ConvSpec& spec, bool sparsifiable, bool bias, Rng& rng) {
  BasicLayer<float> l;
  l.name = std::move(name);
  l.kind = LayerKind::Conv;
  l.conv = spec;
  l.weight = uniform_init(spec.weight_shape(), spec.in_channels * spec.kernel_h * spec.kernel_w, rng);
  if (bias) l.bias = Tensor({spec.out_channels});
  l.sparsifiable = sparsifiable;
  return l;
}

BasicLayer<float> plain_layer(std::string name, LayerKind kind) {
  BasicLayer<float> l;
  l.name = std::move(name);
  l.kind = kind;
  return l;
}

}  // namespace

ModelParams make_mlp(std::size_t input_dim, std::size_t hidden, std::size_t num_classes, Rng& rng,
                     bool sparse_layer_bias) {
  std::vector<BasicLayer<float>> layers;
  layers.push_back(linear_layer("fc1", input_dim, hidden, false, true, rng));
  layers.push_back(plain_layer("relu1", LayerKind::Relu));
  layers.push_back(linear_layer("fc2", hidden, hidden, true, sparse_layer_bias, rng));
  layers.push_back(plain_layer("relu2", LayerKind::Relu));
  layers.push_back(linear_layer("fc3", hidden, num_classes, false, true, rng));
  return ModelParams(std::move(layers), {input_dim});
}

ModelParams make_cnn(const Shape& input_shape, std::size_t hidden, std::size_t num_classes, Rng& rng,
                     bool sparse_layer_bias) {
  if (input_shape.size() != 3 || input_shape[1] < 4 || input_shape[2] < 4) {
    throw ShapeError("input", "cnn expects a [C,H,W] input with H,W >= 4, got " + shape_to_string(input_shape));
  }
  const ConvSpec c1{input_shape[0], 8, 3, 3, 1, 1};
  const ConvSpec c2{8, 16, 3, 3, 1, 1};
  const std::size_t flat = 16 * (input_shape[1] / 4) * (input_shape[2] / 4);
  std::vector<BasicLayer<float>> layers;
  layers.push_back(conv_layer("conv1", c1, true, sparse_layer_bias, rng));
  layers.push_back(plain_layer("relu1", LayerKind::Relu));
  layers.push_back(plain_layer("pool1", LayerKind::MaxPool));
  layers.push_back(conv_layer("conv2", c2, true, sparse_layer_bias, rng));
  layers.push_back(plain_layer("relu2", LayerKind::Relu));
  layers.push_back(plain_layer("pool2", LayerKind::MaxPool));
  layers.push_back(plain_layer("flatten", LayerKind::Flatten));
  layers.push_back(linear_layer("fc1", flat, hidden, true, sparse_layer_bias, rng));
  layers.push_back(plain_layer("relu3", LayerKind::Relu));
  layers.push_back(linear_layer("fc2", hidden, num_classes, false, true, rng));
  return ModelParams(std::move(layers), input_shape);
}

ModelParams make_model(const ModelSpec& spec, const Shape& input_shape, std::size_t num_classes, Rng& rng) {
  if (spec.arch == ModelSpec::Arch::Mlp) {
    return make_mlp(shape_numel(input_shape), spec.hidden, num_classes, rng, spec.sparse_layer_bias);
  }
  return make_cnn(input_shape, spec.hidden, num_classes, rng, spec.sparse_layer_bias);
}

// ---------------------------------------------------------------------------
// SWAT forward / backward

namespace {

template <typename T>
TopKMask activation_mask(const BasicTensor<T>& a, double keep_fraction, ActivationTopK scope) {
  if (scope == ActivationTopK::PerBatch) return topk_mask(a, keep_fraction);
  const std::size_t n = a.dim(0);
  const std::size_t per = a.numel() / n;
  TopKMask out;
  out.tensor_shape = a.shape();
  out.keep_fraction = keep_fraction;
  for (std::size_t s = 0; s < n; ++s) {
    const auto first = a.values().begin() + static_cast<std::ptrdiff_t>(s * per);
    BasicTensor<T> slice({per}, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(per)));
    for (auto idx : topk_mask(slice, keep_fraction).active_indices) {
      out.active_indices.push_back(static_cast<std::uint32_t>(s * per + idx));
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> layer_apply(const BasicLayer<T>& l, const BasicTensor<T>& x, const BasicTensor<T>& w) {
  BasicTensor<T> y = l.kind == LayerKind::Conv ? conv2d_forward(x, w, l.conv) : linear_forward(x, w);
  return y;
}

template <typename T>
void check_batch(const BasicModel<T>& model, const BasicTensor<T>& batch, std::span<const int> labels) {
  const Shape& in = model.input_shape();
  const bool exact = batch.rank() == in.size() + 1 && std::equal(in.begin(), in.end(), batch.shape().begin() + 1);
  // A flat input layer also accepts samples of any shape with the same size.
  const bool flat = in.size() == 1 && batch.rank() >= 2 && batch.numel() == batch.dim(0) * in[0];
  if (!exact && !flat) {
    throw ShapeError("batch", "batch shape " + shape_to_string(batch.shape()) + " does not match model input " +
                                  shape_to_string(in));
  }
  if (labels.size() != batch.dim(0)) {
    throw ShapeError("labels", "got " + std::to_string(labels.size()) + " labels for a batch of " +
                                   std::to_string(batch.dim(0)));
  }
}

}  // namespace

template <typename T>
ForwardTrace<T> forward_swat(const BasicModel<T>& model, const BasicTensor<T>& batch, std::span<const int> labels,
                             const SparsityConfig& cfg, Mode mode, const SwatMasks* frozen) {
  check_batch(model, batch, labels);
  const auto& layers = model.layers();
  const double keep = cfg.keep_fraction();

  ForwardTrace<T> tr;
  tr.mode = mode;
  tr.labels.assign(labels.begin(), labels.end());
  tr.layers.resize(layers.size());
  tr.masks.weights.resize(layers.size());
  tr.masks.activations.resize(layers.size());

  BasicTensor<T> x = batch;
  if (x.rank() != model.input_shape().size() + 1) x = x.reshaped({x.dim(0), model.input_shape()[0]});
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    auto& lt = tr.layers[i];
    BasicTensor<T> y;
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Linear: {
        const BasicTensor<T>* w = &l.weight;
        if (l.sparsifiable) {
          tr.masks.weights[i] = frozen ? frozen->weights.at(i).value() : topk_mask(l.weight, keep);
          lt.weight_used = apply_mask(l.weight, *tr.masks.weights[i]);
          w = &lt.weight_used;
          if (mode == Mode::Train) {
            tr.masks.activations[i] =
                frozen ? frozen->activations.at(i).value() : activation_mask(x, keep, cfg.activation_scope);
          }
        }
        y = layer_apply(l, x, *w);
        if (l.bias) add_bias(y, *l.bias);
        break;
      }
      case LayerKind::Relu: y = relu_forward(x); break;
      case LayerKind::MaxPool: y = maxpool2x2_forward(x, &lt.pool_argmax); break;
      case LayerKind::Flatten: y = x.reshaped({x.dim(0), x.numel() / x.dim(0)}); break;
    }
    lt.input = std::move(x);
    x = std::move(y);
  }
  tr.logits = std::move(x);
  tr.loss = softmax_cross_entropy(tr.logits, labels, static_cast<BasicTensor<T>*>(nullptr));
  return tr;
}

template <typename T>
BasicGradients<T> backward_swat(const BasicModel<T>& model, const ForwardTrace<T>& trace) {
  const auto& layers = model.layers();
  if (trace.mode != Mode::Train || trace.layers.size() != layers.size()) {
    throw ValueError("backward_swat needs a train-mode trace of this model");
  }
  const auto infos = model.params();
  BasicGradients<T> grads(infos.size());
  std::vector<std::size_t> weight_slot(layers.size(), 0);
  for (std::size_t p = 0; p < infos.size(); ++p) {
    if (!infos[p].is_bias) weight_slot[infos[p].layer] = p;
  }
  std::size_t first_trainable = layers.size();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].trainable()) {
      first_trainable = i;
      break;
    }
  }

  BasicTensor<T> g;
  softmax_cross_entropy(trace.logits, trace.labels, &g);
  for (std::size_t idx = layers.size(); idx-- > 0;) {
    const auto& l = layers[idx];
    const auto& lt = trace.layers[idx];
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Linear: {
        const bool sparse = l.sparsifiable;
        const BasicTensor<T> a = sparse ? apply_mask(lt.input, trace.masks.activations[idx].value()) : lt.input;
        const std::size_t slot = weight_slot[idx];
        grads[slot] = l.kind == LayerKind::Conv ? conv2d_backward_weights(g, a, l.conv) : linear_backward_weights(g, a);
        if (l.bias) grads[slot + 1] = bias_backward(g);
        if (idx > first_trainable) {
          const BasicTensor<T>& w = sparse ? lt.weight_used : l.weight;
          g = l.kind == LayerKind::Conv ? conv2d_backward_input(g, w, l.conv, lt.input.shape())
                                        : linear_backward_input(g, w);
        }
        break;
      }
      case LayerKind::Relu: g = relu_backward(g, lt.input); break;
      case LayerKind::MaxPool: g = maxpool2x2_backward(g, std::span<const std::size_t>(lt.pool_argmax), lt.input.shape()); break;
      case LayerKind::Flatten: g = g.reshaped(lt.input.shape()); break;
    }
    if (idx <= first_trainable) break;
  }
  return grads;
}

template ForwardTrace<float> forward_swat(const BasicModel<float>&, const BasicTensor<float>&, std::span<const int>,
                                          const SparsityConfig&, Mode, const SwatMasks*);
template ForwardTrace<double> forward_swat(const BasicModel<double>&, const BasicTensor<double>&,
                                           std::span<const int>, const SparsityConfig&, Mode, const SwatMasks*);
template BasicGradients<float> backward_swat(const BasicModel<float>&, const ForwardTrace<float>&);
template BasicGradients<double> backward_swat(const BasicModel<double>&, const ForwardTrace<double>&);

void sgd_step(ModelParams& model, const Gradients& grads, float lr) {
  auto params = model.param_tensors();
  if (params.size() != grads.size()) {
    throw ShapeError("gradients", "expected " + std::to_string(params.size()) + " gradient tensors, got " +
                                      std::to_string(grads.size()));
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    require_same_shape(grads[p].shape(), params[p]->shape(), "gradient " + std::to_string(p));
    auto w = params[p]->values();
    const auto g = grads[p].values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
  }
}

EvalResult evaluate(const ModelParams& model, const Dataset& ds, const SparsityConfig& cfg,
                    std::span<const std::size_t> indices, std::size_t batch_size) {
  std::vector<std::size_t> all;
  if (indices.empty()) {
    all.resize(ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    indices = all;
  }
  if (indices.empty()) throw ValueError("evaluate on an empty dataset");
  if (batch_size == 0) throw ValueError("batch_size must be positive");

  EvalResult res;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const Tensor batch = ds.batch(chunk);
    const auto labels = ds.batch_labels(chunk);
    const auto tr = forward_swat(model, batch, labels, cfg, Mode::Eval);
    loss_sum += tr.loss * static_cast<double>(chunk.size());
    const std::size_t classes = tr.logits.dim(1);
    for (std::size_t n = 0; n < chunk.size(); ++n) {
      const float* row = tr.logits.data() + n * classes;
      const auto pred = static_cast<int>(std::max_element(row, row + classes) - row);
      if (pred == labels[n]) ++res.correct;
    }
  }
  res.total = indices.size();
  res.accuracy = static_cast<double>(res.correct) / static_cast<double>(res.total);
  res.mean_loss = loss_sum / static_cast<double>(res.total);
  return res;
}

// ---------------------------------------------------------------------------
// Gradient checking

double frozen_mask_loss(const BasicModel<double>& model, const BasicModel<double>& base,
                        const ForwardTrace<double>& base_trace, const Tensor64& batch, std::span<const int> labels) {
  const auto& layers = model.layers();
  Tensor64 x = batch;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    Tensor64 y;
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Linear: {
        if (l.sparsifiable) {
          const auto& bt = base_trace.layers[i];
          y = layer_apply(l, x, bt.weight_used);
          Tensor64 delta = l.weight;
          const auto w0 = base.layers()[i].weight.values();
          for (std::size_t j = 0; j < delta.numel(); ++j) delta[j] -= w0[j];
          const Tensor64 a0 = apply_mask(bt.input, base_trace.masks.activations[i].value());
          const Tensor64 lin = layer_apply(l, a0, delta);
          for (std::size_t j = 0; j < y.numel(); ++j) y[j] += lin[j];
        } else {
          y = layer_apply(l, x, l.weight);
        }
        if (l.bias) add_bias(y, *l.bias);
        break;
      }
      case LayerKind::Relu: {
        // gate fixed at the base point
        const auto& gate = base_trace.layers[i].input;
        y = x;
        for (std::size_t j = 0; j < y.numel(); ++j) {
          if (!(gate[j] > 0.0)) y[j] = 0.0;
        }
        break;
      }
      case LayerKind::MaxPool: {
        const auto& arg = base_trace.layers[i].pool_argmax;
        const Shape& in = base_trace.layers[i].input.shape();
        y = Tensor64({in[0], in[1], in[2] / 2, in[3] / 2});
        for (std::size_t j = 0; j < y.numel(); ++j) y[j] = x[arg[j]];
        break;
      }
      case LayerKind::Flatten: y = x.reshaped({x.dim(0), x.numel() / x.dim(0)}); break;
    }
    x = std::move(y);
  }
  return softmax_cross_entropy(x, labels, static_cast<Tensor64*>(nullptr));
}

BasicGradients<double> numeric_gradients(const BasicModel<double>& model, const ForwardTrace<double>& base_trace,
                                         const Tensor64& batch, std::span<const int> labels, double eps) {
  BasicModel<double> probe = model;
  auto params = probe.param_tensors();
  BasicGradients<double> out;
  out.reserve(params.size());
  for (auto* p : params) {
    Tensor64 g(p->shape());
    for (std::size_t j = 0; j < p->numel(); ++j) {
      const double orig = (*p)[j];
      (*p)[j] = orig + eps;
      const double up = frozen_mask_loss(probe, model, base_trace, batch, labels);
      (*p)[j] = orig - eps;
      const double down = frozen_mask_loss(probe, model, base_trace, batch, labels);
      (*p)[j] = orig;
      g[j] = (up - down) / (2.0 * eps);
    }
    out.push_back(std::move(g));
  }
  return out;
}

double max_relative_error(const BasicGradients<double>& analytic, const BasicGradients<double>& numeric,
                          double floor) {
  if (analytic.size() != numeric.size()) throw ShapeError("gradients", "gradient lists differ in length");
  double worst = 0.0;
  for (std::size_t p = 0; p < analytic.size(); ++p) {
    require_same_shape(analytic[p].shape(), numeric[p].shape(), "gradient " + std::to_string(p));
    for (std::size_t j = 0; j < analytic[p].numel(); ++j) {
      const double a = analytic[p][j], n = numeric[p][j];
      const double denom = std::max({std::abs(a), std::abs(n), floor});
      worst = std::max(worst, std::abs(a - n) / denom);
    }
  }
  return worst;
}

double grad_check(const ModelParams& model, const Tensor& batch, std::span<const int> labels,
                  const SparsityConfig& cfg, double eps) {
  const BasicModel<double> m64 = model.cast<double>();
  const Tensor64 b64 = batch.cast<double>();
  const auto trace = forward_swat(m64, b64, labels, cfg, Mode::Train);
  const auto analytic = backward_swat(m64, trace);
  const auto numeric = numeric_gradients(m64, trace, b64, labels, eps);
  return max_relative_error(analytic, numeric);
}

}  // namespace zerofl
