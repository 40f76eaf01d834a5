#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "zerofl/dataset.hpp"
#include "zerofl/kernels.hpp"
#include "zerofl/rng.hpp"
#include "zerofl/sparsify.hpp"
#include "zerofl/tensor.hpp"

namespace zerofl {

enum class LayerKind { Conv, Linear, Relu, MaxPool, Flatten };

const char* to_string(LayerKind kind);

template <typename T>
struct BasicLayer {
  std::string name;
  LayerKind kind = LayerKind::Linear;
  ConvSpec conv;  // Conv layers only
  BasicTensor<T> weight;
  std::optional<BasicTensor<T>> bias;
  bool sparsifiable = false;

  bool trainable() const { return kind == LayerKind::Conv || kind == LayerKind::Linear; }

  friend bool operator==(const BasicLayer&, const BasicLayer&) = default;
};

/// One trainable tensor of a model, in canonical parameter order.
struct ParamInfo {
  std::string name;  // "<layer>.weight" or "<layer>.bias"
  Shape shape;
  bool sparsifiable = false;  // only weights of sparsifiable layers
  std::size_t layer = 0;
  bool is_bias = false;
};

/// Ordered layer stack. Parameter order is layer order, weight before bias.
template <typename T>
class BasicModel {
 public:
  BasicModel() = default;
  /// `input_shape` is the per-sample shape ([d] or [C,H,W]).
  BasicModel(std::vector<BasicLayer<T>> layers, Shape input_shape);

  const std::vector<BasicLayer<T>>& layers() const noexcept { return layers_; }
  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t num_classes() const;

  std::vector<ParamInfo> params() const;
  std::vector<BasicTensor<T>*> param_tensors();
  std::vector<const BasicTensor<T>*> param_tensors() const;

  /// Index of the layer called `name`; throws ValueError if absent.
  std::size_t layer_index(const std::string& name) const;

  /// Per-sample input shape of every layer, followed by the output shape.
  std::vector<Shape> activation_shapes() const;

  template <typename U>
  BasicModel<U> cast() const {
    std::vector<BasicLayer<U>> out;
    out.reserve(layers_.size());
    for (const auto& l : layers_) {
      BasicLayer<U> c;
      c.name = l.name;
      c.kind = l.kind;
      c.conv = l.conv;
      c.sparsifiable = l.sparsifiable;
      if (l.trainable()) c.weight = l.weight.template cast<U>();
      if (l.bias) c.bias = l.bias->template cast<U>();
      out.push_back(std::move(c));
    }
    return BasicModel<U>(std::move(out), input_shape_);
  }

  friend bool operator==(const BasicModel&, const BasicModel&) = default;

 private:
  void validate() const;

  std::vector<BasicLayer<T>> layers_;
  Shape input_shape_;
};

using ModelParams = BasicModel<float>;

/// Dense gradients, one tensor per entry of params().
template <typename T>
using BasicGradients = std::vector<BasicTensor<T>>;
using Gradients = BasicGradients<float>;

struct ModelSpec {
  enum class Arch { Mlp, Cnn };
  Arch arch = Arch::Mlp;
  std::size_t hidden = 32;
  bool sparse_layer_bias = false;  // biases on sparsifiable layers

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// d-h-h-c MLP: fc1 and fc3 dense, fc2 sparsifiable.
ModelParams make_mlp(std::size_t input_dim, std::size_t hidden, std::size_t num_classes, Rng& rng,
                     bool sparse_layer_bias = false);

/// conv3x3(8)-pool-conv3x3(16)-pool-fc(hidden)-fc(classes). Both convolutions
/// and the first linear layer are sparsifiable; the classifier is dense.
ModelParams make_cnn(const Shape& input_shape, std::size_t hidden, std::size_t num_classes, Rng& rng,
                     bool sparse_layer_bias = false);

ModelParams make_model(const ModelSpec& spec, const Shape& input_shape, std::size_t num_classes, Rng& rng);

enum class Mode { Train, Eval };

/// Top-K masks used by one SWAT step, indexed by layer. Entries are empty for
/// layers that run dense.
struct SwatMasks {
  std::vector<std::optional<TopKMask>> weights;
  std::vector<std::optional<TopKMask>> activations;
};

template <typename T>
struct LayerTrace {
  BasicTensor<T> input;                // a_{l-1}
  BasicTensor<T> weight_used;          // masked weights for sparsifiable layers
  std::vector<std::size_t> pool_argmax;
};

template <typename T>
struct ForwardTrace {
  Mode mode = Mode::Train;
  std::vector<LayerTrace<T>> layers;
  SwatMasks masks;
  BasicTensor<T> logits;
  std::vector<int> labels;
  double loss = 0.0;
};

/// SWAT forward pass. Sparsifiable layers use their top-(1 - sp) weights; in
/// train mode the top-(1 - sp) input activations of those layers are also
/// selected for the weight-gradient step. Passing `frozen` reuses its masks
/// instead of recomputing them.
template <typename T>
ForwardTrace<T> forward_swat(const BasicModel<T>& model, const BasicTensor<T>& batch, std::span<const int> labels,
                             const SparsityConfig& cfg, Mode mode, const SwatMasks* frozen = nullptr);

/// SWAT backward pass. Input gradients flow through the masked weights;
/// weight gradients use the masked activations. The result is dense.
template <typename T>
BasicGradients<T> backward_swat(const BasicModel<T>& model, const ForwardTrace<T>& trace);

void sgd_step(ModelParams& model, const Gradients& grads, float lr);

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
};

/// Masked inference over `indices` of `ds` (all samples when empty).
EvalResult evaluate(const ModelParams& model, const Dataset& ds, const SparsityConfig& cfg,
                    std::span<const std::size_t> indices = {}, std::size_t batch_size = 256);

/// Loss of the linearised frozen-mask network around `base`. Every
/// sparsifiable layer computes f(a, m_w * w0) + f(m_a * a0, w - w0) with
/// w0, a0 and the masks taken from `base_trace`; ReLU gates and max-pool
/// choices are also taken from `base_trace`. Its gradient at w = w0 is
/// exactly the SWAT gradient. Only forward kernels are used.
double frozen_mask_loss(const BasicModel<double>& model, const BasicModel<double>& base,
                        const ForwardTrace<double>& base_trace, const Tensor64& batch, std::span<const int> labels);

/// Central finite differences of frozen_mask_loss around `model`.
BasicGradients<double> numeric_gradients(const BasicModel<double>& model, const ForwardTrace<double>& base_trace,
                                         const Tensor64& batch, std::span<const int> labels, double eps);

/// max |a - n| / max(|a|, |n|, floor) over all entries.
double max_relative_error(const BasicGradients<double>& analytic, const BasicGradients<double>& numeric,
                          double floor = 1e-6);

/// Compares backward_swat against numeric_gradients in 64-bit precision.
double grad_check(const ModelParams& model, const Tensor& batch, std::span<const int> labels,
                  const SparsityConfig& cfg, double eps = 1e-4);

}  // namespace zerofl
