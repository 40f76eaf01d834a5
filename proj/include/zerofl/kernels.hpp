#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "zerofl/tensor.hpp"

namespace zerofl {

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;

  /// Output spatial size for an input of `in` pixels along one axis.
  /// Throws ShapeError if the kernel does not fit.
  std::size_t output_size(std::size_t in, std::size_t kernel) const;

  Shape weight_shape() const { return {out_channels, in_channels, kernel_h, kernel_w}; }

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

// Direct-loop convolution (cross-correlation). Input [N,C,H,W], weights
// [K,C,kh,kw], output [N,K,H',W']. Summation order is fixed by the loop nest.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights, const ConvSpec& spec);

// Gradient w.r.t. the layer input. `input_shape` is the [N,C,H,W] shape seen in
// the forward pass; it cannot be recovered from grad_out when stride > 1.
template <typename T>
BasicTensor<T> conv2d_backward_input(const BasicTensor<T>& grad_out, const BasicTensor<T>& weights,
                                     const ConvSpec& spec, const Shape& input_shape);

template <typename T>
BasicTensor<T> conv2d_backward_weights(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                                       const ConvSpec& spec);

// Fully connected: input [N,in], weights [out,in], output [N,out] = input * weights^T.
template <typename T>
BasicTensor<T> linear_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights);

template <typename T>
BasicTensor<T> linear_backward_input(const BasicTensor<T>& grad_out, const BasicTensor<T>& weights);

template <typename T>
BasicTensor<T> linear_backward_weights(const BasicTensor<T>& grad_out, const BasicTensor<T>& input);

/// Adds a per-channel bias: axis 1 of `out` indexes the bias entries.
template <typename T>
void add_bias(BasicTensor<T>& out, const BasicTensor<T>& bias);

/// Sums grad_out over every axis except axis 1.
template <typename T>
BasicTensor<T> bias_backward(const BasicTensor<T>& grad_out);

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input);

// d/dx relu(x) evaluated at the forward input (zero at x <= 0).
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input);

/// 2x2 max pooling with stride 2 over [N,C,H,W]; odd trailing rows/cols are dropped.
/// `argmax` receives the flat input index chosen for every output element.
template <typename T>
BasicTensor<T> maxpool2x2_forward(const BasicTensor<T>& input, std::vector<std::size_t>* argmax);

template <typename T>
BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>& grad_out, std::span<const std::size_t> argmax,
                                   const Shape& input_shape);

/// Mean softmax cross-entropy over a [N,classes] logit tensor. Writes the
/// gradient of the mean loss w.r.t. the logits into `grad` when non-null.
template <typename T>
double softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels, BasicTensor<T>* grad);

/// Multiply-accumulate count of one convolution over a batch, scaled by
/// `density` and rounded down.
std::uint64_t mac_count(const ConvSpec& spec, std::size_t batch, std::size_t out_h, std::size_t out_w,
                        double density);

std::uint64_t mac_count_linear(std::size_t in_features, std::size_t out_features, std::size_t batch,
                               double density);

}  // namespace zerofl
