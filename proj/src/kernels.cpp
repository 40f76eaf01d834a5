#include "zerofl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace zerofl {

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

void require_same_shape(const Shape& a, const Shape& b, const std::string& what) {
  if (a != b) {
    throw ShapeError(what, what + ": shape " + shape_to_string(a) + " does not match " + shape_to_string(b));
  }
}

std::size_t ConvSpec::output_size(std::size_t in, std::size_t kernel) const {
  if (kernel == 0 || stride == 0) {
    throw ShapeError("kernel", "kernel dims and stride must be >= 1");
  }
  const std::size_t padded = in + 2 * padding;
  if (padded < kernel) {
    throw ShapeError("kernel", "kernel of size " + std::to_string(kernel) + " does not fit padded input of size " +
                                   std::to_string(padded));
  }
  return (padded - kernel) / stride + 1;
}

namespace {

void require_rank(const Shape& shape, std::size_t rank, const std::string& what) {
  if (shape.size() != rank) {
    throw ShapeError(what, what + " must have rank " + std::to_string(rank) + ", got " + shape_to_string(shape));
  }
}

void require_dim(std::size_t got, std::size_t expected, const std::string& what) {
  if (got != expected) {
    throw ShapeError(what, what + " is " + std::to_string(got) + ", expected " + std::to_string(expected));
  }
}

void check_conv_operands(const Shape& input_shape, const Shape& weight_shape, const ConvSpec& spec) {
  require_rank(input_shape, 4, "input");
  require_rank(weight_shape, 4, "weights");
  require_dim(input_shape[1], spec.in_channels, "input channels");
  require_dim(weight_shape[0], spec.out_channels, "weight out_channels");
  require_dim(weight_shape[1], spec.in_channels, "weight in_channels");
  require_dim(weight_shape[2], spec.kernel_h, "weight kernel_h");
  require_dim(weight_shape[3], spec.kernel_w, "weight kernel_w");
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights, const ConvSpec& spec) {
  check_conv_operands(input.shape(), weights.shape(), spec);
  const std::size_t n_batch = input.dim(0), in_c = spec.in_channels, out_c = spec.out_channels;
  const std::size_t in_h = input.dim(2), in_w = input.dim(3);
  const std::size_t out_h = spec.output_size(in_h, spec.kernel_h);
  const std::size_t out_w = spec.output_size(in_w, spec.kernel_w);
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);

  BasicTensor<T> out({n_batch, out_c, out_h, out_w});
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t k = 0; k < out_c; ++k) {
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          T acc{0};
          for (std::size_t c = 0; c < in_c; ++c) {
            for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * spec.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
              for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * spec.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
                acc += input.at(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                       weights.at(k, c, ky, kx);
              }
            }
          }
          out.at(n, k, oy, ox) = acc;
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> conv2d_backward_input(const BasicTensor<T>& grad_out, const BasicTensor<T>& weights,
                                     const ConvSpec& spec, const Shape& input_shape) {
  check_conv_operands(input_shape, weights.shape(), spec);
  const std::size_t n_batch = input_shape[0], in_h = input_shape[2], in_w = input_shape[3];
  const std::size_t out_h = spec.output_size(in_h, spec.kernel_h);
  const std::size_t out_w = spec.output_size(in_w, spec.kernel_w);
  require_same_shape(grad_out.shape(), Shape{n_batch, spec.out_channels, out_h, out_w}, "grad_out");
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);

  // Scatter form of the transposed convolution; the loop nest mirrors the
  // forward pass so every input cell accumulates in a fixed order.
  BasicTensor<T> grad_in(input_shape);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t k = 0; k < spec.out_channels; ++k) {
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const T g = grad_out.at(n, k, oy, ox);
          if (g == T{0}) continue;
          for (std::size_t c = 0; c < spec.in_channels; ++c) {
            for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * spec.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
              for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * spec.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
                grad_in.at(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) +=
                    g * weights.at(k, c, ky, kx);
              }
            }
          }
        }
      }
    }
  }
  return grad_in;
}

template <typename T>
BasicTensor<T> conv2d_backward_weights(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                                       const ConvSpec& spec) {
  check_conv_operands(input.shape(), spec.weight_shape(), spec);
  const std::size_t n_batch = input.dim(0), in_h = input.dim(2), in_w = input.dim(3);
  const std::size_t out_h = spec.output_size(in_h, spec.kernel_h);
  const std::size_t out_w = spec.output_size(in_w, spec.kernel_w);
  require_same_shape(grad_out.shape(), Shape{n_batch, spec.out_channels, out_h, out_w}, "grad_out");
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);

  BasicTensor<T> grad_w(spec.weight_shape());
  for (std::size_t k = 0; k < spec.out_channels; ++k) {
    for (std::size_t c = 0; c < spec.in_channels; ++c) {
      for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
          T acc{0};
          for (std::size_t n = 0; n < n_batch; ++n) {
            for (std::size_t oy = 0; oy < out_h; ++oy) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * spec.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
              for (std::size_t ox = 0; ox < out_w; ++ox) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * spec.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
                acc += grad_out.at(n, k, oy, ox) *
                       input.at(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
              }
            }
          }
          grad_w.at(k, c, ky, kx) = acc;
        }
      }
    }
  }
  return grad_w;
}

template <typename T>
BasicTensor<T> linear_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights) {
  require_rank(input.shape(), 2, "input");
  require_rank(weights.shape(), 2, "weights");
  require_dim(input.dim(1), weights.dim(1), "input features");
  const std::size_t n_batch = input.dim(0), in_f = input.dim(1), out_f = weights.dim(0);
  BasicTensor<T> out({n_batch, out_f});
  for (std::size_t n = 0; n < n_batch; ++n) {
    const T* x = input.data() + n * in_f;
    for (std::size_t o = 0; o < out_f; ++o) {
      const T* w = weights.data() + o * in_f;
      T acc{0};
      for (std::size_t i = 0; i < in_f; ++i) acc += x[i] * w[i];
      out[n * out_f + o] = acc;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> linear_backward_input(const BasicTensor<T>& grad_out, const BasicTensor<T>& weights) {
  require_rank(grad_out.shape(), 2, "grad_out");
  require_rank(weights.shape(), 2, "weights");
  require_dim(grad_out.dim(1), weights.dim(0), "grad_out features");
  const std::size_t n_batch = grad_out.dim(0), out_f = weights.dim(0), in_f = weights.dim(1);
  BasicTensor<T> grad_in({n_batch, in_f});
  for (std::size_t n = 0; n < n_batch; ++n) {
    T* gx = grad_in.data() + n * in_f;
    for (std::size_t o = 0; o < out_f; ++o) {
      const T g = grad_out[n * out_f + o];
      const T* w = weights.data() + o * in_f;
      for (std::size_t i = 0; i < in_f; ++i) gx[i] += g * w[i];
    }
  }
  return grad_in;
}

template <typename T>
BasicTensor<T> linear_backward_weights(const BasicTensor<T>& grad_out, const BasicTensor<T>& input) {
  require_rank(grad_out.shape(), 2, "grad_out");
  require_rank(input.shape(), 2, "input");
  require_dim(grad_out.dim(0), input.dim(0), "batch");
  const std::size_t n_batch = input.dim(0), in_f = input.dim(1), out_f = grad_out.dim(1);
  BasicTensor<T> grad_w({out_f, in_f});
  for (std::size_t o = 0; o < out_f; ++o) {
    T* gw = grad_w.data() + o * in_f;
    for (std::size_t n = 0; n < n_batch; ++n) {
      const T g = grad_out[n * out_f + o];
      const T* x = input.data() + n * in_f;
      for (std::size_t i = 0; i < in_f; ++i) gw[i] += g * x[i];
    }
  }
  return grad_w;
}

template <typename T>
void add_bias(BasicTensor<T>& out, const BasicTensor<T>& bias) {
  if (out.rank() < 2) throw ShapeError("output", "bias needs an output of rank >= 2");
  require_dim(bias.numel(), out.dim(1), "bias length");
  const std::size_t channels = out.dim(1);
  const std::size_t inner = out.numel() / (out.dim(0) * channels);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bias[(i / inner) % channels];
}

template <typename T>
BasicTensor<T> bias_backward(const BasicTensor<T>& grad_out) {
  if (grad_out.rank() < 2) throw ShapeError("grad_out", "bias gradient needs rank >= 2");
  const std::size_t channels = grad_out.dim(1);
  const std::size_t inner = grad_out.numel() / (grad_out.dim(0) * channels);
  BasicTensor<T> grad({channels});
  for (std::size_t i = 0; i < grad_out.numel(); ++i) grad[(i / inner) % channels] += grad_out[i];
  return grad;
}

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (T& v : out.values()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input) {
  require_same_shape(grad_out.shape(), input.shape(), "grad_out");
  BasicTensor<T> grad = grad_out;
  for (std::size_t i = 0; i < grad.numel(); ++i) {
    if (!(input[i] > T{0})) grad[i] = T{0};
  }
  return grad;
}

template <typename T>
BasicTensor<T> maxpool2x2_forward(const BasicTensor<T>& input, std::vector<std::size_t>* argmax) {
  require_rank(input.shape(), 4, "input");
  const std::size_t n_batch = input.dim(0), ch = input.dim(1), in_h = input.dim(2), in_w = input.dim(3);
  if (in_h < 2 || in_w < 2) throw ShapeError("spatial", "maxpool needs spatial dims >= 2");
  const std::size_t out_h = in_h / 2, out_w = in_w / 2;
  BasicTensor<T> out({n_batch, ch, out_h, out_w});
  if (argmax) argmax->assign(out.numel(), 0);
  std::size_t o = 0;
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ++ox, ++o) {
          std::size_t best = ((n * ch + c) * in_h + 2 * oy) * in_w + 2 * ox;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = ((n * ch + c) * in_h + 2 * oy + dy) * in_w + 2 * ox + dx;
              if (input[idx] > input[best]) best = idx;
            }
          }
          out[o] = input[best];
          if (argmax) (*argmax)[o] = best;
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>& grad_out, std::span<const std::size_t> argmax,
                                   const Shape& input_shape) {
  require_dim(argmax.size(), grad_out.numel(), "argmax length");
  BasicTensor<T> grad(input_shape);
  for (std::size_t o = 0; o < grad_out.numel(); ++o) grad[argmax[o]] += grad_out[o];
  return grad;
}

template <typename T>
double softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels, BasicTensor<T>* grad) {
  require_rank(logits.shape(), 2, "logits");
  const std::size_t n_batch = logits.dim(0), classes = logits.dim(1);
  require_dim(labels.size(), n_batch, "label count");
  if (grad) *grad = BasicTensor<T>(logits.shape());
  double total = 0.0;
  std::vector<double> probs(classes);
  for (std::size_t n = 0; n < n_batch; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ValueError("label " + std::to_string(label) + " out of range [0, " + std::to_string(classes) + ")");
    }
    const T* row = logits.data() + n * classes;
    const double peak = static_cast<double>(*std::max_element(row, row + classes));
    double denom = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      probs[k] = std::exp(static_cast<double>(row[k]) - peak);
      denom += probs[k];
    }
    total += std::log(denom) - (static_cast<double>(row[label]) - peak);
    if (grad) {
      for (std::size_t k = 0; k < classes; ++k) {
        const double p = probs[k] / denom;
        (*grad)[n * classes + k] =
            static_cast<T>((p - (static_cast<std::size_t>(label) == k ? 1.0 : 0.0)) / static_cast<double>(n_batch));
      }
    }
  }
  return total / static_cast<double>(n_batch);
}

std::uint64_t mac_count(const ConvSpec& spec, std::size_t batch, std::size_t out_h, std::size_t out_w,
                        double density) {
  if (!(density >= 0.0 && density <= 1.0)) throw ValueError("density must lie in [0, 1]");
  const std::uint64_t dense = static_cast<std::uint64_t>(batch) * spec.out_channels * spec.in_channels *
                              spec.kernel_h * spec.kernel_w * out_h * out_w;
  return static_cast<std::uint64_t>(std::floor(static_cast<long double>(dense) * density));
}

std::uint64_t mac_count_linear(std::size_t in_features, std::size_t out_features, std::size_t batch,
                               double density) {
  if (!(density >= 0.0 && density <= 1.0)) throw ValueError("density must lie in [0, 1]");
  const std::uint64_t dense = static_cast<std::uint64_t>(batch) * in_features * out_features;
  return static_cast<std::uint64_t>(std::floor(static_cast<long double>(dense) * density));
}

#define ZEROFL_INSTANTIATE_KERNELS(T)                                                                           \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const BasicTensor<T>&, const ConvSpec&);          \
  template BasicTensor<T> conv2d_backward_input(const BasicTensor<T>&, const BasicTensor<T>&, const ConvSpec&,    \
                                                const Shape&);                                                    \
  template BasicTensor<T> conv2d_backward_weights(const BasicTensor<T>&, const BasicTensor<T>&, const ConvSpec&); \
  template BasicTensor<T> linear_forward(const BasicTensor<T>&, const BasicTensor<T>&);                          \
  template BasicTensor<T> linear_backward_input(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> linear_backward_weights(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template void add_bias(BasicTensor<T>&, const BasicTensor<T>&);                                                \
  template BasicTensor<T> bias_backward(const BasicTensor<T>&);                                                  \
  template BasicTensor<T> relu_forward(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template BasicTensor<T> maxpool2x2_forward(const BasicTensor<T>&, std::vector<std::size_t>*);                  \
  template BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>&, std::span<const std::size_t>, const Shape&); \
  template double softmax_cross_entropy(const BasicTensor<T>&, std::span<const int>, BasicTensor<T>*);

ZEROFL_INSTANTIATE_KERNELS(float)
ZEROFL_INSTANTIATE_KERNELS(double)

}  // namespace zerofl
