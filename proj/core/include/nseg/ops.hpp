#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "nseg/tensor.hpp"

namespace nseg {

enum class Mode { train, infer };

/// Weights of one bias-free 2-D convolution, shape (c_out, c_in, k, k).
/// Stride is fixed at 1 with zero same-padding of (k-1)/2, so k must be odd.
template <typename T>
struct ConvParams {
  Tensor<T> weights;

  ConvParams() = default;
  explicit ConvParams(Tensor<T> w) : weights(std::move(w)) {
    if (weights.shape.h != weights.shape.w) {
      throw ConfigError("convolution kernel must be square, got " + weights.shape.str());
    }
    if (weights.shape.h % 2 == 0) {
      throw ConfigError("convolution kernel size must be odd, got " +
                        std::to_string(weights.shape.h));
    }
  }

  int out_channels() const { return weights.shape.n; }
  int in_channels() const { return weights.shape.c; }
  int kernel() const { return weights.shape.h; }
  std::int64_t element_count() const { return weights.size(); }
};

/// Per-channel batch normalization state. gamma/beta are learned (2*c
/// parameters); running_mean/running_var feed inference.
template <typename T>
struct BatchNormParams {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  BatchNormParams() = default;
  explicit BatchNormParams(int channels, T eps_ = T(1e-5), T momentum_ = T(0.1))
      : gamma(static_cast<std::size_t>(channels), T(1)),
        beta(static_cast<std::size_t>(channels), T(0)),
        running_mean(static_cast<std::size_t>(channels), T(0)),
        running_var(static_cast<std::size_t>(channels), T(1)),
        eps(eps_),
        momentum(momentum_) {}

  int channels() const { return static_cast<int>(gamma.size()); }
  std::int64_t learned_count() const { return 2 * static_cast<std::int64_t>(gamma.size()); }
};

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvParams<T>& params);

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& params,
                             const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormCache {
  Tensor<T> x_hat;            // normalized input
  std::vector<T> inv_std;     // per channel
  std::vector<T> gamma;       // copy used by backward
  Mode mode = Mode::train;
};

template <typename T>
struct BatchNormResult {
  Tensor<T> output;
  BatchNormCache<T> cache;
  BatchNormParams<T> updated;  // running stats advanced in train mode
};

/// Train mode normalizes with batch statistics over (n, h, w) per channel and
/// returns params with updated running stats; infer mode uses running stats.
template <typename T>
BatchNormResult<T> batchnorm_forward(const Tensor<T>& input, const BatchNormParams<T>& params,
                                     Mode mode);

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  std::vector<T> gamma;
  std::vector<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Activation { relu, sigmoid };

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input);

/// Gradient passes only where input > 0 (derivative at exactly 0 is 0).
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& input);

/// Takes the forward *output*: d/dx sigmoid = s * (1 - s).
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> activation_forward(const Tensor<T>& input, Activation kind);

template <typename T>
Tensor<T> activation_backward(const Tensor<T>& forward_input, const Tensor<T>& forward_output,
                              const Tensor<T>& grad_out, Activation kind);

// ---------------------------------------------------------------------------
// Pooling / upsampling / concatenation
// ---------------------------------------------------------------------------

template <typename T>
struct MaxPoolResult {
  Tensor<T> output;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// 2x2 max pooling, stride 2. h and w must be even. Ties pick the first
/// position in row-major window order.
template <typename T>
MaxPoolResult<T> maxpool2x2_forward(const Tensor<T>& input);

template <typename T>
Tensor<T> maxpool2x2_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax,
                              const Tensor<T>& grad_out);

/// Nearest-neighbor 2x replication.
template <typename T>
Tensor<T> upsample2x_forward(const Tensor<T>& input);

/// Sums gradients over each replicated 2x2 block.
template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& grad_out);

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& inputs);

/// Slices grad_out back into per-input gradients, channel counts in order.
template <typename T>
std::vector<Tensor<T>> concat_backward(const Tensor<T>& grad_out,
                                       const std::vector<int>& channel_counts);

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

template <typename T>
struct BceResult {
  T loss;
  Tensor<T> grad_pred;
};

/// Binary cross-entropy, mean over all elements. Predictions are clamped to
/// [eps, 1-eps] before the log; the gradient is zero where the clamp is active.
template <typename T>
BceResult<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target, T clamp_eps = T(1e-7));

}  // namespace nseg
