#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "kilnnet/tensor.hpp"

namespace kiln {

enum class Mode { train, eval };

/// Geometry of a 2-D convolution. Padding is per axis so that 1x7 / 7x1
/// kernels can keep their spatial size.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  bool has_bias = false;

  /// Odd kernels, padding k/2 on each axis.
  static ConvSpec same(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw,
                       std::size_t stride = 1, bool bias = false);
  /// No padding.
  static ConvSpec valid(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw,
                        std::size_t stride = 1, bool bias = false);

  Shape weight_shape() const { return {out_channels, in_channels, kernel_h, kernel_w}; }
  std::size_t weight_count() const { return out_channels * in_channels * kernel_h * kernel_w; }
};

/// floor((in + 2*pad - kernel) / stride) + 1; throws a configuration error
/// when that is not strictly positive.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t pad);

/// Cross-correlation (no kernel flip). `bias` may be undefined when
/// spec.has_bias is false.
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              const ConvSpec& spec);

/// Valid max pooling. Ties send the gradient to the first element of the
/// window in row-major order.
Tensor maxpool2d(const Tensor& input, std::size_t window, std::size_t stride);

/// Stride-1 average pooling with window/2 padding; padded cells are excluded
/// from each mean.
Tensor avgpool2d_same(const Tensor& input, std::size_t window);

/// [N,C,H,W] -> [N,C] spatial mean.
Tensor global_avgpool(const Tensor& input);

Tensor relu(const Tensor& input);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;
  double eps = 1e-3;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// Per-channel normalisation of [N,C,H,W]. Train mode normalises with the
/// biased batch variance and folds the batch statistics into `state`
/// (unbiased variance for the running estimate); eval mode uses `state`.
/// An undefined `gamma` means a fixed unit scale.
Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, Mode mode);

Tensor concat_channels(std::span<const Tensor> inputs);
/// Channels [begin, end) of a [N,C,H,W] tensor.
Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t end);

/// trunk + scale * branch.
Tensor residual_add_scaled(const Tensor& trunk, const Tensor& branch, double scale);

/// [N,F] x [K,F]^T + bias[K].
Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias);

/// Row-wise softmax of [N,K] logits. Not recorded on the tape.
Tensor softmax(const Tensor& logits);

/// Mean over the batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Inverted dropout: kept activations are scaled by 1/(1-rate).
Tensor dropout(const Tensor& input, double rate, std::mt19937_64& rng);

/// While alive, folds every branch decision taken on this thread (ReLU
/// sign, max-pool argmax) into a fingerprint. Two forward passes with equal
/// fingerprints ran through the same linear piece of the function. Traces do
/// not nest.
class DecisionTrace {
 public:
  DecisionTrace();
  ~DecisionTrace();
  DecisionTrace(const DecisionTrace&) = delete;
  DecisionTrace& operator=(const DecisionTrace&) = delete;

  std::uint64_t fingerprint() const { return hash_; }
  void reset() { hash_ = kOffset; }
  void record(std::uint64_t value);

 private:
  static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
  std::uint64_t hash_ = kOffset;
  DecisionTrace* previous_;
};

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& input);

}  // namespace kiln
