#pragma once

#include <vector>

#include "hsrnet/tensor.hpp"

namespace hsrnet {

enum class Activation { relu, sigmoid };

/// 2-D convolution (cross-correlation) with zero padding.
/// kernel: (c_out, c_in, k, k), square; bias: (1, c_out, 1, 1).
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride = 1, int padding = 0);

/// Transposed convolution (learned upsampling), no bias.
/// kernel: (c_in, c_out, k, k), square. Output spatial size is
/// stride*(in-1) + k - 2*padding. Adjoint of conv2d for the same
/// kernel/stride/padding.
Tensor transposed_conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);

/// 2x2 max pooling, stride 2. Requires even spatial dims; gradient routes to
/// the first maximum in row-major window order.
Tensor max_pool2(const Tensor& input);

/// Non-overlapping k x k average pooling; ragged right/bottom windows average
/// over their true extent, so constant maps stay constant.
Tensor avg_pool(const Tensor& input, int k);

/// Spatial mean per channel; output (n, c, 1, 1).
Tensor global_avg_pool(const Tensor& input);

Tensor activation(const Tensor& input, Activation kind);

/// Fully-connected layer on (n, c, 1, 1) features.
/// weight: (c_out, c, 1, 1); bias: (1, c_out, 1, 1).
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Elementwise product. `b` may match `a`, or be a per-channel (n, c, 1, 1)
/// or per-position (n, 1, h, w) factor; gradients sum over broadcast axes.
Tensor broadcast_mul(const Tensor& a, const Tensor& b);

/// Mean over channels; output (n, 1, h, w).
Tensor channel_mean(const Tensor& input);

/// Output channel k copies channel channel_indices[k] of inputs[k]. All
/// inputs must share (n, h, w). Gradients scatter back to source channels.
Tensor channel_slice_concat(const std::vector<Tensor>& inputs,
                            const std::vector<int64_t>& channel_indices);

/// Concatenate all channels of the given tensors, in order.
Tensor concat_channels(const std::vector<Tensor>& inputs);

/// Bilinear resize with half-pixel centers and edge clamping
/// (align_corners = false). Exactly the identity when sizes match.
Tensor bilinear_upsample(const Tensor& input, int64_t out_h, int64_t out_w);

Tensor add(const Tensor& a, const Tensor& b);

/// Multiply by a fixed scalar.
Tensor scale(const Tensor& a, float factor);

Tensor softplus(const Tensor& input);

/// Scalar (1,1,1,1) tensor holding sum((pred - target)^2).
Tensor sum_squared_diff(const Tensor& pred, const Tensor& target);

}  // namespace hsrnet
