#pragma once

#include <array>
#include <vector>

#include "hsrnet/model.hpp"
#include "hsrnet/tensor.hpp"

namespace hsrnet {

// The density loss normalizes by pixel count by default; the per-image
// convention is kept selectable for comparison.
enum class LossNorm { pixels, images };

// (1/2N)·Σ(pred−gt)² as a differentiable scalar node.
Tensor density_loss(const Tensor& pred, const Tensor& gt, LossNorm norm = LossNorm::pixels);

struct LossBreakdown {
    double l0 = 0.0;
    std::array<double, 5> l_side{};
    std::array<double, 5> lambda{};
    double total = 0.0;  // l0 + Σ lambda·l_side, accumulated in double
    Tensor total_node;   // matching graph scalar for backward()
};

// Total loss L_0 + Σ λ_i·L_i where λ_i = softplus(raw_i) stays nonnegative
// and trainable. side[i] pairs with gt_pyramid[i] (pooling windows 1,2,4,8,16).
LossBreakdown scale_consistency_loss(const ForwardOutput& out, const Tensor& gt,
                                     const std::vector<Tensor>& gt_pyramid,
                                     const std::vector<Tensor>& lambda_raw,
                                     LossNorm norm = LossNorm::pixels);

// L_0-only breakdown for configurations without side supervision.
LossBreakdown density_only_loss(const Tensor& d0, const Tensor& gt,
                                LossNorm norm = LossNorm::pixels);

}  // namespace hsrnet
