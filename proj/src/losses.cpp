#include "hsrnet/losses.hpp"

#include <stdexcept>
#include <string>

#include "hsrnet/ops.hpp"

namespace hsrnet {

Tensor density_loss(const Tensor& pred, const Tensor& gt, LossNorm norm) {
    if (!(pred.shape() == gt.shape())) {
        throw std::invalid_argument("density_loss: shape mismatch " + pred.shape().str() + " vs " +
                                    gt.shape().str());
    }
    const double n = norm == LossNorm::pixels ? static_cast<double>(pred.numel())
                                              : static_cast<double>(pred.shape().n);
    return scale(sum_squared_diff(pred, gt), static_cast<float>(0.5 / n));
}

LossBreakdown scale_consistency_loss(const ForwardOutput& out, const Tensor& gt,
                                     const std::vector<Tensor>& gt_pyramid,
                                     const std::vector<Tensor>& lambda_raw, LossNorm norm) {
    if (out.side.size() != 5) {
        throw std::invalid_argument("scale_consistency_loss: missing side outputs (got " +
                                    std::to_string(out.side.size()) + " of 5)");
    }
    if (gt_pyramid.size() != 5) {
        throw std::invalid_argument("scale_consistency_loss: ground-truth pyramid must have 5 "
                                    "levels, got " +
                                    std::to_string(gt_pyramid.size()));
    }
    if (lambda_raw.size() != 5) {
        throw std::invalid_argument("scale_consistency_loss: need 5 loss weights, got " +
                                    std::to_string(lambda_raw.size()));
    }
    LossBreakdown bd;
    const Tensor l0 = density_loss(out.d0, gt, norm);
    bd.l0 = l0.data()[0];
    Tensor total = l0;
    for (size_t i = 0; i < 5; ++i) {
        const Tensor li = density_loss(out.side[i], gt_pyramid[i], norm);
        const Tensor lam = softplus(lambda_raw[i]);
        bd.l_side[i] = li.data()[0];
        bd.lambda[i] = lam.data()[0];
        total = add(total, broadcast_mul(li, lam));
    }
    double acc = bd.l0;
    for (size_t i = 0; i < 5; ++i) acc += bd.lambda[i] * bd.l_side[i];
    bd.total = acc;
    bd.total_node = total;
    return bd;
}

LossBreakdown density_only_loss(const Tensor& d0, const Tensor& gt, LossNorm norm) {
    LossBreakdown bd;
    const Tensor l0 = density_loss(d0, gt, norm);
    bd.l0 = l0.data()[0];
    bd.total = bd.l0;
    bd.total_node = l0;
    return bd;
}

}  // namespace hsrnet
