#pragma once

#include <cstdint>
#include <vector>

#include "hsrnet/tensor.hpp"

namespace hsrnet {

// Adam with bias correction. Moment buffers are stored in f32 (so they
// serialize exactly like parameters); the per-element update itself runs
// in double. Buffers are positionally aligned with the parameter list
// handed to adam_step, which must therefore be stable across steps.
struct AdamState {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t t = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;

    void reset(const std::vector<Parameter>& params);
    bool initialized() const { return !m.empty(); }
};

// One optimizer step over all trainable parameters; clears their gradients.
// Throws std::invalid_argument if a trainable parameter has no gradient or
// the state does not line up with the parameter list.
void adam_step(std::vector<Parameter>& params, AdamState& state);

}  // namespace hsrnet
