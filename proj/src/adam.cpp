#include "hsrnet/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace hsrnet {

void AdamState::reset(const std::vector<Parameter>& params) {
    t = 0;
    m.assign(params.size(), {});
    v.assign(params.size(), {});
    for (size_t i = 0; i < params.size(); ++i) {
        const size_t n = params[i].value().data().size();
        m[i].assign(n, 0.0f);
        v[i].assign(n, 0.0f);
    }
}

void adam_step(std::vector<Parameter>& params, AdamState& state) {
    if (!state.initialized()) state.reset(params);
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw std::invalid_argument("adam_step: state holds " + std::to_string(state.m.size()) +
                                    " moment buffers for " + std::to_string(params.size()) +
                                    " parameters");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        Parameter& p = params[i];
        if (!p.trainable()) continue;
        const std::vector<float>* grad = p.value().grad();
        if (!grad) {
            throw std::invalid_argument("adam_step: parameter '" + p.name() + "' has no gradient");
        }
        std::vector<float>& data = p.value().mutable_data();
        if (state.m[i].size() != data.size()) {
            throw std::invalid_argument("adam_step: moment buffer size mismatch for '" + p.name() +
                                        "'");
        }
        for (size_t j = 0; j < data.size(); ++j) {
            const double g = (*grad)[j];
            const double mj = state.beta1 * state.m[i][j] + (1.0 - state.beta1) * g;
            const double vj = state.beta2 * state.v[i][j] + (1.0 - state.beta2) * g * g;
            state.m[i][j] = static_cast<float>(mj);
            state.v[i][j] = static_cast<float>(vj);
            const double mhat = static_cast<double>(state.m[i][j]) / bc1;
            const double vhat = static_cast<double>(state.v[i][j]) / bc2;
            data[j] = static_cast<float>(data[j] - state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
        p.value().zero_grad();
    }
}

}  // namespace hsrnet
