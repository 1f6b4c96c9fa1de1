#pragma once

// The op-by-op finite-difference suite. Lives in a header so both the unit
// tests and the acceptance binary run exactly the same checks.

#include <string>
#include <vector>

#include "testutil.hpp"

namespace testutil {

using namespace hsrnet;

struct OpReport {
    std::string op;
    double max_rel = 0.0;
    int checked = 0;
};

// Runs every differentiable op over `seeds` seeds and accumulates the
// worst relative error per op.
inline std::vector<OpReport> run_gradient_suite(int seeds, int coords_per_tensor = 14) {
    std::vector<OpReport> reports;
    auto run = [&](const std::string& name,
                   const std::function<FdResult(Rng&)>& one_seed) {
        OpReport rep;
        rep.op = name;
        for (int s = 1; s <= seeds; ++s) {
            Rng rng(0xF00D + static_cast<uint64_t>(s));
            const FdResult r = one_seed(rng);
            rep.max_rel = std::max(rep.max_rel, r.max_rel);
            rep.checked += r.checked;
        }
        reports.push_back(rep);
    };

    // Reduction-heavy ops compare only coordinates whose analytic gradient is a
    // healthy fraction of the tensor's largest: with f32 outputs and the pinned
    // 1e-3 step, the FD quotient carries ~1e-4 absolute noise, so tiny
    // gradients cannot be resolved at the 1e-3 relative bar.
    run("conv2d", [&](Rng& rng) {
        Tensor x = rand_tensor({1, 2, 5, 5}, rng);
        Tensor k = rand_tensor({3, 2, 3, 3}, rng, -0.6, 0.6);
        Tensor b = rand_tensor({1, 3, 1, 1}, rng, -0.4, 0.4);
        return fd_check([&] { return conv2d(x, k, b, 1, 1); }, {x, k, b}, rng, coords_per_tensor,
                        1e-3, 0.15);
    });
    run("conv2d/strided", [&](Rng& rng) {
        Tensor x = rand_tensor({2, 2, 6, 6}, rng);
        Tensor k = rand_tensor({2, 2, 3, 3}, rng, -0.6, 0.6);
        Tensor b = rand_tensor({1, 2, 1, 1}, rng, -0.4, 0.4);
        return fd_check([&] { return conv2d(x, k, b, 2, 1); }, {x, k, b}, rng, coords_per_tensor,
                        1e-3, 0.15);
    });
    run("transposed_conv2d", [&](Rng& rng) {
        Tensor x = rand_tensor({1, 3, 4, 4}, rng);
        Tensor k = rand_tensor({3, 2, 4, 4}, rng, -0.5, 0.5);
        return fd_check([&] { return transposed_conv2d(x, k, 2, 1); }, {x, k}, rng,
                        coords_per_tensor, 1e-3, 0.15);
    });
    run("max_pool2", [&](Rng& rng) {
        Tensor x = rand_tensor({1, 3, 8, 8}, rng);
        // stay away from near-ties inside a pooling window
        auto eligible = [&](size_t, int64_t i) {
            const auto& d = x.data();
            const Shape4 s = x.shape();
            const int64_t w = s.w;
            const int64_t plane = s.h * s.w;
            const int64_t nc = i / plane, rem = i % plane;
            const int64_t y = rem / w, xx = rem % w;
            const int64_t y0 = (y / 2) * 2, x0 = (xx / 2) * 2;
            float top = -1e30f, second = -1e30f;
            for (int64_t dy = 0; dy < 2; ++dy) {
                for (int64_t dx = 0; dx < 2; ++dx) {
                    const float v = d[static_cast<size_t>(nc * plane + (y0 + dy) * w + x0 + dx)];
                    if (v > top) {
                        second = top;
                        top = v;
                    } else if (v > second) {
                        second = v;
                    }
                }
            }
            const float mine = d[static_cast<size_t>(i)];
            const float margin = mine == top ? top - second : top - mine;
            return margin > 5e-3f;
        };
        // only ~1/4 of inputs are window maxima; oversample to keep the
        // checked-coordinate count healthy
        return fd_check([&] { return max_pool2(x); }, {x}, rng, coords_per_tensor * 5, 1e-3, 0.0,
                        eligible);
    });
    run("avg_pool", [&](Rng& rng) {
        Tensor x = rand_tensor({1, 2, 7, 7}, rng);
        return fd_check([&] { return avg_pool(x, 2); }, {x}, rng, coords_per_tensor, 1e-3, 0.0);
    });
    run("global_avg_pool", [&](Rng& rng) {
        Tensor x = rand_tensor({2, 3, 4, 5}, rng);
        return fd_check([&] { return global_avg_pool(x); }, {x}, rng, coords_per_tensor, 1e-3, 0.0);
    });
    run("relu", [&](Rng& rng) {
        Tensor x = rand_tensor({1, 2, 6, 6}, rng);
        auto eligible = [&](size_t, int64_t i) {
            return std::fabs(x.data()[static_cast<size_t>(i)]) > 5e-3f;
        };
        // ~half the inputs sit in the dead region; oversample
        return fd_check([&] { return activation(x, Activation::relu); }, {x}, rng,
                        coords_per_tensor * 3, 1e-3, 0.0, eligible);
    });
    run("sigmoid", [&](Rng& rng) {
        Tensor x = rand_tensor({1, 2, 6, 6}, rng, -2.0, 2.0);
        return fd_check([&] { return activation(x, Activation::sigmoid); }, {x}, rng,
                        coords_per_tensor);
    });
    run("linear", [&](Rng& rng) {
        Tensor x = rand_tensor({3, 4, 1, 1}, rng);
        Tensor w = rand_tensor({2, 4, 1, 1}, rng, -0.7, 0.7);
        Tensor b = rand_tensor({1, 2, 1, 1}, rng, -0.4, 0.4);
        return fd_check([&] { return linear(x, w, b); }, {x, w, b}, rng, coords_per_tensor, 1e-3,
                        0.15);
    });
    run("broadcast_mul/same", [&](Rng& rng) {
        Tensor a = rand_tensor({1, 2, 4, 4}, rng);
        Tensor b = rand_tensor({1, 2, 4, 4}, rng);
        return fd_check([&] { return broadcast_mul(a, b); }, {a, b}, rng, coords_per_tensor);
    });
    run("broadcast_mul/per_channel", [&](Rng& rng) {
        Tensor a = rand_tensor({2, 3, 4, 4}, rng);
        Tensor b = rand_tensor({2, 3, 1, 1}, rng);
        return fd_check([&] { return broadcast_mul(a, b); }, {a, b}, rng, coords_per_tensor);
    });
    run("broadcast_mul/per_position", [&](Rng& rng) {
        Tensor a = rand_tensor({2, 3, 4, 4}, rng);
        Tensor b = rand_tensor({2, 1, 4, 4}, rng);
        return fd_check([&] { return broadcast_mul(a, b); }, {a, b}, rng, coords_per_tensor);
    });
    run("channel_mean", [&](Rng& rng) {
        Tensor x = rand_tensor({1, 4, 5, 5}, rng);
        return fd_check([&] { return channel_mean(x); }, {x}, rng, coords_per_tensor, 1e-3, 0.0);
    });
    run("channel_slice_concat", [&](Rng& rng) {
        Tensor a = rand_tensor({1, 3, 4, 4}, rng);
        Tensor b = rand_tensor({1, 2, 4, 4}, rng);
        return fd_check(
            [&] {
                return channel_slice_concat({a, b, a}, {1, 0, 2});
            },
            {a, b}, rng, coords_per_tensor, 1e-3, 0.0);
    });
    run("bilinear_upsample", [&](Rng& rng) {
        Tensor x = rand_tensor({1, 2, 4, 4}, rng);
        return fd_check([&] { return bilinear_upsample(x, 7, 9); }, {x}, rng, coords_per_tensor,
                        1e-3, 0.1);
    });
    run("add", [&](Rng& rng) {
        Tensor a = rand_tensor({1, 2, 4, 4}, rng);
        Tensor b = rand_tensor({1, 2, 4, 4}, rng);
        return fd_check([&] { return add(a, b); }, {a, b}, rng, coords_per_tensor, 1e-3, 0.0);
    });
    run("scale", [&](Rng& rng) {
        Tensor a = rand_tensor({1, 2, 4, 4}, rng);
        return fd_check([&] { return scale(a, 1.7f); }, {a}, rng, coords_per_tensor, 1e-3, 0.0);
    });
    run("softplus", [&](Rng& rng) {
        Tensor x = rand_tensor({1, 2, 6, 6}, rng, -2.0, 2.0);
        return fd_check([&] { return softplus(x); }, {x}, rng, coords_per_tensor);
    });
    run("sum_squared_diff", [&](Rng& rng) {
        // small magnitudes keep the f32 scalar output fine-grained enough for FD
        Tensor p = rand_tensor({1, 1, 4, 4}, rng, -0.1, 0.1);
        Tensor t = rand_tensor({1, 1, 4, 4}, rng, -0.1, 0.1);
        return fd_check([&] { return sum_squared_diff(p, t); }, {p, t}, rng, coords_per_tensor,
                        1e-3, 0.2);
    });

    return reports;
}

}  // namespace testutil
