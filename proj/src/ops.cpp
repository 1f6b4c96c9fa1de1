#include "hsrnet/ops.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace hsrnet {

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

NodePtr new_node(Shape4 s, const char* label) {
    auto n = std::make_shared<TensorNode>();
    n->shape = s;
    n->data.assign(static_cast<size_t>(s.numel()), 0.0f);
    n->seq = detail::next_seq();
    n->label = label;
    return n;
}

bool track(std::initializer_list<const Tensor*> inputs) {
    if (!grad_enabled()) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

void attach(const NodePtr& out, std::initializer_list<const Tensor*> inputs,
            std::function<void(TensorNode&)> fn) {
    out->requires_grad = true;
    for (const Tensor* t : inputs) out->parents.push_back(t->node());
    out->backward_fn = std::move(fn);
}

void add_grad(TensorNode& n, const std::vector<double>& scratch) {
    n.ensure_grad();
    for (size_t i = 0; i < scratch.size(); ++i) {
        n.grad[i] = static_cast<float>(static_cast<double>(n.grad[i]) + scratch[i]);
    }
}

[[noreturn]] void shape_fail(const std::string& op, const std::string& what) {
    throw std::invalid_argument(op + ": " + what);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding) {
    const Shape4 xs = input.shape();
    const Shape4 ks = kernel.shape();
    if (stride < 1) shape_fail("conv2d", "stride must be >= 1");
    if (padding < 0) shape_fail("conv2d", "padding must be >= 0");
    if (ks.h != ks.w) shape_fail("conv2d", "kernel must be square, got " + ks.str());
    if (xs.c != ks.c) {
        shape_fail("conv2d", "input has " + std::to_string(xs.c) + " channels, kernel expects " +
                                 std::to_string(ks.c));
    }
    if (bias.shape() != Shape4{1, ks.n, 1, 1}) {
        shape_fail("conv2d", "bias shape " + bias.shape().str() + " does not match " +
                                 std::to_string(ks.n) + " output channels");
    }
    if (xs.h + 2 * padding < ks.h || xs.w + 2 * padding < ks.w) {
        shape_fail("conv2d", "output dimension would be < 1 for input " + xs.str() +
                                 ", kernel " + ks.str());
    }
    const int64_t N = xs.n, CI = xs.c, H = xs.h, W = xs.w;
    const int64_t CO = ks.n, K = ks.h;
    const int64_t OH = (H + 2 * padding - K) / stride + 1;
    const int64_t OW = (W + 2 * padding - K) / stride + 1;

    auto out = new_node({N, CO, OH, OW}, "conv2d");
    {
        const float* X = input.data().data();
        const float* Kd = kernel.data().data();
        const float* B = bias.data().data();
        float* O = out->data.data();
        for (int64_t n = 0; n < N; ++n) {
            for (int64_t co = 0; co < CO; ++co) {
                for (int64_t oy = 0; oy < OH; ++oy) {
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        double acc = B[co];
                        for (int64_t ci = 0; ci < CI; ++ci) {
                            for (int64_t ky = 0; ky < K; ++ky) {
                                const int64_t iy = oy * stride - padding + ky;
                                if (iy < 0 || iy >= H) continue;
                                const float* xrow = X + ((n * CI + ci) * H + iy) * W;
                                const float* krow = Kd + ((co * CI + ci) * K + ky) * K;
                                for (int64_t kx = 0; kx < K; ++kx) {
                                    const int64_t ix = ox * stride - padding + kx;
                                    if (ix < 0 || ix >= W) continue;
                                    acc += static_cast<double>(xrow[ix]) * krow[kx];
                                }
                            }
                        }
                        O[((n * CO + co) * OH + oy) * OW + ox] = static_cast<float>(acc);
                    }
                }
            }
        }
    }

    if (track({&input, &kernel, &bias})) {
        NodePtr xn = input.node(), kn = kernel.node(), bn = bias.node();
        attach(out, {&input, &kernel, &bias},
               [xn, kn, bn, stride, padding, N, CI, H, W, CO, K, OH, OW](TensorNode& o) {
                   const float* G = o.grad.data();
                   const float* X = xn->data.data();
                   const float* Kd = kn->data.data();
                   const bool need_dx = xn->requires_grad;
                   const bool need_dk = kn->requires_grad;
                   const bool need_db = bn->requires_grad;
                   std::vector<double> dx(need_dx ? xn->data.size() : 0, 0.0);
                   std::vector<double> dk(need_dk ? kn->data.size() : 0, 0.0);
                   std::vector<double> db(need_db ? bn->data.size() : 0, 0.0);
                   for (int64_t n = 0; n < N; ++n) {
                       for (int64_t co = 0; co < CO; ++co) {
                           for (int64_t oy = 0; oy < OH; ++oy) {
                               for (int64_t ox = 0; ox < OW; ++ox) {
                                   const double g = G[((n * CO + co) * OH + oy) * OW + ox];
                                   if (g == 0.0) continue;
                                   if (need_db) db[co] += g;
                                   if (!need_dx && !need_dk) continue;
                                   for (int64_t ci = 0; ci < CI; ++ci) {
                                       for (int64_t ky = 0; ky < K; ++ky) {
                                           const int64_t iy = oy * stride - padding + ky;
                                           if (iy < 0 || iy >= H) continue;
                                           const int64_t xbase = ((n * CI + ci) * H + iy) * W;
                                           const int64_t kbase = ((co * CI + ci) * K + ky) * K;
                                           for (int64_t kx = 0; kx < K; ++kx) {
                                               const int64_t ix = ox * stride - padding + kx;
                                               if (ix < 0 || ix >= W) continue;
                                               if (need_dx) dx[xbase + ix] += g * Kd[kbase + kx];
                                               if (need_dk) dk[kbase + kx] += g * X[xbase + ix];
                                           }
                                       }
                                   }
                               }
                           }
                       }
                   }
                   if (need_dx) add_grad(*xn, dx);
                   if (need_dk) add_grad(*kn, dk);
                   if (need_db) add_grad(*bn, db);
               });
    }
    return Tensor::wrap(out);
}

Tensor transposed_conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    const Shape4 xs = input.shape();
    const Shape4 ks = kernel.shape();
    if (stride < 1) shape_fail("transposed_conv2d", "stride must be >= 1");
    if (padding < 0) shape_fail("transposed_conv2d", "padding must be >= 0");
    if (ks.h != ks.w) shape_fail("transposed_conv2d", "kernel must be square, got " + ks.str());
    if (xs.c != ks.n) {
        shape_fail("transposed_conv2d", "input has " + std::to_string(xs.c) +
                                            " channels, kernel expects " + std::to_string(ks.n));
    }
    const int64_t N = xs.n, CI = xs.c, H = xs.h, W = xs.w;
    const int64_t CO = ks.c, K = ks.h;
    const int64_t OH = static_cast<int64_t>(stride) * (H - 1) + K - 2 * padding;
    const int64_t OW = static_cast<int64_t>(stride) * (W - 1) + K - 2 * padding;
    if (OH < 1 || OW < 1) {
        shape_fail("transposed_conv2d", "non-positive output size for input " + xs.str());
    }

    auto out = new_node({N, CO, OH, OW}, "transposed_conv2d");
    {
        const float* X = input.data().data();
        const float* Kd = kernel.data().data();
        std::vector<double> obuf(out->data.size(), 0.0);
        for (int64_t n = 0; n < N; ++n) {
            for (int64_t ci = 0; ci < CI; ++ci) {
                for (int64_t iy = 0; iy < H; ++iy) {
                    for (int64_t ix = 0; ix < W; ++ix) {
                        const double v = X[((n * CI + ci) * H + iy) * W + ix];
                        if (v == 0.0) continue;
                        for (int64_t co = 0; co < CO; ++co) {
                            const int64_t obase = (n * CO + co) * OH;
                            for (int64_t ky = 0; ky < K; ++ky) {
                                const int64_t oy = iy * stride - padding + ky;
                                if (oy < 0 || oy >= OH) continue;
                                const int64_t kbase = ((ci * CO + co) * K + ky) * K;
                                for (int64_t kx = 0; kx < K; ++kx) {
                                    const int64_t ox = ix * stride - padding + kx;
                                    if (ox < 0 || ox >= OW) continue;
                                    obuf[(obase + oy) * OW + ox] += v * Kd[kbase + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
        for (size_t i = 0; i < obuf.size(); ++i) out->data[i] = static_cast<float>(obuf[i]);
    }

    if (track({&input, &kernel})) {
        NodePtr xn = input.node(), kn = kernel.node();
        attach(out, {&input, &kernel},
               [xn, kn, stride, padding, N, CI, H, W, CO, K, OH, OW](TensorNode& o) {
                   const float* G = o.grad.data();
                   const float* X = xn->data.data();
                   const float* Kd = kn->data.data();
                   if (xn->requires_grad) {
                       // Gradient w.r.t. the input is a forward convolution of
                       // the upstream gradient with the same kernel.
                       std::vector<double> dx(xn->data.size(), 0.0);
                       for (int64_t n = 0; n < N; ++n) {
                           for (int64_t ci = 0; ci < CI; ++ci) {
                               for (int64_t iy = 0; iy < H; ++iy) {
                                   for (int64_t ix = 0; ix < W; ++ix) {
                                       double acc = 0.0;
                                       for (int64_t co = 0; co < CO; ++co) {
                                           for (int64_t ky = 0; ky < K; ++ky) {
                                               const int64_t oy = iy * stride - padding + ky;
                                               if (oy < 0 || oy >= OH) continue;
                                               const float* grow = G + ((n * CO + co) * OH + oy) * OW;
                                               const float* krow = Kd + ((ci * CO + co) * K + ky) * K;
                                               for (int64_t kx = 0; kx < K; ++kx) {
                                                   const int64_t ox = ix * stride - padding + kx;
                                                   if (ox < 0 || ox >= OW) continue;
                                                   acc += static_cast<double>(grow[ox]) * krow[kx];
                                               }
                                           }
                                       }
                                       dx[((n * CI + ci) * H + iy) * W + ix] += acc;
                                   }
                               }
                           }
                       }
                       add_grad(*xn, dx);
                   }
                   if (kn->requires_grad) {
                       std::vector<double> dk(kn->data.size(), 0.0);
                       for (int64_t n = 0; n < N; ++n) {
                           for (int64_t ci = 0; ci < CI; ++ci) {
                               for (int64_t iy = 0; iy < H; ++iy) {
                                   for (int64_t ix = 0; ix < W; ++ix) {
                                       const double v = X[((n * CI + ci) * H + iy) * W + ix];
                                       if (v == 0.0) continue;
                                       for (int64_t co = 0; co < CO; ++co) {
                                           for (int64_t ky = 0; ky < K; ++ky) {
                                               const int64_t oy = iy * stride - padding + ky;
                                               if (oy < 0 || oy >= OH) continue;
                                               const float* grow = G + ((n * CO + co) * OH + oy) * OW;
                                               const int64_t kbase = ((ci * CO + co) * K + ky) * K;
                                               for (int64_t kx = 0; kx < K; ++kx) {
                                                   const int64_t ox = ix * stride - padding + kx;
                                                   if (ox < 0 || ox >= OW) continue;
                                                   dk[kbase + kx] += v * grow[ox];
                                               }
                                           }
                                       }
                                   }
                               }
                           }
                       }
                       add_grad(*kn, dk);
                   }
               });
    }
    return Tensor::wrap(out);
}

Tensor max_pool2(const Tensor& input) {
    const Shape4 xs = input.shape();
    if (xs.h % 2 != 0 || xs.w % 2 != 0) {
        shape_fail("max_pool2", "spatial dims must be even, got " + xs.str());
    }
    const int64_t N = xs.n, C = xs.c, H = xs.h, W = xs.w;
    const int64_t OH = H / 2, OW = W / 2;
    auto out = new_node({N, C, OH, OW}, "max_pool2");
    auto argmax = std::make_shared<std::vector<int64_t>>(out->data.size());
    {
        const float* X = input.data().data();
        float* O = out->data.data();
        int64_t oi = 0;
        for (int64_t n = 0; n < N; ++n) {
            for (int64_t c = 0; c < C; ++c) {
                const int64_t base = (n * C + c) * H;
                for (int64_t oy = 0; oy < OH; ++oy) {
                    for (int64_t ox = 0; ox < OW; ++ox, ++oi) {
                        float best = -std::numeric_limits<float>::infinity();
                        int64_t best_idx = 0;
                        for (int64_t dy = 0; dy < 2; ++dy) {
                            for (int64_t dx = 0; dx < 2; ++dx) {
                                const int64_t idx = (base + oy * 2 + dy) * W + ox * 2 + dx;
                                if (X[idx] > best) {  // strict: first occurrence wins ties
                                    best = X[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        O[oi] = best;
                        (*argmax)[oi] = best_idx;
                    }
                }
            }
        }
    }
    if (track({&input})) {
        NodePtr xn = input.node();
        attach(out, {&input}, [xn, argmax](TensorNode& o) {
            if (!xn->requires_grad) return;
            std::vector<double> dx(xn->data.size(), 0.0);
            for (size_t i = 0; i < o.grad.size(); ++i) dx[(*argmax)[i]] += o.grad[i];
            add_grad(*xn, dx);
        });
    }
    return Tensor::wrap(out);
}

Tensor avg_pool(const Tensor& input, int k) {
    if (k < 1) shape_fail("avg_pool", "window must be >= 1");
    const Shape4 xs = input.shape();
    const int64_t N = xs.n, C = xs.c, H = xs.h, W = xs.w;
    const int64_t OH = (H + k - 1) / k, OW = (W + k - 1) / k;
    auto out = new_node({N, C, OH, OW}, "avg_pool");
    {
        const float* X = input.data().data();
        float* O = out->data.data();
        for (int64_t n = 0; n < N; ++n) {
            for (int64_t c = 0; c < C; ++c) {
                const int64_t base = (n * C + c) * H;
                for (int64_t oy = 0; oy < OH; ++oy) {
                    const int64_t y0 = oy * k, y1 = std::min<int64_t>(y0 + k, H);
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        const int64_t x0 = ox * k, x1 = std::min<int64_t>(x0 + k, W);
                        double acc = 0.0;
                        for (int64_t y = y0; y < y1; ++y) {
                            for (int64_t x = x0; x < x1; ++x) acc += X[(base + y) * W + x];
                        }
                        O[((n * C + c) * OH + oy) * OW + ox] =
                            static_cast<float>(acc / static_cast<double>((y1 - y0) * (x1 - x0)));
                    }
                }
            }
        }
    }
    if (track({&input})) {
        NodePtr xn = input.node();
        attach(out, {&input}, [xn, k, N, C, H, W, OH, OW](TensorNode& o) {
            if (!xn->requires_grad) return;
            const float* G = o.grad.data();
            std::vector<double> dx(xn->data.size(), 0.0);
            for (int64_t n = 0; n < N; ++n) {
                for (int64_t c = 0; c < C; ++c) {
                    const int64_t base = (n * C + c) * H;
                    for (int64_t oy = 0; oy < OH; ++oy) {
                        const int64_t y0 = oy * k, y1 = std::min<int64_t>(y0 + k, H);
                        for (int64_t ox = 0; ox < OW; ++ox) {
                            const int64_t x0 = ox * k, x1 = std::min<int64_t>(x0 + k, W);
                            const double g = G[((n * C + c) * OH + oy) * OW + ox] /
                                             static_cast<double>((y1 - y0) * (x1 - x0));
                            for (int64_t y = y0; y < y1; ++y) {
                                for (int64_t x = x0; x < x1; ++x) dx[(base + y) * W + x] += g;
                            }
                        }
                    }
                }
            }
            add_grad(*xn, dx);
        });
    }
    return Tensor::wrap(out);
}

Tensor global_avg_pool(const Tensor& input) {
    const Shape4 xs = input.shape();
    if (xs.h * xs.w < 1) shape_fail("global_avg_pool", "empty spatial extent " + xs.str());
    const int64_t N = xs.n, C = xs.c, HW = xs.h * xs.w;
    auto out = new_node({N, C, 1, 1}, "global_avg_pool");
    {
        const float* X = input.data().data();
        for (int64_t nc = 0; nc < N * C; ++nc) {
            double acc = 0.0;
            for (int64_t i = 0; i < HW; ++i) acc += X[nc * HW + i];
            out->data[nc] = static_cast<float>(acc / static_cast<double>(HW));
        }
    }
    if (track({&input})) {
        NodePtr xn = input.node();
        attach(out, {&input}, [xn, N, C, HW](TensorNode& o) {
            if (!xn->requires_grad) return;
            std::vector<double> dx(xn->data.size(), 0.0);
            for (int64_t nc = 0; nc < N * C; ++nc) {
                const double g = static_cast<double>(o.grad[nc]) / static_cast<double>(HW);
                for (int64_t i = 0; i < HW; ++i) dx[nc * HW + i] += g;
            }
            add_grad(*xn, dx);
        });
    }
    return Tensor::wrap(out);
}

Tensor activation(const Tensor& input, Activation kind) {
    auto out = new_node(input.shape(), kind == Activation::relu ? "relu" : "sigmoid");
    const float* X = input.data().data();
    if (kind == Activation::relu) {
        for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = X[i] > 0.0f ? X[i] : 0.0f;
    } else {
        for (size_t i = 0; i < out->data.size(); ++i) {
            out->data[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(X[i]))));
        }
    }
    if (track({&input})) {
        // Read the saved outputs through the node argument; capturing the
        // output pointer here would make the node own itself and leak the
        // whole upstream graph with it.
        NodePtr xn = input.node();
        attach(out, {&input}, [xn, kind](TensorNode& o) {
            if (!xn->requires_grad) return;
            std::vector<double> dx(xn->data.size(), 0.0);
            if (kind == Activation::relu) {
                // derivative at exactly 0 is taken as 0
                for (size_t i = 0; i < dx.size(); ++i) {
                    if (xn->data[i] > 0.0f) dx[i] = o.grad[i];
                }
            } else {
                for (size_t i = 0; i < dx.size(); ++i) {
                    const double y = o.data[i];
                    dx[i] = static_cast<double>(o.grad[i]) * y * (1.0 - y);
                }
            }
            add_grad(*xn, dx);
        });
    }
    return Tensor::wrap(out);
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    const Shape4 xs = input.shape();
    const Shape4 ws = weight.shape();
    if (xs.h != 1 || xs.w != 1) shape_fail("linear", "input must be (n, c, 1, 1), got " + xs.str());
    if (ws.h != 1 || ws.w != 1 || ws.c != xs.c) {
        shape_fail("linear", "weight " + ws.str() + " does not match input " + xs.str());
    }
    if (bias.shape() != Shape4{1, ws.n, 1, 1}) {
        shape_fail("linear", "bias shape " + bias.shape().str() + " does not match " +
                                 std::to_string(ws.n) + " outputs");
    }
    const int64_t N = xs.n, C = xs.c, CO = ws.n;
    auto out = new_node({N, CO, 1, 1}, "linear");
    {
        const float* X = input.data().data();
        const float* Wd = weight.data().data();
        const float* B = bias.data().data();
        for (int64_t n = 0; n < N; ++n) {
            for (int64_t co = 0; co < CO; ++co) {
                double acc = B[co];
                for (int64_t c = 0; c < C; ++c) {
                    acc += static_cast<double>(Wd[co * C + c]) * X[n * C + c];
                }
                out->data[n * CO + co] = static_cast<float>(acc);
            }
        }
    }
    if (track({&input, &weight, &bias})) {
        NodePtr xn = input.node(), wn = weight.node(), bn = bias.node();
        attach(out, {&input, &weight, &bias}, [xn, wn, bn, N, C, CO](TensorNode& o) {
            const float* G = o.grad.data();
            if (xn->requires_grad) {
                std::vector<double> dx(xn->data.size(), 0.0);
                for (int64_t n = 0; n < N; ++n) {
                    for (int64_t c = 0; c < C; ++c) {
                        double acc = 0.0;
                        for (int64_t co = 0; co < CO; ++co) {
                            acc += static_cast<double>(G[n * CO + co]) * wn->data[co * C + c];
                        }
                        dx[n * C + c] += acc;
                    }
                }
                add_grad(*xn, dx);
            }
            if (wn->requires_grad) {
                std::vector<double> dw(wn->data.size(), 0.0);
                for (int64_t co = 0; co < CO; ++co) {
                    for (int64_t c = 0; c < C; ++c) {
                        double acc = 0.0;
                        for (int64_t n = 0; n < N; ++n) {
                            acc += static_cast<double>(G[n * CO + co]) * xn->data[n * C + c];
                        }
                        dw[co * C + c] += acc;
                    }
                }
                add_grad(*wn, dw);
            }
            if (bn->requires_grad) {
                std::vector<double> db(bn->data.size(), 0.0);
                for (int64_t co = 0; co < CO; ++co) {
                    for (int64_t n = 0; n < N; ++n) db[co] += G[n * CO + co];
                }
                add_grad(*bn, db);
            }
        });
    }
    return Tensor::wrap(out);
}

namespace {
enum class BroadcastKind { same, per_channel, per_position };
}

Tensor broadcast_mul(const Tensor& a, const Tensor& b) {
    const Shape4 as = a.shape();
    const Shape4 bs = b.shape();
    BroadcastKind kind;
    if (bs == as) {
        kind = BroadcastKind::same;
    } else if (bs.n == as.n && bs.c == as.c && bs.h == 1 && bs.w == 1) {
        kind = BroadcastKind::per_channel;
    } else if (bs.n == as.n && bs.c == 1 && bs.h == as.h && bs.w == as.w) {
        kind = BroadcastKind::per_position;
    } else {
        shape_fail("broadcast_mul", "incompatible dims " + as.str() + " and " + bs.str());
    }
    const int64_t N = as.n, C = as.c, H = as.h, W = as.w, HW = H * W;
    auto out = new_node(as, "broadcast_mul");
    auto b_index = [kind, C, HW](int64_t n, int64_t c, int64_t hw) -> int64_t {
        switch (kind) {
            case BroadcastKind::same: return (n * C + c) * HW + hw;
            case BroadcastKind::per_channel: return n * C + c;
            default: return n * HW + hw;
        }
    };
    {
        const float* A = a.data().data();
        const float* B = b.data().data();
        for (int64_t n = 0; n < N; ++n) {
            for (int64_t c = 0; c < C; ++c) {
                for (int64_t hw = 0; hw < HW; ++hw) {
                    const int64_t i = (n * C + c) * HW + hw;
                    out->data[i] = static_cast<float>(static_cast<double>(A[i]) *
                                                      B[b_index(n, c, hw)]);
                }
            }
        }
    }
    if (track({&a, &b})) {
        NodePtr an = a.node(), bn = b.node();
        attach(out, {&a, &b}, [an, bn, b_index, N, C, HW](TensorNode& o) {
            const float* G = o.grad.data();
            if (an->requires_grad) {
                std::vector<double> da(an->data.size(), 0.0);
                for (int64_t n = 0; n < N; ++n) {
                    for (int64_t c = 0; c < C; ++c) {
                        for (int64_t hw = 0; hw < HW; ++hw) {
                            const int64_t i = (n * C + c) * HW + hw;
                            da[i] += static_cast<double>(G[i]) * bn->data[b_index(n, c, hw)];
                        }
                    }
                }
                add_grad(*an, da);
            }
            if (bn->requires_grad) {
                std::vector<double> db(bn->data.size(), 0.0);
                for (int64_t n = 0; n < N; ++n) {
                    for (int64_t c = 0; c < C; ++c) {
                        for (int64_t hw = 0; hw < HW; ++hw) {
                            const int64_t i = (n * C + c) * HW + hw;
                            db[b_index(n, c, hw)] += static_cast<double>(G[i]) * an->data[i];
                        }
                    }
                }
                add_grad(*bn, db);
            }
        });
    }
    return Tensor::wrap(out);
}

Tensor channel_mean(const Tensor& input) {
    const Shape4 xs = input.shape();
    const int64_t N = xs.n, C = xs.c, HW = xs.h * xs.w;
    auto out = new_node({N, 1, xs.h, xs.w}, "channel_mean");
    {
        const float* X = input.data().data();
        for (int64_t n = 0; n < N; ++n) {
            for (int64_t hw = 0; hw < HW; ++hw) {
                double acc = 0.0;
                for (int64_t c = 0; c < C; ++c) acc += X[(n * C + c) * HW + hw];
                out->data[n * HW + hw] = static_cast<float>(acc / static_cast<double>(C));
            }
        }
    }
    if (track({&input})) {
        NodePtr xn = input.node();
        attach(out, {&input}, [xn, N, C, HW](TensorNode& o) {
            if (!xn->requires_grad) return;
            std::vector<double> dx(xn->data.size(), 0.0);
            for (int64_t n = 0; n < N; ++n) {
                for (int64_t hw = 0; hw < HW; ++hw) {
                    const double g = static_cast<double>(o.grad[n * HW + hw]) / static_cast<double>(C);
                    for (int64_t c = 0; c < C; ++c) dx[(n * C + c) * HW + hw] += g;
                }
            }
            add_grad(*xn, dx);
        });
    }
    return Tensor::wrap(out);
}

Tensor channel_slice_concat(const std::vector<Tensor>& inputs,
                            const std::vector<int64_t>& channel_indices) {
    if (inputs.empty()) shape_fail("channel_slice_concat", "no inputs");
    if (inputs.size() != channel_indices.size()) {
        shape_fail("channel_slice_concat", "inputs and channel_indices differ in length");
    }
    const Shape4 first = inputs[0].shape();
    for (size_t k = 0; k < inputs.size(); ++k) {
        const Shape4 s = inputs[k].shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w) {
            shape_fail("channel_slice_concat",
                       "spatial mismatch: " + s.str() + " vs " + first.str());
        }
        if (channel_indices[k] < 0 || channel_indices[k] >= s.c) {
            shape_fail("channel_slice_concat", "channel index " +
                                                   std::to_string(channel_indices[k]) +
                                                   " out of range for " + s.str());
        }
    }
    const int64_t N = first.n, HW = first.h * first.w;
    const int64_t K = static_cast<int64_t>(inputs.size());
    auto out = new_node({N, K, first.h, first.w}, "channel_slice_concat");
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t k = 0; k < K; ++k) {
            const Shape4 s = inputs[k].shape();
            const float* src = inputs[k].data().data() + (n * s.c + channel_indices[k]) * HW;
            std::memcpy(out->data.data() + (n * K + k) * HW, src, sizeof(float) * HW);
        }
    }
    bool any = false;
    if (grad_enabled()) {
        for (const Tensor& t : inputs) any = any || t.requires_grad();
    }
    if (any) {
        std::vector<NodePtr> parents;
        parents.reserve(inputs.size());
        for (const Tensor& t : inputs) parents.push_back(t.node());
        auto indices = channel_indices;
        out->requires_grad = true;
        out->parents = parents;
        out->backward_fn = [parents, indices, N, K, HW](TensorNode& o) {
            for (int64_t k = 0; k < K; ++k) {
                const auto& p = parents[k];
                if (!p->requires_grad) continue;
                p->ensure_grad();
                const int64_t C = p->shape.c;
                for (int64_t n = 0; n < N; ++n) {
                    float* dst = p->grad.data() + (n * C + indices[k]) * HW;
                    const float* g = o.grad.data() + (n * K + k) * HW;
                    for (int64_t i = 0; i < HW; ++i) {
                        dst[i] = static_cast<float>(static_cast<double>(dst[i]) + g[i]);
                    }
                }
            }
        };
    }
    return Tensor::wrap(out);
}

Tensor concat_channels(const std::vector<Tensor>& inputs) {
    std::vector<Tensor> expanded;
    std::vector<int64_t> indices;
    for (const Tensor& t : inputs) {
        for (int64_t c = 0; c < t.shape().c; ++c) {
            expanded.push_back(t);
            indices.push_back(c);
        }
    }
    return channel_slice_concat(expanded, indices);
}

Tensor bilinear_upsample(const Tensor& input, int64_t out_h, int64_t out_w) {
    if (out_h < 1 || out_w < 1) shape_fail("bilinear_upsample", "output dims must be >= 1");
    const Shape4 xs = input.shape();
    const int64_t N = xs.n, C = xs.c, H = xs.h, W = xs.w;

    struct Axis {
        std::vector<int64_t> i0, i1;
        std::vector<double> frac;
    };
    auto build = [](int64_t in, int64_t out) {
        Axis ax;
        ax.i0.resize(out);
        ax.i1.resize(out);
        ax.frac.resize(out);
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (int64_t o = 0; o < out; ++o) {
            double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
            if (src < 0.0) src = 0.0;
            if (src > static_cast<double>(in - 1)) src = static_cast<double>(in - 1);
            const int64_t lo = static_cast<int64_t>(std::floor(src));
            ax.i0[o] = lo;
            ax.i1[o] = std::min<int64_t>(lo + 1, in - 1);
            ax.frac[o] = src - static_cast<double>(lo);
        }
        return ax;
    };
    auto ay = std::make_shared<Axis>(build(H, out_h));
    auto ax = std::make_shared<Axis>(build(W, out_w));

    auto out = new_node({N, C, out_h, out_w}, "bilinear_upsample");
    {
        const float* X = input.data().data();
        for (int64_t nc = 0; nc < N * C; ++nc) {
            const float* plane = X + nc * H * W;
            float* oplane = out->data.data() + nc * out_h * out_w;
            for (int64_t oy = 0; oy < out_h; ++oy) {
                const int64_t y0 = ay->i0[oy], y1 = ay->i1[oy];
                const double fy = ay->frac[oy];
                for (int64_t ox = 0; ox < out_w; ++ox) {
                    const int64_t x0 = ax->i0[ox], x1 = ax->i1[ox];
                    const double fx = ax->frac[ox];
                    const double top = (1.0 - fx) * plane[y0 * W + x0] + fx * plane[y0 * W + x1];
                    const double bot = (1.0 - fx) * plane[y1 * W + x0] + fx * plane[y1 * W + x1];
                    oplane[oy * out_w + ox] = static_cast<float>((1.0 - fy) * top + fy * bot);
                }
            }
        }
    }
    if (track({&input})) {
        NodePtr xn = input.node();
        attach(out, {&input}, [xn, ay, ax, N, C, H, W, out_h, out_w](TensorNode& o) {
            if (!xn->requires_grad) return;
            std::vector<double> dx(xn->data.size(), 0.0);
            for (int64_t nc = 0; nc < N * C; ++nc) {
                double* dplane = dx.data() + nc * H * W;
                const float* gplane = o.grad.data() + nc * out_h * out_w;
                for (int64_t oy = 0; oy < out_h; ++oy) {
                    const int64_t y0 = ay->i0[oy], y1 = ay->i1[oy];
                    const double fy = ay->frac[oy];
                    for (int64_t ox = 0; ox < out_w; ++ox) {
                        const int64_t x0 = ax->i0[ox], x1 = ax->i1[ox];
                        const double fx = ax->frac[ox];
                        const double g = gplane[oy * out_w + ox];
                        dplane[y0 * W + x0] += g * (1.0 - fy) * (1.0 - fx);
                        dplane[y0 * W + x1] += g * (1.0 - fy) * fx;
                        dplane[y1 * W + x0] += g * fy * (1.0 - fx);
                        dplane[y1 * W + x1] += g * fy * fx;
                    }
                }
            }
            add_grad(*xn, dx);
        });
    }
    return Tensor::wrap(out);
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!(a.shape() == b.shape())) {
        shape_fail("add", "shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
    auto out = new_node(a.shape(), "add");
    const float* A = a.data().data();
    const float* B = b.data().data();
    for (size_t i = 0; i < out->data.size(); ++i) {
        out->data[i] = static_cast<float>(static_cast<double>(A[i]) + B[i]);
    }
    if (track({&a, &b})) {
        NodePtr an = a.node(), bn = b.node();
        attach(out, {&a, &b}, [an, bn](TensorNode& o) {
            for (const NodePtr& p : {an, bn}) {
                if (!p->requires_grad) continue;
                p->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) {
                    p->grad[i] = static_cast<float>(static_cast<double>(p->grad[i]) + o.grad[i]);
                }
            }
        });
    }
    return Tensor::wrap(out);
}

Tensor scale(const Tensor& a, float factor) {
    auto out = new_node(a.shape(), "scale");
    const float* A = a.data().data();
    for (size_t i = 0; i < out->data.size(); ++i) {
        out->data[i] = static_cast<float>(static_cast<double>(A[i]) * factor);
    }
    if (track({&a})) {
        NodePtr an = a.node();
        attach(out, {&a}, [an, factor](TensorNode& o) {
            if (!an->requires_grad) return;
            an->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) {
                an->grad[i] = static_cast<float>(static_cast<double>(an->grad[i]) +
                                                 static_cast<double>(o.grad[i]) * factor);
            }
        });
    }
    return Tensor::wrap(out);
}

Tensor softplus(const Tensor& input) {
    auto out = new_node(input.shape(), "softplus");
    const float* X = input.data().data();
    for (size_t i = 0; i < out->data.size(); ++i) {
        const double x = X[i];
        const double y = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        out->data[i] = static_cast<float>(y);
    }
    if (track({&input})) {
        NodePtr xn = input.node();
        attach(out, {&input}, [xn](TensorNode& o) {
            if (!xn->requires_grad) return;
            std::vector<double> dx(xn->data.size(), 0.0);
            for (size_t i = 0; i < dx.size(); ++i) {
                const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(xn->data[i])));
                dx[i] = static_cast<double>(o.grad[i]) * s;
            }
            add_grad(*xn, dx);
        });
    }
    return Tensor::wrap(out);
}

Tensor sum_squared_diff(const Tensor& pred, const Tensor& target) {
    if (!(pred.shape() == target.shape())) {
        shape_fail("sum_squared_diff",
                   "shape mismatch " + pred.shape().str() + " vs " + target.shape().str());
    }
    auto out = new_node({1, 1, 1, 1}, "sum_squared_diff");
    {
        const float* P = pred.data().data();
        const float* T = target.data().data();
        double acc = 0.0;
        for (int64_t i = 0; i < pred.numel(); ++i) {
            const double d = static_cast<double>(P[i]) - T[i];
            acc += d * d;
        }
        out->data[0] = static_cast<float>(acc);
    }
    if (track({&pred, &target})) {
        NodePtr pn = pred.node(), tn = target.node();
        attach(out, {&pred, &target}, [pn, tn](TensorNode& o) {
            const double g = o.grad[0];
            if (pn->requires_grad) {
                std::vector<double> dp(pn->data.size(), 0.0);
                for (size_t i = 0; i < dp.size(); ++i) {
                    dp[i] = 2.0 * g * (static_cast<double>(pn->data[i]) - tn->data[i]);
                }
                add_grad(*pn, dp);
            }
            if (tn->requires_grad) {
                std::vector<double> dt(tn->data.size(), 0.0);
                for (size_t i = 0; i < dt.size(); ++i) {
                    dt[i] = -2.0 * g * (static_cast<double>(pn->data[i]) - tn->data[i]);
                }
                add_grad(*tn, dt);
            }
        });
    }
    return Tensor::wrap(out);
}

}  // namespace hsrnet
