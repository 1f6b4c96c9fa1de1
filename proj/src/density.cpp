#include "hsrnet/density.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "hsrnet/ops.hpp"

namespace hsrnet {

void PointAnnotations::validate() const {
    if (image_w < 1 || image_h < 1) {
        throw std::invalid_argument("annotations: image size must be positive, got " +
                                    std::to_string(image_w) + "x" + std::to_string(image_h));
    }
    for (size_t i = 0; i < points.size(); ++i) {
        const Point& p = points[i];
        if (!(p.x >= 0.0 && p.x < static_cast<double>(image_w)) ||
            !(p.y >= 0.0 && p.y < static_cast<double>(image_h))) {
            throw std::invalid_argument("annotations: point " + std::to_string(i) + " (" +
                                        std::to_string(p.x) + ", " + std::to_string(p.y) +
                                        ") outside image " + std::to_string(image_w) + "x" +
                                        std::to_string(image_h));
        }
    }
}

DensityMap DensityMap::zeros(int64_t h, int64_t w) {
    DensityMap d;
    d.h = h;
    d.w = w;
    d.grid.assign(static_cast<size_t>(h * w), 0.0f);
    return d;
}

double DensityMap::count() const {
    double acc = 0.0;
    for (float v : grid) acc += v;
    return acc;
}

std::vector<std::optional<double>> knn_mean_distance(const std::vector<Point>& points, int k) {
    if (k < 1) throw std::invalid_argument("knn_mean_distance: k must be >= 1");
    const size_t n = points.size();
    std::vector<std::optional<double>> out(n);
    if (n < 2) return out;
    std::vector<double> dists;
    dists.reserve(n - 1);
    for (size_t i = 0; i < n; ++i) {
        if (n - 1 < static_cast<size_t>(k)) continue;  // leaves nullopt
        dists.clear();
        for (size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dx = points[i].x - points[j].x;
            const double dy = points[i].y - points[j].y;
            dists.push_back(std::sqrt(dx * dx + dy * dy));
        }
        std::nth_element(dists.begin(), dists.begin() + (k - 1), dists.end());
        // nth_element leaves the k smallest in the front block
        double acc = 0.0;
        for (int j = 0; j < k; ++j) acc += dists[static_cast<size_t>(j)];
        // the front block is unordered, but the partition guarantees it holds
        // exactly the k smallest values, which is all the mean needs
        out[i] = acc / static_cast<double>(k);
    }
    return out;
}

namespace {

DensityMap stamp_gaussians(const PointAnnotations& ann, const std::vector<double>& sigmas) {
    const int64_t H = ann.image_h, W = ann.image_w;
    std::vector<double> acc(static_cast<size_t>(H * W), 0.0);
    std::vector<double> weights;
    for (size_t i = 0; i < ann.points.size(); ++i) {
        const double sigma = sigmas[i];
        if (!(sigma > 0.0)) {
            throw std::invalid_argument("make_density: non-positive sigma " +
                                        std::to_string(sigma) + " for point " + std::to_string(i));
        }
        const double px = ann.points[i].x, py = ann.points[i].y;
        const int64_t radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
        const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(px)) - radius);
        const int64_t x1 = std::min<int64_t>(W - 1, static_cast<int64_t>(std::floor(px)) + radius);
        const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(py)) - radius);
        const int64_t y1 = std::min<int64_t>(H - 1, static_cast<int64_t>(std::floor(py)) + radius);
        const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
        weights.clear();
        double mass = 0.0;
        for (int64_t y = y0; y <= y1; ++y) {
            for (int64_t x = x0; x <= x1; ++x) {
                const double dx = static_cast<double>(x) - px;
                const double dy = static_cast<double>(y) - py;
                const double wgt = std::exp(-(dx * dx + dy * dy) * inv2s2);
                weights.push_back(wgt);
                mass += wgt;
            }
        }
        if (mass <= 0.0) continue;  // cannot happen for in-bounds points
        size_t wi = 0;
        for (int64_t y = y0; y <= y1; ++y) {
            for (int64_t x = x0; x <= x1; ++x) {
                acc[static_cast<size_t>(y * W + x)] += weights[wi++] / mass;
            }
        }
    }
    DensityMap d = DensityMap::zeros(H, W);
    for (size_t i = 0; i < acc.size(); ++i) d.grid[i] = static_cast<float>(acc[i]);
    return d;
}

}  // namespace

DensityMap make_density(const PointAnnotations& ann, const AdaptiveSigma& mode) {
    ann.validate();
    const auto mean_dists = knn_mean_distance(ann.points, mode.k);
    std::vector<double> sigmas(ann.points.size());
    for (size_t i = 0; i < sigmas.size(); ++i) {
        sigmas[i] = mean_dists[i] ? mode.beta * *mean_dists[i] : mode.fallback_sigma;
    }
    return stamp_gaussians(ann, sigmas);
}

DensityMap make_density(const PointAnnotations& ann, const FixedSigma& mode) {
    ann.validate();
    std::vector<double> sigmas(ann.points.size(), mode.sigma);
    return stamp_gaussians(ann, sigmas);
}

GtPyramid make_pyramid(const DensityMap& d) {
    if (d.h < 16 || d.w < 16) {
        throw std::invalid_argument("make_pyramid: map must be at least 16x16, got " +
                                    std::to_string(d.h) + "x" + std::to_string(d.w));
    }
    GtPyramid pyr;
    pyr.maps[0] = d;
    NoGradGuard ng;
    const Tensor src = Tensor::from_data({1, 1, d.h, d.w}, d.grid);
    for (size_t level = 1; level < kPyramidScales.size(); ++level) {
        const Tensor pooled = avg_pool(src, kPyramidScales[level]);
        const Tensor up = bilinear_upsample(pooled, d.h, d.w);
        DensityMap m;
        m.h = d.h;
        m.w = d.w;
        m.grid = up.data();
        pyr.maps[level] = std::move(m);
    }
    return pyr;
}

DensityMap apply_roi(const DensityMap& d, const RoiMask& m) {
    if (d.h != m.h || d.w != m.w) {
        throw std::invalid_argument("apply_roi: map " + std::to_string(d.h) + "x" +
                                    std::to_string(d.w) + " vs mask " + std::to_string(m.h) + "x" +
                                    std::to_string(m.w));
    }
    DensityMap out = d;
    for (size_t i = 0; i < out.grid.size(); ++i) out.grid[i] *= m.grid[i];
    return out;
}

}  // namespace hsrnet
