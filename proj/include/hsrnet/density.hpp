#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "hsrnet/tensor.hpp"

namespace hsrnet {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

struct PointAnnotations {
    std::vector<Point> points;
    int64_t image_w = 0;
    int64_t image_h = 0;

    // Throws std::invalid_argument when a point falls outside [0,w)×[0,h).
    void validate() const;
};

struct DensityMap {
    int64_t h = 0;
    int64_t w = 0;
    std::vector<float> grid;  // row-major

    static DensityMap zeros(int64_t h, int64_t w);
    double count() const;  // Σ grid, accumulated in double
    float at(int64_t y, int64_t x) const { return grid[static_cast<size_t>(y * w + x)]; }
    float& at(int64_t y, int64_t x) { return grid[static_cast<size_t>(y * w + x)]; }
};

// Binary mask sharing the DensityMap container; entries are exactly 0 or 1.
struct RoiMask {
    int64_t h = 0;
    int64_t w = 0;
    std::vector<float> grid;
};

inline constexpr std::array<int, 5> kPyramidScales = {1, 2, 4, 8, 16};

// Average-pooled (windows 1,2,4,8,16) and bilinearly re-upsampled copies of a
// source map, all at source resolution. maps[0] is a bit-exact copy.
struct GtPyramid {
    std::array<DensityMap, 5> maps;
};

// Mean Euclidean distance from each point to its k nearest other points;
// nullopt where fewer than k other points exist.
std::vector<std::optional<double>> knn_mean_distance(const std::vector<Point>& points, int k);

struct AdaptiveSigma {
    int k = 3;
    double beta = 0.3;
    double fallback_sigma = 4.0;  // used where knn is undefined
};
struct FixedSigma {
    double sigma = 0.0;
};

// Stamp one truncated Gaussian per annotation (radius ⌈3σ⌉, renormalized over
// its in-image support) so the map sums to the annotation count.
DensityMap make_density(const PointAnnotations& ann, const AdaptiveSigma& mode = {});
DensityMap make_density(const PointAnnotations& ann, const FixedSigma& mode);

GtPyramid make_pyramid(const DensityMap& d);

DensityMap apply_roi(const DensityMap& d, const RoiMask& m);

}  // namespace hsrnet
