#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hsrnet/density.hpp"

namespace hsrnet {

// Annotations: one "x,y" line per point, no header. Written with enough
// digits to round-trip doubles exactly.
PointAnnotations read_points_csv(const std::string& path, int64_t image_w, int64_t image_h);
void write_points_csv(const std::string& path, const PointAnnotations& ann);

// DMAP container: "DMAP", u32 version=1, u32 H, u32 W, f32 row-major,
// everything little-endian. Masks reuse the container with {0,1} payloads.
DensityMap read_dmap(const std::string& path);
void write_dmap(const std::string& path, const DensityMap& d);
RoiMask read_roi(const std::string& path);
void write_roi(const std::string& path, const RoiMask& m);

// 8-bit binary PGM, linearly scaled so the map maximum lands on 255
// (non-positive maximum → all black).
void write_pgm_heatmap(const std::string& path, const DensityMap& d);

// Planar image with values in [0,1]; channels is 1 (grayscale) or 3.
struct Image {
    int64_t channels = 0;
    int64_t h = 0;
    int64_t w = 0;
    std::vector<float> data;  // CHW

    float at(int64_t c, int64_t y, int64_t x) const {
        return data[static_cast<size_t>((c * h + y) * w + x)];
    }
    float& at(int64_t c, int64_t y, int64_t x) {
        return data[static_cast<size_t>((c * h + y) * w + x)];
    }
};

// Binary PGM (P5) or PPM (P6), 8-bit; pixel values divided by maxval.
Image read_image(const std::string& path);
void write_image_ppm(const std::string& path, const Image& img);

}  // namespace hsrnet
