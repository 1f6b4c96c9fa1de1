#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hsrnet/density.hpp"
#include "hsrnet/io.hpp"
#include "hsrnet/rng.hpp"
#include "hsrnet/tensor.hpp"

namespace hsrnet {

struct Sample {
    std::string id;
    Tensor image;  // (1,3,H,W), values in [0,1]
    PointAnnotations annotations;
    std::optional<RoiMask> roi;
};

enum class DensityProfile { sparse, dense, gradient };
std::string to_string(DensityProfile p);
DensityProfile profile_from_string(const std::string& s);

// 64×64 scenes: low-level background noise plus a bright 3×3 blob per
// annotated point. sparse: 3–10 points, dense: 30–60, gradient: 15–45
// concentrated toward the bottom. Deterministic per (seed, index).
std::vector<Sample> synth_dataset(int n_images, DensityProfile profile, uint64_t seed);

// 4 quarter crops + 10 random crops of the same size + scale variants
// {0.8, 1.0, 1.2}; crop dims are halves rounded down to multiples of 16,
// scaled dims likewise. Annotations are filtered to the crop window
// (half-open bounds) and translated/scaled.
std::vector<Sample> augment(const Sample& s, Rng& rng);

// Grayscale images are replicated to 3 channels.
Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor& t);

// A dataset directory holds <id>.ppm or <id>.pgm, a sibling <id>.csv, and an
// optional <id>.roi.dmap, loaded in filename order.
std::vector<Sample> load_dataset(const std::string& dir);
void save_dataset(const std::string& dir, const std::vector<Sample>& samples);

// FNV-1a over ids, dims, pixels, and points; identifies the exact dataset in
// reports.
uint64_t dataset_hash(const std::vector<Sample>& samples);

}  // namespace hsrnet
