#include "hsrnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "hsrnet/ops.hpp"

namespace fs = std::filesystem;

namespace hsrnet {

namespace {

int64_t floor16(double v) { return (static_cast<int64_t>(v) / 16) * 16; }

Sample crop_sample(const Sample& s, const std::string& suffix, int64_t x0, int64_t y0, int64_t cw,
                   int64_t ch) {
    const Shape4 in = s.image.shape();
    Sample out;
    out.id = s.id + suffix;
    std::vector<float> pixels(static_cast<size_t>(3 * ch * cw));
    for (int64_t c = 0; c < 3; ++c) {
        for (int64_t y = 0; y < ch; ++y) {
            for (int64_t x = 0; x < cw; ++x) {
                pixels[static_cast<size_t>((c * ch + y) * cw + x)] =
                    s.image.at(0, c, y0 + y, x0 + x);
            }
        }
    }
    out.image = Tensor::from_data({1, 3, ch, cw}, std::move(pixels));
    out.annotations.image_w = cw;
    out.annotations.image_h = ch;
    for (const Point& p : s.annotations.points) {
        if (p.x >= static_cast<double>(x0) && p.x < static_cast<double>(x0 + cw) &&
            p.y >= static_cast<double>(y0) && p.y < static_cast<double>(y0 + ch)) {
            out.annotations.points.push_back(
                {p.x - static_cast<double>(x0), p.y - static_cast<double>(y0)});
        }
    }
    if (s.roi) {
        RoiMask m;
        m.h = ch;
        m.w = cw;
        m.grid.resize(static_cast<size_t>(ch * cw));
        for (int64_t y = 0; y < ch; ++y) {
            for (int64_t x = 0; x < cw; ++x) {
                m.grid[static_cast<size_t>(y * cw + x)] =
                    s.roi->grid[static_cast<size_t>((y0 + y) * in.w + (x0 + x))];
            }
        }
        out.roi = std::move(m);
    }
    return out;
}

Sample scale_sample(const Sample& s, const std::string& suffix, double factor) {
    const Shape4 in = s.image.shape();
    const int64_t nh = std::max<int64_t>(16, floor16(static_cast<double>(in.h) * factor));
    const int64_t nw = std::max<int64_t>(16, floor16(static_cast<double>(in.w) * factor));
    Sample out;
    out.id = s.id + suffix;
    {
        NoGradGuard ng;
        out.image = bilinear_upsample(s.image, nh, nw);
    }
    const double fx = static_cast<double>(nw) / static_cast<double>(in.w);
    const double fy = static_cast<double>(nh) / static_cast<double>(in.h);
    out.annotations.image_w = nw;
    out.annotations.image_h = nh;
    for (const Point& p : s.annotations.points) {
        out.annotations.points.push_back({p.x * fx, p.y * fy});
    }
    if (s.roi) {
        // nearest-neighbor keeps the mask binary
        RoiMask m;
        m.h = nh;
        m.w = nw;
        m.grid.resize(static_cast<size_t>(nh * nw));
        for (int64_t y = 0; y < nh; ++y) {
            const int64_t sy = std::min<int64_t>(in.h - 1, static_cast<int64_t>(
                                                               (static_cast<double>(y) + 0.5) / fy));
            for (int64_t x = 0; x < nw; ++x) {
                const int64_t sx = std::min<int64_t>(
                    in.w - 1, static_cast<int64_t>((static_cast<double>(x) + 0.5) / fx));
                m.grid[static_cast<size_t>(y * nw + x)] =
                    s.roi->grid[static_cast<size_t>(sy * in.w + sx)];
            }
        }
        out.roi = std::move(m);
    }
    return out;
}

}  // namespace

std::string to_string(DensityProfile p) {
    switch (p) {
        case DensityProfile::sparse: return "sparse";
        case DensityProfile::dense: return "dense";
        case DensityProfile::gradient: return "gradient";
    }
    throw std::invalid_argument("to_string: bad DensityProfile");
}

DensityProfile profile_from_string(const std::string& s) {
    if (s == "sparse") return DensityProfile::sparse;
    if (s == "dense") return DensityProfile::dense;
    if (s == "gradient") return DensityProfile::gradient;
    throw std::invalid_argument("unknown density profile '" + s + "'");
}

std::vector<Sample> synth_dataset(int n_images, DensityProfile profile, uint64_t seed) {
    if (n_images < 0) throw std::invalid_argument("synth_dataset: negative image count");
    constexpr int64_t kSize = 64;
    std::vector<Sample> out;
    out.reserve(static_cast<size_t>(n_images));
    for (int i = 0; i < n_images; ++i) {
        Rng rng(mix_seed(seed, static_cast<uint64_t>(i)));
        Sample s;
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "synth_%04d", i);
        s.id = idbuf;
        s.annotations.image_w = kSize;
        s.annotations.image_h = kSize;

        int64_t n_points = 0;
        switch (profile) {
            case DensityProfile::sparse: n_points = rng.uniform_int(3, 10); break;
            case DensityProfile::dense: n_points = rng.uniform_int(30, 60); break;
            case DensityProfile::gradient: n_points = rng.uniform_int(15, 45); break;
        }
        for (int64_t p = 0; p < n_points; ++p) {
            Point pt;
            pt.x = rng.uniform(0.0, static_cast<double>(kSize));
            if (profile == DensityProfile::gradient) {
                // density grows linearly toward the bottom edge
                pt.y = static_cast<double>(kSize) * std::sqrt(rng.uniform());
                pt.y = std::min(pt.y, std::nextafter(static_cast<double>(kSize), 0.0));
            } else {
                pt.y = rng.uniform(0.0, static_cast<double>(kSize));
            }
            s.annotations.points.push_back(pt);
        }

        std::vector<float> pixels(static_cast<size_t>(3 * kSize * kSize));
        for (auto& v : pixels) v = static_cast<float>(0.05 + 0.10 * rng.uniform());
        auto bump = [&](int64_t c, int64_t y, int64_t x, float amount) {
            if (y < 0 || y >= kSize || x < 0 || x >= kSize) return;
            float& v = pixels[static_cast<size_t>((c * kSize + y) * kSize + x)];
            v = std::min(1.0f, v + amount);
        };
        for (const Point& p : s.annotations.points) {
            const int64_t cx = static_cast<int64_t>(std::llround(p.x));
            const int64_t cy = static_cast<int64_t>(std::llround(p.y));
            for (int64_t c = 0; c < 3; ++c) {
                for (int64_t dy = -1; dy <= 1; ++dy) {
                    for (int64_t dx = -1; dx <= 1; ++dx) {
                        const bool center = dx == 0 && dy == 0;
                        const bool edge = dx == 0 || dy == 0;
                        bump(c, cy + dy, cx + dx, center ? 0.7f : (edge ? 0.4f : 0.25f));
                    }
                }
            }
        }
        s.image = Tensor::from_data({1, 3, kSize, kSize}, std::move(pixels));
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Sample> augment(const Sample& s, Rng& rng) {
    const Shape4 in = s.image.shape();
    if (in.h < 32 || in.w < 32) {
        throw std::invalid_argument("augment: image too small (" + in.str() +
                                    "), need at least 32x32");
    }
    const int64_t ch = floor16(static_cast<double>(in.h) / 2.0);
    const int64_t cw = floor16(static_cast<double>(in.w) / 2.0);

    std::vector<Sample> out;
    out.reserve(17);
    const int64_t xr = in.w - cw, yr = in.h - ch;
    out.push_back(crop_sample(s, ".q0", 0, 0, cw, ch));
    out.push_back(crop_sample(s, ".q1", xr, 0, cw, ch));
    out.push_back(crop_sample(s, ".q2", 0, yr, cw, ch));
    out.push_back(crop_sample(s, ".q3", xr, yr, cw, ch));
    for (int i = 0; i < 10; ++i) {
        const int64_t x0 = rng.uniform_int(0, xr);
        const int64_t y0 = rng.uniform_int(0, yr);
        out.push_back(crop_sample(s, ".r" + std::to_string(i), x0, y0, cw, ch));
    }
    out.push_back(scale_sample(s, ".s08", 0.8));
    out.push_back(scale_sample(s, ".s10", 1.0));
    out.push_back(scale_sample(s, ".s12", 1.2));
    return out;
}

Tensor image_to_tensor(const Image& img) {
    const size_t npix = static_cast<size_t>(img.h * img.w);
    std::vector<float> data(3 * npix);
    for (int64_t c = 0; c < 3; ++c) {
        const int64_t src = img.channels == 3 ? c : 0;
        std::copy_n(img.data.begin() + static_cast<int64_t>(npix) * src, npix,
                    data.begin() + static_cast<int64_t>(npix) * c);
    }
    return Tensor::from_data({1, 3, img.h, img.w}, std::move(data));
}

Image tensor_to_image(const Tensor& t) {
    const Shape4 s = t.shape();
    if (s.n != 1 || s.c != 3) {
        throw std::invalid_argument("tensor_to_image: want shape (1,3,h,w), got " + s.str());
    }
    Image img;
    img.channels = 3;
    img.h = s.h;
    img.w = s.w;
    img.data = t.data();
    return img;
}

std::vector<Sample> load_dataset(const std::string& dir) {
    if (!fs::is_directory(dir)) throw io_error(dir + ": not a directory");
    std::vector<fs::path> image_paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string ext = entry.path().extension().string();
        if (ext == ".ppm" || ext == ".pgm") image_paths.push_back(entry.path());
    }
    std::sort(image_paths.begin(), image_paths.end());
    std::vector<Sample> out;
    out.reserve(image_paths.size());
    for (const fs::path& p : image_paths) {
        Sample s;
        s.id = p.stem().string();
        const Image img = read_image(p.string());
        s.image = image_to_tensor(img);
        const fs::path ann = fs::path(p).replace_extension(".csv");
        if (!fs::exists(ann)) throw io_error("missing annotation file " + ann.string());
        s.annotations = read_points_csv(ann.string(), img.w, img.h);
        const fs::path roi = fs::path(dir) / (s.id + ".roi.dmap");
        if (fs::exists(roi)) {
            RoiMask m = read_roi(roi.string());
            if (m.h != img.h || m.w != img.w) {
                throw io_error(roi.string() + ": mask dims do not match image");
            }
            s.roi = std::move(m);
        }
        out.push_back(std::move(s));
    }
    return out;
}

void save_dataset(const std::string& dir, const std::vector<Sample>& samples) {
    fs::create_directories(dir);
    for (const Sample& s : samples) {
        const fs::path base = fs::path(dir) / s.id;
        write_image_ppm(base.string() + ".ppm", tensor_to_image(s.image));
        write_points_csv(base.string() + ".csv", s.annotations);
        if (s.roi) write_roi(base.string() + ".roi.dmap", *s.roi);
    }
}

uint64_t dataset_hash(const std::vector<Sample>& samples) {
    uint64_t h = 1469598103934665603ull;  // FNV-1a 64
    auto mix_bytes = [&h](const void* ptr, size_t n) {
        const unsigned char* b = static_cast<const unsigned char*>(ptr);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const Sample& s : samples) {
        mix_bytes(s.id.data(), s.id.size());
        const Shape4 sh = s.image.shape();
        const int64_t dims[2] = {sh.h, sh.w};
        mix_bytes(dims, sizeof dims);
        mix_bytes(s.image.data().data(), s.image.data().size() * sizeof(float));
        for (const Point& p : s.annotations.points) mix_bytes(&p, sizeof p);
    }
    return h;
}

}  // namespace hsrnet
