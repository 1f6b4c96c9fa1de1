#include "hsrnet/io.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace hsrnet {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const std::string& path, const char* what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (is.gcount() != 4) throw io_error(path + ": truncated file while reading " + what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

std::vector<float> read_dmap_payload(const std::string& path, int64_t& h, int64_t& w) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error(path + ": cannot open for reading");
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, "DMAP", 4) != 0) {
        throw io_error(path + ": bad magic, not a DMAP file");
    }
    const uint32_t version = get_u32(is, path, "version");
    if (version != 1) throw io_error(path + ": unsupported DMAP version " + std::to_string(version));
    h = get_u32(is, path, "height");
    w = get_u32(is, path, "width");
    if (h < 1 || w < 1 || h * w > (int64_t{1} << 31)) {
        throw io_error(path + ": implausible dims " + std::to_string(h) + "x" + std::to_string(w));
    }
    std::vector<float> grid(static_cast<size_t>(h * w));
    for (auto& v : grid) v = std::bit_cast<float>(get_u32(is, path, "payload"));
    is.peek();
    if (!is.eof()) throw io_error(path + ": unexpected trailing bytes");
    return grid;
}

void write_dmap_payload(const std::string& path, int64_t h, int64_t w,
                        const std::vector<float>& grid) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error(path + ": cannot open for writing");
    os.write("DMAP", 4);
    put_u32(os, 1);
    put_u32(os, static_cast<uint32_t>(h));
    put_u32(os, static_cast<uint32_t>(w));
    for (float v : grid) put_u32(os, std::bit_cast<uint32_t>(v));
    if (!os) throw io_error(path + ": write failed");
}

// One whitespace-delimited PNM header token, skipping '#' comments.
std::string pnm_token(std::istream& is, const std::string& path) {
    int c = is.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = is.get();
        }
        c = is.get();
    }
    if (c == EOF) throw io_error(path + ": truncated image header");
    std::string tok;
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = is.get();
    }
    return tok;
}

int64_t pnm_int(std::istream& is, const std::string& path, const char* what) {
    const std::string tok = pnm_token(is, path);
    try {
        size_t pos = 0;
        const long long v = std::stoll(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw io_error(path + ": bad " + what + " '" + tok + "' in image header");
    }
}

}  // namespace

PointAnnotations read_points_csv(const std::string& path, int64_t image_w, int64_t image_h) {
    std::ifstream is(path);
    if (!is) throw io_error(path + ": cannot open for reading");
    PointAnnotations ann;
    ann.image_w = image_w;
    ann.image_h = image_h;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const size_t comma = line.find(',');
        bool ok = comma != std::string::npos;
        Point p;
        if (ok) {
            try {
                size_t xe = 0, ye = 0;
                p.x = std::stod(line.substr(0, comma), &xe);
                p.y = std::stod(line.substr(comma + 1), &ye);
                ok = xe == comma && ye == line.size() - comma - 1;
            } catch (const std::exception&) {
                ok = false;
            }
        }
        if (!ok) {
            throw io_error(path + ":" + std::to_string(lineno) + ": malformed row '" + line + "'");
        }
        ann.points.push_back(p);
    }
    try {
        ann.validate();
    } catch (const std::invalid_argument& e) {
        throw io_error(path + ": " + e.what());
    }
    return ann;
}

void write_points_csv(const std::string& path, const PointAnnotations& ann) {
    std::ofstream os(path);
    if (!os) throw io_error(path + ": cannot open for writing");
    char buf[80];
    for (const Point& p : ann.points) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.x, p.y);
        os << buf;
    }
    if (!os) throw io_error(path + ": write failed");
}

DensityMap read_dmap(const std::string& path) {
    DensityMap d;
    d.grid = read_dmap_payload(path, d.h, d.w);
    return d;
}

void write_dmap(const std::string& path, const DensityMap& d) {
    write_dmap_payload(path, d.h, d.w, d.grid);
}

RoiMask read_roi(const std::string& path) {
    RoiMask m;
    m.grid = read_dmap_payload(path, m.h, m.w);
    for (size_t i = 0; i < m.grid.size(); ++i) {
        if (m.grid[i] != 0.0f && m.grid[i] != 1.0f) {
            throw io_error(path + ": mask entry " + std::to_string(i) + " is " +
                           std::to_string(m.grid[i]) + ", expected 0 or 1");
        }
    }
    return m;
}

void write_roi(const std::string& path, const RoiMask& m) {
    write_dmap_payload(path, m.h, m.w, m.grid);
}

void write_pgm_heatmap(const std::string& path, const DensityMap& d) {
    float max = 0.0f;
    for (float v : d.grid) max = std::max(max, v);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error(path + ": cannot open for writing");
    os << "P5\n" << d.w << " " << d.h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(d.w));
    for (int64_t y = 0; y < d.h; ++y) {
        for (int64_t x = 0; x < d.w; ++x) {
            double v = max > 0.0f ? static_cast<double>(d.at(y, x)) / max * 255.0 : 0.0;
            v = std::clamp(std::round(v), 0.0, 255.0);
            row[static_cast<size_t>(x)] = static_cast<unsigned char>(v);
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw io_error(path + ": write failed");
}

Image read_image(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error(path + ": cannot open for reading");
    const std::string magic = pnm_token(is, path);
    int64_t channels;
    if (magic == "P5") {
        channels = 1;
    } else if (magic == "P6") {
        channels = 3;
    } else {
        throw io_error(path + ": unsupported image magic '" + magic + "' (want binary PGM/PPM)");
    }
    Image img;
    img.channels = channels;
    img.w = pnm_int(is, path, "width");
    img.h = pnm_int(is, path, "height");
    const int64_t maxval = pnm_int(is, path, "maxval");
    if (img.w < 1 || img.h < 1) throw io_error(path + ": non-positive image dims");
    if (maxval < 1 || maxval > 255) {
        throw io_error(path + ": unsupported maxval " + std::to_string(maxval));
    }
    // header ends with exactly one whitespace byte, already consumed by pnm_token
    const size_t npix = static_cast<size_t>(img.h * img.w);
    std::vector<unsigned char> raw(npix * static_cast<size_t>(channels));
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<size_t>(is.gcount()) != raw.size()) {
        throw io_error(path + ": truncated pixel data");
    }
    img.data.resize(raw.size());
    const float scale = 1.0f / static_cast<float>(maxval);
    // interleaved on disk, planar in memory
    for (size_t i = 0; i < npix; ++i) {
        for (int64_t c = 0; c < channels; ++c) {
            img.data[static_cast<size_t>(c) * npix + i] =
                static_cast<float>(raw[i * static_cast<size_t>(channels) + static_cast<size_t>(c)]) *
                scale;
        }
    }
    return img;
}

void write_image_ppm(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) {
        throw io_error(path + ": image must have 1 or 3 channels, got " +
                       std::to_string(img.channels));
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error(path + ": cannot open for writing");
    os << (img.channels == 3 ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
    const size_t npix = static_cast<size_t>(img.h * img.w);
    std::vector<unsigned char> raw(npix * static_cast<size_t>(img.channels));
    for (size_t i = 0; i < npix; ++i) {
        for (int64_t c = 0; c < img.channels; ++c) {
            const float v = img.data[static_cast<size_t>(c) * npix + i];
            const double b = std::clamp(std::round(static_cast<double>(v) * 255.0), 0.0, 255.0);
            raw[i * static_cast<size_t>(img.channels) + static_cast<size_t>(c)] =
                static_cast<unsigned char>(b);
        }
    }
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!os) throw io_error(path + ": write failed");
}

}  // namespace hsrnet
