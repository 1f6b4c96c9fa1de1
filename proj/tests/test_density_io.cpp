#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "hsrnet/density.hpp"
#include "hsrnet/io.hpp"
#include "hsrnet/rng.hpp"

using namespace hsrnet;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "hsrnet_io_tests";
    fs::create_directories(dir);
    return dir / name;
}

std::vector<unsigned char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

PointAnnotations ann_of(std::vector<Point> pts, int64_t w, int64_t h) {
    PointAnnotations a;
    a.points = std::move(pts);
    a.image_w = w;
    a.image_h = h;
    return a;
}

std::vector<Point> random_points(Rng& rng, int n, double w, double h) {
    std::vector<Point> pts(static_cast<size_t>(n));
    for (auto& p : pts) {
        p.x = rng.uniform(0.0, w - 1e-6);
        p.y = rng.uniform(0.0, h - 1e-6);
    }
    return pts;
}

}  // namespace

TEST_CASE("knn mean distance on hand-checked configurations") {
    const auto pair = knn_mean_distance({{0, 0}, {3, 0}}, 1);
    REQUIRE(pair.size() == 2);
    CHECK(*pair[0] == 3.0);
    CHECK(*pair[1] == 3.0);

    const auto triangle = knn_mean_distance({{0, 0}, {3, 0}, {0, 4}}, 2);
    CHECK(*triangle[0] == doctest::Approx(3.5).epsilon(1e-12));
    CHECK(*triangle[1] == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(*triangle[2] == doctest::Approx(4.5).epsilon(1e-12));

    CHECK_FALSE(knn_mean_distance({{5, 5}}, 3)[0].has_value());
    const auto two_of_three = knn_mean_distance({{0, 0}, {1, 1}}, 3);
    CHECK_FALSE(two_of_three[0].has_value());
    CHECK_FALSE(two_of_three[1].has_value());

    CHECK_THROWS_AS(knn_mean_distance({{0, 0}}, 0), std::invalid_argument);
}

TEST_CASE("knn mean distance matches a full-sort oracle on random sets") {
    Rng rng(31);
    for (int trial = 0; trial < 5; ++trial) {
        const auto pts = random_points(rng, 30, 100.0, 80.0);
        const int k = 3;
        const auto got = knn_mean_distance(pts, k);
        for (size_t i = 0; i < pts.size(); ++i) {
            std::vector<double> d;
            for (size_t j = 0; j < pts.size(); ++j) {
                if (j == i) continue;
                d.push_back(std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y));
            }
            std::sort(d.begin(), d.end());
            const double want = (d[0] + d[1] + d[2]) / 3.0;
            REQUIRE(got[i].has_value());
            CHECK(*got[i] == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("doubling all coordinates doubles every knn mean exactly") {
    Rng rng(77);
    auto pts = random_points(rng, 12, 50.0, 50.0);
    auto doubled = pts;
    for (auto& p : doubled) {
        p.x *= 2.0;
        p.y *= 2.0;
    }
    const auto base = knn_mean_distance(pts, 3);
    const auto twice = knn_mean_distance(doubled, 3);
    for (size_t i = 0; i < pts.size(); ++i) {
        // sqrt(4d²) = 2·sqrt(d²) holds exactly in IEEE arithmetic
        CHECK(*twice[i] == 2.0 * *base[i]);
    }
}

TEST_CASE("density maps conserve the annotation count") {
    CHECK(make_density(ann_of({}, 32, 32), AdaptiveSigma{}).count() == 0.0);

    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = static_cast<int>(rng.uniform_int(5, 80));
        const auto ann = ann_of(random_points(rng, n, 64.0, 48.0), 64, 48);
        const DensityMap adaptive = make_density(ann, AdaptiveSigma{});
        const DensityMap fixed = make_density(ann, FixedSigma{2.0});
        CHECK(std::fabs(adaptive.count() - n) < 1e-4);
        CHECK(std::fabs(fixed.count() - n) < 1e-4);
        for (float v : adaptive.grid) CHECK(v >= 0.0f);
    }

    // single off-grid point, fixed kernel: exactly one unit of mass
    const DensityMap one = make_density(ann_of({{15.5, 16.25}}, 32, 32), FixedSigma{2.0});
    CHECK(one.count() == doctest::Approx(1.0).epsilon(1e-6));

    // mass near the border is renormalized over the in-image support
    const DensityMap corner = make_density(ann_of({{0.0, 0.0}}, 32, 32), FixedSigma{3.0});
    CHECK(corner.count() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("adaptive sigmas equal beta times the knn mean") {
    // pairwise distances 6, 8, 10 → per-point means 7, 8, 9 → σ 2.1, 2.4, 2.7
    const std::vector<Point> pts = {{20, 20}, {26, 20}, {20, 28}};
    const DensityMap got = make_density(ann_of(pts, 64, 64), AdaptiveSigma{2, 0.3, 4.0});

    DensityMap want = DensityMap::zeros(64, 64);
    const double sigmas[3] = {0.3 * 7.0, 0.3 * 8.0, 0.3 * 9.0};
    for (int i = 0; i < 3; ++i) {
        const DensityMap part = make_density(ann_of({pts[static_cast<size_t>(i)]}, 64, 64),
                                             FixedSigma{sigmas[i]});
        for (size_t j = 0; j < want.grid.size(); ++j) want.grid[j] += part.grid[j];
    }
    for (size_t j = 0; j < want.grid.size(); ++j) {
        CHECK(got.grid[j] == doctest::Approx(want.grid[j]).epsilon(1e-6));
    }
}

TEST_CASE("undefined knn falls back to the default kernel width") {
    const std::vector<Point> pts = {{10, 12}, {20, 22}};
    const DensityMap adaptive =
        make_density(ann_of(pts, 40, 40), AdaptiveSigma{3, 0.3, 4.0});  // k=3 > n-1
    const DensityMap fixed = make_density(ann_of(pts, 40, 40), FixedSigma{4.0});
    CHECK(adaptive.grid == fixed.grid);
}

TEST_CASE("density stamping is translation-equivariant for integer shifts") {
    Rng rng(23);
    std::vector<Point> pts = random_points(rng, 8, 10.0, 10.0);
    for (auto& p : pts) {
        p.x += 15.0;
        p.y += 15.0;
    }
    auto shifted = pts;
    for (auto& p : shifted) {
        p.x += 5.0;
        p.y -= 3.0;
    }
    const DensityMap a = make_density(ann_of(pts, 48, 48), FixedSigma{1.5});
    const DensityMap b = make_density(ann_of(shifted, 48, 48), FixedSigma{1.5});
    for (int64_t y = 0; y < 48; ++y) {
        for (int64_t x = 0; x < 48; ++x) {
            const int64_t sy = y - 3, sx = x + 5;
            if (sy < 0 || sy >= 48 || sx < 0 || sx >= 48) continue;
            CHECK(b.at(sy, sx) == a.at(y, x));
        }
    }
}

TEST_CASE("density rejects bad kernels and out-of-image points") {
    CHECK_THROWS_AS(make_density(ann_of({{5, 5}}, 16, 16), FixedSigma{0.0}),
                    std::invalid_argument);
    CHECK_THROWS_AS(make_density(ann_of({{5, 5}}, 16, 16), FixedSigma{-1.0}),
                    std::invalid_argument);
    CHECK_THROWS_AS(make_density(ann_of({{16.0, 5.0}}, 16, 16), FixedSigma{1.0}),
                    std::invalid_argument);
    CHECK_THROWS_AS(make_density(ann_of({{-0.5, 5.0}}, 16, 16), FixedSigma{1.0}),
                    std::invalid_argument);
}

TEST_CASE("pyramid level 0 is a bit-exact copy and levels conserve mass within 2%") {
    Rng rng(9);
    const auto ann = ann_of(random_points(rng, 40, 64.0, 64.0), 64, 64);
    const DensityMap src = make_density(ann, AdaptiveSigma{});
    const GtPyramid pyr = make_pyramid(src);

    CHECK(pyr.maps[0].grid == src.grid);
    const double total = src.count();
    for (size_t level = 1; level < pyr.maps.size(); ++level) {
        CHECK(pyr.maps[level].h == src.h);
        CHECK(pyr.maps[level].w == src.w);
        CHECK(std::fabs(pyr.maps[level].count() - total) <= 0.02 * total);
    }
}

TEST_CASE("pyramid of a constant map stays constant at every level") {
    DensityMap c = DensityMap::zeros(32, 48);
    for (auto& v : c.grid) v = 0.375f;
    const GtPyramid pyr = make_pyramid(c);
    for (const auto& level : pyr.maps) {
        for (float v : level.grid) CHECK(v == doctest::Approx(0.375).epsilon(1e-6));
    }

    CHECK_THROWS_AS(make_pyramid(DensityMap::zeros(15, 64)), std::invalid_argument);
}

TEST_CASE("roi masking is exact, idempotent and shape-checked") {
    Rng rng(3);
    const auto ann = ann_of(random_points(rng, 10, 32.0, 32.0), 32, 32);
    const DensityMap d = make_density(ann, FixedSigma{2.0});

    RoiMask ones{32, 32, std::vector<float>(32 * 32, 1.0f)};
    CHECK(apply_roi(d, ones).grid == d.grid);

    RoiMask zeros{32, 32, std::vector<float>(32 * 32, 0.0f)};
    CHECK(apply_roi(d, zeros).count() == 0.0);

    RoiMask half{32, 32, std::vector<float>(32 * 32, 0.0f)};
    for (int64_t y = 0; y < 16; ++y)
        for (int64_t x = 0; x < 32; ++x) half.grid[static_cast<size_t>(y * 32 + x)] = 1.0f;
    const DensityMap masked = apply_roi(d, half);
    const DensityMap twice = apply_roi(masked, half);
    CHECK(masked.grid == twice.grid);
    double kept = 0.0;
    for (int64_t y = 0; y < 16; ++y)
        for (int64_t x = 0; x < 32; ++x) kept += d.at(y, x);
    CHECK(masked.count() == doctest::Approx(kept).epsilon(1e-12));

    CHECK_THROWS_AS(apply_roi(d, RoiMask{16, 32, std::vector<float>(16 * 32, 1.0f)}),
                    std::invalid_argument);
}

TEST_CASE("annotation CSV round-trips doubles exactly") {
    PointAnnotations ann = ann_of({{1.0 / 3.0, 2.0 / 7.0}, {99.0, 63.999999}, {0.0, 0.0}}, 100, 64);
    const fs::path path = temp_file("pts.csv");
    write_points_csv(path.string(), ann);
    const PointAnnotations back = read_points_csv(path.string(), 100, 64);
    REQUIRE(back.points.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(back.points[i].x == ann.points[i].x);
        CHECK(back.points[i].y == ann.points[i].y);
    }
}

TEST_CASE("annotation CSV validates rows and bounds") {
    const fs::path empty = temp_file("empty.csv");
    spit(empty.string(), "");
    CHECK(read_points_csv(empty.string(), 10, 10).points.empty());

    const fs::path blank_lines = temp_file("blank.csv");
    spit(blank_lines.string(), "1.5,2.5\r\n\n3,4\n");
    CHECK(read_points_csv(blank_lines.string(), 10, 10).points.size() == 2);

    const fs::path not_two = temp_file("three.csv");
    spit(not_two.string(), "1,2,3\n");
    CHECK_THROWS_AS(read_points_csv(not_two.string(), 10, 10), io_error);

    const fs::path garbage = temp_file("garbage.csv");
    spit(garbage.string(), "abc\n");
    CHECK_THROWS_AS(read_points_csv(garbage.string(), 10, 10), io_error);

    const fs::path oob = temp_file("oob.csv");
    spit(oob.string(), "10,3\n");
    CHECK_THROWS_AS(read_points_csv(oob.string(), 10, 10), io_error);

    CHECK_THROWS_AS(read_points_csv(temp_file("nope.csv").string(), 10, 10), io_error);
}

TEST_CASE("DMAP container round-trips bit-exactly and checks its framing") {
    DensityMap d = DensityMap::zeros(3, 5);
    Rng rng(1);
    for (auto& v : d.grid) v = static_cast<float>(rng.normal(0.0, 1e-3));
    d.grid[0] = 1e-42f;  // denormal survives

    const fs::path path = temp_file("map.dmap");
    write_dmap(path.string(), d);
    const DensityMap back = read_dmap(path.string());
    CHECK(back.h == 3);
    CHECK(back.w == 5);
    CHECK(back.grid == d.grid);

    DensityMap tiny = DensityMap::zeros(1, 1);
    tiny.grid[0] = 0.5f;
    const fs::path one = temp_file("one.dmap");
    write_dmap(one.string(), tiny);
    CHECK(fs::file_size(one) == 20);  // magic+version+h+w+1 float

    auto bytes = slurp(path.string());
    bytes[0] = 'X';
    const fs::path bad = temp_file("bad.dmap");
    std::ofstream(bad.string(), std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(read_dmap(bad.string()), io_error);

    auto short_bytes = slurp(path.string());
    short_bytes.resize(short_bytes.size() - 2);
    const fs::path trunc = temp_file("trunc.dmap");
    std::ofstream(trunc.string(), std::ios::binary)
        .write(reinterpret_cast<const char*>(short_bytes.data()),
               static_cast<std::streamsize>(short_bytes.size()));
    CHECK_THROWS_AS(read_dmap(trunc.string()), io_error);
}

TEST_CASE("roi files must be strictly binary") {
    RoiMask m{2, 2, {0.0f, 1.0f, 1.0f, 0.0f}};
    const fs::path good = temp_file("mask.roi.dmap");
    write_roi(good.string(), m);
    const RoiMask back = read_roi(good.string());
    CHECK(back.grid == m.grid);

    DensityMap not_binary = DensityMap::zeros(2, 2);
    not_binary.grid[3] = 0.5f;
    const fs::path bad = temp_file("notbinary.roi.dmap");
    write_dmap(bad.string(), not_binary);
    CHECK_THROWS_AS(read_roi(bad.string()), io_error);
}

TEST_CASE("heatmap PGM scales the maximum to 255") {
    DensityMap d = DensityMap::zeros(2, 2);
    d.grid = {0.0f, 0.5f, 1.0f, 0.25f};
    const fs::path path = temp_file("heat.pgm");
    write_pgm_heatmap(path.string(), d);
    const auto bytes = slurp(path.string());
    const std::string header = "P5\n2 2\n255\n";
    REQUIRE(bytes.size() == header.size() + 4);
    CHECK(std::equal(header.begin(), header.end(), bytes.begin()));
    CHECK(bytes[header.size() + 0] == 0);
    CHECK(bytes[header.size() + 1] == 128);
    CHECK(bytes[header.size() + 2] == 255);
    CHECK(bytes[header.size() + 3] == 64);

    DensityMap flat = DensityMap::zeros(2, 2);
    const fs::path black = temp_file("black.pgm");
    write_pgm_heatmap(black.string(), flat);
    const auto black_bytes = slurp(black.string());
    for (size_t i = header.size(); i < black_bytes.size(); ++i) CHECK(black_bytes[i] == 0);
}

TEST_CASE("PNM images parse headers, comments and maxval scaling") {
    const fs::path p6 = temp_file("tiny.ppm");
    spit(p6.string(), std::string("P6\n# a comment\n2 1\n255\n") +
                          std::string({'\x00', '\x80', '\xff', '\x40', '\x00', '\x20'}));
    const Image img = read_image(p6.string());
    CHECK(img.channels == 3);
    CHECK(img.w == 2);
    CHECK(img.h == 1);
    CHECK(img.at(0, 0, 0) == 0.0f);
    CHECK(img.at(1, 0, 0) == doctest::Approx(128.0 / 255.0).epsilon(1e-7));
    CHECK(img.at(2, 0, 0) == 1.0f);
    CHECK(img.at(0, 0, 1) == doctest::Approx(64.0 / 255.0).epsilon(1e-7));

    const fs::path p5 = temp_file("tiny.pgm");
    spit(p5.string(), std::string("P5\n2 2\n128\n") + std::string({'\x00', '\x40', '\x80', '\x20'}));
    const Image gray = read_image(p5.string());
    CHECK(gray.channels == 1);
    CHECK(gray.at(0, 0, 1) == doctest::Approx(0.5).epsilon(1e-7));
    CHECK(gray.at(0, 1, 0) == doctest::Approx(1.0).epsilon(1e-7));

    const fs::path ascii = temp_file("ascii.pnm");
    spit(ascii.string(), "P3\n1 1\n255\n0 0 0\n");
    CHECK_THROWS_AS(read_image(ascii.string()), io_error);

    const fs::path trunc = temp_file("trunc.ppm");
    spit(trunc.string(), "P6\n2 2\n255\nXY");
    CHECK_THROWS_AS(read_image(trunc.string()), io_error);
}

TEST_CASE("image write/read/write is byte-stable") {
    Image img;
    img.channels = 3;
    img.h = 3;
    img.w = 4;
    img.data.resize(36);
    Rng rng(44);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());

    const fs::path a = temp_file("stable_a.ppm");
    write_image_ppm(a.string(), img);
    const Image back = read_image(a.string());
    const fs::path b = temp_file("stable_b.ppm");
    write_image_ppm(b.string(), back);
    CHECK(slurp(a.string()) == slurp(b.string()));
}
