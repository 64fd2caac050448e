#include <doctest.h>

#include <fstream>

#include "oracles.hpp"
#include "sroi/features.hpp"

using namespace sroi;

namespace {

double norm(std::span<const float> d) {
    double s = 0;
    for (float v : d) s += static_cast<double>(v) * v;
    return std::sqrt(s);
}

double cosine(std::span<const float> a, std::span<const float> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    const double na = norm(a), nb = norm(b);
    return s / (na * nb);
}

// Gradient histogram of one cell, orientation weight split linearly between
// the two nearest bin angles k*45 degrees.
std::vector<double> gradhist_cell(const Image& img, int row, int col) {
    const int w = img.width(), h = img.height();
    auto px = [&](int x, int y) { return img.at(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1)); };
    std::vector<double> d(128, 0.0);
    for (int wy = 0; wy < 16; ++wy)
        for (int wx = 0; wx < 16; ++wx) {
            const int x = col * 8 - 4 + wx, y = row * 8 - 4 + wy;
            if (x < 0 || y < 0 || x >= w || y >= h) continue;
            const double gx = (px(x + 1, y) - px(x - 1, y)) / 2, gy = (px(x, y + 1) - px(x, y - 1)) / 2;
            const double m = std::sqrt(gx * gx + gy * gy);
            if (m == 0) continue;
            double deg = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
            if (deg < 0) deg += 360.0;
            const int lo = static_cast<int>(deg / 45.0);
            const double t = deg / 45.0 - lo;
            const int sub = (wy / 4) * 4 + wx / 4;
            d[sub * 8 + lo % 8] += m * (1 - t);
            d[sub * 8 + (lo + 1) % 8] += m * t;
        }
    double n = 0;
    for (double v : d) n += v * v;
    n = std::sqrt(n);
    if (n > 1e-12)
        for (double& v : d) v /= n;
    return d;
}

Image step_image(int w, int h, int edge_x, double lo, double hi) {
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img.set(x, y, x < edge_x ? lo : hi);
    return img;
}

FeatureGrid random_grid(int gh, int gw, int dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, 1.0f);
    std::vector<float> data(static_cast<std::size_t>(gh) * gw * dim);
    for (float& v : data) v = n(rng);
    FeatureGrid g(gh, gw, dim, std::move(data));
    g.normalize_descriptors();
    return g;
}

}  // namespace

TEST_CASE("gradhist of a constant image is all zero") {
    const FeatureGrid g = extract_gradhist(Image(32, 24, 0.4));
    CHECK(g.grid_h() == 3);
    CHECK(g.grid_w() == 4);
    CHECK(g.dim() == 128);
    for (float v : g.data()) CHECK(v == 0.0f);
}

TEST_CASE("gradhist matches the per-pixel finite-difference oracle") {
    const Image img = oracle::smooth_image(40, 32, 9);
    const FeatureGrid g = extract_gradhist(img);
    for (int r = 0; r < g.grid_h(); ++r)
        for (int c = 0; c < g.grid_w(); ++c) {
            const auto want = gradhist_cell(img, r, c);
            const auto got = g.descriptor(r, c);
            for (int k = 0; k < 128; ++k) CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-5));
        }
}

TEST_CASE("vertical step edge puts its mass in the horizontal-gradient bins") {
    const Image img = step_image(32, 32, 16, 0.2, 0.8);
    const FeatureGrid g = extract_gradhist(img);
    for (int r = 0; r < g.grid_h(); ++r) {
        for (int c : {1, 2}) {  // windows spanning x = 16
            const auto d = g.descriptor(r, c);
            double horizontal = 0, total = 0;
            for (int k = 0; k < 128; ++k) {
                total += d[k] * d[k];
                if (k % 8 == 0 || k % 8 == 4) horizontal += d[k] * d[k];
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
            CHECK(horizontal / total > 0.999);
        }
        CHECK(norm(g.descriptor(r, 3)) == 0.0);  // far from the edge
    }
}

TEST_CASE("every nonzero gradhist descriptor is unit length") {
    const Image img = oracle::random_image(64, 48, 2);
    for (auto kind : {Descriptor::gradhist, Descriptor::gradhist_unsigned, Descriptor::meanvar}) {
        const FeatureGrid g = extract_features(img, kind);
        for (int r = 0; r < g.grid_h(); ++r)
            for (int c = 0; c < g.grid_w(); ++c) {
                const double n = norm(g.descriptor(r, c));
                CHECK((n == 0.0 || std::abs(n - 1.0) < 1e-6));
            }
    }
}

TEST_CASE("unsigned orientation is robust to intensity inversion") {
    const Image img = oracle::smooth_image(64, 64, 4);
    std::vector<double> inv;
    for (double v : img.data()) inv.push_back(1.0 - v);
    const Image neg(64, 64, std::move(inv));
    const FeatureGrid a = extract_gradhist(img, {.unsigned_orientation = true});
    const FeatureGrid b = extract_gradhist(neg, {.unsigned_orientation = true});
    for (int r = 0; r < a.grid_h(); ++r)
        for (int c = 0; c < a.grid_w(); ++c)
            if (norm(a.descriptor(r, c)) > 0) CHECK(cosine(a.descriptor(r, c), b.descriptor(r, c)) >= 0.9);
}

TEST_CASE("extractors reject sizes that are not multiples of 8") {
    CHECK_THROWS_AS(extract_gradhist(Image(12, 16)), ShapeError);
    CHECK_THROWS_AS(extract_meanvar(Image(16, 20)), ShapeError);
}

TEST_CASE("meanvar: constant cells are zero, affine invariance, distinct cells differ") {
    Image img = oracle::random_image(16, 8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 8; x < 16; ++x) img.set(x, y, 0.3);
    const FeatureGrid g = extract_meanvar(img);
    CHECK(g.dim() == 64);
    CHECK(norm(g.descriptor(0, 1)) == 0.0);

    Image scaled(16, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 16; ++x) scaled.set(x, y, 0.5 * img.at(x, y) + 0.2);
    const FeatureGrid s = extract_meanvar(scaled);
    for (int k = 0; k < 64; ++k) CHECK(s.descriptor(0, 0)[k] == doctest::Approx(g.descriptor(0, 0)[k]).epsilon(1e-4));

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const FeatureGrid r = extract_meanvar(oracle::random_image(16, 8, 100 + seed));
        CHECK(cosine(r.descriptor(0, 0), r.descriptor(0, 1)) < 1.0);
    }
}

TEST_CASE("descriptor names parse and print") {
    for (auto kind : {Descriptor::gradhist, Descriptor::gradhist_unsigned, Descriptor::meanvar})
        CHECK(parse_descriptor(descriptor_name(kind)) == kind);
    CHECK_THROWS_AS(parse_descriptor("sift"), std::invalid_argument);
}

TEST_CASE("feature grid file round trip is bitwise") {
    const auto dir = oracle::temp_dir("fgrd");
    const FeatureGrid g = random_grid(3, 5, 7, 1);
    save_feature_grid(g, dir / "g.fgrd");
    const LoadedFeatureGrid l = load_feature_grid(dir / "g.fgrd");
    CHECK(l.renormalized == 0);
    CHECK(l.grid == g);
    CHECK(std::filesystem::file_size(dir / "g.fgrd") == 16 + 3 * 5 * 7 * 4);

    std::ifstream in(dir / "g.fgrd", std::ios::binary);
    char head[16];
    in.read(head, 16);
    CHECK(std::string(head, 4) == "FGRD");
    CHECK(static_cast<unsigned char>(head[4]) == 3);  // little-endian grid_h
    CHECK(static_cast<unsigned char>(head[8]) == 5);
    CHECK(static_cast<unsigned char>(head[12]) == 7);
}

TEST_CASE("feature grid loader errors and renormalization") {
    const auto dir = oracle::temp_dir("fgrdbad");
    auto header = [](std::uint32_t h, std::uint32_t w, std::uint32_t d) {
        std::string s = "FGRD";
        for (std::uint32_t v : {h, w, d})
            for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
        return s;
    };
    std::ofstream(dir / "short.fgrd", std::ios::binary) << header(2, 2, 4) << std::string(15 * 4, '\0');
    CHECK_THROWS_WITH_AS(load_feature_grid(dir / "short.fgrd"), doctest::Contains("truncated"), FormatError);

    std::string bad = header(1, 1, 1) + std::string(4, '\0');
    bad[0] = 'X';
    std::ofstream(dir / "magic.fgrd", std::ios::binary) << bad;
    CHECK_THROWS_AS(load_feature_grid(dir / "magic.fgrd"), FormatError);

    std::ofstream(dir / "long.fgrd", std::ios::binary) << header(1, 1, 1) << std::string(8, '\0');
    CHECK_THROWS_AS(load_feature_grid(dir / "long.fgrd"), FormatError);

    // one descriptor of norm 2, one of norm 1, one zero
    FeatureGrid g(1, 3, 2, {2.0f, 0.0f, 0.6f, 0.8f, 0.0f, 0.0f});
    save_feature_grid(g, dir / "norm.fgrd");
    const LoadedFeatureGrid l = load_feature_grid(dir / "norm.fgrd");
    CHECK(l.renormalized == 1);
    CHECK(l.grid.descriptor(0, 0)[0] == 1.0f);
    CHECK(l.grid.descriptor(0, 1)[1] == 0.8f);
    CHECK(l.grid.descriptor(0, 2)[0] == 0.0f);
}

TEST_CASE("strip-pool saliency of a single nonzero descriptor peaks on its row and column") {
    std::vector<float> data(4 * 5 * 3, 0.0f);
    FeatureGrid g(4, 5, 3, data);
    g.descriptor(1, 3)[0] = 1.0f;
    const SaliencyMap s = strip_pool_saliency(g);
    // hand sums: row term 1/5 on row 1, column term 1/4 on column 3
    const double peak = 1.0 / 5 + 1.0 / 4;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 5; ++c) {
            const double raw = (r == 1 ? 1.0 / 5 : 0.0) + (c == 3 ? 1.0 / 4 : 0.0);
            CHECK(s.at(r, c) == doctest::Approx(raw / peak).epsilon(1e-12));
        }
    CHECK(s.at(1, 3) == 1.0);
}

TEST_CASE("strip-pool saliency: constant grid, transpose and scale") {
    std::vector<float> same;
    for (int i = 0; i < 12; ++i) same.insert(same.end(), {0.6f, 0.8f});
    const SaliencyMap flat = strip_pool_saliency(FeatureGrid(3, 4, 2, same));
    for (double v : flat.values()) CHECK(v == 0.0);

    const FeatureGrid g = random_grid(5, 7, 6, 3);
    std::vector<float> t(g.data().size()), scaled(g.data().size());
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 7; ++c)
            for (int k = 0; k < 6; ++k) t[(static_cast<std::size_t>(c) * 5 + r) * 6 + k] = g.descriptor(r, c)[k];
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = g.data()[i] * 4.0f;
    const SaliencyMap a = strip_pool_saliency(g);
    const SaliencyMap b = strip_pool_saliency(FeatureGrid(7, 5, 6, t));
    const SaliencyMap s = strip_pool_saliency(FeatureGrid(5, 7, 6, scaled));
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 7; ++c) {
            CHECK(a.at(r, c) == doctest::Approx(b.at(c, r)).epsilon(1e-12));
            CHECK(a.at(r, c) == doctest::Approx(s.at(r, c)).epsilon(1e-9));
        }
}

TEST_CASE("propose_mask thresholds and replicates 8x8 blocks") {
    const SaliencyMap s(1, 2, {0.4, 0.6});
    const RegionMask half = propose_mask(s, 0.5);
    CHECK(half.width() == 16);
    CHECK(half.height() == 8);
    CHECK_FALSE(half.at(7, 7));
    CHECK(half.at(8, 0));
    CHECK(half.count() == 64);
    CHECK(propose_mask(s, 0.0).count() == 128);

    const SaliencyMap peak(2, 2, {0.1, 1.0, 0.3, 0.0});
    const RegionMask one = propose_mask(peak, 1.0);
    CHECK(one.count() == 64);
    CHECK(one.at(12, 4));
    CHECK_THROWS_AS(propose_mask(s, 1.5), std::invalid_argument);
}

TEST_CASE("deep_scores hand-computed 2x2 example") {
    const double h = std::sqrt(0.5);
    FeatureGrid a(1, 2, 2, {1.0f, 0.0f, 0.0f, 1.0f});
    FeatureGrid b(1, 2, 2, {1.0f, 0.0f, static_cast<float>(h), static_cast<float>(h)});
    const GridPointSet pts({{4, 4}, {12, 4}});
    const ScoreMatrix s = deep_scores(a, b, pts, pts);
    CHECK(s(0, 0) == doctest::Approx(1.0));
    CHECK(s(0, 1) == doctest::Approx(0.7071).epsilon(1e-4));
    CHECK(s(1, 0) == doctest::Approx(0.0));
    CHECK(s(1, 1) == doctest::Approx(0.7071).epsilon(1e-4));
}

TEST_CASE("deep_scores properties on random grids") {
    const FeatureGrid a = random_grid(6, 6, 32, 10), b = random_grid(6, 6, 32, 11);
    std::vector<GridPoint> pv;
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 6; ++c) pv.push_back(cell_center(r, c));
    const GridPointSet pts(pv);
    const GridPointSet sub({cell_center(0, 0), cell_center(2, 3), cell_center(5, 5)});

    const ScoreMatrix self = deep_scores(a, a, pts, pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        CHECK(self(i, i) == doctest::Approx(1.0).epsilon(1e-6));
        for (std::size_t j = 0; j < pts.size(); ++j)
            if (j != i) CHECK(self(i, j) < self(i, i));
    }
    const ScoreMatrix ab = deep_scores(a, b, pts, sub), ba = deep_scores(b, a, sub, pts);
    CHECK(ab == ba.transposed());
    for (double v : ab.values()) CHECK((v >= -1.0 && v <= 1.0));
    // brute-force inner products
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = 0; j < sub.size(); ++j) {
            double dot = 0;
            auto da = a.descriptor(pts[i].cell_row(), pts[i].cell_col());
            auto db = b.descriptor(sub[j].cell_row(), sub[j].cell_col());
            for (int k = 0; k < 32; ++k) dot += static_cast<double>(da[k]) * db[k];
            CHECK(ab(i, j) == doctest::Approx(dot).epsilon(1e-12));
        }
}

TEST_CASE("deep_scores: zero descriptors give zero rows; shape errors") {
    FeatureGrid a = random_grid(2, 2, 4, 5);
    for (float& v : a.descriptor(1, 1)) v = 0.0f;
    const GridPointSet all({cell_center(0, 0), cell_center(0, 1), cell_center(1, 0), cell_center(1, 1)});
    const ScoreMatrix s = deep_scores(a, random_grid(2, 2, 4, 6), all, all);
    for (std::size_t j = 0; j < 4; ++j) CHECK(s(3, j) == 0.0);

    CHECK_THROWS_AS(deep_scores(a, random_grid(2, 2, 5, 1), all, all), ShapeError);
    CHECK_THROWS_AS(deep_scores(a, a, GridPointSet({cell_center(2, 0)}), all), ShapeError);
}
