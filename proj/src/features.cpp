#include "sroi/features.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>
#include <string>

namespace sroi {

namespace {

constexpr int kSubcells = 4;
constexpr int kOrientBins = 8;
constexpr int kWindow = 2 * kCellSize;
constexpr int kSubcellSize = kWindow / kSubcells;
constexpr char kMagic[4] = {'F', 'G', 'R', 'D'};

void require_cell_multiple(const Image& img, const char* who) {
    if (img.empty() || img.width() % kCellSize != 0 || img.height() % kCellSize != 0) {
        std::ostringstream msg;
        msg << who << ": image " << img.width() << "x" << img.height() << " is not a multiple of " << kCellSize;
        throw ShapeError(msg.str());
    }
}

// L2-normalizes in place; vectors with (near-)zero energy become exactly zero.
template <typename T>
void normalize_or_zero(std::span<T> v, double zero_below = 1e-12) {
    double ss = 0.0;
    for (T x : v) ss += static_cast<double>(x) * x;
    const double norm = std::sqrt(ss);
    if (norm <= zero_below) {
        std::fill(v.begin(), v.end(), T{0});
        return;
    }
    for (T& x : v) x = static_cast<T>(x / norm);
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

FeatureGrid::FeatureGrid(int grid_h, int grid_w, int dim, std::vector<float> data)
    : grid_h_(grid_h), grid_w_(grid_w), dim_(dim), data_(std::move(data)) {
    if (grid_h < 0 || grid_w < 0 || dim < 0) throw std::invalid_argument("negative feature grid shape");
    if (data_.size() != static_cast<std::size_t>(grid_h) * grid_w * dim)
        throw ShapeError("feature grid payload length != grid_h*grid_w*dim");
}

std::size_t FeatureGrid::normalize_descriptors(double tol) {
    std::size_t touched = 0;
    for (int r = 0; r < grid_h_; ++r) {
        for (int c = 0; c < grid_w_; ++c) {
            auto d = descriptor(r, c);
            double ss = 0.0;
            for (float x : d) ss += static_cast<double>(x) * x;
            const double norm = std::sqrt(ss);
            if (norm == 0.0 || std::abs(norm - 1.0) <= tol) continue;
            ++touched;
            // near-zero energy is treated as an empty cell
            normalize_or_zero(d, tol);
        }
    }
    return touched;
}

FeatureGrid extract_gradhist(const Image& img, GradHistOptions opts) {
    require_cell_multiple(img, "extract_gradhist");
    const int w = img.width(), h = img.height();
    auto px = [&](int x, int y) { return img.at(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1)); };

    // per-pixel magnitude and fractional orientation bin
    std::vector<double> mag(static_cast<std::size_t>(w) * h), bin(mag.size());
    const double range = opts.unsigned_orientation ? std::numbers::pi : 2.0 * std::numbers::pi;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double gx = 0.5 * (px(x + 1, y) - px(x - 1, y));
            const double gy = 0.5 * (px(x, y + 1) - px(x, y - 1));
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            mag[i] = std::hypot(gx, gy);
            double a = std::atan2(gy, gx);
            if (a < 0.0) a += 2.0 * std::numbers::pi;
            a = std::fmod(a, range);
            bin[i] = a / range * kOrientBins;
        }
    }

    const int gh = h / kCellSize, gw = w / kCellSize;
    constexpr int dim = kSubcells * kSubcells * kOrientBins;
    FeatureGrid grid(gh, gw, dim, std::vector<float>(static_cast<std::size_t>(gh) * gw * dim, 0.0f));
    std::array<double, dim> acc{};
    for (int r = 0; r < gh; ++r) {
        for (int c = 0; c < gw; ++c) {
            acc.fill(0.0);
            const int x0 = c * kCellSize - kCellSize / 2, y0 = r * kCellSize - kCellSize / 2;
            for (int dy = 0; dy < kWindow; ++dy) {
                const int y = y0 + dy;
                if (y < 0 || y >= h) continue;
                for (int dx = 0; dx < kWindow; ++dx) {
                    const int x = x0 + dx;
                    if (x < 0 || x >= w) continue;
                    const std::size_t i = static_cast<std::size_t>(y) * w + x;
                    if (mag[i] == 0.0) continue;
                    const int sub = (dy / kSubcellSize) * kSubcells + dx / kSubcellSize;
                    const int b0 = static_cast<int>(std::floor(bin[i]));
                    const double frac = bin[i] - b0;
                    acc[sub * kOrientBins + b0 % kOrientBins] += mag[i] * (1.0 - frac);
                    acc[sub * kOrientBins + (b0 + 1) % kOrientBins] += mag[i] * frac;
                }
            }
            normalize_or_zero(std::span<double>(acc));
            auto d = grid.descriptor(r, c);
            std::transform(acc.begin(), acc.end(), d.begin(), [](double v) { return static_cast<float>(v); });
        }
    }
    return grid;
}

FeatureGrid extract_meanvar(const Image& img) {
    require_cell_multiple(img, "extract_meanvar");
    constexpr int dim = kCellSize * kCellSize;
    const int gh = img.height() / kCellSize, gw = img.width() / kCellSize;
    FeatureGrid grid(gh, gw, dim, std::vector<float>(static_cast<std::size_t>(gh) * gw * dim, 0.0f));
    std::array<double, dim> v{};
    for (int r = 0; r < gh; ++r) {
        for (int c = 0; c < gw; ++c) {
            for (int y = 0; y < kCellSize; ++y)
                for (int x = 0; x < kCellSize; ++x) v[y * kCellSize + x] = img.at(c * kCellSize + x, r * kCellSize + y);
            double mean = 0.0;
            for (double s : v) mean += s;
            mean /= dim;
            double var = 0.0;
            for (double s : v) var += (s - mean) * (s - mean);
            const double sd = std::sqrt(var / dim);
            if (sd < 1e-9) continue;  // flat cell
            for (double& s : v) s = (s - mean) / (sd + 1e-6);
            normalize_or_zero(std::span<double>(v));
            auto d = grid.descriptor(r, c);
            std::transform(v.begin(), v.end(), d.begin(), [](double s) { return static_cast<float>(s); });
        }
    }
    return grid;
}

FeatureGrid extract_features(const Image& img, Descriptor kind) {
    switch (kind) {
        case Descriptor::gradhist: return extract_gradhist(img);
        case Descriptor::gradhist_unsigned: return extract_gradhist(img, {.unsigned_orientation = true});
        case Descriptor::meanvar: return extract_meanvar(img);
    }
    throw std::invalid_argument("unknown descriptor kind");
}

Descriptor parse_descriptor(const std::string& name) {
    if (name == "gradhist") return Descriptor::gradhist;
    if (name == "gradhist-unsigned") return Descriptor::gradhist_unsigned;
    if (name == "meanvar") return Descriptor::meanvar;
    throw std::invalid_argument("unknown descriptor '" + name + "' (want gradhist, gradhist-unsigned or meanvar)");
}

std::string descriptor_name(Descriptor kind) {
    switch (kind) {
        case Descriptor::gradhist: return "gradhist";
        case Descriptor::gradhist_unsigned: return "gradhist-unsigned";
        case Descriptor::meanvar: return "meanvar";
    }
    return "?";
}

LoadedFeatureGrid load_feature_grid(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::string buf{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw FormatError("'" + path.string() + "' is not a feature grid (bad magic)");
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    const std::uint64_t gh = get_u32(p + 4), gw = get_u32(p + 8), dim = get_u32(p + 12);
    const std::uint64_t count = gh * gw * dim;
    const std::uint64_t payload = buf.size() - 16;
    if (payload < count * 4) {
        std::ostringstream msg;
        msg << "'" << path.string() << "' truncated: header declares " << gh << "x" << gw << "x" << dim << " ("
            << count << " floats), payload holds " << payload / 4;
        throw FormatError(msg.str());
    }
    if (payload != count * 4)
        throw FormatError("'" + path.string() + "' payload length does not match header dimensions");
    std::vector<float> data(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint32_t bits = get_u32(p + 16 + 4 * i);
        data[i] = std::bit_cast<float>(bits);
        if (!std::isfinite(data[i])) throw FormatError("'" + path.string() + "' contains non-finite values");
    }
    LoadedFeatureGrid out{FeatureGrid(static_cast<int>(gh), static_cast<int>(gw), static_cast<int>(dim), std::move(data)), 0};
    out.renormalized = out.grid.normalize_descriptors();
    return out;
}

void save_feature_grid(const FeatureGrid& grid, const std::filesystem::path& path) {
    std::string out(kMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(grid.grid_h()));
    put_u32(out, static_cast<std::uint32_t>(grid.grid_w()));
    put_u32(out, static_cast<std::uint32_t>(grid.dim()));
    out.reserve(out.size() + grid.data().size() * 4);
    for (float f : grid.data()) put_u32(out, std::bit_cast<std::uint32_t>(f));
    detail::write_file_atomic(path, out);
}

SaliencyMap::SaliencyMap(int grid_h, int grid_w, std::vector<double> values)
    : grid_h_(grid_h), grid_w_(grid_w), values_(std::move(values)) {
    if (values_.size() != static_cast<std::size_t>(grid_h) * grid_w)
        throw ShapeError("saliency values length != grid_h*grid_w");
    for (double v : values_)
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("saliency value outside [0,1]");
}

SaliencyMap strip_pool_saliency(const FeatureGrid& grid) {
    const int gh = grid.grid_h(), gw = grid.grid_w(), dim = grid.dim();
    if (gh == 0 || gw == 0) throw std::invalid_argument("strip_pool_saliency: empty grid");
    std::vector<double> row_mean(static_cast<std::size_t>(gh) * dim, 0.0);
    std::vector<double> col_mean(static_cast<std::size_t>(gw) * dim, 0.0);
    for (int r = 0; r < gh; ++r) {
        for (int c = 0; c < gw; ++c) {
            auto d = grid.descriptor(r, c);
            for (int k = 0; k < dim; ++k) row_mean[static_cast<std::size_t>(r) * dim + k] += d[k];
        }
    }
    for (int c = 0; c < gw; ++c) {
        for (int r = 0; r < gh; ++r) {
            auto d = grid.descriptor(r, c);
            for (int k = 0; k < dim; ++k) col_mean[static_cast<std::size_t>(c) * dim + k] += d[k];
        }
    }
    for (double& v : row_mean) v /= gw;
    for (double& v : col_mean) v /= gh;

    std::vector<double> sal(static_cast<std::size_t>(gh) * gw);
    for (int r = 0; r < gh; ++r) {
        for (int c = 0; c < gw; ++c) {
            double ss = 0.0;
            for (int k = 0; k < dim; ++k) {
                const double v = row_mean[static_cast<std::size_t>(r) * dim + k] + col_mean[static_cast<std::size_t>(c) * dim + k];
                ss += v * v;
            }
            sal[static_cast<std::size_t>(r) * gw + c] = std::sqrt(ss);
        }
    }
    const auto [lo, hi] = std::minmax_element(sal.begin(), sal.end());
    const double mn = *lo, span = *hi - *lo;
    for (double& v : sal) v = span > 0.0 ? (v - mn) / span : 0.0;
    return SaliencyMap(gh, gw, std::move(sal));
}

RegionMask propose_mask(const SaliencyMap& sal, double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("propose_mask: threshold outside [0,1]");
    RegionMask mask(sal.grid_w() * kCellSize, sal.grid_h() * kCellSize);
    for (int r = 0; r < sal.grid_h(); ++r) {
        for (int c = 0; c < sal.grid_w(); ++c) {
            if (sal.at(r, c) < threshold) continue;
            for (int y = 0; y < kCellSize; ++y)
                for (int x = 0; x < kCellSize; ++x) mask.set(c * kCellSize + x, r * kCellSize + y, true);
        }
    }
    return mask;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

namespace {

std::span<const float> descriptor_at(const FeatureGrid& f, const GridPoint& p, const char* side) {
    const int col = p.cell_col(), row = p.cell_row();
    if ((p.x - kCellSize / 2) % kCellSize != 0 || (p.y - kCellSize / 2) % kCellSize != 0 || row < 0 || col < 0 ||
        row >= f.grid_h() || col >= f.grid_w()) {
        std::ostringstream msg;
        msg << "deep_scores: " << side << " point (" << p.x << "," << p.y << ") is outside the " << f.grid_h() << "x"
            << f.grid_w() << " feature grid";
        throw ShapeError(msg.str());
    }
    return f.descriptor(row, col);
}

}  // namespace

ScoreMatrix deep_scores(const FeatureGrid& f_ir, const FeatureGrid& f_vi, const GridPointSet& pts_ir,
                        const GridPointSet& pts_vi) {
    if (f_ir.dim() != f_vi.dim()) {
        std::ostringstream msg;
        msg << "deep_scores: descriptor dims differ (" << f_ir.dim() << " vs " << f_vi.dim() << ")";
        throw ShapeError(msg.str());
    }
    std::vector<std::span<const float>> dv;
    dv.reserve(pts_vi.size());
    for (const auto& q : pts_vi.points()) dv.push_back(descriptor_at(f_vi, q, "visible"));

    ScoreMatrix s(pts_ir.size(), pts_vi.size());
    for (std::size_t m = 0; m < pts_ir.size(); ++m) {
        auto a = descriptor_at(f_ir, pts_ir[m], "infrared");
        for (std::size_t n = 0; n < dv.size(); ++n) {
            double dot = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) dot += static_cast<double>(a[k]) * dv[n][k];
            // float payload rounding can push unit self-products a few ulps past 1
            s(m, n) = std::clamp(dot, -1.0, 1.0);
        }
    }
    return s;
}

}  // namespace sroi
