#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sroi {

// Malformed or unsupported raster/feature file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand shapes disagree (images, matrices, descriptors).
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Grid cell edge length in pixels; feature maps live at 1/8 resolution.
inline constexpr int kCellSize = 8;

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point2&, const Point2&) = default;
};

struct Size {
    int width = 0;
    int height = 0;

    friend bool operator==(const Size&, const Size&) = default;
};

// Single-channel intensity raster, row-major, values in [0,1].
class Image {
public:
    Image() = default;
    Image(int width, int height, double fill = 0.0);
    // Values outside [0,1] are rejected.
    Image(int width, int height, std::vector<double> data);

    int width() const { return width_; }
    int height() const { return height_; }
    Size size() const { return {width_, height_}; }
    bool empty() const { return data_.empty(); }

    double at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    // Unchecked write; callers keep values inside [0,1].
    void set(int x, int y, double v) { data_[static_cast<std::size_t>(y) * width_ + x] = v; }

    std::span<const double> data() const { return data_; }

    friend bool operator==(const Image&, const Image&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

// Binary sROI at full image resolution; true = inside the region.
class RegionMask {
public:
    RegionMask() = default;
    RegionMask(int width, int height, bool fill = false);
    RegionMask(int width, int height, std::vector<std::uint8_t> bits);

    int width() const { return width_; }
    int height() const { return height_; }
    Size size() const { return {width_, height_}; }

    bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
    // Out-of-range coordinates read as false.
    bool at_or_false(int x, int y) const {
        return x >= 0 && y >= 0 && x < width_ && y < height_ && at(x, y);
    }
    void set(int x, int y, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
    std::size_t count() const;

    friend bool operator==(const RegionMask&, const RegionMask&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> bits_;
};

// Center of a stride-8 grid cell, in full-resolution pixel coordinates.
struct GridPoint {
    int x = 0;
    int y = 0;

    int cell_col() const { return (x - kCellSize / 2) / kCellSize; }
    int cell_row() const { return (y - kCellSize / 2) / kCellSize; }
    Point2 to_point() const { return {static_cast<double>(x), static_cast<double>(y)}; }

    friend bool operator==(const GridPoint&, const GridPoint&) = default;
    friend auto operator<=>(const GridPoint& a, const GridPoint& b) {
        if (auto c = a.y <=> b.y; c != 0) return c;
        return a.x <=> b.x;
    }
};

inline GridPoint cell_center(int row, int col) {
    return {kCellSize * col + kCellSize / 2, kCellSize * row + kCellSize / 2};
}

// Region grid points in row-major order plus the statistics the hybrid
// scorer needs. area() is the region area proxy (point count).
class GridPointSet {
public:
    GridPointSet() = default;
    // Sorts and deduplicates.
    explicit GridPointSet(std::vector<GridPoint> points);

    const std::vector<GridPoint>& points() const { return points_; }
    std::size_t size() const { return points_.size(); }
    bool empty() const { return points_.empty(); }
    std::size_t area() const { return points_.size(); }
    const GridPoint& operator[](std::size_t i) const { return points_[i]; }

    Point2 centroid() const { return centroid_; }
    double max_centroid_dist() const { return max_centroid_dist_; }

private:
    std::vector<GridPoint> points_;
    Point2 centroid_{};
    double max_centroid_dist_ = 0.0;
};

Image load_image(const std::filesystem::path& path);
// 8-bit binary PGM, v -> round(255 v) clamped.
void save_image(const Image& img, const std::filesystem::path& path);

// Accepts full-resolution masks or 1/8-resolution masks (block-replicated).
RegionMask load_mask(const std::filesystem::path& path, Size size);
void save_mask(const RegionMask& mask, const std::filesystem::path& path);

// One point per 8x8 cell holding at least 32 true pixels. Partial cells on the
// bottom/right edge count their missing pixels as false.
GridPointSet grid_points(const RegionMask& mask);

// Quantization shared by save_image and the histogram metrics.
std::uint8_t to_byte(double v);

namespace detail {
struct Raster8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
};
Raster8 read_raster8(const std::filesystem::path& path);
void write_pgm(const Raster8& raster, const std::filesystem::path& path);
// Writes to a sibling temp file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
}  // namespace detail

}  // namespace sroi
