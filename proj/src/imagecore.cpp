#include "sroi/imagecore.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

namespace sroi {

namespace {

void check_dims(int width, int height) {
    if (width <= 0 || height <= 0)
        throw FormatError("raster has zero dimension");
}

std::string read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(const std::string& buf, std::size_t& pos) {
    for (;;) {
        while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
        if (pos < buf.size() && buf[pos] == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    std::size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    return buf.substr(start, pos - start);
}

int parse_header_int(const std::string& tok, const std::filesystem::path& path) {
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
        throw FormatError("bad PGM header in '" + path.string() + "'");
    return std::stoi(tok);
}

detail::Raster8 read_pgm(const std::string& buf, const std::filesystem::path& path) {
    std::size_t pos = 2;
    detail::Raster8 r;
    r.width = parse_header_int(pgm_token(buf, pos), path);
    r.height = parse_header_int(pgm_token(buf, pos), path);
    int maxval = parse_header_int(pgm_token(buf, pos), path);
    check_dims(r.width, r.height);
    if (maxval != 255) throw FormatError("only 8-bit PGM (maxval 255) is supported: '" + path.string() + "'");
    ++pos;  // single whitespace byte before the raster
    std::size_t n = static_cast<std::size_t>(r.width) * r.height;
    if (buf.size() < pos + n) throw FormatError("truncated PGM raster in '" + path.string() + "'");
    r.pixels.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                    buf.begin() + static_cast<std::ptrdiff_t>(pos + n));
    return r;
}

detail::Raster8 read_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw FormatError("cannot decode PNG '" + path.string() + "': " + image.message);
    if (image.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_LINEAR | PNG_FORMAT_FLAG_ALPHA)) {
        png_image_free(&image);
        throw FormatError("only 8-bit grayscale PNG is supported: '" + path.string() + "'");
    }
    detail::Raster8 r;
    r.width = static_cast<int>(image.width);
    r.height = static_cast<int>(image.height);
    if (r.width <= 0 || r.height <= 0) {
        png_image_free(&image);
        throw FormatError("raster has zero dimension");
    }
    image.format = PNG_FORMAT_GRAY;
    r.pixels.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, r.pixels.data(), 0, nullptr))
        throw FormatError("cannot decode PNG '" + path.string() + "': " + image.message);
    return r;
}

}  // namespace

namespace detail {

Raster8 read_raster8(const std::filesystem::path& path) {
    std::string buf = read_all(path);
    if (buf.size() >= 2 && buf[0] == 'P' && buf[1] == '5') return read_pgm(buf, path);
    static constexpr unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (buf.size() >= 8 && std::equal(kPngSig, kPngSig + 8, reinterpret_cast<const unsigned char*>(buf.data())))
        return read_png(path);
    throw FormatError("unsupported raster format (want P5 PGM or grayscale PNG): '" + path.string() + "'");
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write '" + tmp.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

void write_pgm(const Raster8& raster, const std::filesystem::path& path) {
    std::string out = "P5\n" + std::to_string(raster.width) + " " + std::to_string(raster.height) + "\n255\n";
    out.append(raster.pixels.begin(), raster.pixels.end());
    write_file_atomic(path, out);
}

}  // namespace detail

Image::Image(int width, int height, double fill)
    : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill) {
    if (width < 0 || height < 0) throw std::invalid_argument("negative image size");
    if (!(fill >= 0.0 && fill <= 1.0)) throw std::invalid_argument("image fill outside [0,1]");
}

Image::Image(int width, int height, std::vector<double> data)
    : width_(width), height_(height), data_(std::move(data)) {
    if (width < 0 || height < 0) throw std::invalid_argument("negative image size");
    if (data_.size() != static_cast<std::size_t>(width) * height)
        throw ShapeError("image data length != width*height");
    for (double v : data_)
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("image intensity outside [0,1]");
}

RegionMask::RegionMask(int width, int height, bool fill)
    : width_(width), height_(height), bits_(static_cast<std::size_t>(width) * height, fill ? 1 : 0) {
    if (width < 0 || height < 0) throw std::invalid_argument("negative mask size");
}

RegionMask::RegionMask(int width, int height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)) {
    if (bits_.size() != static_cast<std::size_t>(width) * height)
        throw ShapeError("mask bits length != width*height");
    for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t RegionMask::count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

GridPointSet::GridPointSet(std::vector<GridPoint> points) : points_(std::move(points)) {
    std::sort(points_.begin(), points_.end());
    points_.erase(std::unique(points_.begin(), points_.end()), points_.end());
    if (points_.empty()) return;
    double sx = 0.0, sy = 0.0;
    for (const auto& p : points_) {
        sx += p.x;
        sy += p.y;
    }
    const double n = static_cast<double>(points_.size());
    centroid_ = {sx / n, sy / n};
    for (const auto& p : points_)
        max_centroid_dist_ = std::max(max_centroid_dist_, std::hypot(p.x - centroid_.x, p.y - centroid_.y));
}

std::uint8_t to_byte(double v) {
    double r = std::floor(255.0 * v + 0.5);
    return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

Image load_image(const std::filesystem::path& path) {
    auto r = detail::read_raster8(path);
    std::vector<double> data(r.pixels.size());
    std::transform(r.pixels.begin(), r.pixels.end(), data.begin(), [](std::uint8_t b) { return b / 255.0; });
    return Image(r.width, r.height, std::move(data));
}

void save_image(const Image& img, const std::filesystem::path& path) {
    if (img.empty()) throw FormatError("refusing to write an empty image");
    detail::Raster8 r{img.width(), img.height(), {}};
    r.pixels.reserve(img.data().size());
    for (double v : img.data()) r.pixels.push_back(to_byte(v));
    detail::write_pgm(r, path);
}

RegionMask load_mask(const std::filesystem::path& path, Size size) {
    auto r = detail::read_raster8(path);
    if (r.width == size.width && r.height == size.height) {
        std::vector<std::uint8_t> bits(r.pixels.size());
        std::transform(r.pixels.begin(), r.pixels.end(), bits.begin(), [](std::uint8_t b) { return b > 127 ? 1 : 0; });
        return RegionMask(r.width, r.height, std::move(bits));
    }
    const int gw = (size.width + kCellSize - 1) / kCellSize;
    const int gh = (size.height + kCellSize - 1) / kCellSize;
    if (r.width != gw || r.height != gh) {
        std::ostringstream msg;
        msg << "mask '" << path.string() << "' is " << r.width << "x" << r.height << ", expected " << size.width
            << "x" << size.height << " or " << gw << "x" << gh;
        throw ShapeError(msg.str());
    }
    RegionMask mask(size.width, size.height);
    for (int y = 0; y < size.height; ++y)
        for (int x = 0; x < size.width; ++x)
            mask.set(x, y, r.pixels[static_cast<std::size_t>(y / kCellSize) * gw + x / kCellSize] > 127);
    return mask;
}

void save_mask(const RegionMask& mask, const std::filesystem::path& path) {
    detail::Raster8 r{mask.width(), mask.height(), {}};
    r.pixels.reserve(static_cast<std::size_t>(mask.width()) * mask.height());
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x) r.pixels.push_back(mask.at(x, y) ? 255 : 0);
    detail::write_pgm(r, path);
}

GridPointSet grid_points(const RegionMask& mask) {
    constexpr int kMajority = kCellSize * kCellSize / 2;
    const int rows = (mask.height() + kCellSize - 1) / kCellSize;
    const int cols = (mask.width() + kCellSize - 1) / kCellSize;
    std::vector<GridPoint> pts;
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            int inside = 0;
            for (int y = i * kCellSize; y < (i + 1) * kCellSize; ++y)
                for (int x = j * kCellSize; x < (j + 1) * kCellSize; ++x) inside += mask.at_or_false(x, y);
            const GridPoint c = cell_center(i, j);
            if (inside >= kMajority && c.x < mask.width() && c.y < mask.height()) pts.push_back(c);
        }
    }
    return GridPointSet(std::move(pts));
}

}  // namespace sroi
