#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sroi/imagecore.hpp"

namespace sroi {

// Dense descriptor map at 1/8 resolution: one descriptor per grid cell.
// Every descriptor is unit-length or exactly zero (empty/flat cell).
class FeatureGrid {
public:
    FeatureGrid() = default;
    // Takes the payload as-is; use normalize_descriptors() to enforce the norm invariant.
    FeatureGrid(int grid_h, int grid_w, int dim, std::vector<float> data);

    int grid_h() const { return grid_h_; }
    int grid_w() const { return grid_w_; }
    int dim() const { return dim_; }
    std::span<const float> data() const { return data_; }

    std::span<const float> descriptor(int row, int col) const {
        return {data_.data() + offset(row, col), static_cast<std::size_t>(dim_)};
    }
    std::span<float> descriptor(int row, int col) {
        return {data_.data() + offset(row, col), static_cast<std::size_t>(dim_)};
    }

    // Rescales every descriptor whose norm is off {0,1} by more than tol.
    // Returns how many were touched.
    std::size_t normalize_descriptors(double tol = 1e-3);

    friend bool operator==(const FeatureGrid&, const FeatureGrid&) = default;

private:
    std::size_t offset(int row, int col) const {
        return (static_cast<std::size_t>(row) * grid_w_ + col) * dim_;
    }

    int grid_h_ = 0;
    int grid_w_ = 0;
    int dim_ = 0;
    std::vector<float> data_;
};

struct GradHistOptions {
    // Fold orientations modulo pi so contrast-inverted structure maps to the same bins.
    bool unsigned_orientation = false;
};

// 4x4 spatial subcells x 8 orientation bins over the 16x16 window centered on each cell.
FeatureGrid extract_gradhist(const Image& img, GradHistOptions opts = {});
// Standardized 8x8 cell intensities (dim 64).
FeatureGrid extract_meanvar(const Image& img);

enum class Descriptor { gradhist, gradhist_unsigned, meanvar };

FeatureGrid extract_features(const Image& img, Descriptor kind);
// "gradhist", "gradhist-unsigned", "meanvar"; throws std::invalid_argument otherwise.
Descriptor parse_descriptor(const std::string& name);
std::string descriptor_name(Descriptor kind);

struct LoadedFeatureGrid {
    FeatureGrid grid;
    std::size_t renormalized = 0;  // descriptors whose norm was repaired on load
};

// Binary "FGRD" interchange format; see README.
LoadedFeatureGrid load_feature_grid(const std::filesystem::path& path);
void save_feature_grid(const FeatureGrid& grid, const std::filesystem::path& path);

class SaliencyMap {
public:
    SaliencyMap() = default;
    SaliencyMap(int grid_h, int grid_w, std::vector<double> values);

    int grid_h() const { return grid_h_; }
    int grid_w() const { return grid_w_; }
    double at(int row, int col) const { return values_[static_cast<std::size_t>(row) * grid_w_ + col]; }
    std::span<const double> values() const { return values_; }

private:
    int grid_h_ = 0;
    int grid_w_ = 0;
    std::vector<double> values_;
};

// Row/column average pooling combined additively, reduced over channels by
// L2 norm and min-max rescaled to [0,1].
SaliencyMap strip_pool_saliency(const FeatureGrid& grid);

// Full-resolution mask: every cell with saliency >= threshold becomes a true 8x8 block.
RegionMask propose_mask(const SaliencyMap& sal, double threshold);

// Dense row-major real matrix used for score, cost and weight matrices.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }

    Matrix transposed() const;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

using ScoreMatrix = Matrix;

// Inner products of the cell descriptors under each pair of grid points.
ScoreMatrix deep_scores(const FeatureGrid& f_ir, const FeatureGrid& f_vi, const GridPointSet& pts_ir,
                        const GridPointSet& pts_vi);

}  // namespace sroi
