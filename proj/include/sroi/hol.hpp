#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sroi/features.hpp"
#include "sroi/imagecore.hpp"

namespace sroi {

// Ring spacing and exclusive outer radius of the HOL neighborhoods.
struct HOLParams {
    int stride = kCellSize;
    int k_max = 240;

    int layers() const { return k_max / stride - 1; }
    void validate() const;
};

enum class Direction : int { Top = 0, Bottom = 1, Left = 2, Right = 3 };
inline constexpr int kDirections = 4;

// Per-point counts of region points on concentric Chebyshev rings, split by
// cardinal direction. Layer-major: counts[layer*4 + direction].
struct HOLDescriptor {
    std::vector<std::uint32_t> counts;

    std::uint32_t at(int layer, Direction d) const { return counts[layer * kDirections + static_cast<int>(d)]; }
    friend bool operator==(const HOLDescriptor&, const HOLDescriptor&) = default;
};

// Direction of offset (dx,dy) from the reference point; diagonals go left/right.
Direction ring_direction(int dx, int dy);

std::vector<HOLDescriptor> build_hol(const GridPointSet& pts, const HOLParams& params = {});

// Half the chi-square statistic over all bins; empty bins contribute zero.
double chi2_cost(const HOLDescriptor& a, const HOLDescriptor& b);

using CostMatrix = Matrix;

CostMatrix hol_cost_matrix(std::span<const HOLDescriptor> d_ir, std::span<const HOLDescriptor> d_vi);

}  // namespace sroi
