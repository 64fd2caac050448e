#include "sroi/hol.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

namespace sroi {

void HOLParams::validate() const {
    if (stride <= 0 || k_max <= stride || k_max % stride != 0) {
        std::ostringstream msg;
        msg << "invalid HOL params: stride=" << stride << " k_max=" << k_max
            << " (need stride > 0, k_max > stride, k_max % stride == 0)";
        throw std::invalid_argument(msg.str());
    }
}

Direction ring_direction(int dx, int dy) {
    const int ax = std::abs(dx), ay = std::abs(dy);
    if (ay > ax) return dy < 0 ? Direction::Top : Direction::Bottom;
    return dx < 0 ? Direction::Left : Direction::Right;
}

std::vector<HOLDescriptor> build_hol(const GridPointSet& pts, const HOLParams& params) {
    params.validate();
    const int layers = params.layers();
    const auto& p = pts.points();
    std::vector<HOLDescriptor> out(p.size(), HOLDescriptor{std::vector<std::uint32_t>(static_cast<std::size_t>(layers) * kDirections, 0)});
    for (std::size_t i = 0; i < p.size(); ++i) {
        auto& counts = out[i].counts;
        for (std::size_t j = 0; j < p.size(); ++j) {
            if (i == j) continue;
            const int dx = p[j].x - p[i].x, dy = p[j].y - p[i].y;
            const int d = std::max(std::abs(dx), std::abs(dy));
            if (d >= params.k_max || d % params.stride != 0) continue;
            const int layer = d / params.stride - 1;
            ++counts[static_cast<std::size_t>(layer) * kDirections + static_cast<int>(ring_direction(dx, dy))];
        }
    }
    return out;
}

double chi2_cost(const HOLDescriptor& a, const HOLDescriptor& b) {
    if (a.counts.size() != b.counts.size()) {
        std::ostringstream msg;
        msg << "chi2_cost: descriptor lengths differ (" << a.counts.size() << " vs " << b.counts.size() << ")";
        throw ShapeError(msg.str());
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < a.counts.size(); ++i) {
        const double s = static_cast<double>(a.counts[i]) + b.counts[i];
        if (s == 0.0) continue;
        const double d = static_cast<double>(a.counts[i]) - static_cast<double>(b.counts[i]);
        sum += d * d / s;
    }
    return 0.5 * sum;
}

CostMatrix hol_cost_matrix(std::span<const HOLDescriptor> d_ir, std::span<const HOLDescriptor> d_vi) {
    CostMatrix c(d_ir.size(), d_vi.size());
    for (std::size_t m = 0; m < d_ir.size(); ++m)
        for (std::size_t n = 0; n < d_vi.size(); ++n) c(m, n) = chi2_cost(d_ir[m], d_vi[n]);
    return c;
}

}  // namespace sroi
