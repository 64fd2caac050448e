#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "sroi/hdm.hpp"
#include "sroi/imagecore.hpp"

namespace sroi {

enum class FusionStrategy { average, max, mask_max };

// mask_max takes the per-pixel max inside the mask and the average outside;
// the mask is required for that strategy only.
Image fuse(const Image& ir, const Image& vi, FusionStrategy strategy, const RegionMask* mask = nullptr);

// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2.
// With a mask, only windows centered on in-mask pixels are averaged.
double ssim(const Image& a, const Image& b, const RegionMask* mask = nullptr);
double ssim_loss(const Image& a, const Image& b);
double l1(const Image& a, const Image& b);
// 0.3 * ssim_loss + 0.7 * l1.
double ifm_loss(const Image& a, const Image& b);

// Class-weighted binary cross entropy of a probability map against a 0/1 map.
// Predictions are clamped to [1e-7, 1 - 1e-7].
double weighted_bce(std::span<const double> pred, std::span<const double> gt, double w = 0.7);

// Average gradient (forward differences), mean Sobel magnitude, Tamura contrast.
double ag(const Image& img, const RegionMask* mask = nullptr);
double ei(const Image& img, const RegionMask* mask = nullptr);
double ct(const Image& img, const RegionMask* mask = nullptr);

// 256-bin entropies in bits.
double entropy(const Image& img, const RegionMask* mask = nullptr);
double ce(const Image& a, const Image& b, const RegionMask* mask = nullptr);
double mi(const Image& a, const Image& b, const RegionMask* mask = nullptr);

struct AccuracyResult {
    std::size_t matches = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
};

// Maps infrared coordinates into visible coordinates.
using GroundTruthMap = std::function<Point2(const Point2&)>;

// A pair is correct iff ||vi - gt(ir)|| <= tol.
AccuracyResult match_accuracy(const MatchSet& matches, const GroundTruthMap& gt, double tol = 8.0);
AccuracyResult match_accuracy_identity(const MatchSet& matches, double tol = 8.0);

struct MetricsReport {
    double ag = 0.0;
    double ce = 0.0;
    double ei = 0.0;
    double mi = 0.0;
    double ssim = 0.0;
    double ct = 0.0;
    std::size_t matches = 0;
    std::size_t correct_matches = 0;
    double accuracy = 0.0;

    std::string to_json() const;
    // One "name\tvalue" line per field.
    std::string to_tsv() const;
};

// CE/MI/SSIM between the registered pair, AG/EI/CT on the fused image.
MetricsReport compute_metrics(const Image& registered_ir, const Image& vi, const Image& fused,
                              const RegionMask* mask = nullptr);

}  // namespace sroi
