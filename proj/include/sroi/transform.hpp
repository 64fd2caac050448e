#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sroi/imagecore.hpp"

namespace sroi {

// A transformation could not be estimated (degenerate or ill-conditioned input).
class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Thin-plate spline: affine part plus radial terms U(r) = r^2 ln r around each
// control point. Immutable once fitted.
class TPSModel {
public:
    const std::vector<Point2>& control_points() const { return control_; }
    // N x 2 radial weights, one column per output coordinate.
    const Eigen::MatrixX2d& weights() const { return weights_; }
    // Rows: constant, x coefficient, y coefficient.
    const Eigen::Matrix<double, 3, 2>& affine() const { return affine_; }
    double regularization() const { return reg_; }

    // Rebuilds a model from stored coefficients (e.g. a ground-truth sidecar).
    static TPSModel from_coefficients(std::vector<Point2> control, Eigen::MatrixX2d weights,
                                      const Eigen::Matrix<double, 3, 2>& affine, double reg = 0.0);

    Point2 apply(const Point2& p) const;
    Point2 apply_affine(const Point2& p) const;
    // trace(W^T K W) over the unregularized kernel.
    double bending_energy() const;
    // Plain-text coefficient listing for debugging.
    std::string dump() const;

private:
    friend TPSModel fit_tps(std::span<const Point2>, std::span<const Point2>, double);

    std::vector<Point2> control_;
    Eigen::MatrixX2d weights_;
    Eigen::Matrix<double, 3, 2> affine_ = Eigen::Matrix<double, 3, 2>::Zero();
    double reg_ = 0.0;
};

double tps_kernel(double r);

// Regularization used when fitting matched grid points, whose positions carry
// up to half a cell of quantization noise.
inline constexpr double kDefaultTpsReg = 10000.0;

// Solves the bordered kernel system mapping src onto dst. reg > 0 adds reg*I to
// the kernel block and trades interpolation for smoothness.
TPSModel fit_tps(std::span<const Point2> src, std::span<const Point2> dst, double reg = 0.0);
inline Point2 tps_apply(const TPSModel& model, const Point2& p) { return model.apply(p); }

// Projective plane map; stored with unit Frobenius norm and h(2,2) >= 0.
class HomographyModel {
public:
    HomographyModel() : h_(Eigen::Matrix3d::Identity() / std::sqrt(3.0)) {}
    // Throws FitError when h is singular.
    explicit HomographyModel(const Eigen::Matrix3d& h);

    const Eigen::Matrix3d& matrix() const { return h_; }
    HomographyModel inverse() const;

    // Throws std::domain_error for points mapped to infinity.
    Point2 apply(const Point2& p) const;
    std::string dump() const;

private:
    Eigen::Matrix3d h_;
};

// Normalized DLT: both sets are scaled to mean distance sqrt(2) from their
// centroid before the SVD solve. Least squares for more than 4 points.
HomographyModel fit_homography(std::span<const Point2> src, std::span<const Point2> dst);
inline Point2 homography_apply(const HomographyModel& model, const Point2& p) { return model.apply(p); }

// True when any three of the points are (numerically) collinear.
bool has_collinear_triple(std::span<const Point2> pts);

using PointMapping = std::function<Point2(const Point2&)>;

// Inverse warp: each output pixel center is mapped into the source image and
// sampled bilinearly; samples outside the source (or non-finite) give 0.
Image warp_image(const Image& src, const PointMapping& out_to_src, Size out_size);
Image warp_image(const Image& src, const TPSModel& out_to_src, Size out_size);
Image warp_image(const Image& src, const HomographyModel& out_to_src, Size out_size);

double sample_bilinear(const Image& img, double x, double y);

}  // namespace sroi
