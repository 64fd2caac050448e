#include "sroi/transform.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace sroi {

namespace {

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

bool collinear(const Point2& a, const Point2& b, const Point2& c) {
    const double cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    const double l2 = std::max({(b.x - a.x) * (b.x - a.x) + (b.y - a.y) * (b.y - a.y),
                                (c.x - a.x) * (c.x - a.x) + (c.y - a.y) * (c.y - a.y),
                                (c.x - b.x) * (c.x - b.x) + (c.y - b.y) * (c.y - b.y)});
    return l2 == 0.0 || std::abs(cross) <= 1e-9 * l2;
}

// Similarity transform taking pts to zero mean and mean radius sqrt(2).
Eigen::Matrix3d normalizer(std::span<const Point2> pts) {
    double cx = 0.0, cy = 0.0;
    for (const auto& p : pts) {
        cx += p.x;
        cy += p.y;
    }
    cx /= static_cast<double>(pts.size());
    cy /= static_cast<double>(pts.size());
    double mean_r = 0.0;
    for (const auto& p : pts) mean_r += std::hypot(p.x - cx, p.y - cy);
    mean_r /= static_cast<double>(pts.size());
    if (mean_r <= 0.0) throw FitError("fit_homography: all points coincide");
    const double s = std::sqrt(2.0) / mean_r;
    Eigen::Matrix3d t;
    t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
    return t;
}

}  // namespace

double tps_kernel(double r) { return r > 0.0 ? r * r * std::log(r) : 0.0; }

Point2 TPSModel::apply_affine(const Point2& p) const {
    return {affine_(0, 0) + affine_(1, 0) * p.x + affine_(2, 0) * p.y,
            affine_(0, 1) + affine_(1, 1) * p.x + affine_(2, 1) * p.y};
}

Point2 TPSModel::apply(const Point2& p) const {
    Point2 out = apply_affine(p);
    for (std::size_t i = 0; i < control_.size(); ++i) {
        const double dx = p.x - control_[i].x, dy = p.y - control_[i].y;
        const double r2 = dx * dx + dy * dy;
        if (r2 == 0.0) continue;
        const double u = 0.5 * r2 * std::log(r2);
        out.x += weights_(static_cast<Eigen::Index>(i), 0) * u;
        out.y += weights_(static_cast<Eigen::Index>(i), 1) * u;
    }
    return out;
}

TPSModel TPSModel::from_coefficients(std::vector<Point2> control, Eigen::MatrixX2d weights,
                                     const Eigen::Matrix<double, 3, 2>& affine, double reg) {
    if (weights.rows() != static_cast<Eigen::Index>(control.size()))
        throw FitError("TPS coefficients: weight rows != control point count");
    TPSModel m;
    m.control_ = std::move(control);
    m.weights_ = std::move(weights);
    m.affine_ = affine;
    m.reg_ = reg;
    return m;
}

double TPSModel::bending_energy() const {
    const auto n = static_cast<Eigen::Index>(control_.size());
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            k(i, j) = tps_kernel(std::hypot(control_[i].x - control_[j].x, control_[i].y - control_[j].y));
    return (weights_.transpose() * k * weights_).trace();
}

std::string TPSModel::dump() const {
    // tps / n / reg / control i x y / weight i wx wy / affine row c_x c_y
    std::ostringstream out;
    out << "tps\n" << "n " << control_.size() << "\n" << "reg " << fmt_g(reg_) << "\n";
    for (std::size_t i = 0; i < control_.size(); ++i)
        out << "control " << i << " " << fmt_g(control_[i].x) << " " << fmt_g(control_[i].y) << "\n";
    for (std::size_t i = 0; i < control_.size(); ++i)
        out << "weight " << i << " " << fmt_g(weights_(static_cast<Eigen::Index>(i), 0)) << " "
            << fmt_g(weights_(static_cast<Eigen::Index>(i), 1)) << "\n";
    for (int r = 0; r < 3; ++r) out << "affine " << r << " " << fmt_g(affine_(r, 0)) << " " << fmt_g(affine_(r, 1)) << "\n";
    return out.str();
}

TPSModel fit_tps(std::span<const Point2> src, std::span<const Point2> dst, double reg) {
    if (src.size() != dst.size()) throw FitError("fit_tps: src and dst sizes differ");
    if (src.size() < 3) throw FitError("fit_tps: need at least 3 control points, got " + std::to_string(src.size()));
    if (!(reg >= 0.0)) throw FitError("fit_tps: regularization must be >= 0");
    const auto n = static_cast<Eigen::Index>(src.size());

    // collinear configurations leave the affine block rank-deficient
    double cx = 0.0, cy = 0.0;
    for (const auto& p : src) {
        cx += p.x;
        cy += p.y;
    }
    cx /= static_cast<double>(n);
    cy /= static_cast<double>(n);
    Eigen::Matrix2d scatter = Eigen::Matrix2d::Zero();
    for (const auto& p : src) {
        Eigen::Vector2d d(p.x - cx, p.y - cy);
        scatter += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(scatter);
    if (eig.eigenvalues()(1) <= 0.0 || eig.eigenvalues()(0) <= 1e-12 * eig.eigenvalues()(1))
        throw FitError("fit_tps: control points are collinear");
    if (reg == 0.0) {
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = i + 1; j < n; ++j)
                if (src[i].x == src[j].x && src[i].y == src[j].y)
                    throw FitError("fit_tps: duplicate control point (" + fmt_g(src[i].x) + ", " + fmt_g(src[i].y) + ")");
    }

    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n + 3, n + 3);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 3, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j)
            l(i, j) = tps_kernel(std::hypot(src[i].x - src[j].x, src[i].y - src[j].y));
        l(i, i) += reg;
        l(i, n) = 1.0;
        l(i, n + 1) = src[i].x;
        l(i, n + 2) = src[i].y;
        l(n, i) = 1.0;
        l(n + 1, i) = src[i].x;
        l(n + 2, i) = src[i].y;
        rhs(i, 0) = dst[i].x;
        rhs(i, 1) = dst[i].y;
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(l);
    Eigen::MatrixXd sol = lu.solve(rhs);
    const double resid = (l * sol - rhs).norm();
    const double scale = l.norm() * sol.norm() + rhs.norm();
    if (!sol.allFinite() || resid > 1e-8 * scale)
        throw FitError("fit_tps: ill-conditioned system (relative residual " + fmt_g(resid / scale) + ")");

    TPSModel m;
    m.control_.assign(src.begin(), src.end());
    m.weights_ = sol.topRows(n);
    m.affine_ = sol.bottomRows(3);
    m.reg_ = reg;
    return m;
}

HomographyModel::HomographyModel(const Eigen::Matrix3d& h) {
    const double f = h.norm();
    if (!(f > 0.0) || !h.allFinite()) throw FitError("homography: zero or non-finite matrix");
    h_ = h / f;
    if (h_(2, 2) < 0.0) h_ = -h_;
    if (std::abs(h_.determinant()) < 1e-14) throw FitError("homography: matrix is singular");
}

HomographyModel HomographyModel::inverse() const { return HomographyModel(h_.inverse()); }

Point2 HomographyModel::apply(const Point2& p) const {
    const double w = h_(2, 0) * p.x + h_(2, 1) * p.y + h_(2, 2);
    if (std::abs(w) <= 1e-12) throw std::domain_error("homography maps point to infinity");
    return {(h_(0, 0) * p.x + h_(0, 1) * p.y + h_(0, 2)) / w, (h_(1, 0) * p.x + h_(1, 1) * p.y + h_(1, 2)) / w};
}

std::string HomographyModel::dump() const {
    // homography / h r c value, row-major
    std::ostringstream out;
    out << "homography\n";
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) out << "h " << r << " " << c << " " << fmt_g(h_(r, c)) << "\n";
    return out.str();
}

bool has_collinear_triple(std::span<const Point2> pts) {
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j)
            for (std::size_t k = j + 1; k < pts.size(); ++k)
                if (collinear(pts[i], pts[j], pts[k])) return true;
    return false;
}

HomographyModel fit_homography(std::span<const Point2> src, std::span<const Point2> dst) {
    if (src.size() != dst.size()) throw FitError("fit_homography: src and dst sizes differ");
    if (src.size() < 4) throw FitError("fit_homography: need at least 4 correspondences, got " + std::to_string(src.size()));
    if (src.size() == 4 && (has_collinear_triple(src) || has_collinear_triple(dst)))
        throw FitError("fit_homography: degenerate configuration (three collinear points)");

    const Eigen::Matrix3d ts = normalizer(src), td = normalizer(dst);
    const auto n = static_cast<Eigen::Index>(src.size());
    Eigen::MatrixXd a(2 * n, 9);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Vector3d p = ts * Eigen::Vector3d(src[i].x, src[i].y, 1.0);
        const Eigen::Vector3d q = td * Eigen::Vector3d(dst[i].x, dst[i].y, 1.0);
        const double x = p(0), y = p(1), u = q(0), v = q(1);
        a.row(2 * i) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
        a.row(2 * i + 1) << x, y, 1, 0, 0, 0, -u * x, -u * y, -u;
    }
    // The null vector is the right singular vector of the smallest singular value.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv.size() >= 8 && sv(7) <= 1e-10 * sv(0))
        throw FitError("fit_homography: degenerate configuration (rank-deficient design matrix)");
    const Eigen::VectorXd h = svd.matrixV().col(8);
    Eigen::Matrix3d hn;
    hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
    return HomographyModel(td.inverse() * hn * ts);
}

double sample_bilinear(const Image& img, double x, double y) {
    // Round-off from a fitted identity must not leak neighbours in or drop border pixels.
    constexpr double snap = 1e-9;
    if (std::abs(x - std::round(x)) < snap) x = std::round(x);
    if (std::abs(y - std::round(y)) < snap) y = std::round(y);
    const int w = img.width(), h = img.height();
    if (!(x >= 0.0 && y >= 0.0 && x <= w - 1 && y <= h - 1)) return 0.0;
    const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const double fx = x - x0, fy = y - y0;
    const double top = (1.0 - fx) * img.at(x0, y0) + fx * img.at(x1, y0);
    const double bot = (1.0 - fx) * img.at(x0, y1) + fx * img.at(x1, y1);
    return std::clamp((1.0 - fy) * top + fy * bot, 0.0, 1.0);
}

Image warp_image(const Image& src, const PointMapping& out_to_src, Size out_size) {
    Image out(out_size.width, out_size.height);
    for (int y = 0; y < out_size.height; ++y) {
        for (int x = 0; x < out_size.width; ++x) {
            const Point2 s = out_to_src({static_cast<double>(x), static_cast<double>(y)});
            out.set(x, y, sample_bilinear(src, s.x, s.y));
        }
    }
    return out;
}

Image warp_image(const Image& src, const TPSModel& out_to_src, Size out_size) {
    return warp_image(src, [&](const Point2& p) { return out_to_src.apply(p); }, out_size);
}

Image warp_image(const Image& src, const HomographyModel& out_to_src, Size out_size) {
    return warp_image(
        src,
        [&](const Point2& p) {
            try {
                return out_to_src.apply(p);
            } catch (const std::domain_error&) {
                constexpr double nan = std::numeric_limits<double>::quiet_NaN();
                return Point2{nan, nan};
            }
        },
        out_size);
}

}  // namespace sroi
