#include "sroi/evalfuse.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <vector>

namespace sroi {

namespace {

void require_same_size(const Image& a, const Image& b, const char* who) {
    if (a.size() != b.size()) {
        std::ostringstream msg;
        msg << who << ": image sizes differ (" << a.width() << "x" << a.height() << " vs " << b.width() << "x"
            << b.height() << ")";
        throw ShapeError(msg.str());
    }
}

void require_mask_size(const Image& img, const RegionMask* mask, const char* who) {
    if (mask && mask->size() != img.size()) throw ShapeError(std::string(who) + ": mask size differs from image");
}

void require_min_size(const Image& img, int n, const char* who) {
    if (img.width() < n || img.height() < n) {
        std::ostringstream msg;
        msg << who << ": image must be at least " << n << "x" << n;
        throw std::invalid_argument(msg.str());
    }
}

bool selected(const RegionMask* mask, int x, int y) { return !mask || mask->at(x, y); }

using Histogram = std::array<double, 256>;

Histogram marginal(const Image& img, const RegionMask* mask) {
    Histogram h{};
    std::size_t n = 0;
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            if (selected(mask, x, y)) {
                h[to_byte(img.at(x, y))] += 1.0;
                ++n;
            }
    if (n > 0)
        for (double& v : h) v /= static_cast<double>(n);
    return h;
}

std::string fmt_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

Image fuse(const Image& ir, const Image& vi, FusionStrategy strategy, const RegionMask* mask) {
    require_same_size(ir, vi, "fuse");
    if (strategy == FusionStrategy::mask_max) {
        if (!mask) throw std::invalid_argument("fuse: mask_max needs a mask");
        require_mask_size(ir, mask, "fuse");
    }
    Image out(ir.width(), ir.height());
    for (int y = 0; y < ir.height(); ++y) {
        for (int x = 0; x < ir.width(); ++x) {
            const double a = ir.at(x, y), b = vi.at(x, y);
            const bool take_max =
                strategy == FusionStrategy::max || (strategy == FusionStrategy::mask_max && mask->at(x, y));
            out.set(x, y, take_max ? std::max(a, b) : 0.5 * (a + b));
        }
    }
    return out;
}

double ssim(const Image& a, const Image& b, const RegionMask* mask) {
    require_same_size(a, b, "ssim");
    require_min_size(a, 11, "ssim");
    require_mask_size(a, mask, "ssim");
    constexpr int kRadius = 5;
    constexpr double kSigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    std::array<double, 2 * kRadius + 1> g{};
    double gsum = 0.0;
    for (int i = -kRadius; i <= kRadius; ++i) gsum += g[i + kRadius] = std::exp(-(i * i) / (2.0 * kSigma * kSigma));
    for (double& v : g) v /= gsum;

    double total = 0.0;
    std::size_t windows = 0;
    for (int cy = kRadius; cy < a.height() - kRadius; ++cy) {
        for (int cx = kRadius; cx < a.width() - kRadius; ++cx) {
            if (!selected(mask, cx, cy)) continue;
            double ma = 0.0, mb = 0.0;
            for (int dy = -kRadius; dy <= kRadius; ++dy)
                for (int dx = -kRadius; dx <= kRadius; ++dx) {
                    const double w = g[dy + kRadius] * g[dx + kRadius];
                    ma += w * a.at(cx + dx, cy + dy);
                    mb += w * b.at(cx + dx, cy + dy);
                }
            double va = 0.0, vb = 0.0, cov = 0.0;
            for (int dy = -kRadius; dy <= kRadius; ++dy)
                for (int dx = -kRadius; dx <= kRadius; ++dx) {
                    const double w = g[dy + kRadius] * g[dx + kRadius];
                    const double da = a.at(cx + dx, cy + dy) - ma, db = b.at(cx + dx, cy + dy) - mb;
                    va += w * da * da;
                    vb += w * db * db;
                    cov += w * da * db;
                }
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++windows;
        }
    }
    if (windows == 0) throw std::invalid_argument("ssim: mask selects no complete 11x11 window");
    return total / static_cast<double>(windows);
}

double ssim_loss(const Image& a, const Image& b) { return 1.0 - ssim(a, b); }

double l1(const Image& a, const Image& b) {
    require_same_size(a, b, "l1");
    if (a.empty()) throw std::invalid_argument("l1: empty images");
    double s = 0.0;
    const auto da = a.data(), db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) s += std::abs(da[i] - db[i]);
    return s / static_cast<double>(da.size());
}

double ifm_loss(const Image& a, const Image& b) { return ssim_loss(a, b) * 0.3 + l1(a, b) * 0.7; }

double weighted_bce(std::span<const double> pred, std::span<const double> gt, double w) {
    if (pred.size() != gt.size()) throw ShapeError("weighted_bce: prediction and label sizes differ");
    if (pred.empty()) throw std::invalid_argument("weighted_bce: empty input");
    constexpr double eps = 1e-7;
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = std::clamp(pred[i], eps, 1.0 - eps);
        const double y = gt[i];
        s += w * y * std::log(p) + (1.0 - w) * (1.0 - y) * std::log(1.0 - p);
    }
    return -s / static_cast<double>(pred.size());
}

double ag(const Image& img, const RegionMask* mask) {
    require_min_size(img, 3, "ag");
    require_mask_size(img, mask, "ag");
    double s = 0.0;
    std::size_t n = 0;
    for (int y = 0; y + 1 < img.height(); ++y)
        for (int x = 0; x + 1 < img.width(); ++x) {
            if (!selected(mask, x, y)) continue;
            const double gx = img.at(x + 1, y) - img.at(x, y);
            const double gy = img.at(x, y + 1) - img.at(x, y);
            s += std::sqrt((gx * gx + gy * gy) / 2.0);
            ++n;
        }
    return n ? s / static_cast<double>(n) : 0.0;
}

double ei(const Image& img, const RegionMask* mask) {
    require_min_size(img, 3, "ei");
    require_mask_size(img, mask, "ei");
    double s = 0.0;
    std::size_t n = 0;
    for (int y = 1; y + 1 < img.height(); ++y)
        for (int x = 1; x + 1 < img.width(); ++x) {
            if (!selected(mask, x, y)) continue;
            auto p = [&](int dx, int dy) { return img.at(x + dx, y + dy); };
            const double sx = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
            const double sy = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
            s += std::sqrt(sx * sx + sy * sy);
            ++n;
        }
    return n ? s / static_cast<double>(n) : 0.0;
}

double ct(const Image& img, const RegionMask* mask) {
    require_min_size(img, 3, "ct");
    require_mask_size(img, mask, "ct");
    double sum = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            if (selected(mask, x, y)) {
                sum += img.at(x, y);
                ++n;
            }
    if (n == 0) return 0.0;
    const double mean = sum / static_cast<double>(n);
    double m2 = 0.0, m4 = 0.0;
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            if (selected(mask, x, y)) {
                const double d = img.at(x, y) - mean, d2 = d * d;
                m2 += d2;
                m4 += d2 * d2;
            }
    m2 /= static_cast<double>(n);
    m4 /= static_cast<double>(n);
    if (m2 <= 1e-24) return 0.0;
    const double kurtosis = m4 / (m2 * m2);
    return std::sqrt(m2) / std::pow(kurtosis, 0.25);
}

double entropy(const Image& img, const RegionMask* mask) {
    require_mask_size(img, mask, "entropy");
    const Histogram p = marginal(img, mask);
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log2(v);
    return h;
}

double ce(const Image& a, const Image& b, const RegionMask* mask) {
    require_same_size(a, b, "ce");
    require_mask_size(a, mask, "ce");
    const Histogram p = marginal(a, mask), q = marginal(b, mask);
    double h = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) h -= p[i] * std::log2(std::max(q[i], 1e-12));
    return h;
}

double mi(const Image& a, const Image& b, const RegionMask* mask) {
    require_same_size(a, b, "mi");
    require_mask_size(a, mask, "mi");
    std::vector<double> joint(256 * 256, 0.0);
    std::size_t n = 0;
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x)
            if (selected(mask, x, y)) {
                joint[static_cast<std::size_t>(to_byte(a.at(x, y))) * 256 + to_byte(b.at(x, y))] += 1.0;
                ++n;
            }
    if (n == 0) return 0.0;
    const Histogram p = marginal(a, mask), q = marginal(b, mask);
    double m = 0.0;
    for (std::size_t i = 0; i < 256; ++i)
        for (std::size_t j = 0; j < 256; ++j) {
            const double jp = joint[i * 256 + j] / static_cast<double>(n);
            if (jp > 0.0) m += jp * std::log2(jp / (p[i] * q[j]));
        }
    return std::max(m, 0.0);
}

AccuracyResult match_accuracy(const MatchSet& matches, const GroundTruthMap& gt, double tol) {
    AccuracyResult r;
    r.matches = matches.size();
    for (const auto& m : matches.pairs) {
        const Point2 expect = gt(m.ir.to_point());
        if (std::hypot(m.vi.x - expect.x, m.vi.y - expect.y) <= tol) ++r.correct;
    }
    r.accuracy = r.matches ? static_cast<double>(r.correct) / static_cast<double>(r.matches) : 0.0;
    return r;
}

AccuracyResult match_accuracy_identity(const MatchSet& matches, double tol) {
    return match_accuracy(matches, [](const Point2& p) { return p; }, tol);
}

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["ag"] = ag;
    j["ce"] = ce;
    j["ei"] = ei;
    j["mi"] = mi;
    j["ssim"] = ssim;
    j["ct"] = ct;
    j["matches"] = matches;
    j["correct_matches"] = correct_matches;
    j["accuracy"] = accuracy;
    return j.dump(2) + "\n";
}

std::string MetricsReport::to_tsv() const {
    std::string out;
    auto line = [&](const char* k, const std::string& v) { out += std::string(k) + "\t" + v + "\n"; };
    line("ag", fmt_num(ag));
    line("ce", fmt_num(ce));
    line("ei", fmt_num(ei));
    line("mi", fmt_num(mi));
    line("ssim", fmt_num(ssim));
    line("ct", fmt_num(ct));
    line("matches", std::to_string(matches));
    line("correct_matches", std::to_string(correct_matches));
    line("accuracy", fmt_num(accuracy));
    return out;
}

MetricsReport compute_metrics(const Image& registered_ir, const Image& vi, const Image& fused, const RegionMask* mask) {
    require_same_size(registered_ir, vi, "compute_metrics");
    require_same_size(fused, vi, "compute_metrics");
    MetricsReport r;
    r.ce = ce(registered_ir, vi, mask);
    r.mi = mi(registered_ir, vi, mask);
    r.ssim = ssim(registered_ir, vi, mask);
    r.ag = ag(fused, mask);
    r.ei = ei(fused, mask);
    r.ct = ct(fused, mask);
    return r;
}

}  // namespace sroi
