#include "sroi/hdm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/LU>

namespace sroi {

namespace {

// exp(-u^2 / (2 sigma^2)) with u the centroid distance relative to d_max.
double gaussian_term(const GridPoint& p, const GridPointSet& set, double sigma) {
    const double dmax = set.max_centroid_dist();
    const Point2 c = set.centroid();
    const double u = dmax > 0.0 ? std::hypot(p.x - c.x, p.y - c.y) / dmax : 0.0;
    return std::exp(-(u * u) / (2.0 * sigma * sigma));
}

double lambda_prefactor(double sigma) { return 1.0 / (sigma * std::sqrt(2.0 * std::numbers::pi)); }

// Unbiased integer in [0, n) from the raw engine output; std distributions are
// implementation-defined, this is not.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
    const std::uint64_t limit = std::mt19937_64::max() - std::mt19937_64::max() % n;
    for (;;) {
        const std::uint64_t r = rng();
        if (r < limit) return r % n;
    }
}

bool try_apply(const Eigen::Matrix3d& h, const Point2& p, Point2& out) {
    const double w = h(2, 0) * p.x + h(2, 1) * p.y + h(2, 2);
    if (std::abs(w) <= 1e-12) return false;
    out = {(h(0, 0) * p.x + h(0, 1) * p.y + h(0, 2)) / w, (h(1, 0) * p.x + h(1, 1) * p.y + h(1, 2)) / w};
    return true;
}

std::vector<std::size_t> consensus(const HomographyModel& model, const MatchSet& m, double tol) {
    const Eigen::Matrix3d& h = model.matrix();
    const Eigen::Matrix3d hinv = h.inverse();
    std::vector<std::size_t> inliers;
    for (std::size_t i = 0; i < m.pairs.size(); ++i) {
        const Point2 p = m.pairs[i].ir.to_point(), q = m.pairs[i].vi.to_point();
        Point2 fwd, bwd;
        if (!try_apply(h, p, fwd) || !try_apply(hinv, q, bwd)) continue;
        const double e = std::max(std::hypot(fwd.x - q.x, fwd.y - q.y), std::hypot(bwd.x - p.x, bwd.y - p.y));
        if (e < tol) inliers.push_back(i);
    }
    return inliers;
}

MatchSet subset(const MatchSet& m, const std::vector<std::size_t>& idx) {
    MatchSet out;
    out.pairs.reserve(idx.size());
    for (std::size_t i : idx) out.pairs.push_back(m.pairs[i]);
    return out;
}

}  // namespace

void HybridParams::validate() const {
    auto bad = [](const std::string& what) { throw std::invalid_argument("invalid hybrid params: " + what); };
    if (!(delta >= 0.0)) bad("delta must be >= 0");
    if (!(omega > 0.0 && omega <= 1.0)) bad("omega must lie in (0,1]");
    // theta outside [-1,1] is legal and simply admits everything or nothing
    if (!std::isfinite(theta)) bad("theta must be finite");
    if (!(ransac_tol > 0.0)) bad("ransac_tol must be > 0");
    if (ransac_iters < 1) bad("ransac_iters must be >= 1");
    if (ransac_min_inliers < 0) bad("ransac_min_inliers must be >= 0");
    hol.validate();
}

double area_ratio_sigma(std::size_t s_ir, std::size_t s_vi, double omega) {
    if (s_ir == 0 || s_vi == 0) throw DegenerateRegionError("area_ratio_sigma: empty region (area 0)");
    if (!(omega > 0.0 && omega <= 1.0)) throw std::invalid_argument("area_ratio_sigma: omega must lie in (0,1]");
    const double lo = static_cast<double>(std::min(s_ir, s_vi)), hi = static_cast<double>(std::max(s_ir, s_vi));
    return omega * (lo / hi);
}

double gaussian_lambda(const GridPoint& p_ir, const GridPoint& p_vi, const GridPointSet& set_ir,
                       const GridPointSet& set_vi, double sigma) {
    return lambda_prefactor(sigma) * (gaussian_term(p_ir, set_ir, sigma) + gaussian_term(p_vi, set_vi, sigma));
}

Matrix lambda_matrix(const GridPointSet& set_ir, const GridPointSet& set_vi, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("lambda_matrix: sigma must be > 0");
    std::vector<double> g_vi(set_vi.size());
    for (std::size_t n = 0; n < set_vi.size(); ++n) g_vi[n] = gaussian_term(set_vi[n], set_vi, sigma);
    const double a = lambda_prefactor(sigma);
    Matrix lam(set_ir.size(), set_vi.size());
    for (std::size_t m = 0; m < set_ir.size(); ++m) {
        const double g_ir = gaussian_term(set_ir[m], set_ir, sigma);
        for (std::size_t n = 0; n < set_vi.size(); ++n) lam(m, n) = a * (g_ir + g_vi[n]);
    }
    return lam;
}

ScoreMatrix hybrid_scores(const ScoreMatrix& s_deep, const CostMatrix& c_hol, const Matrix& lam, double sigma,
                          double delta) {
    if (s_deep.rows() != c_hol.rows() || s_deep.cols() != c_hol.cols() || s_deep.rows() != lam.rows() ||
        s_deep.cols() != lam.cols()) {
        std::ostringstream msg;
        msg << "hybrid_scores: shape mismatch (deep " << s_deep.rows() << "x" << s_deep.cols() << ", hol "
            << c_hol.rows() << "x" << c_hol.cols() << ", lambda " << lam.rows() << "x" << lam.cols() << ")";
        throw ShapeError(msg.str());
    }
    const auto cv = c_hol.values();
    const double cmax = cv.empty() ? 0.0 : *std::max_element(cv.begin(), cv.end());
    ScoreMatrix s = s_deep;
    if (cmax <= 0.0) return s;
    auto out = s.values();
    const auto lv = lam.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] - delta * sigma * lv[i] * (cv[i] / cmax);
    return s;
}

std::vector<IndexPair> mutual_max(const ScoreMatrix& s, double theta) {
    const std::size_t rows = s.rows(), cols = s.cols();
    std::vector<IndexPair> out;
    if (rows == 0 || cols == 0) return out;
    std::vector<std::size_t> col_best(cols, 0);
    for (std::size_t c = 0; c < cols; ++c)
        for (std::size_t r = 1; r < rows; ++r)
            if (s(r, c) > s(col_best[c], c)) col_best[c] = r;
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < cols; ++c)
            if (s(r, c) > s(r, best)) best = c;
        if (col_best[best] == r && s(r, best) >= theta) out.push_back({r, best});
    }
    return out;
}

MatchSet match_regional(const ScoreMatrix& s, const GridPointSet& pts_ir, const GridPointSet& pts_vi, double theta) {
    if (s.rows() != pts_ir.size() || s.cols() != pts_vi.size())
        throw ShapeError("match_regional: score matrix shape does not match the point sets");
    MatchSet out;
    for (const auto& [r, c] : mutual_max(s, theta)) out.pairs.push_back({pts_ir[r], pts_vi[c], s(r, c)});
    return out;
}

RansacResult ransac_filter(const MatchSet& matches, const HybridParams& params) {
    RansacResult res;
    res.matches = matches;
    const std::size_t n = matches.size();
    if (n < 4) {
        res.warning = true;
        res.note = "ransac skipped: " + std::to_string(n) + " matches (need 4)";
        return res;
    }

    std::vector<Point2> src(n), dst(n);
    for (std::size_t i = 0; i < n; ++i) {
        src[i] = matches.pairs[i].ir.to_point();
        dst[i] = matches.pairs[i].vi.to_point();
    }

    std::mt19937_64 rng(params.seed);
    std::vector<std::size_t> best;
    std::optional<HomographyModel> best_model;
    for (int it = 0; it < params.ransac_iters; ++it) {
        std::array<std::size_t, 4> idx{};
        for (std::size_t k = 0; k < 4; ++k) {
            std::size_t cand;
            do {
                cand = static_cast<std::size_t>(uniform_below(rng, n));
            } while (std::find(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), cand) != idx.begin() + static_cast<std::ptrdiff_t>(k));
            idx[k] = cand;
        }
        std::array<Point2, 4> s4, d4;
        for (std::size_t k = 0; k < 4; ++k) {
            s4[k] = src[idx[k]];
            d4[k] = dst[idx[k]];
        }
        if (has_collinear_triple(s4) || has_collinear_triple(d4)) continue;
        std::optional<HomographyModel> model;
        try {
            model = fit_homography(s4, d4);
        } catch (const FitError&) {
            continue;
        }
        auto inl = consensus(*model, matches, params.ransac_tol);
        // strict improvement keeps the earliest iteration on ties
        if (inl.size() > best.size()) {
            best = std::move(inl);
            best_model = model;
        }
    }

    // One least-squares refit on the consensus set; kept only if it does not lose support.
    if (best.size() >= 4) {
        std::vector<Point2> s_in, d_in;
        for (std::size_t i : best) {
            s_in.push_back(src[i]);
            d_in.push_back(dst[i]);
        }
        try {
            HomographyModel refit = fit_homography(s_in, d_in);
            auto inl = consensus(refit, matches, params.ransac_tol);
            if (inl.size() >= best.size()) {
                best = std::move(inl);
                best_model = refit;
            }
        } catch (const FitError&) {
        }
    }

    res.model = best_model;
    if (best.size() < static_cast<std::size_t>(params.ransac_min_inliers) || best.size() < 4) {
        res.warning = true;
        res.note = "ransac consensus too small: " + std::to_string(best.size()) + " inliers (need " +
                   std::to_string(std::max(params.ransac_min_inliers, 4)) + "); matches kept unfiltered";
        return res;
    }
    res.matches = subset(matches, best);
    return res;
}

HdmResult run_hdm(const FeatureGrid& f_ir, const FeatureGrid& f_vi, const RegionMask& mask_ir,
                  const RegionMask& mask_vi, const HybridParams& params) {
    params.validate();
    HdmResult res;
    res.pts_ir = grid_points(mask_ir);
    res.pts_vi = grid_points(mask_vi);
    if (res.pts_ir.empty() || res.pts_vi.empty())
        throw DegenerateRegionError(std::string("run_hdm: ") + (res.pts_ir.empty() ? "infrared" : "visible") +
                                    " region has no grid points");

    res.sigma = area_ratio_sigma(res.pts_ir.area(), res.pts_vi.area(), params.omega);
    const ScoreMatrix deep = deep_scores(f_ir, f_vi, res.pts_ir, res.pts_vi);
    ScoreMatrix s;
    if (params.mode == ScoreMode::hol_only || params.delta != 0.0) {
        const auto d_ir = build_hol(res.pts_ir, params.hol);
        const auto d_vi = build_hol(res.pts_vi, params.hol);
        const CostMatrix c = hol_cost_matrix(d_ir, d_vi);
        if (params.mode == ScoreMode::hol_only) {
            const auto cv = c.values();
            const double cmax = *std::max_element(cv.begin(), cv.end());
            s = ScoreMatrix(c.rows(), c.cols(), 1.0);
            if (cmax > 0.0)
                for (std::size_t i = 0; i < cv.size(); ++i) s.values()[i] = 1.0 - cv[i] / cmax;
        } else {
            s = hybrid_scores(deep, c, lambda_matrix(res.pts_ir, res.pts_vi, res.sigma), res.sigma, params.delta);
        }
    } else {
        s = deep;  // delta == 0: the decay term vanishes identically
    }

    res.candidates = match_regional(s, res.pts_ir, res.pts_vi, params.theta);
    if (res.candidates.empty()) res.warnings.push_back("no mutual matches reached theta");
    RansacResult r = ransac_filter(res.candidates, params);
    if (r.warning) res.warnings.push_back(r.note);
    res.matches = std::move(r.matches);
    return res;
}

std::string matches_to_tsv(const MatchSet& matches) {
    std::string out = "x_ir\ty_ir\tx_vi\ty_vi\tscore\n";
    char buf[128];
    for (const auto& m : matches.pairs) {
        std::snprintf(buf, sizeof buf, "%d\t%d\t%d\t%d\t%.6f\n", m.ir.x, m.ir.y, m.vi.x, m.vi.y, m.score);
        out += buf;
    }
    return out;
}

MatchSet matches_from_tsv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "x_ir\ty_ir\tx_vi\ty_vi\tscore")
        throw FormatError("matches TSV: missing or wrong header");
    MatchSet out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream row(line);
        Match m;
        if (!(row >> m.ir.x >> m.ir.y >> m.vi.x >> m.vi.y >> m.score))
            throw FormatError("matches TSV: malformed row " + std::to_string(lineno));
        out.pairs.push_back(m);
    }
    return out;
}

void write_matches_tsv(const MatchSet& matches, const std::filesystem::path& path) {
    detail::write_file_atomic(path, matches_to_tsv(matches));
}

MatchSet read_matches_tsv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return matches_from_tsv({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()});
}

}  // namespace sroi
