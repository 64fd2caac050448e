#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sroi/features.hpp"
#include "sroi/hol.hpp"
#include "sroi/imagecore.hpp"
#include "sroi/transform.hpp"

namespace sroi {

// A region has no grid points, so area ratios and centroids are undefined.
class DegenerateRegionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ScoreMode {
    hybrid,    // deep score minus the Gaussian-weighted HOL cost
    hol_only,  // 1 - normalized HOL cost
};

struct HybridParams {
    double delta = 1.0;
    double omega = 0.5;
    double theta = 0.2;
    int ransac_iters = 2000;
    double ransac_tol = 10.0;
    int ransac_min_inliers = 8;
    std::uint64_t seed = 0;
    ScoreMode mode = ScoreMode::hybrid;
    HOLParams hol{};

    void validate() const;
};

struct Match {
    GridPoint ir;
    GridPoint vi;
    double score = 0.0;

    friend bool operator==(const Match&, const Match&) = default;
};

// One-to-one correspondences between infrared and visible grid points.
struct MatchSet {
    std::vector<Match> pairs;

    std::size_t size() const { return pairs.size(); }
    bool empty() const { return pairs.empty(); }
    friend bool operator==(const MatchSet&, const MatchSet&) = default;
};

// omega * min(s_ir, s_vi) / max(s_ir, s_vi).
double area_ratio_sigma(std::size_t s_ir, std::size_t s_vi, double omega);

// Gaussian weight of the HOL term for one candidate pair: large near both
// region centroids, decaying toward the region edges.
double gaussian_lambda(const GridPoint& p_ir, const GridPoint& p_vi, const GridPointSet& set_ir,
                       const GridPointSet& set_vi, double sigma);
Matrix lambda_matrix(const GridPointSet& set_ir, const GridPointSet& set_vi, double sigma);

// s_deep - delta * sigma * lambda .* (c_hol / max(c_hol)).
ScoreMatrix hybrid_scores(const ScoreMatrix& s_deep, const CostMatrix& c_hol, const Matrix& lam, double sigma,
                          double delta);

struct IndexPair {
    std::size_t row;
    std::size_t col;
    friend bool operator==(const IndexPair&, const IndexPair&) = default;
};

// Entries that are the maximum of both their row and column and reach theta.
// Ties resolve to the smallest column, then the smallest row.
std::vector<IndexPair> mutual_max(const ScoreMatrix& s, double theta);
MatchSet match_regional(const ScoreMatrix& s, const GridPointSet& pts_ir, const GridPointSet& pts_vi, double theta);

struct RansacResult {
    MatchSet matches;
    bool warning = false;
    std::string note;
    std::optional<HomographyModel> model;  // best hypothesis, when one was found
};

// Global-homography consensus over the matches. Inliers have both forward and
// backward transfer errors below params.ransac_tol.
RansacResult ransac_filter(const MatchSet& matches, const HybridParams& params);

struct HdmResult {
    GridPointSet pts_ir;
    GridPointSet pts_vi;
    double sigma = 0.0;
    MatchSet candidates;  // before RANSAC
    MatchSet matches;     // after RANSAC
    std::vector<std::string> warnings;
};

// Full regional matching: grid points, HOL costs, deep scores, hybrid score,
// mutual-max thresholding and RANSAC. Deterministic for a fixed seed.
HdmResult run_hdm(const FeatureGrid& f_ir, const FeatureGrid& f_vi, const RegionMask& mask_ir,
                  const RegionMask& mask_vi, const HybridParams& params);

std::string matches_to_tsv(const MatchSet& matches);
MatchSet matches_from_tsv(const std::string& text);
void write_matches_tsv(const MatchSet& matches, const std::filesystem::path& path);
MatchSet read_matches_tsv(const std::filesystem::path& path);

}  // namespace sroi
