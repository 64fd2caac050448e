#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "sroi/evalfuse.hpp"
#include "sroi/features.hpp"
#include "sroi/hdm.hpp"
#include "sroi/imagecore.hpp"
#include "sroi/transform.hpp"

namespace sroi {

struct NoDeform {};
// Forward map infrared -> visible.
struct HomographyDeform {
    Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
};
// Random anchor displacements of at most max_disp px, interpolated by a TPS.
struct TpsDeform {
    int n_anchors = 9;
    double max_disp = 12.0;
};
using Deform = std::variant<NoDeform, HomographyDeform, TpsDeform>;

enum class GapKind { none, invert, gamma, contrast_remap };

// Intensity remap applied to the infrared rendering.
struct ModalityGap {
    GapKind kind = GapKind::none;
    double gamma = 1.0;

    double apply(double v) const;
};

struct SceneSpec {
    Size size{256, 256};
    int n_blobs = 24;
    std::uint64_t seed = 0;
    Deform deform = NoDeform{};
    ModalityGap gap{};

    void validate() const;
};

// Exact infrared -> visible mapping plus consistent region masks.
class GroundTruth {
public:
    using Model = std::variant<std::monostate, HomographyModel, TPSModel>;

    GroundTruth() = default;
    GroundTruth(Model forward, RegionMask mask_ir, RegionMask mask_vi)
        : forward_(std::move(forward)), mask_ir_(std::move(mask_ir)), mask_vi_(std::move(mask_vi)) {}

    const Model& model() const { return forward_; }
    const RegionMask& mask_ir() const { return mask_ir_; }
    const RegionMask& mask_vi() const { return mask_vi_; }

    // infrared -> visible
    Point2 map(const Point2& p) const;
    // visible -> infrared, by Newton iteration for TPS models
    Point2 inverse(const Point2& q) const;
    // Self-contained copy of the forward mapping.
    GroundTruthMap as_map() const;

private:
    Model forward_;
    RegionMask mask_ir_;
    RegionMask mask_vi_;
};

struct Scene {
    Image ir;
    Image vi;
    GroundTruth gt;
};

Scene generate(const SceneSpec& spec);

// PGM files (ir.pgm, vi.pgm, mask_ir.pgm, mask_vi.pgm) plus gt.json.
void write_scene(const Scene& scene, const SceneSpec& spec, const std::filesystem::path& dir);
Scene read_scene(const std::filesystem::path& dir);
GroundTruth read_ground_truth(const std::filesystem::path& sidecar, const RegionMask& mask_ir,
                              const RegionMask& mask_vi);
std::string sidecar_json(const GroundTruth& gt, const SceneSpec& spec);

// Square dilation of the mask by `radius` pixels (Chebyshev).
RegionMask dilate(const RegionMask& mask, int radius);

// Mean distance, over in-mask visible pixels, between the estimated
// visible->infrared mapping and the true inverse.
double registration_error(const PointMapping& vi_to_ir, const GroundTruth& gt, const RegionMask& mask_vi);

struct AblationRow {
    std::string label;
    double matches = 0.0;
    double correct = 0.0;
    double accuracy = 0.0;
};

struct AblationTable {
    std::vector<AblationRow> rows;

    // Method / Matches / Correct Matches / Matches Accuracy.
    std::string to_tsv() const;
};

inline constexpr const char* kNoDecayLabel = "w/o Gaussian-weighted decay strategy";

struct SweepOptions {
    Descriptor descriptor = Descriptor::gradhist;
    int dilate_cells = 1;  // perturbation of the visible mask
    double tol = 8.0;
};

// Mean matches / correct / accuracy over the cases for the no-decay baseline
// (delta = 0) followed by one row per omega.
AblationTable omega_sweep(const std::vector<Scene>& cases, const std::vector<double>& omegas,
                          const HybridParams& params, const SweepOptions& opts = {});

// omega_sweep plus deep-only, HOL-only and hybrid rows.
AblationTable ablation_eval(const std::vector<Scene>& cases, const std::vector<double>& omegas,
                            const HybridParams& params, const SweepOptions& opts = {});

// Parses "none", "invert", "gamma:G", "contrast".
ModalityGap parse_gap(const std::string& text);
std::string gap_name(const ModalityGap& gap);
// Parses "none", "translate:TX,TY", "homography:h00,...,h22", "tps:N,DISP".
Deform parse_deform(const std::string& text);
std::string deform_name(const Deform& deform);

}  // namespace sroi
