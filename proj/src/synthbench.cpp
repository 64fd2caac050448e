#include "sroi/synthbench.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

namespace sroi {

namespace {

using nlohmann::json;

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double sign() { return uniform() < 0.5 ? -1.0 : 1.0; }

private:
    std::mt19937_64 eng_;
};

// Shortest text that parses back to the same double.
std::string fmt_g(double v) {
    char buf[40];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::vector<double> parse_numbers(const std::string& text, const std::string& what) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != tok.size()) throw std::invalid_argument("bad number '" + tok + "' in " + what);
        out.push_back(v);
    }
    return out;
}

Point2 map_model(const GroundTruth::Model& model, const Point2& p) {
    if (const auto* h = std::get_if<HomographyModel>(&model)) return h->apply(p);
    if (const auto* t = std::get_if<TPSModel>(&model)) return t->apply(p);
    return p;
}

Point2 invert_numerically(const TPSModel& model, const Point2& q) {
    // Start from the pure translation estimate, then Newton with a central-difference Jacobian.
    Point2 p = q;
    const Point2 f0 = model.apply(p);
    p = {q.x - (f0.x - q.x), q.y - (f0.y - q.y)};
    constexpr double step = 1e-4;
    for (int it = 0; it < 50; ++it) {
        const Point2 f = model.apply(p);
        const double rx = f.x - q.x, ry = f.y - q.y;
        if (std::hypot(rx, ry) < 1e-10) break;
        const Point2 fxp = model.apply({p.x + step, p.y}), fxm = model.apply({p.x - step, p.y});
        const Point2 fyp = model.apply({p.x, p.y + step}), fym = model.apply({p.x, p.y - step});
        const double a = (fxp.x - fxm.x) / (2 * step), b = (fyp.x - fym.x) / (2 * step);
        const double c = (fxp.y - fxm.y) / (2 * step), d = (fyp.y - fym.y) / (2 * step);
        const double det = a * d - b * c;
        if (std::abs(det) < 1e-12) break;
        p.x -= (d * rx - b * ry) / det;
        p.y -= (-c * rx + a * ry) / det;
    }
    return p;
}

Image render_visible(const SceneSpec& spec, Rng& rng) {
    const int w = spec.size.width, h = spec.size.height;
    std::vector<double> v(static_cast<std::size_t>(w) * h);
    const double gx = rng.uniform(-1, 1), gy = rng.uniform(-1, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            v[static_cast<std::size_t>(y) * w + x] =
                0.4 + 0.15 * (gx * (x / static_cast<double>(w) - 0.5) + gy * (y / static_cast<double>(h) - 0.5));

    for (int i = 0; i < spec.n_blobs; ++i) {
        const double cx = rng.uniform(0, w), cy = rng.uniform(0, h);
        const double rad = rng.uniform(3.0, 18.0);
        const double amp = rng.sign() * rng.uniform(0.15, 0.45);
        const int r = static_cast<int>(std::ceil(4 * rad));
        for (int y = std::max(0, static_cast<int>(cy) - r); y < std::min(h, static_cast<int>(cy) + r + 1); ++y)
            for (int x = std::max(0, static_cast<int>(cx) - r); x < std::min(w, static_cast<int>(cx) + r + 1); ++x) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                v[static_cast<std::size_t>(y) * w + x] += amp * std::exp(-d2 / (2 * rad * rad));
            }
    }
    // hard-edged rectangles and discs
    for (int i = 0; i < spec.n_blobs / 2; ++i) {
        const double cx = rng.uniform(0, w), cy = rng.uniform(0, h);
        const double hw = rng.uniform(3.0, 14.0), hh = rng.uniform(3.0, 14.0);
        const double amp = rng.sign() * rng.uniform(0.1, 0.3);
        const bool disc = rng.uniform() < 0.5;
        for (int y = std::max(0, static_cast<int>(cy - hh)); y < std::min(h, static_cast<int>(cy + hh) + 1); ++y)
            for (int x = std::max(0, static_cast<int>(cx - hw)); x < std::min(w, static_cast<int>(cx + hw) + 1); ++x) {
                const double ux = (x - cx) / hw, uy = (y - cy) / hh;
                const bool inside = disc ? ux * ux + uy * uy <= 1.0 : std::abs(ux) <= 1.0 && std::abs(uy) <= 1.0;
                if (inside) v[static_cast<std::size_t>(y) * w + x] += amp;
            }
    }
    for (double& s : v) s = std::clamp(s, 0.0, 1.0);
    return Image(w, h, std::move(v));
}

GroundTruth::Model make_forward(const SceneSpec& spec, Rng& rng) {
    if (const auto* hd = std::get_if<HomographyDeform>(&spec.deform)) return HomographyModel(hd->h);
    const auto* td = std::get_if<TpsDeform>(&spec.deform);
    if (!td) return std::monostate{};
    const int w = spec.size.width, h = spec.size.height;
    std::vector<Point2> anchors, targets;
    const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(td->n_anchors))));
    if (k * k == td->n_anchors) {
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) anchors.push_back({(j + 0.5) * w / k, (i + 0.5) * h / k});
    } else {
        for (int i = 0; i < td->n_anchors; ++i) anchors.push_back({rng.uniform(0.1, 0.9) * w, rng.uniform(0.1, 0.9) * h});
    }
    for (const auto& a : anchors) {
        const double r = td->max_disp * std::sqrt(rng.uniform());
        const double t = rng.uniform(0.0, 2.0 * std::numbers::pi);
        targets.push_back({a.x + r * std::cos(t), a.y + r * std::sin(t)});
    }
    return fit_tps(anchors, targets, 0.0);
}

json model_json(const GroundTruth::Model& model) {
    json j;
    if (const auto* h = std::get_if<HomographyModel>(&model)) {
        j["type"] = "homography";
        json rows = json::array();
        for (int r = 0; r < 3; ++r) rows.push_back({h->matrix()(r, 0), h->matrix()(r, 1), h->matrix()(r, 2)});
        j["h"] = rows;
    } else if (const auto* t = std::get_if<TPSModel>(&model)) {
        j["type"] = "tps";
        json cps = json::array(), ws = json::array(), aff = json::array();
        for (std::size_t i = 0; i < t->control_points().size(); ++i) {
            cps.push_back({t->control_points()[i].x, t->control_points()[i].y});
            ws.push_back({t->weights()(static_cast<Eigen::Index>(i), 0), t->weights()(static_cast<Eigen::Index>(i), 1)});
        }
        for (int r = 0; r < 3; ++r) aff.push_back({t->affine()(r, 0), t->affine()(r, 1)});
        j["control_points"] = cps;
        j["weights"] = ws;
        j["affine"] = aff;
    } else {
        j["type"] = "identity";
    }
    return j;
}

GroundTruth::Model model_from_json(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "identity") return std::monostate{};
    if (type == "homography") {
        Eigen::Matrix3d h;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) h(r, c) = j.at("h").at(r).at(c).get<double>();
        return HomographyModel(h);
    }
    if (type == "tps") {
        const auto& cps = j.at("control_points");
        std::vector<Point2> control;
        Eigen::MatrixX2d w(static_cast<Eigen::Index>(cps.size()), 2);
        for (std::size_t i = 0; i < cps.size(); ++i) {
            control.push_back({cps[i].at(0).get<double>(), cps[i].at(1).get<double>()});
            w(static_cast<Eigen::Index>(i), 0) = j.at("weights").at(i).at(0).get<double>();
            w(static_cast<Eigen::Index>(i), 1) = j.at("weights").at(i).at(1).get<double>();
        }
        Eigen::Matrix<double, 3, 2> aff;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 2; ++c) aff(r, c) = j.at("affine").at(r).at(c).get<double>();
        return TPSModel::from_coefficients(std::move(control), std::move(w), aff);
    }
    throw FormatError("ground truth: unknown model type '" + type + "'");
}

struct CaseFeatures {
    FeatureGrid ir, vi;
    RegionMask mask_vi;
};

std::string omega_label(double omega) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "omega=%g", omega);
    return buf;
}

// Runs body(i) for i in [0, n) on up to hardware_concurrency threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    const std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

AblationRow evaluate(const std::string& label, const std::vector<Scene>& cases, const std::vector<CaseFeatures>& feats,
                     const HybridParams& params, double tol) {
    std::vector<AccuracyResult> per_case(cases.size());
    parallel_for(cases.size(), [&](std::size_t i) {
        try {
            HdmResult r = run_hdm(feats[i].ir, feats[i].vi, cases[i].gt.mask_ir(), feats[i].mask_vi, params);
            per_case[i] = match_accuracy(r.matches, cases[i].gt.as_map(), tol);
        } catch (const DegenerateRegionError&) {
        }
    });
    // summed in case order so the table does not depend on scheduling
    AblationRow row{label};
    for (const auto& acc : per_case) {
        row.matches += static_cast<double>(acc.matches);
        row.correct += static_cast<double>(acc.correct);
        row.accuracy += acc.accuracy;
    }
    const double n = static_cast<double>(cases.size());
    row.matches /= n;
    row.correct /= n;
    row.accuracy /= n;
    return row;
}

std::vector<CaseFeatures> prepare(const std::vector<Scene>& cases, const SweepOptions& opts) {
    std::vector<CaseFeatures> feats(cases.size());
    parallel_for(cases.size(), [&](std::size_t i) {
        feats[i] = {extract_features(cases[i].ir, opts.descriptor), extract_features(cases[i].vi, opts.descriptor),
                    dilate(cases[i].gt.mask_vi(), opts.dilate_cells * kCellSize)};
    });
    return feats;
}

AblationTable sweep(const std::vector<Scene>& cases, const std::vector<CaseFeatures>& feats,
                    const std::vector<double>& omegas, const HybridParams& params, double tol) {
    AblationTable t;
    HybridParams p = params;
    p.mode = ScoreMode::hybrid;
    p.delta = 0.0;
    t.rows.push_back(evaluate(kNoDecayLabel, cases, feats, p, tol));
    p.delta = params.delta;
    for (double w : omegas) {
        p.omega = w;
        t.rows.push_back(evaluate(omega_label(w), cases, feats, p, tol));
    }
    return t;
}

void check_sweep_inputs(const std::vector<Scene>& cases, const std::vector<double>& omegas) {
    if (cases.empty()) throw std::invalid_argument("omega_sweep: no cases");
    if (omegas.empty()) throw std::invalid_argument("omega_sweep: no omega values");
}


}  // namespace

double ModalityGap::apply(double v) const {
    switch (kind) {
        case GapKind::none: return v;
        case GapKind::invert: return 1.0 - v;
        case GapKind::gamma: return std::pow(v, gamma);
        case GapKind::contrast_remap: return std::abs(2.0 * v - 1.0);
    }
    return v;
}

void SceneSpec::validate() const {
    auto bad = [](const std::string& what) { throw std::invalid_argument("invalid scene spec: " + what); };
    if (size.width <= 0 || size.height <= 0 || size.width % kCellSize || size.height % kCellSize)
        bad("size must be positive multiples of 8");
    if (n_blobs < 0) bad("n_blobs must be >= 0");
    if (gap.kind == GapKind::gamma && !(gap.gamma > 0.0)) bad("gamma must be > 0");
    if (const auto* t = std::get_if<TpsDeform>(&deform)) {
        if (t->n_anchors < 3) bad("tps deformation needs at least 3 anchors");
        if (!(t->max_disp >= 0.0) || t->max_disp > std::min(size.width, size.height) / 8.0)
            bad("max_disp must lie in [0, min(w,h)/8]");
    }
    if (const auto* hd = std::get_if<HomographyDeform>(&deform)) {
        if (!hd->h.allFinite() || std::abs(hd->h.determinant()) < 1e-12) bad("homography must be finite and invertible");
    }
}

Point2 GroundTruth::map(const Point2& p) const { return map_model(forward_, p); }

Point2 GroundTruth::inverse(const Point2& q) const {
    if (const auto* h = std::get_if<HomographyModel>(&forward_)) return h->inverse().apply(q);
    if (const auto* t = std::get_if<TPSModel>(&forward_)) return invert_numerically(*t, q);
    return q;
}

GroundTruthMap GroundTruth::as_map() const {
    return [model = forward_](const Point2& p) { return map_model(model, p); };
}

Scene generate(const SceneSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Scene s;
    s.vi = render_visible(spec, rng);
    GroundTruth::Model forward = make_forward(spec, rng);

    const int w = spec.size.width, h = spec.size.height;
    const bool identity = std::holds_alternative<std::monostate>(forward);
    Image warped = identity ? s.vi : warp_image(s.vi, [&](const Point2& p) { return map_model(forward, p); }, spec.size);
    if (spec.gap.kind == GapKind::none) {
        s.ir = std::move(warped);
    } else {
        s.ir = Image(w, h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) s.ir.set(x, y, std::clamp(spec.gap.apply(warped.at(x, y)), 0.0, 1.0));
    }

    // elliptical object region in infrared coordinates, pushed forward to visible
    const double ecx = w * rng.uniform(0.4, 0.6), ecy = h * rng.uniform(0.4, 0.6);
    const double ea = w * rng.uniform(0.2, 0.32), eb = h * rng.uniform(0.2, 0.32);
    const double rot = rng.uniform(0.0, std::numbers::pi);
    const double cr = std::cos(rot), sr = std::sin(rot);
    auto inside = [&](const Point2& p) {
        const double dx = p.x - ecx, dy = p.y - ecy;
        const double u = (cr * dx + sr * dy) / ea, v = (-sr * dx + cr * dy) / eb;
        return u * u + v * v <= 1.0;
    };
    RegionMask mask_ir(w, h), mask_vi(w, h);
    GroundTruth probe(forward, {}, {});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Point2 p{static_cast<double>(x), static_cast<double>(y)};
            mask_ir.set(x, y, inside(p));
            mask_vi.set(x, y, inside(probe.inverse(p)));
        }
    s.gt = GroundTruth(std::move(forward), std::move(mask_ir), std::move(mask_vi));
    return s;
}

std::string sidecar_json(const GroundTruth& gt, const SceneSpec& spec) {
    nlohmann::ordered_json j;
    j["spec"] = {{"width", spec.size.width},
                 {"height", spec.size.height},
                 {"n_blobs", spec.n_blobs},
                 {"seed", spec.seed},
                 {"deform", deform_name(spec.deform)},
                 {"gap", gap_name(spec.gap)}};
    j["ground_truth"] = model_json(gt.model());
    return j.dump(2) + "\n";
}

void write_scene(const Scene& scene, const SceneSpec& spec, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_image(scene.ir, dir / "ir.pgm");
    save_image(scene.vi, dir / "vi.pgm");
    save_mask(scene.gt.mask_ir(), dir / "mask_ir.pgm");
    save_mask(scene.gt.mask_vi(), dir / "mask_vi.pgm");
    detail::write_file_atomic(dir / "gt.json", sidecar_json(scene.gt, spec));
}

GroundTruth read_ground_truth(const std::filesystem::path& sidecar, const RegionMask& mask_ir,
                              const RegionMask& mask_vi) {
    std::ifstream in(sidecar);
    if (!in) throw IoError("cannot open '" + sidecar.string() + "'");
    json j;
    try {
        j = json::parse(in);
        return GroundTruth(model_from_json(j.at("ground_truth")), mask_ir, mask_vi);
    } catch (const json::exception& e) {
        throw FormatError("ground truth sidecar '" + sidecar.string() + "': " + e.what());
    }
}

Scene read_scene(const std::filesystem::path& dir) {
    Scene s;
    s.ir = load_image(dir / "ir.pgm");
    s.vi = load_image(dir / "vi.pgm");
    RegionMask mir = load_mask(dir / "mask_ir.pgm", s.ir.size());
    RegionMask mvi = load_mask(dir / "mask_vi.pgm", s.vi.size());
    s.gt = read_ground_truth(dir / "gt.json", mir, mvi);
    return s;
}

RegionMask dilate(const RegionMask& mask, int radius) {
    const int w = mask.width(), h = mask.height();
    // separable square dilation: rows then columns
    RegionMask rows(w, h), out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            bool any = false;
            for (int dx = -radius; dx <= radius && !any; ++dx) any = mask.at_or_false(x + dx, y);
            rows.set(x, y, any);
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            bool any = false;
            for (int dy = -radius; dy <= radius && !any; ++dy) any = rows.at_or_false(x, y + dy);
            out.set(x, y, any);
        }
    return out;
}

double registration_error(const PointMapping& vi_to_ir, const GroundTruth& gt, const RegionMask& mask_vi) {
    double sum = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < mask_vi.height(); ++y)
        for (int x = 0; x < mask_vi.width(); ++x) {
            if (!mask_vi.at(x, y)) continue;
            const Point2 q{static_cast<double>(x), static_cast<double>(y)};
            const Point2 est = vi_to_ir(q), truth = gt.inverse(q);
            sum += std::hypot(est.x - truth.x, est.y - truth.y);
            ++n;
        }
    if (n == 0) throw std::invalid_argument("registration_error: empty mask");
    return sum / static_cast<double>(n);
}

std::string AblationTable::to_tsv() const {
    std::string out = "Method\tMatches\tCorrect Matches\tMatches Accuracy\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s\t%.1f\t%.1f\t%.3f\n", r.label.c_str(), r.matches, r.correct, r.accuracy);
        out += buf;
    }
    return out;
}

AblationTable omega_sweep(const std::vector<Scene>& cases, const std::vector<double>& omegas,
                          const HybridParams& params, const SweepOptions& opts) {
    check_sweep_inputs(cases, omegas);
    return sweep(cases, prepare(cases, opts), omegas, params, opts.tol);
}

AblationTable ablation_eval(const std::vector<Scene>& cases, const std::vector<double>& omegas,
                            const HybridParams& params, const SweepOptions& opts) {
    check_sweep_inputs(cases, omegas);
    const auto feats = prepare(cases, opts);
    AblationTable t = sweep(cases, feats, omegas, params, opts.tol);
    HybridParams p = params;
    p.mode = ScoreMode::hybrid;
    p.delta = 0.0;
    t.rows.push_back(evaluate("Deep only", cases, feats, p, opts.tol));
    p.mode = ScoreMode::hol_only;
    t.rows.push_back(evaluate("HOL only", cases, feats, p, opts.tol));
    p = params;
    p.mode = ScoreMode::hybrid;
    t.rows.push_back(evaluate("Deep+HOL (" + omega_label(params.omega) + ")", cases, feats, p, opts.tol));
    return t;
}

ModalityGap parse_gap(const std::string& text) {
    if (text == "none") return {};
    if (text == "invert") return {GapKind::invert, 1.0};
    if (text == "contrast") return {GapKind::contrast_remap, 1.0};
    if (text.rfind("gamma:", 0) == 0) {
        const auto v = parse_numbers(text.substr(6), "gamma gap");
        if (v.size() != 1) throw std::invalid_argument("gamma gap takes one value");
        if (!(v[0] > 0.0)) throw std::invalid_argument("gamma gap needs gamma > 0");
        return {GapKind::gamma, v[0]};
    }
    throw std::invalid_argument("unknown modality gap '" + text + "' (want none, invert, gamma:G, contrast)");
}

std::string gap_name(const ModalityGap& gap) {
    switch (gap.kind) {
        case GapKind::none: return "none";
        case GapKind::invert: return "invert";
        case GapKind::gamma: return "gamma:" + fmt_g(gap.gamma);
        case GapKind::contrast_remap: return "contrast";
    }
    return "none";
}

Deform parse_deform(const std::string& text) {
    if (text == "none") return NoDeform{};
    if (text.rfind("translate:", 0) == 0) {
        const auto v = parse_numbers(text.substr(10), "translation");
        if (v.size() != 2) throw std::invalid_argument("translate takes TX,TY");
        HomographyDeform d;
        d.h(0, 2) = v[0];
        d.h(1, 2) = v[1];
        return d;
    }
    if (text.rfind("homography:", 0) == 0) {
        const auto v = parse_numbers(text.substr(11), "homography");
        if (v.size() != 9) throw std::invalid_argument("homography takes 9 values, row-major");
        HomographyDeform d;
        for (int i = 0; i < 9; ++i) d.h(i / 3, i % 3) = v[static_cast<std::size_t>(i)];
        return d;
    }
    if (text.rfind("tps:", 0) == 0) {
        const auto v = parse_numbers(text.substr(4), "tps deformation");
        if (v.size() != 2 || v[0] != std::floor(v[0])) throw std::invalid_argument("tps takes N_ANCHORS,MAX_DISP");
        return TpsDeform{static_cast<int>(v[0]), v[1]};
    }
    throw std::invalid_argument("unknown deformation '" + text + "' (want none, translate:TX,TY, homography:..., tps:N,DISP)");
}

std::string deform_name(const Deform& deform) {
    if (const auto* h = std::get_if<HomographyDeform>(&deform)) {
        std::string s = "homography:";
        for (int i = 0; i < 9; ++i) s += (i ? "," : "") + fmt_g(h->h(i / 3, i % 3));
        return s;
    }
    if (const auto* t = std::get_if<TpsDeform>(&deform)) return "tps:" + std::to_string(t->n_anchors) + "," + fmt_g(t->max_disp);
    return "none";
}

}  // namespace sroi
