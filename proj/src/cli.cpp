#include "sroi/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "sroi/evalfuse.hpp"
#include "sroi/features.hpp"
#include "sroi/hdm.hpp"
#include "sroi/imagecore.hpp"
#include "sroi/synthbench.hpp"
#include "sroi/transform.hpp"

namespace sroi::cli {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InsufficientMatches : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Default TPS regularization for registration; smooths over the residual grid quantization.

ojson default_config() {
    ojson c;
    c["ir"] = "";
    c["vi"] = "";
    c["mask_ir"] = "";
    c["mask_vi"] = "";
    c["features_ir"] = "gradhist";
    c["features_vi"] = "gradhist";
    c["delta"] = 1.0;
    c["omega"] = 0.5;
    c["theta"] = 0.2;
    c["mode"] = "hybrid";
    c["ransac_iters"] = 2000;
    c["ransac_tol"] = 10.0;
    c["ransac_min_inliers"] = 8;
    c["transform"] = "tps";
    c["tps_reg"] = kDefaultTpsReg;
    c["fusion"] = "average";
    c["gt"] = "";
    c["tol"] = 8.0;
    c["fused"] = "";
    c["eval_mask"] = "";
    c["matches"] = "";
    c["size"] = "256x256";
    c["blobs"] = 24;
    c["deform"] = "tps:9,12";
    c["gap"] = "gamma:0.6";
    c["count"] = 1;
    c["suite"] = "";
    c["omegas"] = "0.1,0.3,0.5,0.7,0.9";
    c["dilate_cells"] = 1;
    c["seed"] = 0;
    c["out"] = "out";
    return c;
}

struct Flag {
    const char* name;
    const char* key;  // config key; "mask" and "features" fan out to both modalities
    const char* help;
};

const Flag kFlags[] = {
    {"--ir", "ir", "infrared image (PGM/PNG)"},
    {"--vi", "vi", "visible image (PGM/PNG)"},
    {"--mask", "mask", "both masks: file:PATH or propose:T"},
    {"--mask-ir", "mask_ir", "infrared mask: file:PATH or propose:T"},
    {"--mask-vi", "mask_vi", "visible mask: file:PATH or propose:T"},
    {"--features", "features", "both feature grids: gradhist, gradhist-unsigned, meanvar or file:PATH"},
    {"--features-ir", "features_ir", "infrared feature grid"},
    {"--features-vi", "features_vi", "visible feature grid"},
    {"--delta", "delta", "decay weight"},
    {"--omega", "omega", "area-ratio scale"},
    {"--theta", "theta", "mutual-max acceptance threshold"},
    {"--mode", "mode", "hybrid or hol-only"},
    {"--ransac-iters", "ransac_iters", "RANSAC iterations"},
    {"--ransac-tol", "ransac_tol", "RANSAC inlier tolerance (px)"},
    {"--ransac-min-inliers", "ransac_min_inliers", "minimum RANSAC consensus"},
    {"--transform", "transform", "tps or homography"},
    {"--tps-reg", "tps_reg", "TPS regularization"},
    {"--fusion", "fusion", "average, max or mask-max"},
    {"--gt", "gt", "ground-truth sidecar (gt.json)"},
    {"--tol", "tol", "match accuracy tolerance (px)"},
    {"--fused", "fused", "fused image for metrics (default: fuse on the fly)"},
    {"--eval-mask", "eval_mask", "restrict metrics to this mask"},
    {"--matches", "matches", "matches TSV for metrics"},
    {"--size", "size", "synthetic scene size WxH"},
    {"--blobs", "blobs", "synthetic blob count"},
    {"--deform", "deform", "none, translate:TX,TY, homography:h00..h22, tps:N,DISP"},
    {"--gap", "gap", "none, invert, gamma:G, contrast"},
    {"--count", "count", "number of synthetic cases"},
    {"--suite", "suite", "suite directory for eval"},
    {"--omegas", "omegas", "comma-separated omega values for eval"},
    {"--dilate-cells", "dilate_cells", "visible mask perturbation for eval (cells)"},
    {"--seed", "seed", "random seed"},
    {"--out", "out", "output directory"},
};

void set_typed(ojson& cfg, const std::string& key, const std::string& text) {
    ojson& slot = cfg.at(key);
    try {
        std::size_t used = 0;
        if (slot.is_boolean()) {
            if (text != "true" && text != "false") throw std::invalid_argument("not a boolean");
            slot = text == "true";
            return;
        }
        if (slot.is_number_float()) {
            slot = std::stod(text, &used);
        } else if (slot.is_number_integer()) {
            if (key == "seed") {
                if (!text.empty() && text[0] == '-') throw std::invalid_argument("negative");
                slot = static_cast<std::uint64_t>(std::stoull(text, &used));
            } else {
                slot = std::stoll(text, &used);
            }
        } else {
            slot = text;
            return;
        }
        if (used != text.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
        throw ConfigError("invalid value '" + text + "' for " + key);
    }
}

void merge_file(ojson& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    ojson file;
    try {
        file = ojson::parse(in);
    } catch (const ojson::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    if (!file.is_object()) throw ConfigError("config '" + path + "' must be a JSON object");
    for (const auto& [key, value] : file.items()) {
        if (key == "mask" || key == "features") {
            if (!value.is_string()) throw ConfigError("config key '" + key + "' must be a string");
            cfg[key + "_ir"] = value;
            cfg[key + "_vi"] = value;
            continue;
        }
        if (!cfg.contains(key)) throw ConfigError("unknown config key '" + key + "'");
        const ojson& slot = cfg[key];
        const bool ok = (slot.is_string() && value.is_string()) || (slot.is_boolean() && value.is_boolean()) ||
                        (slot.is_number_float() && value.is_number()) ||
                        (slot.is_number_integer() && value.is_number_integer());
        if (!ok) throw ConfigError("config key '" + key + "' has the wrong type");
        cfg[key] = value;
    }
}

std::string str(const ojson& cfg, const char* key) { return cfg.at(key).get<std::string>(); }
double num(const ojson& cfg, const char* key) { return cfg.at(key).get<double>(); }
long long integer(const ojson& cfg, const char* key) { return cfg.at(key).get<long long>(); }

std::string require(const ojson& cfg, const char* key) {
    std::string v = str(cfg, key);
    if (v.empty()) throw ConfigError(std::string("missing required '") + key + "'");
    return v;
}

std::vector<double> parse_list(const std::string& text, const char* what) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError(std::string("bad ") + what + " value '" + tok + "'");
        }
    }
    if (out.empty()) throw ConfigError(std::string("empty ") + what + " list");
    return out;
}

HybridParams hybrid_params(const ojson& cfg) {
    HybridParams p;
    p.delta = num(cfg, "delta");
    p.omega = num(cfg, "omega");
    p.theta = num(cfg, "theta");
    p.ransac_iters = static_cast<int>(integer(cfg, "ransac_iters"));
    p.ransac_tol = num(cfg, "ransac_tol");
    p.ransac_min_inliers = static_cast<int>(integer(cfg, "ransac_min_inliers"));
    p.seed = cfg.at("seed").get<std::uint64_t>();
    const std::string mode = str(cfg, "mode");
    if (mode == "hybrid") {
        p.mode = ScoreMode::hybrid;
    } else if (mode == "hol-only") {
        p.mode = ScoreMode::hol_only;
    } else {
        throw ConfigError("unknown mode '" + mode + "' (want hybrid or hol-only)");
    }
    p.validate();
    return p;
}

FeatureGrid load_features(const std::string& spec, const Image& img, std::vector<std::string>& warnings) {
    if (spec.rfind("file:", 0) == 0) {
        const std::string path = spec.substr(5);
        if (!fs::exists(path)) throw ConfigError("feature grid not found: " + path);
        LoadedFeatureGrid g = load_feature_grid(path);
        if (g.renormalized)
            warnings.push_back(std::to_string(g.renormalized) + " descriptors renormalized in " + path);
        if (g.grid.grid_h() != img.height() / kCellSize || g.grid.grid_w() != img.width() / kCellSize)
            throw ConfigError("feature grid " + path + " does not match the image size");
        return std::move(g.grid);
    }
    return extract_features(img, parse_descriptor(spec));
}

RegionMask load_region(const std::string& spec, const char* which, const Image& img, const FeatureGrid& feats) {
    if (spec.empty()) throw ConfigError(std::string("missing required mask_") + which);
    if (spec.rfind("propose:", 0) == 0) {
        const std::vector<double> t = parse_list(spec.substr(8), "saliency threshold");
        if (t.size() != 1) throw ConfigError("propose takes one threshold");
        RegionMask m = propose_mask(strip_pool_saliency(feats), t[0]);
        if (m.width() == img.width() && m.height() == img.height()) return m;
        // Images that are not multiples of 8 keep the partial border cells out of the mask.
        RegionMask full(img.width(), img.height());
        for (int y = 0; y < std::min(m.height(), img.height()); ++y)
            for (int x = 0; x < std::min(m.width(), img.width()); ++x) full.set(x, y, m.at(x, y));
        return full;
    }
    const std::string path = spec.rfind("file:", 0) == 0 ? spec.substr(5) : spec;
    if (!fs::exists(path)) throw ConfigError(std::string("mask_") + which + " not found: " + path);
    return load_mask(path, img.size());
}

Image load_input(const ojson& cfg, const char* key) {
    const std::string path = require(cfg, key);
    if (!fs::exists(path)) throw ConfigError(std::string(key) + " image not found: " + path);
    return load_image(path);
}

FusionStrategy fusion_strategy(const std::string& s) {
    if (s == "average") return FusionStrategy::average;
    if (s == "max") return FusionStrategy::max;
    if (s == "mask-max") return FusionStrategy::mask_max;
    throw ConfigError("unknown fusion '" + s + "' (want average, max, mask-max)");
}

std::optional<GroundTruth> load_gt(const ojson& cfg, const RegionMask& mask_ir, const RegionMask& mask_vi) {
    const std::string path = str(cfg, "gt");
    if (path.empty()) return std::nullopt;
    if (!fs::exists(path)) throw ConfigError("ground truth not found: " + path);
    return read_ground_truth(path, mask_ir, mask_vi);
}

void write_json(const ojson& j, const fs::path& path) { detail::write_file_atomic(path, j.dump(2) + "\n"); }

struct Pipeline {
    Image ir, vi;
    FeatureGrid f_ir, f_vi;
    RegionMask mask_ir, mask_vi;
    HdmResult hdm;
    std::optional<GroundTruth> gt;
    ojson summary;
};

Pipeline match_stage(const ojson& cfg, const fs::path& out) {
    Pipeline p;
    p.ir = load_input(cfg, "ir");
    p.vi = load_input(cfg, "vi");
    std::vector<std::string> warnings;
    p.f_ir = load_features(str(cfg, "features_ir"), p.ir, warnings);
    p.f_vi = load_features(str(cfg, "features_vi"), p.vi, warnings);
    p.mask_ir = load_region(str(cfg, "mask_ir"), "ir", p.ir, p.f_ir);
    p.mask_vi = load_region(str(cfg, "mask_vi"), "vi", p.vi, p.f_vi);
    const HybridParams params = hybrid_params(cfg);
    p.gt = load_gt(cfg, p.mask_ir, p.mask_vi);

    p.hdm = run_hdm(p.f_ir, p.f_vi, p.mask_ir, p.mask_vi, params);
    warnings.insert(warnings.end(), p.hdm.warnings.begin(), p.hdm.warnings.end());
    write_matches_tsv(p.hdm.matches, out / "matches.tsv");

    ojson& s = p.summary;
    s["points_ir"] = p.hdm.pts_ir.size();
    s["points_vi"] = p.hdm.pts_vi.size();
    s["sigma"] = p.hdm.sigma;
    s["candidates"] = p.hdm.candidates.size();
    s["matches"] = p.hdm.matches.size();
    if (p.gt) {
        const AccuracyResult acc = match_accuracy(p.hdm.matches, p.gt->as_map(), num(cfg, "tol"));
        s["correct_matches"] = acc.correct;
        s["accuracy"] = acc.accuracy;
    }
    s["warnings"] = warnings;
    return p;
}

int cmd_match(const ojson& cfg, const fs::path& out, std::ostream& os) {
    Pipeline p = match_stage(cfg, out);
    write_json(p.summary, out / "summary.json");
    os << p.hdm.matches.size() << " matches\n";
    return kOk;
}

int cmd_register(const ojson& cfg, const fs::path& out, std::ostream& os) {
    Pipeline p = match_stage(cfg, out);
    const std::string kind = str(cfg, "transform");
    if (kind != "tps" && kind != "homography") throw ConfigError("unknown transform '" + kind + "' (want tps, homography)");
    const std::size_t need = kind == "tps" ? 3 : 4;
    const std::size_t n = p.hdm.matches.size();
    if (n < need) {
        write_json(p.summary, out / "summary.json");
        throw InsufficientMatches("insufficient matches for " + kind + ": " + std::to_string(n) + " (need " +
                                  std::to_string(need) + ")");
    }
    // The model maps visible coordinates to infrared ones so that ir can be resampled onto the visible grid.
    std::vector<Point2> src, dst;
    for (const auto& m : p.hdm.matches.pairs) {
        src.push_back(m.vi.to_point());
        dst.push_back(m.ir.to_point());
    }
    PointMapping mapping;
    std::string dump;
    Image warped;
    try {
        if (kind == "tps") {
            TPSModel model = fit_tps(src, dst, num(cfg, "tps_reg"));
            warped = warp_image(p.ir, model, p.vi.size());
            dump = model.dump();
            mapping = [model](const Point2& q) { return model.apply(q); };
        } else {
            HomographyModel model = fit_homography(src, dst);
            warped = warp_image(p.ir, model, p.vi.size());
            dump = model.dump();
            mapping = [model](const Point2& q) { return model.apply(q); };
        }
    } catch (const FitError& e) {
        write_json(p.summary, out / "summary.json");
        throw InsufficientMatches(std::string("matches do not support a ") + kind + " fit (" + std::to_string(n) +
                                  " matches): " + e.what());
    }
    save_image(warped, out / "warped.pgm");
    detail::write_file_atomic(out / "model.txt", dump);
    if (p.gt && p.mask_vi.count() > 0) {
        try {
            p.summary["registration_error"] = registration_error(mapping, *p.gt, p.mask_vi);
        } catch (const std::domain_error&) {
            p.summary["warnings"].push_back("registration error undefined: mapping hits infinity inside the mask");
        }
    }
    write_json(p.summary, out / "summary.json");
    os << n << " matches, " << kind << " model written\n";
    return kOk;
}

RegionMask optional_mask(const std::string& spec, const Image& img, const char* which) {
    if (spec.rfind("propose:", 0) == 0) return load_region(spec, which, img, extract_features(img, Descriptor::gradhist));
    return load_region(spec, which, img, FeatureGrid{});
}

int cmd_fuse(const ojson& cfg, const fs::path& out, std::ostream& os) {
    const Image ir = load_input(cfg, "ir");
    const Image vi = load_input(cfg, "vi");
    if (ir.size() != vi.size()) throw ConfigError("fuse: ir and vi sizes differ");
    const FusionStrategy strategy = fusion_strategy(str(cfg, "fusion"));
    std::optional<RegionMask> mask;
    if (strategy == FusionStrategy::mask_max) mask = optional_mask(str(cfg, "mask_vi"), vi, "vi");
    save_image(fuse(ir, vi, strategy, mask ? &*mask : nullptr), out / "fused.pgm");
    os << "fused image written\n";
    return kOk;
}

int cmd_metrics(const ojson& cfg, const fs::path& out, std::ostream& os) {
    const Image ir = load_input(cfg, "ir");
    const Image vi = load_input(cfg, "vi");
    if (ir.size() != vi.size()) throw ConfigError("metrics: ir and vi sizes differ");
    Image fused;
    if (str(cfg, "fused").empty()) {
        const FusionStrategy strategy = fusion_strategy(str(cfg, "fusion"));
        std::optional<RegionMask> m;
        if (strategy == FusionStrategy::mask_max) m = optional_mask(str(cfg, "mask_vi"), vi, "vi");
        fused = fuse(ir, vi, strategy, m ? &*m : nullptr);
    } else {
        fused = load_input(cfg, "fused");
        if (fused.size() != vi.size()) throw ConfigError("metrics: fused image size differs");
    }
    std::optional<RegionMask> eval_mask;
    if (!str(cfg, "eval_mask").empty()) eval_mask = optional_mask(str(cfg, "eval_mask"), vi, "eval");

    MetricsReport r = compute_metrics(ir, vi, fused, eval_mask ? &*eval_mask : nullptr);
    if (!str(cfg, "matches").empty()) {
        const std::string mpath = str(cfg, "matches");
        if (!fs::exists(mpath)) throw ConfigError("matches not found: " + mpath);
        const MatchSet ms = read_matches_tsv(mpath);
        r.matches = ms.size();
        if (const auto gt = load_gt(cfg, RegionMask{}, RegionMask{})) {
            const AccuracyResult acc = match_accuracy(ms, gt->as_map(), num(cfg, "tol"));
            r.correct_matches = acc.correct;
            r.accuracy = acc.accuracy;
        }
    }
    detail::write_file_atomic(out / "report.json", r.to_json());
    detail::write_file_atomic(out / "report.tsv", r.to_tsv());
    os << r.to_tsv();
    return kOk;
}

SceneSpec scene_spec(const ojson& cfg) {
    SceneSpec spec;
    const std::string size = str(cfg, "size");
    int w = 0, h = 0;
    char tail = 0;
    if (std::sscanf(size.c_str(), "%dx%d%c", &w, &h, &tail) != 2) throw ConfigError("bad size '" + size + "' (want WxH)");
    spec.size = {w, h};
    spec.n_blobs = static_cast<int>(integer(cfg, "blobs"));
    spec.seed = cfg.at("seed").get<std::uint64_t>();
    spec.deform = parse_deform(str(cfg, "deform"));
    spec.gap = parse_gap(str(cfg, "gap"));
    spec.validate();
    return spec;
}

int cmd_synth(const ojson& cfg, const fs::path& out, std::ostream& os) {
    SceneSpec spec = scene_spec(cfg);
    const long long count = integer(cfg, "count");
    if (count < 1) throw ConfigError("count must be >= 1");
    if (count == 1) {
        write_scene(generate(spec), spec, out);
    } else {
        const std::uint64_t base = spec.seed;
        for (long long i = 0; i < count; ++i) {
            spec.seed = base + static_cast<std::uint64_t>(i);
            char name[32];
            std::snprintf(name, sizeof name, "case_%03lld", i);
            write_scene(generate(spec), spec, out / name);
        }
    }
    os << count << " scene(s) written\n";
    return kOk;
}

int cmd_eval(const ojson& cfg, const fs::path& out, std::ostream& os) {
    const fs::path suite = require(cfg, "suite");
    if (!fs::is_directory(suite)) throw ConfigError("suite directory not found: " + suite.string());
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(suite))
        if (e.is_directory() && fs::exists(e.path() / "gt.json")) dirs.push_back(e.path());
    if (fs::exists(suite / "gt.json")) dirs.push_back(suite);
    if (dirs.empty()) throw ConfigError("suite '" + suite.string() + "' holds no cases");
    std::sort(dirs.begin(), dirs.end());

    const std::string fi = str(cfg, "features_ir"), fv = str(cfg, "features_vi");
    if (fi != fv || fi.rfind("file:", 0) == 0) throw ConfigError("eval needs one built-in descriptor for both modalities");
    SweepOptions opts;
    opts.descriptor = parse_descriptor(fi);
    opts.dilate_cells = static_cast<int>(integer(cfg, "dilate_cells"));
    if (opts.dilate_cells < 0) throw ConfigError("dilate_cells must be >= 0");
    opts.tol = num(cfg, "tol");

    std::vector<Scene> cases;
    for (const auto& d : dirs) cases.push_back(read_scene(d));
    const AblationTable t = ablation_eval(cases, parse_list(str(cfg, "omegas"), "omega"), hybrid_params(cfg), opts);
    detail::write_file_atomic(out / "table.tsv", t.to_tsv());
    os << t.to_tsv();
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Semantic-region multimodal registration and fusion toolkit"};
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", "sroi 0.1.0");

    struct Sub {
        CLI::App* app;
        std::string config;
        std::map<std::string, CLI::Option*> opts;
        std::map<std::string, std::string> values;
    };
    const std::pair<const char*, const char*> commands[] = {
        {"match", "match two images inside their semantic regions"},
        {"register", "match, fit a TPS or homography, warp ir onto vi"},
        {"fuse", "fuse a registered pair"},
        {"metrics", "image-quality metrics of a registered pair and its fusion"},
        {"synth", "generate synthetic scenes with ground truth"},
        {"eval", "omega sweep and ablation table over a synthetic suite"},
    };
    std::vector<std::unique_ptr<Sub>> subs;
    for (const auto& [name, help] : commands) {
        auto s = std::make_unique<Sub>();
        s->app = app.add_subcommand(name, help);
        s->app->add_option("--config", s->config, "JSON config; flags override it");
        for (const Flag& f : kFlags) s->opts[f.key] = s->app->add_option(f.name, s->values[f.key], f.help);
        subs.push_back(std::move(s));
    }

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfigError;
    }

    const Sub* sub = nullptr;
    for (const auto& s : subs)
        if (s->app->parsed()) sub = s.get();
    const std::string name = sub->app->get_name();

    try {
        ojson cfg = default_config();
        if (!sub->config.empty()) merge_file(cfg, sub->config);
        for (const char* fan : {"mask", "features"}) {
            if (sub->opts.at(fan)->count() == 0) continue;
            set_typed(cfg, std::string(fan) + "_ir", sub->values.at(fan));
            set_typed(cfg, std::string(fan) + "_vi", sub->values.at(fan));
        }
        for (const Flag& f : kFlags) {
            const std::string key = f.key;
            if (key == "mask" || key == "features" || sub->opts.at(key)->count() == 0) continue;
            set_typed(cfg, key, sub->values.at(key));
        }

        const fs::path outdir = str(cfg, "out");
        fs::create_directories(outdir);
        ojson effective;
        effective["command"] = name;
        effective["config"] = cfg;
        write_json(effective, outdir / "effective-config.json");

        if (name == "match") return cmd_match(cfg, outdir, out);
        if (name == "register") return cmd_register(cfg, outdir, out);
        if (name == "fuse") return cmd_fuse(cfg, outdir, out);
        if (name == "metrics") return cmd_metrics(cfg, outdir, out);
        if (name == "synth") return cmd_synth(cfg, outdir, out);
        return cmd_eval(cfg, outdir, out);
    } catch (const DegenerateRegionError& e) {
        err << "sroi " << name << ": degenerate region: " << e.what() << "\n";
        return kDegenerateRegion;
    } catch (const InsufficientMatches& e) {
        err << "sroi " << name << ": " << e.what() << "\n";
        return kInsufficientMatches;
    } catch (const std::exception& e) {
        err << "sroi " << name << ": error: " << e.what() << "\n";
        return kConfigError;
    }
}

}  // namespace sroi::cli
