#include <doctest.h>

#include <fstream>

#include "oracles.hpp"
#include "sroi/synthbench.hpp"

using namespace sroi;

namespace {

SceneSpec spec_of(const std::string& deform, const std::string& gap, std::uint64_t seed = 0, int size = 128) {
    SceneSpec s;
    s.size = {size, size};
    s.seed = seed;
    s.deform = parse_deform(deform);
    s.gap = parse_gap(gap);
    return s;
}

double dist(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

TEST_CASE("identity scene: ir equals vi bitwise and gt is the identity") {
    const Scene s = generate(spec_of("none", "none", 3));
    CHECK(s.ir == s.vi);
    CHECK(s.gt.mask_ir() == s.gt.mask_vi());
    CHECK(s.gt.mask_ir().count() > 0);
    for (const Point2 p : {Point2{0, 0}, Point2{17.5, 90.25}, Point2{127, 3}}) {
        CHECK(s.gt.map(p) == p);
        CHECK(s.gt.inverse(p) == p);
    }
    for (double v : s.vi.data()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("translation scene: gt(p) == p + (16, 0)") {
    const Scene s = generate(spec_of("translate:16,0", "none", 4));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 128);
    for (int i = 0; i < 100; ++i) {
        const Point2 p{u(rng), u(rng)};
        CHECK(dist(s.gt.map(p), {p.x + 16, p.y}) < 1e-9);
        CHECK(dist(s.gt.inverse(s.gt.map(p)), p) < 1e-9);
    }
    // ir samples vi at p + 16
    for (int y = 0; y < 128; y += 7)
        for (int x = 0; x + 16 < 128; x += 5) CHECK(s.ir.at(x, y) == doctest::Approx(s.vi.at(x + 16, y)).epsilon(1e-12));
}

TEST_CASE("tps scene: warping ir back with the true model reproduces vi") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const SceneSpec spec = spec_of("tps:9,12", "none", seed, 256);
        const Scene s = generate(spec);
        const Image back = warp_image(s.ir, [&](const Point2& q) { return s.gt.inverse(q); }, s.vi.size());
        // valid region: preimage inside ir with a one-pixel margin
        double sum = 0.0;
        std::size_t n = 0;
        for (int y = 0; y < 256; ++y)
            for (int x = 0; x < 256; ++x) {
                const Point2 p = s.gt.inverse({static_cast<double>(x), static_cast<double>(y)});
                if (p.x < 1 || p.y < 1 || p.x > 254 || p.y > 254) continue;
                sum += std::abs(back.at(x, y) - s.vi.at(x, y));
                ++n;
            }
        REQUIRE(n > 200u * 200u);
        CHECK(sum / static_cast<double>(n) < 0.02);
    }
}

TEST_CASE("inverse is a right and left inverse of map") {
    const Scene s = generate(spec_of("tps:9,12", "gamma:0.6", 5, 256));
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(16, 240);
    for (int i = 0; i < 200; ++i) {
        const Point2 p{u(rng), u(rng)};
        CHECK(dist(s.gt.map(s.gt.inverse(p)), p) < 1e-6);
        CHECK(dist(s.gt.inverse(s.gt.map(p)), p) < 1e-6);
        CHECK(dist(s.gt.map(p), p) <= 12.0 * 3);
        CHECK(dist(s.gt.as_map()(p), s.gt.map(p)) == 0.0);
    }
}

TEST_CASE("masks are consistent under the ground-truth mapping") {
    for (const char* deform : {"tps:9,12", "translate:16,0", "homography:1.02,0.01,-3,0,0.98,4,1e-5,0,1"}) {
        const Scene s = generate(spec_of(deform, "invert", 6, 256));
        const RegionMask& mi = s.gt.mask_ir();
        const RegionMask& mv = s.gt.mask_vi();
        CHECK(mi.count() > 1000u);
        std::size_t bad = 0, total = 0;
        const GridPointSet pts = grid_points(mi);
        for (const auto& p : pts.points()) {
            const Point2 q = s.gt.map(p.to_point());
            ++total;
            // within one cell of the visible mask
            bool near = false;
            for (int dy = -8; dy <= 8 && !near; ++dy)
                for (int dx = -8; dx <= 8 && !near; ++dx) {
                    const int x = static_cast<int>(std::lround(q.x)) + dx, y = static_cast<int>(std::lround(q.y)) + dy;
                    near = x >= 0 && y >= 0 && x < 256 && y < 256 && mv.at(x, y);
                }
            bad += near ? 0 : 1;
        }
        CHECK(total > 0u);
        INFO(deform);
        CHECK(bad == 0u);
    }
}

TEST_CASE("generation is deterministic and seed-dependent") {
    const SceneSpec a = spec_of("tps:9,12", "gamma:0.6", 11);
    const Scene s1 = generate(a), s2 = generate(a);
    CHECK(s1.ir == s2.ir);
    CHECK(s1.vi == s2.vi);
    CHECK(s1.gt.mask_vi() == s2.gt.mask_vi());
    const Scene s3 = generate(spec_of("tps:9,12", "gamma:0.6", 12));
    CHECK_FALSE(s1.vi == s3.vi);
}

TEST_CASE("modality gaps") {
    ModalityGap g;
    CHECK(g.apply(0.3) == 0.3);
    CHECK(parse_gap("invert").apply(0.3) == doctest::Approx(0.7));
    CHECK(parse_gap("gamma:2").apply(0.5) == doctest::Approx(0.25));
    CHECK(parse_gap("contrast").apply(0.5) == 0.0);
    CHECK(parse_gap("contrast").apply(1.0) == 1.0);
    for (const char* t : {"none", "invert", "gamma:0.6", "contrast"}) CHECK(gap_name(parse_gap(t)) == t);
    CHECK_THROWS(parse_gap("gamma:-1"));
    CHECK_THROWS(parse_gap("blur"));

    const Scene s = generate(spec_of("none", "invert", 7));
    for (std::size_t i = 0; i < s.vi.data().size(); ++i)
        CHECK(s.ir.data()[i] == doctest::Approx(1.0 - s.vi.data()[i]).epsilon(1e-12));
}

TEST_CASE("deform parsing round trips") {
    for (const char* t : {"none", "tps:9,12", "tps:16,4.5"}) CHECK(deform_name(parse_deform(t)) == t);
    const Deform tr = parse_deform("translate:16,-2");
    REQUIRE(std::holds_alternative<HomographyDeform>(tr));
    CHECK(std::get<HomographyDeform>(tr).h(0, 2) == 16.0);
    CHECK(std::get<HomographyDeform>(tr).h(1, 2) == -2.0);
    const Deform h = parse_deform(deform_name(tr));
    CHECK(std::get<HomographyDeform>(h).h == std::get<HomographyDeform>(tr).h);
    CHECK_THROWS(parse_deform("tps:9"));
    CHECK_THROWS(parse_deform("homography:1,2,3"));
    CHECK_THROWS(parse_deform("shear:1"));
}

TEST_CASE("spec validation") {
    SceneSpec s;
    s.size = {100, 96};
    CHECK_THROWS(s.validate());
    s.size = {128, 128};
    s.deform = TpsDeform{9, 100.0};
    CHECK_THROWS(s.validate());
    s.deform = TpsDeform{2, 4.0};
    CHECK_THROWS(s.validate());
    s.deform = HomographyDeform{Eigen::Matrix3d::Zero()};
    CHECK_THROWS(s.validate());
    s.deform = NoDeform{};
    s.n_blobs = -1;
    CHECK_THROWS(s.validate());
    s.n_blobs = 0;
    CHECK_NOTHROW(s.validate());
}

TEST_CASE("scene files round trip") {
    const auto dir = oracle::temp_dir("scene");
    const SceneSpec spec = spec_of("tps:9,12", "gamma:0.6", 8);
    const Scene s = generate(spec);
    write_scene(s, spec, dir);
    for (const char* f : {"ir.pgm", "vi.pgm", "mask_ir.pgm", "mask_vi.pgm", "gt.json"}) CHECK(std::filesystem::exists(dir / f));
    const Scene r = read_scene(dir);
    CHECK(r.gt.mask_ir() == s.gt.mask_ir());
    CHECK(r.gt.mask_vi() == s.gt.mask_vi());
    for (std::size_t i = 0; i < s.ir.data().size(); ++i) CHECK(std::abs(r.ir.data()[i] - s.ir.data()[i]) <= 0.5 / 255 + 1e-12);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 128);
    for (int i = 0; i < 50; ++i) {
        const Point2 p{u(rng), u(rng)};
        CHECK(dist(r.gt.map(p), s.gt.map(p)) < 1e-9);
    }
    CHECK(sidecar_json(r.gt, spec) == sidecar_json(s.gt, spec));

    std::ofstream(dir / "bad.json") << "{not json";
    CHECK_THROWS_AS(read_ground_truth(dir / "bad.json", s.gt.mask_ir(), s.gt.mask_vi()), FormatError);
}

TEST_CASE("dilate") {
    RegionMask m(9, 9);
    m.set(4, 4, true);
    const RegionMask d = dilate(m, 2);
    CHECK(d.count() == 25u);
    CHECK(d.at(2, 2));
    CHECK(d.at(6, 6));
    CHECK_FALSE(d.at(1, 4));
    CHECK(dilate(m, 0) == m);
    CHECK(dilate(RegionMask(5, 5, true), 3).count() == 25u);
}

TEST_CASE("registration error of the true inverse is zero") {
    const Scene s = generate(spec_of("tps:9,12", "none", 9));
    CHECK(registration_error([&](const Point2& q) { return s.gt.inverse(q); }, s.gt, s.gt.mask_vi()) < 1e-9);
    CHECK(registration_error([&](const Point2& q) { return Point2{s.gt.inverse(q).x + 3, s.gt.inverse(q).y + 4}; },
                             s.gt, s.gt.mask_vi()) == doctest::Approx(5.0).epsilon(1e-9));
    CHECK_THROWS(registration_error([](const Point2& q) { return q; }, s.gt, RegionMask(128, 128, false)));
}

TEST_CASE("ablation table structure and the no-decay row") {
    std::vector<Scene> cases;
    for (std::uint64_t seed = 0; seed < 3; ++seed) cases.push_back(generate(spec_of("tps:9,8", "gamma:0.6", seed)));
    const std::vector<double> omegas{0.3, 0.7};
    HybridParams p;
    const AblationTable sweep = omega_sweep(cases, omegas, p);
    REQUIRE(sweep.rows.size() == omegas.size() + 1);
    CHECK(sweep.rows[0].label == kNoDecayLabel);
    CHECK(sweep.rows[1].label == "omega=0.3");
    CHECK(sweep.rows[2].label == "omega=0.7");

    const AblationTable full = ablation_eval(cases, omegas, p);
    const auto find = [&](const std::string& label) {
        for (const auto& r : full.rows)
            if (r.label == label) return r;
        FAIL("missing row " << label);
        return AblationRow{};
    };
    const AblationRow deep = find("Deep only"), nodecay = find(kNoDecayLabel);
    CHECK(deep.matches == nodecay.matches);
    CHECK(deep.correct == nodecay.correct);
    CHECK(deep.accuracy == nodecay.accuracy);
    find("HOL only");
    for (const auto& r : full.rows) {
        CHECK(r.correct <= r.matches);
        CHECK((r.accuracy >= 0.0 && r.accuracy <= 1.0));
    }

    const std::string tsv = full.to_tsv();
    CHECK(tsv.rfind("Method\tMatches\tCorrect Matches\tMatches Accuracy\n", 0) == 0);
    CHECK(static_cast<std::size_t>(std::count(tsv.begin(), tsv.end(), '\n')) == full.rows.size() + 1);
}
