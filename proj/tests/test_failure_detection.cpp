#include <algorithm>

#include "doctest.h"
#include "monofuse/depth_ops.h"
#include "monofuse/error.h"
#include "monofuse/failure_detection.h"
#include "monofuse/synthetic.h"

using namespace monofuse;

namespace {

SequenceSpec small_spec(std::uint64_t seed) {
    SequenceSpec spec;
    spec.frames = 24;
    spec.camera = synthetic_camera(48, 40, 36.0);
    spec.noise.depth_noise = 0.02;
    spec.noise.match_pixel_noise = 0.3;
    spec.matches_per_pair = 30;
    spec.sparse_points = 60;
    spec.seed = seed;
    return spec;
}

struct Run {
    Bundle bundle;
    FailureReport report;
};

Run run_detection(const Bundle& bundle, const FailureConfig& config = {}) {
    Run r{bundle, {}};
    for (auto& f : r.bundle.frames) f.depth = scale_depth(f.depth, f.sparse).depth;
    const auto volume = fuse_bundle(r.bundle, VolumeConfig{}, VolumeFit{.resolution = 64});
    r.report = detect(r.bundle, volume, config);
    return r;
}

Bundle clean_bundle(std::uint64_t seed) { return make_sequence(make_cavity_scene(seed), small_spec(seed)).bundle; }

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_CASE("clean sequence passes the default thresholds") {
    const auto r = run_detection(clean_bundle(1)).report;
    REQUIRE(r.metric_sim);
    REQUIRE(r.metric_flow);
    REQUIRE(r.metric_consistency);
    CHECK(*r.metric_sim < 2.0);
    CHECK(*r.metric_flow < 0.1);
    CHECK(*r.metric_consistency < 2.0);
    CHECK(r.verdict == Verdict::Success);
    CHECK(r.reason.empty());
    CHECK(r.skipped_frames.empty());
    // Pairs (j, j + 5) over 24 frames.
    CHECK(r.pairs_used_consistency == 19);
}

TEST_CASE("scrambled poses are flagged") {
    const auto r = run_detection(corrupt_sequence(clean_bundle(2), "pose_scramble", 10.0, 2)).report;
    CHECK(r.verdict == Verdict::Failure);
    CHECK(r.reason.rfind("threshold exceeded", 0) == 0);
}

TEST_CASE("empty volume gives an insufficient coverage failure") {
    const auto bundle = clean_bundle(3);
    VolumeConfig c;
    c.nx = c.ny = c.nz = 8;
    const TsdfVolume empty(c);
    const auto r = detect(bundle, empty, FailureConfig{});
    CHECK(r.verdict == Verdict::Failure);
    CHECK_FALSE(r.metric_sim);
    CHECK(r.reason.find("insufficient coverage") != std::string::npos);
    CHECK(r.skipped_frames.size() == bundle.frames.size());
}

TEST_CASE("frames without simulated coverage are skipped") {
    const auto bundle = clean_bundle(4);
    std::vector<SimulatedDepth> sims;
    for (size_t i = 0; i < bundle.frames.size(); ++i) {
        const auto& d = bundle.frames[i].depth;
        SimulatedDepth s{d.mean, d.valid};
        if (i == 3) std::fill(s.valid.data.begin(), s.valid.data.end(), 0);
        sims.push_back(s);
    }
    const auto r = detect(bundle, sims, FailureConfig{});
    CHECK(r.skipped_frames == std::vector<int>{bundle.frames[3].id});
    // Frame 3 only takes part in the pair (3, 8).
    CHECK(r.pairs_used_consistency == 18);
    CHECK(r.verdict == Verdict::Success);

    for (auto& s : sims) std::fill(s.valid.data.begin(), s.valid.data.end(), 0);
    const auto none = detect(bundle, sims, FailureConfig{});
    CHECK(none.verdict == Verdict::Failure);
    CHECK_FALSE(none.metric_flow);
    CHECK(none.reason.find("insufficient coverage") != std::string::npos);
}

TEST_CASE("simulated depth equal to the prediction scores the log-std floor") {
    // sim = pred makes the residual vanish, so every term is the mean of ln(S + eps).
    const auto bundle = clean_bundle(5);
    std::vector<SimulatedDepth> sims;
    double log_sum = 0.0;
    for (const auto& f : bundle.frames) {
        sims.push_back({f.depth.mean, f.depth.valid});
        double s = 0.0;
        size_t n = 0;
        for (size_t i = 0; i < f.depth.mean.size(); ++i)
            if (f.depth.valid.data[i]) {
                s += std::log(f.depth.std.data[i] + 1e-8);
                ++n;
            }
        log_sum += s / double(n);
    }
    const auto r = detect(bundle, sims, FailureConfig{});
    CHECK(*r.metric_sim == doctest::Approx(log_sum / double(bundle.frames.size())).epsilon(1e-12));
    REQUIRE(r.floor_sim);
    CHECK(*r.floor_sim == doctest::Approx(*r.metric_sim).epsilon(1e-12));
}

TEST_CASE("metrics never fall below their zero-residual floors") {
    for (double degrees : {0.0, 3.0, 10.0}) {
        const auto r = run_detection(corrupt_sequence(clean_bundle(11), "pose_scramble", degrees, 11)).report;
        REQUIRE(r.floor_sim);
        REQUIRE(r.floor_consistency);
        CHECK(*r.metric_sim >= *r.floor_sim);
        CHECK(*r.metric_consistency >= *r.floor_consistency);
        CHECK(*r.metric_flow >= 0.0);
        if (degrees == 10.0) CHECK(*r.metric_sim - *r.floor_sim > 1.0);
    }
}

TEST_CASE("metrics rise with pose noise") {
    const std::vector<double> levels = {0.0, 2.0, 5.0, 10.0};
    std::vector<std::vector<double>> sim(levels.size()), cons(levels.size()), flow(levels.size());
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto clean = clean_bundle(100 + seed);
        for (size_t l = 0; l < levels.size(); ++l) {
            const auto r = run_detection(corrupt_sequence(clean, "pose_scramble", levels[l], seed)).report;
            sim[l].push_back(r.metric_sim.value_or(1e30));
            flow[l].push_back(r.metric_flow.value_or(1e30));
            cons[l].push_back(r.metric_consistency.value_or(1e30));
        }
    }
    for (size_t l = 1; l < levels.size(); ++l) {
        CAPTURE(levels[l]);
        CHECK(median(sim[l]) >= median(sim[l - 1]));
        CHECK(median(flow[l]) >= median(flow[l - 1]));
        CHECK(median(cons[l]) >= median(cons[l - 1]));
    }
}

TEST_CASE("match shuffling raises the flow metric") {
    const auto clean = clean_bundle(6);
    const auto base = run_detection(clean).report;
    const auto shuffled = run_detection(corrupt_sequence(clean, "match_shuffle", 1.0, 6)).report;
    CHECK(*shuffled.metric_flow >= 3.0 * *base.metric_flow);
}

TEST_CASE("detection is deterministic") {
    const auto bundle = corrupt_sequence(clean_bundle(7), "pose_scramble", 3.0, 7);
    CHECK(run_detection(bundle).report == run_detection(bundle).report);
}

TEST_CASE("report json fields") {
    FailureReport r;
    r.metric_sim = -1.5;
    r.metric_consistency = 0.25;
    r.skipped_frames = {4, 9};
    r.reason = "insufficient coverage: flow";
    const auto j = to_json(r);
    CHECK(j.at("sim_loss").get<double>() == -1.5);
    CHECK(j.at("flow_loss").is_null());
    CHECK(j.at("consistency_loss").get<double>() == 0.25);
    CHECK(j.at("thresholds").at("flow").get<double>() == 0.1);
    CHECK(j.at("verdict") == "failure");
    CHECK(j.at("skipped_frames") == nlohmann::json::array({4, 9}));
    CHECK(j.at("floors").at("sim").is_null());
    CHECK(j.at("floors").at("flow").get<double>() == 0.0);
}

TEST_CASE("threshold calibration from clean percentiles") {
    std::vector<FailureReport> runs(21);
    for (size_t i = 0; i < runs.size(); ++i) {
        runs[i].metric_sim = double(i);
        runs[i].metric_flow = 0.01 * double(i);
    }
    const auto t = calibrate_thresholds(runs, FailureThresholds{7.0, 7.0, 7.0});
    // p50 = 10, p95 = 19. Without floors the sim margin is the spread alone;
    // the flow floor is 0, so its median residual (0.1) exceeds the spread (0.09).
    CHECK(t.sim == doctest::Approx(23.5));
    CHECK(t.flow == doctest::Approx(0.24));
    CHECK(t.consistency == 7.0);

    // Nearly identical runs: the margin follows the residual above the floor.
    std::vector<FailureReport> tight(10);
    for (size_t i = 0; i < tight.size(); ++i) {
        tight[i].metric_sim = -3.0 + 1e-4 * double(i);
        tight[i].floor_sim = -3.5;
    }
    const auto u = calibrate_thresholds(tight);
    CHECK(u.sim == doctest::Approx(-3.0 + 8.55e-4 + 0.5 * (0.5 + 4.5e-4)).epsilon(1e-12));
}

TEST_CASE("config validation") {
    FailureConfig c;
    c.interval = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.min_coverage = 1.5;
    CHECK_THROWS_AS(c.validate(), Error);
    Bundle one = clean_bundle(8);
    one.frames.resize(1);
    CHECK_THROWS_AS(detect(one, std::vector<SimulatedDepth>(1), FailureConfig{}), Error);
}
