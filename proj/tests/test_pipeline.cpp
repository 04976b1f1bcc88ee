#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "monofuse/config.h"
#include "monofuse/error.h"
#include "monofuse/io.h"
#include "monofuse/pipeline.h"
#include "monofuse/synthetic.h"

using namespace monofuse;
namespace fs = std::filesystem;

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

SyntheticSequence small_sequence(std::uint64_t seed, double rotation_deg = 0.0) {
    auto spec = small_spec(seed);
    spec.noise.rotation_deg = rotation_deg;
    spec.noise.translation_fraction = rotation_deg / 100.0;
    return make_sequence(make_cavity_scene(seed), spec);
}

PipelineConfig small_config() {
    PipelineConfig c;
    c.fit.resolution = 64;
    c.registration.target_count = 5000;
    return c;
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("monofuse_test_pipeline_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("clean sequence reconstructs without pose optimization") {
    const auto seq = small_sequence(0);
    const auto out = run_pipeline(seq.bundle, small_config());
    CHECK(out.status == PipelineStatus::Reconstructed);
    CHECK(out.succeeded());
    CHECK(out.reports.size() == 1);
    CHECK(!out.optimization);
    CHECK(out.final_report().verdict == Verdict::Success);
    CHECK(!out.mesh.empty());
    CHECK(out.unscaled_frames.empty());
    REQUIRE(out.depth_scales.size() == seq.bundle.frames.size());
    for (double s : out.depth_scales) CHECK(s > 0.0);
    // Poses are untouched when no refinement ran.
    CHECK(out.bundle.poses() == seq.bundle.poses());
}

TEST_CASE("small pose noise is repaired by pose optimization") {
    int repaired = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto out = run_pipeline(small_sequence(seed, 2.0).bundle, small_config());
        CHECK(out.reports.front().verdict == Verdict::Failure);
        REQUIRE(out.optimization);
        CHECK(out.optimization->final_objective <= out.optimization->initial_objective);
        CHECK(out.bundle.frames.front().pose == small_sequence(seed, 2.0).bundle.frames.front().pose);
        if (out.status == PipelineStatus::ReconstructedAfterPoseOpt) {
            ++repaired;
            CHECK(out.reports.size() == 2);
            CHECK(out.final_report().verdict == Verdict::Success);
        }
    }
    CHECK(repaired >= 8);
}

TEST_CASE("scrambled poses and matches require a new SfM run") {
    auto bundle = small_sequence(3).bundle;
    bundle = corrupt_sequence(bundle, "pose_scramble", 30.0, 7);
    bundle = corrupt_sequence(bundle, "match_shuffle", 1.0, 8);
    const auto out = run_pipeline(bundle, small_config());
    CHECK(out.status == PipelineStatus::RerunSfmRequired);
    CHECK(!out.succeeded());
    CHECK(out.final_report().verdict == Verdict::Failure);
    CHECK(out.optimization);
}

TEST_CASE("frames without sparse depth are fused unscaled") {
    auto bundle = small_sequence(0).bundle;
    const int w = bundle.camera.width, h = bundle.camera.height;
    bundle.frames[4].sparse = SparseDepth(w, h);
    const auto out = run_pipeline(bundle, small_config());
    CHECK(out.unscaled_frames == std::vector<int>{bundle.frames[4].id});
    CHECK(out.depth_scales[4] == 1.0);
    CHECK(out.bundle.frames[4].depth == bundle.frames[4].depth);
}

TEST_CASE("invalid input is rejected") {
    Bundle empty;
    empty.camera = synthetic_camera(48, 40, 36.0);
    CHECK_THROWS_AS(run_pipeline(empty, small_config()), Error);
    try {
        run_pipeline(empty, small_config());
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Validation);
    }

    auto bad = small_config();
    bad.default_std_fraction = 0.0;
    CHECK_THROWS_AS(run_pipeline(small_sequence(0).bundle, bad), Error);
}

TEST_CASE("simulated depth export") {
    const auto seq = small_sequence(1);
    const auto cfg = small_config();
    const auto out = run_pipeline(seq.bundle, cfg);
    REQUIRE(out.status == PipelineStatus::Reconstructed);
    const auto dir = scratch("export");
    const auto sims = export_simulated_depths(out.bundle, out.volume, out.final_report(), dir, cfg.failure.raycast);
    REQUIRE(sims.size() == seq.bundle.frames.size());

    const double voxel = out.volume.config().voxel_size;
    size_t compared = 0, within = 0;
    for (size_t i = 0; i < sims.size(); ++i) {
        const auto path = dir / (io::frame_name(seq.bundle.frames[i].id) + ".dmap");
        REQUIRE(fs::exists(path));
        const auto [values, valid] = io::read_dmap(path);
        CHECK(valid == sims[i].valid);
        const auto& truth = seq.truth.depths[i];
        for (int v = 0; v < values.height; ++v) {
            for (int u = 0; u < values.width; ++u) {
                if (!valid(u, v)) continue;
                CHECK(values(u, v) == doctest::Approx(sims[i].depth(u, v)).epsilon(1e-6));
                if (!truth.is_valid(u, v)) continue;
                ++compared;
                if (std::abs(values(u, v) - truth.mean(u, v)) <= voxel) ++within;
            }
        }
    }
    REQUIRE(compared > 0);
    CHECK(double(within) / double(compared) >= 0.95);

    FailureReport failed = out.final_report();
    failed.verdict = Verdict::Failure;
    CHECK_THROWS_AS(export_simulated_depths(out.bundle, out.volume, failed, scratch("refused")), Error);
    CHECK(fs::is_empty(scratch("refused")));
}

TEST_CASE("file runner writes mesh, trajectory and metrics") {
    const auto seq = small_sequence(2);
    const auto bundle_dir = scratch("bundle");
    io::write_bundle(bundle_dir, seq.bundle);
    std::vector<int> ids;
    for (const auto& f : seq.bundle.frames) ids.push_back(f.id);
    io::write_ground_truth(bundle_dir, seq.truth, ids);

    const auto out_dir = scratch("out");
    const auto out = run_pipeline(bundle_dir, out_dir, small_config());
    CHECK(out.status == PipelineStatus::Reconstructed);
    REQUIRE(fs::exists(out_dir / "mesh.ply"));
    REQUIRE(fs::exists(out_dir / "metrics.json"));
    REQUIRE(fs::exists(out_dir / "trajectory.txt"));

    const auto mesh = io::read_ply(out_dir / "mesh.ply");
    CHECK(mesh.vertices.size() == out.mesh.vertices.size());
    CHECK(mesh.triangles.size() == out.mesh.triangles.size());

    const auto [read_ids, poses] = io::read_trajectory(out_dir / "trajectory.txt");
    CHECK(read_ids == ids);
    REQUIRE(poses.size() == ids.size());

    const auto m = io::read_json(out_dir / "metrics.json");
    CHECK(m.at("status") == "reconstructed");
    CHECK(m.at("verdict") == "success");
    for (const char* key : {"sim_loss", "flow_loss", "consistency_loss", "thresholds", "skipped_frames", "attempts",
                            "pose_optimization", "depth_scales", "unscaled_frames", "volume", "mesh", "evaluation"})
        CHECK_MESSAGE(m.contains(key), key);
    CHECK(m.at("attempts").size() == 1);
    CHECK(m.at("pose_optimization").is_null());
    REQUIRE(m.at("evaluation").is_object());
    REQUIRE(out.evaluation);
    CHECK(m.at("evaluation").at("rms_voxels").get<double>() <= 2.0);

    CHECK_THROWS_AS(run_pipeline(scratch("missing") / "nope", out_dir, small_config()), Error);
}

TEST_CASE("pipeline output is deterministic") {
    const auto seq = small_sequence(4, 2.0);
    const auto bundle_dir = scratch("det_bundle");
    io::write_bundle(bundle_dir, seq.bundle);
    const auto a = run_pipeline(bundle_dir, scratch("det_a"), small_config());
    const auto b = run_pipeline(bundle_dir, scratch("det_b"), small_config());
    CHECK(a.status == b.status);
    CHECK(slurp(a.mesh_path) == slurp(b.mesh_path));
    CHECK(slurp(a.metrics_path) == slurp(b.metrics_path));
    CHECK(slurp(a.metrics_path.parent_path() / "trajectory.txt") ==
          slurp(b.metrics_path.parent_path() / "trajectory.txt"));
}

TEST_CASE("config documents round-trip") {
    AppConfig c;
    c.pipeline.fit.resolution = 80;
    c.pipeline.failure.thresholds.sim = 1.5;
    c.pipeline.optimizer.method = OptimizerMethod::Lbfgs;
    c.pipeline.optimizer.gradient = GradientMode::FiniteDifference;
    c.pipeline.registration.initial(0, 3) = 0.25;
    c.synthetic.noise.std_mode = NoiseSpec::StdMode::Misreported;
    c.synthetic.trajectory.end = 0.8;
    c.synthetic.camera = synthetic_camera(32, 24, 20.0);

    const auto doc = to_json(c);
    const auto back = config_from_json(doc);
    CHECK(to_json(back) == doc);
    CHECK(back.pipeline.optimizer.method == OptimizerMethod::Lbfgs);
    CHECK(back.pipeline.registration.initial(0, 3) == 0.25);
    CHECK(back.synthetic.noise.std_mode == NoiseSpec::StdMode::Misreported);
    CHECK(doc.at("optimizer").at("method") == "lbfgs");

    const auto dir = scratch("config");
    io::write_json(dir / "c.json", doc);
    CHECK(to_json(load_config(dir / "c.json")) == doc);
}

TEST_CASE("partial config documents keep defaults") {
    const auto c = config_from_json(nlohmann::json::parse(R"({"fit": {"resolution": 32}})"));
    CHECK(c.pipeline.fit.resolution == 32);
    CHECK(to_json(c).at("failure") == to_json(AppConfig{}).at("failure"));
    CHECK(to_json(config_from_json(nlohmann::json::object())) == to_json(AppConfig{}));
}

TEST_CASE("config errors") {
    auto expect_validation = [](const char* text) {
        try {
            config_from_json(nlohmann::json::parse(text));
            FAIL("accepted " << text);
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Validation);
        }
    };
    expect_validation(R"({"colour": 1})");
    expect_validation(R"({"fit": {"resolutoin": 32}})");
    expect_validation(R"({"failure": {"thresholds": {"sim": 1, "extra": 2}}})");
    expect_validation(R"({"optimizer": {"method": "newton"}})");
    expect_validation(R"({"optimizer": {"method": 3}})");
    expect_validation(R"({"fit": {"resolution": "big"}})");
    expect_validation(R"({"fit": 5})");
    expect_validation(R"({"fit": {"resolution": 1}})");
    expect_validation(R"([1, 2])");
    CHECK_THROWS_AS(load_config(scratch("noconfig") / "missing.json"), Error);
}
