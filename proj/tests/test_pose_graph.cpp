#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "doctest.h"
#include "monofuse/error.h"
#include "monofuse/pose_graph.h"
#include "monofuse/synthetic.h"

using namespace monofuse;

namespace {

SequenceSpec small_spec(std::uint64_t seed, int frames = 16) {
    SequenceSpec spec;
    spec.frames = frames;
    spec.camera = synthetic_camera(48, 36, 36.0);
    spec.seed = seed;
    return spec;
}

/// Unit reported std, so the log term of the consistency kernel vanishes
/// and the objective at truth is the residual alone.
void set_unit_std(SyntheticSequence& seq) {
    for (auto& f : seq.bundle.frames)
        for (size_t i = 0; i < f.depth.std.size(); ++i)
            if (f.depth.valid.data[i]) f.depth.std.data[i] = 1.0 - 1e-8;
}

SyntheticSequence unit_std_sequence(std::uint64_t seed, int frames = 16) {
    auto seq = make_sequence(make_cavity_scene(seed), small_spec(seed, frames));
    set_unit_std(seq);
    return seq;
}

/// Noise-free sequence inside a straight capsule. The cavity is convex, so
/// every pixel is valid and no depth map has occluding contours; the only
/// residual at the true poses is bilinear interpolation error, which a fine
/// raster makes small.
SyntheticSequence tube_sequence(std::uint64_t seed, int frames, int width) {
    SceneSpec scene;
    scene.primitives.push_back({Primitive::Kind::Capsule, Vec3(0, 0, 0), Vec3(3, 0, 0), 0.5});
    scene.axis = {Vec3(0, 0, 0), Vec3(3, 0, 0)};
    scene.seed = seed;
    SequenceSpec spec;
    spec.frames = frames;
    spec.camera = synthetic_camera(width, width * 3 / 4, width * 0.75);
    spec.seed = seed;
    auto seq = make_sequence(scene, spec);
    set_unit_std(seq);
    return seq;
}

PoseGraphProblem truth_problem(const SyntheticSequence& seq) {
    auto p = PoseGraphProblem::from_bundle(seq.bundle);
    p.initial_poses = seq.truth.poses;
    return p;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Median error of poses relative to the first frame.
double median_error(const std::vector<Pose>& poses, const std::vector<Pose>& truth, bool rotation) {
    std::vector<double> e;
    for (size_t i = 1; i < poses.size(); ++i) {
        const Pose a = relative(poses[0], poses[i]);
        const Pose b = relative(truth[0], truth[i]);
        e.push_back(rotation ? rotation_distance(a, b) : translation_distance(a, b));
    }
    return median(e);
}

}  // namespace

TEST_CASE("objective vanishes at the true poses") {
    const auto seq = tube_sequence(1, 16, 256);
    const auto p = truth_problem(seq);
    const auto b = evaluate_objective(p, p.initial_poses);
    CHECK(b.pairs == p.pairs().size());
    CHECK(b.degenerate_pairs == 0);
    CHECK(std::abs(b.value) / double(b.pairs) < 1e-6);
}

TEST_CASE("perturbing one pose increases the objective") {
    const auto seq = unit_std_sequence(2);
    const auto p = truth_problem(seq);
    const double base = objective(p, p.initial_poses);
    std::mt19937_64 rng(2);
    for (size_t frame : {size_t(3), size_t(8), size_t(15)}) {
        auto poses = p.initial_poses;
        poses[frame] = perturb_pose(poses[frame], 0.5, 0.005, rng);
        CHECK(objective(p, poses) > base);
    }
}

TEST_CASE("zero weights give a zero objective") {
    const auto seq = unit_std_sequence(3);
    auto p = truth_problem(seq);
    p.config.w_consistency = 0.0;
    p.config.w_flow = 0.0;
    CHECK(objective(p, p.initial_poses) == 0.0);
}

TEST_CASE("pairs without overlap or matches leave the problem unconstrained") {
    const auto seq = unit_std_sequence(4);
    auto p = PoseGraphProblem::from_bundle(seq.bundle);
    p.ids = {0, 5};
    p.depths = {p.depths[0], p.depths[5]};
    p.initial_poses = {p.initial_poses[0], p.initial_poses[5]};
    p.matches.clear();
    std::fill(p.depths[1].valid.data.begin(), p.depths[1].valid.data.end(), 0);
    std::fill(p.depths[0].valid.data.begin(), p.depths[0].valid.data.end(), 0);
    CHECK(p.pairs().size() == 1);
    try {
        objective(p, p.initial_poses);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::UnconstrainedProblem);
    }
    CHECK_THROWS_AS(optimize(p), Error);

    p.ids = {0, 2};
    CHECK(p.pairs().empty());
    CHECK_THROWS_AS(objective(p, p.initial_poses), Error);
}

TEST_CASE("each pair appears once per interval") {
    const auto seq = unit_std_sequence(5, 20);
    PoseGraphConfig c;
    c.intervals = {6, 5, 8, 7, 5};
    const auto p = PoseGraphProblem::from_bundle(seq.bundle, c);
    const auto pairs = p.pairs();
    std::set<std::pair<size_t, size_t>> unique;
    for (const auto& [a, b] : pairs) {
        CHECK(a < b);
        unique.insert({a, b});
    }
    CHECK(unique.size() == pairs.size());
    // (20 - 5) + (20 - 6) + (20 - 7) + (20 - 8)
    CHECK(pairs.size() == 54);
}

TEST_CASE("analytic gradient matches finite differences") {
    // Pixels whose bilinear cell gains or loses a valid corner within a
    // difference step make the objective jump; the tube has no invalid
    // pixels, so only the image border can do that.
    const auto seq = tube_sequence(6, 12, 48);
    auto p = PoseGraphProblem::from_bundle(seq.bundle);
    std::mt19937_64 rng(6);
    for (int config = 0; config < 20; ++config) {
        CAPTURE(config);
        auto poses = seq.truth.poses;
        for (size_t i = 1; i < poses.size(); ++i) poses[i] = perturb_pose(poses[i], 1.0, 0.01, rng);
        const auto a = objective_gradient(p, poses, GradientMode::Analytic);
        const auto f = objective_gradient(p, poses, GradientMode::FiniteDifference, 1e-6);
        CHECK(a.value == doctest::Approx(f.value).epsilon(1e-12));
        CHECK(a.gradient.head<6>().isZero(0.0));
        CHECK((a.gradient - f.gradient).norm() <= 1e-4 * f.gradient.norm());
    }
}

TEST_CASE("true poses are a stationary point") {
    const auto seq = tube_sequence(7, 16, 256);
    const auto p = truth_problem(seq);
    const auto r = optimize(p);
    REQUIRE(r.refined);
    for (size_t i = 0; i < r.poses.size(); ++i) {
        CAPTURE(i);
        CHECK(rotation_distance(r.poses[i], seq.truth.poses[i]) <= 1e-5);
        CHECK(translation_distance(r.poses[i], seq.truth.poses[i]) <= 1e-5);
    }
}

TEST_CASE("noisy poses are recovered") {
    for (auto method : {OptimizerMethod::LevenbergMarquardt, OptimizerMethod::Lbfgs}) {
        auto spec = small_spec(8, 20);
        spec.noise.rotation_deg = 2.0;
        spec.noise.translation_fraction = 0.02;
        const auto seq = make_sequence(make_cavity_scene(8), spec);
        const auto p = PoseGraphProblem::from_bundle(seq.bundle);
        OptimizerSettings s;
        s.method = method;
        const auto r = optimize(p, s);
        REQUIRE(r.refined);
        CHECK(r.diagnostic.empty());
        CHECK(r.final_objective <= r.initial_objective);
        CHECK(r.history.front() == r.initial_objective);
        CHECK(r.history.back() == r.final_objective);
        for (size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i] <= r.history[i - 1]);
        // The anchor never moves.
        CHECK(r.poses[0] == p.initial_poses[0]);
        if (method == OptimizerMethod::LevenbergMarquardt) {
            CHECK(r.converged);
            CHECK(median_error(r.poses, seq.truth.poses, true) <=
                  0.5 * median_error(p.initial_poses, seq.truth.poses, true));
            CHECK(median_error(r.poses, seq.truth.poses, false) <=
                  0.5 * median_error(p.initial_poses, seq.truth.poses, false));
        }
    }
}

TEST_CASE("identity anchor stays identity") {
    auto seq = unit_std_sequence(9, 12);
    // Re-express the trajectory relative to the first frame.
    const Pose first = seq.bundle.frames[0].pose;
    for (auto& f : seq.bundle.frames) f.pose = relative(first, f.pose);
    std::mt19937_64 rng(9);
    for (size_t i = 1; i < seq.bundle.frames.size(); ++i)
        seq.bundle.frames[i].pose = perturb_pose(seq.bundle.frames[i].pose, 1.0, 0.01, rng);
    const auto p = PoseGraphProblem::from_bundle(seq.bundle);
    OptimizerSettings s;
    s.max_iterations = 5;
    const auto r = optimize(p, s);
    CHECK(r.poses[0] == p.initial_poses[0]);
    CHECK(r.poses[0] == Pose::identity());
}

TEST_CASE("non-finite objective aborts with the initial poses") {
    const auto seq = unit_std_sequence(10, 12);
    auto p = PoseGraphProblem::from_bundle(seq.bundle);
    auto& d = p.depths[2];
    for (size_t i = 0; i < d.mean.size(); ++i)
        if (d.valid.data[i]) d.std.data[i] = std::numeric_limits<double>::infinity();
    for (auto method : {OptimizerMethod::LevenbergMarquardt, OptimizerMethod::Lbfgs}) {
        OptimizerSettings s;
        s.method = method;
        const auto r = optimize(p, s);
        CHECK_FALSE(r.refined);
        CHECK_FALSE(r.diagnostic.empty());
        CHECK(r.poses.size() == p.initial_poses.size());
        for (size_t i = 0; i < r.poses.size(); ++i) CHECK(r.poses[i] == p.initial_poses[i]);
    }
}

TEST_CASE("settings and problem validation") {
    OptimizerSettings s;
    s.max_iterations = 0;
    CHECK_THROWS_AS(s.validate(), Error);
    s = {};
    s.tolerance = 0.0;
    CHECK_THROWS_AS(s.validate(), Error);
    s = {};
    s.damping_increase = 1.0;
    CHECK_THROWS_AS(s.validate(), Error);
    PoseGraphConfig c;
    c.w_flow = -1.0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.intervals = {};
    CHECK_THROWS_AS(c.validate(), Error);
    const auto seq = unit_std_sequence(11, 4);
    auto p = PoseGraphProblem::from_bundle(seq.bundle);
    p.initial_poses.pop_back();
    CHECK_THROWS_AS(p.validate(), Error);
}
