#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "monofuse/bundle.h"
#include "monofuse/geometry.h"

namespace monofuse {

struct Primitive {
    enum class Kind { Sphere, Capsule };
    Kind kind = Kind::Sphere;
    Vec3 a = Vec3::Zero();  // sphere center or capsule start
    Vec3 b = Vec3::Zero();  // capsule end (unused for spheres)
    double radius = 1.0;

    double sdf(const Vec3& x) const;
    bool operator==(const Primitive&) const = default;
};

/// Analytic scene. With `cavity` set the surface is the inside of the union
/// of primitives, so the signed distance is positive inside the union.
struct SceneSpec {
    std::vector<Primitive> primitives;
    bool cavity = true;
    /// Polyline through the cavity that camera paths follow.
    std::vector<Vec3> axis;
    /// Smooth-union radius between primitives; 0 gives the plain union.
    double blend = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
    /// Signed distance, positive in free space. Exact for single primitives,
    /// a lower bound on the distance otherwise.
    double sdf(const Vec3& x) const;
    /// Largest extent of the bounding box of all primitives.
    double diameter() const;
    bool operator==(const SceneSpec&) const = default;
};

/// A bent tube with a wider chamber, about 4 units across. The seed jitters
/// the tube's control points.
SceneSpec make_cavity_scene(std::uint64_t seed);

struct NoiseSpec {
    enum class StdMode { Exact, Inflated, Misreported };

    /// Multiplicative Gaussian depth noise, std as a fraction of depth.
    double depth_noise = 0.0;
    StdMode std_mode = StdMode::Exact;
    /// Factor for Inflated; log-uniform spread in [1/k, k] for Misreported.
    double std_factor = 3.0;
    /// Reported std (fraction of depth) when depth_noise is zero; a depth
    /// map needs a positive std wherever it is valid.
    double std_floor = 0.01;
    double rotation_deg = 0.0;
    double translation_fraction = 0.0;
    double match_pixel_noise = 0.0;
    double outlier_fraction = 0.0;

    void validate() const;
};

struct TrajectorySpec {
    /// Fraction of the scene axis covered, start and end.
    double start = 0.08;
    double end = 0.92;
    /// Amplitude (degrees) and period (frames) of the look-direction sway.
    double sway_deg = 8.0;
    double sway_period = 23.0;
    /// Lateral offset from the axis as a fraction of the local tube radius.
    double offset = 0.15;
};

/// Pinhole camera with the principal point at the image center.
CameraIntrinsics synthetic_camera(int width = 80, int height = 64, double focal = 60.0);

struct SequenceSpec {
    int frames = 60;
    CameraIntrinsics camera = synthetic_camera();
    TrajectorySpec trajectory;
    NoiseSpec noise;
    int sparse_points = 200;
    int matches_per_pair = 40;
    int max_match_offset = 8;
    bool color = true;
    std::uint64_t seed = 0;

    void validate() const;
};

struct GroundTruth {
    SceneSpec scene;
    std::vector<Pose> poses;
    /// Clean depth; std holds the noise std actually injected (zero when
    /// noise-free) and is not a valid belief.
    std::vector<DepthMap> depths;

    bool operator==(const GroundTruth&) const = default;
};

struct SyntheticSequence {
    Bundle bundle;
    GroundTruth truth;
};

struct RenderSettings {
    int max_steps = 256;
    /// Hit tolerance as a fraction of the scene diameter.
    double tolerance = 1e-4;
    /// Maximum ray length as a multiple of the scene diameter.
    double max_range = 2.0;
};

/// Ray-traced depth of the scene. std is zero; invalid where the ray misses.
DepthMap render_depth(const SceneSpec& scene, const Pose& pose, const CameraIntrinsics& camera,
                      const RenderSettings& settings = {});

/// Distance along a unit ray to the first surface hit, if any.
std::optional<double> trace_ray(const SceneSpec& scene, const Vec3& origin, const Vec3& direction,
                                const RenderSettings& settings = {});

/// Smooth camera path through the scene axis. Throws InvalidTrajectory if a
/// camera would sit outside free space.
std::vector<Pose> make_trajectory(const SceneSpec& scene, const TrajectorySpec& spec, int frames);

SyntheticSequence make_sequence(const SceneSpec& scene, const SequenceSpec& spec);

/// Surface points seen by the ground-truth cameras: a seeded random subset
/// of at most `count` back-projected clean depth pixels.
std::vector<Vec3> surface_samples(const GroundTruth& truth, const CameraIntrinsics& camera, size_t count,
                                  std::uint64_t seed = 0);

/// Applies a named corruption: "pose_scramble" (magnitude in degrees),
/// "depth_scale_drift" (relative scale change across the sequence) or
/// "match_shuffle" (fraction of matches reassigned). Magnitude 0 is a no-op.
Bundle corrupt_sequence(const Bundle& bundle, const std::string& corruption, double magnitude,
                        std::uint64_t seed);

/// Rotation of `rotation_deg` about a random axis and translation of length
/// `translation` in a random direction, applied on the world side.
Pose perturb_pose(const Pose& pose, double rotation_deg, double translation, std::mt19937_64& rng);

}  // namespace monofuse
