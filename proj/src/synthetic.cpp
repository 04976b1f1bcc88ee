#include "monofuse/synthetic.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "monofuse/error.h"

namespace monofuse {

namespace {

enum StreamTag : std::uint64_t {
    kSceneStream = 1,
    kDepthStream,
    kSparseStream,
    kMatchStream,
    kPoseStream,
    kCorruptStream,
};

/// Independent generator for one (purpose, index) pair of a seed.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(tag), std::uint32_t(index),
                      std::uint32_t(index >> 32)};
    return std::mt19937_64(seq);
}

Vec3 random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 v;
    do {
        v = Vec3(n(rng), n(rng), n(rng));
    } while (v.norm() < 1e-9);
    return v.normalized();
}

Vec3 catmull_rom(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3, double t) {
    const double t2 = t * t, t3 = t2 * t;
    return 0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 +
                  (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3);
}

/// Densely sampled Catmull-Rom spline through the axis, with arc length.
struct Spline {
    std::vector<Vec3> points;
    std::vector<double> length;

    explicit Spline(const std::vector<Vec3>& axis) {
        std::vector<Vec3> p;
        p.push_back(2.0 * axis[0] - axis[1]);
        p.insert(p.end(), axis.begin(), axis.end());
        p.push_back(2.0 * axis.back() - axis[axis.size() - 2]);
        constexpr int kPerSegment = 400;
        for (size_t s = 1; s + 2 < p.size(); ++s)
            for (int i = 0; i < kPerSegment; ++i)
                points.push_back(catmull_rom(p[s - 1], p[s], p[s + 1], p[s + 2], double(i) / kPerSegment));
        points.push_back(axis.back());
        length.assign(points.size(), 0.0);
        for (size_t i = 1; i < points.size(); ++i) length[i] = length[i - 1] + (points[i] - points[i - 1]).norm();
    }

    /// Position and unit tangent at a fraction of the total arc length.
    std::pair<Vec3, Vec3> at(double fraction) const {
        const double target = std::clamp(fraction, 0.0, 1.0) * length.back();
        size_t i = std::upper_bound(length.begin(), length.end(), target) - length.begin();
        i = std::clamp<size_t>(i, 1, points.size() - 1);
        const double seg = length[i] - length[i - 1];
        const double w = seg > 0 ? (target - length[i - 1]) / seg : 0.0;
        const Vec3 pos = (1 - w) * points[i - 1] + w * points[i];
        return {pos, (points[i] - points[i - 1]).normalized()};
    }
};

Mat3 look_rotation(const Vec3& forward, const Vec3& up_hint) {
    const Vec3 z = forward.normalized();
    Vec3 x = z.cross(up_hint);
    if (x.norm() < 1e-6) x = z.cross(Vec3::UnitY());
    x.normalize();
    const Vec3 y = z.cross(x);
    Mat3 r;
    r.col(0) = x;
    r.col(1) = y;
    r.col(2) = z;
    return r;
}

Color surface_color(const Vec3& x) {
    const double pattern = std::sin(5.0 * x.x()) * std::sin(5.0 * x.y() + 1.0) * std::sin(5.0 * x.z() + 2.0);
    // 8-bit quantized so colors survive a PPM round trip unchanged.
    const auto q = [](double c) { return float(std::round(c * 255.0)) / 255.0f; };
    return Color(q(0.75 + 0.15 * pattern), q(0.45 + 0.1 * pattern), q(0.4 + 0.05 * pattern));
}

float quantize(double v) { return static_cast<float>(v); }

}  // namespace

double Primitive::sdf(const Vec3& x) const {
    if (kind == Kind::Sphere) return (x - a).norm() - radius;
    const Vec3 ab = b - a;
    const double denom = ab.squaredNorm();
    const double h = denom > 0 ? std::clamp((x - a).dot(ab) / denom, 0.0, 1.0) : 0.0;
    return (x - a - h * ab).norm() - radius;
}

void SceneSpec::validate() const {
    if (primitives.empty()) throw Error(ErrorKind::Validation, "scene needs at least one primitive");
    if (!(blend >= 0.0)) throw Error(ErrorKind::Validation, "blend must be nonnegative");
    for (const auto& p : primitives)
        if (!(p.radius > 0.0)) throw Error(ErrorKind::Validation, "primitive radius must be positive");
}

double SceneSpec::sdf(const Vec3& x) const {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& p : primitives) {
        const double e = p.sdf(x);
        if (blend > 0.0 && std::isfinite(d)) {
            // Polynomial smooth minimum; its gradient is a convex combination
            // of the inputs' gradients, so the result stays 1-Lipschitz.
            const double h = std::clamp(0.5 + 0.5 * (e - d) / blend, 0.0, 1.0);
            d = e * (1.0 - h) + d * h - blend * h * (1.0 - h);
        } else {
            d = std::min(d, e);
        }
    }
    return cavity ? -d : d;
}

double SceneSpec::diameter() const {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (const auto& p : primitives) {
        const Vec3 r = Vec3::Constant(p.radius);
        lo = lo.cwiseMin(p.a - r);
        hi = hi.cwiseMax(p.a + r);
        if (p.kind == Primitive::Kind::Capsule) {
            lo = lo.cwiseMin(p.b - r);
            hi = hi.cwiseMax(p.b + r);
        }
    }
    return (hi - lo).maxCoeff();
}

// Smooth union radius; sharp lips at the chamber would occlude its walls.
constexpr double kCavityBlend = 0.5;

SceneSpec make_cavity_scene(std::uint64_t seed) {
    auto rng = stream(seed, kSceneStream);
    std::normal_distribution<double> jitter(0.0, 0.04);
    SceneSpec s;
    s.seed = seed;
    s.cavity = true;
    s.axis = {Vec3(0.0, 0.0, 0.0), Vec3(1.0, 0.15, 0.0), Vec3(2.0, 0.0, 0.15), Vec3(3.0, -0.15, 0.05)};
    for (size_t i = 1; i + 1 < s.axis.size(); ++i) s.axis[i] += Vec3(jitter(rng), jitter(rng), jitter(rng));
    for (size_t i = 0; i + 1 < s.axis.size(); ++i) {
        s.primitives.push_back({Primitive::Kind::Capsule, s.axis[i], s.axis[i + 1], 0.5});
    }
    s.primitives.push_back({Primitive::Kind::Sphere, 0.5 * (s.axis[1] + s.axis[2]), Vec3::Zero(), 0.75});
    s.blend = kCavityBlend;
    return s;
}

void NoiseSpec::validate() const {
    auto nonneg = [](double v, const char* name) {
        if (!(v >= 0.0)) throw Error(ErrorKind::Validation, std::string(name) + " must be nonnegative");
    };
    nonneg(depth_noise, "depth_noise");
    nonneg(rotation_deg, "rotation_deg");
    nonneg(translation_fraction, "translation_fraction");
    nonneg(match_pixel_noise, "match_pixel_noise");
    if (!(std_factor >= 1.0)) throw Error(ErrorKind::Validation, "std_factor must be at least 1");
    if (!(std_floor > 0.0)) throw Error(ErrorKind::Validation, "std_floor must be positive");
    if (!(outlier_fraction >= 0.0 && outlier_fraction <= 1.0) || translation_fraction > 1.0) {
        throw Error(ErrorKind::Validation, "fractions must lie in [0, 1]");
    }
}

CameraIntrinsics synthetic_camera(int width, int height, double focal) {
    CameraIntrinsics k;
    k.width = width;
    k.height = height;
    k.fx = k.fy = focal;
    k.cx = 0.5 * (width - 1);
    k.cy = 0.5 * (height - 1);
    return k;
}

void SequenceSpec::validate() const {
    if (frames < 2) throw Error(ErrorKind::Validation, "a sequence needs at least two frames");
    camera.validate();
    noise.validate();
    if (sparse_points < 0 || matches_per_pair < 0 || max_match_offset < 0) {
        throw Error(ErrorKind::Validation, "counts must be nonnegative");
    }
    if (!(trajectory.start >= 0.0 && trajectory.end <= 1.0 && trajectory.start < trajectory.end)) {
        throw Error(ErrorKind::Validation, "trajectory range must satisfy 0 <= start < end <= 1");
    }
}

std::optional<double> trace_ray(const SceneSpec& scene, const Vec3& origin, const Vec3& direction,
                                const RenderSettings& settings) {
    const double diameter = scene.diameter();
    const double tol = settings.tolerance * diameter;
    const double max_t = settings.max_range * diameter;
    double t = 0.0;
    double d = scene.sdf(origin);
    for (int step = 0; step < settings.max_steps; ++step) {
        if (d < tol) {
            // Bracket the first sign change with short steps, then bisect.
            double a = t, b = t;
            if (d < 0.0) {
                a = std::max(0.0, t - tol);
                if (scene.sdf(origin + a * direction) < 0.0) return t;
            } else {
                bool crossed = false;
                for (int i = 0; i < 64 && !crossed; ++i) {
                    const double db = scene.sdf(origin + b * direction);
                    if (db < 0.0) {
                        crossed = true;
                    } else {
                        a = b;
                        b += std::max(tol, db);
                    }
                }
                if (!crossed) return t;
            }
            for (int i = 0; i < 60; ++i) {
                const double m = 0.5 * (a + b);
                if (scene.sdf(origin + m * direction) >= 0.0) a = m;
                else b = m;
            }
            return 0.5 * (a + b);
        }
        t += d;
        if (t > max_t) return std::nullopt;
        d = scene.sdf(origin + t * direction);
    }
    return std::nullopt;
}

DepthMap render_depth(const SceneSpec& scene, const Pose& pose, const CameraIntrinsics& camera,
                      const RenderSettings& settings) {
    scene.validate();
    DepthMap out(camera.width, camera.height);
    const Mat3 r = pose.rotation();
    const Vec3 origin = pose.translation();
#pragma omp parallel for schedule(static)
    for (int v = 0; v < camera.height; ++v) {
        for (int u = 0; u < camera.width; ++u) {
            const Vec3 ray = unproject(u, v, 1.0, camera);
            const double n = ray.norm();
            const auto t = trace_ray(scene, origin, r * (ray / n), settings);
            if (!t) continue;
            out.mean(u, v) = *t / n;
            out.valid(u, v) = 1;
        }
    }
    return out;
}

std::vector<Pose> make_trajectory(const SceneSpec& scene, const TrajectorySpec& spec, int frames) {
    if (scene.axis.size() < 2) throw Error(ErrorKind::InvalidTrajectory, "scene has no camera axis");
    if (frames < 1) throw Error(ErrorKind::Validation, "trajectory needs at least one frame");
    const Spline spline(scene.axis);
    const double clearance = 1e-3 * scene.diameter();
    std::vector<Pose> poses;
    poses.reserve(size_t(frames));
    for (int i = 0; i < frames; ++i) {
        const double s = frames == 1 ? spec.start : spec.start + (spec.end - spec.start) * i / (frames - 1);
        const auto [center, tangent] = spline.at(s);
        const Mat3 frame = look_rotation(tangent, Vec3::UnitZ());
        const double local_radius = scene.cavity ? scene.sdf(center) : 0.0;
        const double phase = 2.0 * M_PI * i / spec.sway_period;
        const Vec3 position = center + spec.offset * local_radius *
                                           (std::cos(0.5 * phase) * frame.col(0) + std::sin(0.5 * phase) * frame.col(1));
        const double yaw = spec.sway_deg * M_PI / 180.0 * std::sin(phase);
        const double pitch = 0.5 * spec.sway_deg * M_PI / 180.0 * std::cos(phase / 1.3);
        const Mat3 sway = (Eigen::AngleAxisd(yaw, frame.col(1)) * Eigen::AngleAxisd(pitch, frame.col(0))).toRotationMatrix();
        const Mat3 rotation = look_rotation(sway * tangent, Vec3::UnitZ());
        if (scene.sdf(position) <= clearance) {
            throw Error(ErrorKind::InvalidTrajectory, "camera " + std::to_string(i) + " leaves the free space");
        }
        poses.emplace_back(Eigen::Quaterniond(rotation), position);
    }
    return poses;
}

Pose perturb_pose(const Pose& pose, double rotation_deg, double translation, std::mt19937_64& rng) {
    const Vec3 axis = random_unit(rng);
    const Vec3 dir = random_unit(rng);
    const Eigen::Quaterniond dq(Eigen::AngleAxisd(rotation_deg * M_PI / 180.0, axis));
    return Pose(dq * pose.quaternion(), pose.translation() + translation * dir);
}

SyntheticSequence make_sequence(const SceneSpec& scene, const SequenceSpec& spec) {
    scene.validate();
    spec.validate();
    const auto& k = spec.camera;
    const auto& noise = spec.noise;
    const double diameter = scene.diameter();
    const int n = spec.frames;

    SyntheticSequence out;
    out.truth.scene = scene;
    out.truth.poses = make_trajectory(scene, spec.trajectory, n);
    out.bundle.camera = k;
    out.bundle.frames.resize(size_t(n));
    out.truth.depths.resize(size_t(n));

    for (int f = 0; f < n; ++f) {
        const Pose& pose = out.truth.poses[size_t(f)];
        const DepthMap clean = render_depth(scene, pose, k);
        auto rng = stream(spec.seed, kDepthStream, std::uint64_t(f));
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::uniform_real_distribution<double> spread(-std::log(noise.std_factor), std::log(noise.std_factor));

        DepthMap truth(k.width, k.height), noisy(k.width, k.height);
        ColorImage color(k.width, k.height, Color::Zero());
        for (int v = 0; v < k.height; ++v) {
            for (int u = 0; u < k.width; ++u) {
                if (!clean.is_valid(u, v)) continue;
                const double z = clean.mean(u, v);
                const double z_true = quantize(z);
                truth.mean(u, v) = z_true;
                truth.std(u, v) = quantize(noise.depth_noise * z_true);
                truth.valid(u, v) = 1;
                const double sample = gauss(rng);
                const double jitter = spread(rng);
                const double mean = noise.depth_noise > 0 ? quantize(z_true * (1.0 + noise.depth_noise * sample)) : z_true;
                if (!(mean > 0.0)) continue;
                double s = noise.depth_noise > 0 ? noise.depth_noise * z_true : noise.std_floor * z_true;
                if (noise.std_mode == NoiseSpec::StdMode::Inflated) s *= noise.std_factor;
                if (noise.std_mode == NoiseSpec::StdMode::Misreported) s *= std::exp(jitter);
                noisy.set(u, v, mean, quantize(s));
                if (spec.color) color(u, v) = surface_color(pose * unproject(u, v, z, k));
            }
        }

        FrameBundle& frame = out.bundle.frames[size_t(f)];
        frame.id = f;
        frame.depth = std::move(noisy);
        if (spec.color) frame.color = std::move(color);

        // Sparse depth: distinct random valid pixels carrying true depth.
        frame.sparse = SparseDepth(k.width, k.height);
        std::vector<int> candidates;
        for (int i = 0; i < k.width * k.height; ++i)
            if (truth.valid.data[size_t(i)]) candidates.push_back(i);
        auto srng = stream(spec.seed, kSparseStream, std::uint64_t(f));
        const size_t take = std::min(candidates.size(), size_t(spec.sparse_points));
        for (size_t i = 0; i < take; ++i) {
            std::uniform_int_distribution<size_t> pick(i, candidates.size() - 1);
            std::swap(candidates[i], candidates[pick(srng)]);
            const size_t idx = size_t(candidates[i]);
            frame.sparse.mask.data[idx] = 1;
            frame.sparse.values.data[idx] = truth.mean.data[idx];
        }
        out.truth.depths[size_t(f)] = std::move(truth);
    }

    // Matches from exact ray casts, kept only when visible in both frames.
    for (int j = 0; j < n; ++j) {
        const Pose& pj = out.truth.poses[size_t(j)];
        for (int off = 1; off <= spec.max_match_offset && j + off < n; ++off) {
            const int kf = j + off;
            const Pose& pk = out.truth.poses[size_t(kf)];
            auto rng = stream(spec.seed, kMatchStream, std::uint64_t(j) * 64 + std::uint64_t(off));
            std::uniform_real_distribution<double> pu(0.0, k.width - 1.0), pv(0.0, k.height - 1.0), unit(0.0, 1.0);
            std::uniform_int_distribution<int> iu(0, k.width - 2), iv(0, k.height - 2);
            std::normal_distribution<double> pixel_noise(0.0, 1.0);
            int made = 0;
            for (int attempt = 0; attempt < 6 * spec.matches_per_pair && made < spec.matches_per_pair; ++attempt) {
                // First endpoints sit on pixel centers, where the flow model
                // needs no interpolation.
                const Vec2 a(iu(rng), iv(rng));
                const double nu = pixel_noise(rng), nv = pixel_noise(rng);
                const double outlier_draw = unit(rng);
                const Vec3 ray = unproject(a.x(), a.y(), 1.0, k).normalized();
                const auto t = trace_ray(scene, pj.translation(), pj.rotation() * ray);
                if (!t) continue;
                const Vec3 world = pj.translation() + *t * (pj.rotation() * ray);
                const Vec3 in_k = pk.inverse() * world;
                if (in_k.z() <= 0.0) continue;
                const auto q = project(in_k, k);
                if (!k.inside(q.u, q.v)) continue;
                const Vec3 to_point = world - pk.translation();
                const auto seen = trace_ray(scene, pk.translation(), to_point.normalized());
                if (!seen || std::abs(*seen - to_point.norm()) > 1e-3 * diameter) continue;

                Vec2 b(q.u, q.v);
                if (outlier_draw < noise.outlier_fraction) {
                    Vec2 c;
                    do {
                        c = Vec2(pu(rng), pv(rng));
                    } while ((c - b).norm() <= 5.0);
                    b = c;
                } else if (noise.match_pixel_noise > 0.0) {
                    b += noise.match_pixel_noise * Vec2(nu, nv);
                    b.x() = std::clamp(b.x(), 0.0, k.width - 1.0);
                    b.y() = std::clamp(b.y(), 0.0, k.height - 1.0);
                }
                out.bundle.matches.push_back({j, kf, a, b});
                ++made;
            }
        }
    }

    // SfM pose noise on every frame.
    for (int f = 0; f < n; ++f) {
        Pose pose = out.truth.poses[size_t(f)];
        if (noise.rotation_deg > 0.0 || noise.translation_fraction > 0.0) {
            auto rng = stream(spec.seed, kPoseStream, std::uint64_t(f));
            pose = perturb_pose(pose, noise.rotation_deg, noise.translation_fraction * diameter, rng);
        }
        out.bundle.frames[size_t(f)].pose = pose;
    }
    return out;
}

Bundle corrupt_sequence(const Bundle& bundle, const std::string& corruption, double magnitude,
                        std::uint64_t seed) {
    if (corruption != "pose_scramble" && corruption != "depth_scale_drift" && corruption != "match_shuffle") {
        throw Error(ErrorKind::UnknownCorruption, "unknown corruption '" + corruption + "'");
    }
    if (bundle.frames.empty()) throw Error(ErrorKind::Validation, "nothing to corrupt");
    if (!(magnitude >= 0.0)) throw Error(ErrorKind::Validation, "corruption magnitude must be nonnegative");
    Bundle out = bundle;
    if (magnitude == 0.0) return out;

    if (corruption == "pose_scramble") {
        for (size_t f = 0; f < out.frames.size(); ++f) {
            auto rng = stream(seed, kCorruptStream, f);
            out.frames[f].pose = perturb_pose(out.frames[f].pose, magnitude, 0.0, rng);
        }
    } else if (corruption == "depth_scale_drift") {
        const double last = double(std::max<size_t>(1, out.frames.size() - 1));
        for (size_t f = 0; f < out.frames.size(); ++f) {
            const double scale = 1.0 + magnitude * double(f) / last;
            auto& d = out.frames[f].depth;
            for (size_t i = 0; i < d.valid.size(); ++i) {
                if (!d.valid.data[i]) continue;
                d.mean.data[i] = quantize(d.mean.data[i] * scale);
                d.std.data[i] = quantize(d.std.data[i] * scale);
            }
        }
    } else {
        auto rng = stream(seed, kCorruptStream);
        const size_t count = out.matches.size();
        if (count < 2) return out;
        const double fraction = std::min(1.0, magnitude);
        std::vector<size_t> order(count);
        std::iota(order.begin(), order.end(), size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        const size_t chosen = size_t(std::llround(fraction * double(count)));
        // Rotate the second endpoints among the chosen matches.
        for (size_t i = 0; i < chosen; ++i) {
            out.matches[order[i]].pixel_b = bundle.matches[order[(i + 1) % chosen]].pixel_b;
        }
    }
    return out;
}

std::vector<Vec3> surface_samples(const GroundTruth& truth, const CameraIntrinsics& camera, size_t count,
                                  std::uint64_t seed) {
    if (truth.depths.size() != truth.poses.size()) {
        throw Error(ErrorKind::Dimension, "one ground-truth depth map per pose is required");
    }
    std::vector<Vec3> all;
    for (size_t f = 0; f < truth.depths.size(); ++f) {
        const auto& d = truth.depths[f];
        for (int v = 0; v < d.mean.height; ++v)
            for (int u = 0; u < d.mean.width; ++u)
                if (d.valid(u, v)) all.push_back(truth.poses[f] * unproject(u, v, d.mean(u, v), camera));
    }
    if (all.size() <= count) return all;
    std::mt19937_64 rng(seed);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(count);
    return all;
}

}  // namespace monofuse
