#include "monofuse/tsdf.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <unordered_map>

#include "marching_cubes_table.h"

namespace monofuse {

void VolumeConfig::validate() const {
    if (!(voxel_size > 0.0)) throw Error(ErrorKind::Validation, "voxel_size must be positive");
    if (nx < 2 || ny < 2 || nz < 2) throw Error(ErrorKind::Validation, "volume needs at least 2 voxels per axis");
    if (!(c1 > 0.0 && c1 < c2 && c2 < 1.0)) throw Error(ErrorKind::Validation, "require 0 < C1 < C2 < 1");
    if (!(sigma_scale > 0.0)) throw Error(ErrorKind::Validation, "sigma_scale must be positive");
    if (!(delta_min > 0.0)) throw Error(ErrorKind::Validation, "delta_min must be positive");
}

double blend_ratio(double frame_std, double fused_uncertainty, double c1, double c2) {
    const double s2 = frame_std * frame_std;
    const double denom = s2 + fused_uncertainty * fused_uncertainty;
    const double ratio = denom > 0.0 ? s2 / denom : 0.5;
    return std::max(c1, std::min(c2, ratio));
}

FusedValue fuse_observation(double fused_distance, double fused_uncertainty, double frame_distance,
                            double frame_std, double c1, double c2) {
    const double r = blend_ratio(frame_std, fused_uncertainty, c1, c2);
    return {r * fused_distance + (1.0 - r) * frame_distance,
            r * fused_uncertainty + (1.0 - r) * frame_std, r};
}

TsdfVolume::TsdfVolume(const VolumeConfig& config)
    : config_(config),
      distance_(config.voxel_count(), 0.0),
      uncertainty_(config.voxel_count(), 0.0),
      color_(config.voxel_count(), Color::Zero()),
      observed_(config.voxel_count(), 0) {
    config_.validate();
}

void TsdfVolume::set_voxel(size_t idx, double distance, double uncertainty, const Color& color) {
    distance_[idx] = distance;
    uncertainty_[idx] = uncertainty;
    color_[idx] = color;
    observed_[idx] = 1;
}

void TsdfVolume::clear_voxel(size_t idx) {
    distance_[idx] = 0.0;
    uncertainty_[idx] = 0.0;
    color_[idx] = Color::Zero();
    observed_[idx] = 0;
}

size_t TsdfVolume::observed_count() const {
    return static_cast<size_t>(std::count(observed_.begin(), observed_.end(), std::uint8_t{1}));
}

namespace {

struct TrilinearCell {
    size_t corner[8];
    double weight[8];
};

std::optional<TrilinearCell> trilinear_cell(const VolumeConfig& cfg, const Vec3& world) {
    const Vec3 g = (world - cfg.origin) / cfg.voxel_size;
    const double fx = std::floor(g.x());
    const double fy = std::floor(g.y());
    const double fz = std::floor(g.z());
    if (!(fx >= 0.0 && fy >= 0.0 && fz >= 0.0 && fx < cfg.nx - 1 && fy < cfg.ny - 1 && fz < cfg.nz - 1)) {
        return std::nullopt;
    }
    const int i = int(fx);
    const int j = int(fy);
    const int k = int(fz);
    const double tx = g.x() - fx;
    const double ty = g.y() - fy;
    const double tz = g.z() - fz;
    TrilinearCell cell;
    for (int c = 0; c < 8; ++c) {
        const int di = detail::kCubeCorner[c][0];
        const int dj = detail::kCubeCorner[c][1];
        const int dk = detail::kCubeCorner[c][2];
        cell.corner[c] = (size_t(k + dk) * size_t(cfg.ny) + size_t(j + dj)) * size_t(cfg.nx) + size_t(i + di);
        cell.weight[c] = (di ? tx : 1.0 - tx) * (dj ? ty : 1.0 - ty) * (dk ? tz : 1.0 - tz);
    }
    return cell;
}

}  // namespace

std::optional<double> TsdfVolume::sample_distance(const Vec3& world) const {
    const auto cell = trilinear_cell(config_, world);
    if (!cell) return std::nullopt;
    double d = 0.0;
    for (int c = 0; c < 8; ++c) {
        if (!observed_[cell->corner[c]]) return std::nullopt;
        d += cell->weight[c] * distance_[cell->corner[c]];
    }
    return d;
}

std::optional<VoxelSample> TsdfVolume::sample(const Vec3& world) const {
    const auto cell = trilinear_cell(config_, world);
    if (!cell) return std::nullopt;
    VoxelSample s{0.0, 0.0, Color::Zero()};
    for (int c = 0; c < 8; ++c) {
        const size_t idx = cell->corner[c];
        if (!observed_[idx]) return std::nullopt;
        s.distance += cell->weight[c] * distance_[idx];
        s.uncertainty += cell->weight[c] * uncertainty_[idx];
        s.color += float(cell->weight[c]) * color_[idx];
    }
    return s;
}

void integrate_frame(TsdfVolume& volume, const DepthMap& depth, const ColorImage* color,
                     const Pose& pose, const CameraIntrinsics& camera) {
    depth.require_shape(camera);
    if (color && !color->same_shape(camera.width, camera.height)) {
        throw Error(ErrorKind::Dimension, "color image does not match the camera");
    }
    const VolumeConfig& cfg = volume.config_;
    const Mat3 world_to_camera = pose.rotation().transpose();
    const Vec3 camera_center = pose.translation();
    const Color gray(0.5f, 0.5f, 0.5f);

#pragma omp parallel for schedule(static)
    for (int k = 0; k < cfg.nz; ++k) {
        for (int j = 0; j < cfg.ny; ++j) {
            for (int i = 0; i < cfg.nx; ++i) {
                const Vec3 x = world_to_camera * (volume.voxel_center(i, j, k) - camera_center);
                if (!(x.z() > 0.0)) continue;
                const double u = camera.fx * x.x() / x.z() + camera.cx;
                const double v = camera.fy * x.y() / x.z() + camera.cy;
                const long pu = std::lround(u);
                const long pv = std::lround(v);
                if (pu < 0 || pv < 0 || pu >= camera.width || pv >= camera.height) continue;
                if (!depth.is_valid(int(pu), int(pv))) continue;
                const double z = depth.mean(int(pu), int(pv));
                const double s = depth.std(int(pu), int(pv));
                const double sdf = z - x.z();
                const double delta = std::max(cfg.delta_min, cfg.sigma_scale * s);
                if (sdf < -delta) continue;
                const double d = std::clamp(sdf / delta, -1.0, 1.0);
                const Color c = color ? (*color)(int(pu), int(pv)) : gray;
                const size_t idx = volume.index(i, j, k);
                if (!volume.observed_[idx]) {
                    volume.distance_[idx] = d;
                    volume.uncertainty_[idx] = s;
                    volume.color_[idx] = c;
                    volume.observed_[idx] = 1;
                    continue;
                }
                const FusedValue f = fuse_observation(volume.distance_[idx], volume.uncertainty_[idx], d, s,
                                                      cfg.c1, cfg.c2);
                volume.distance_[idx] = f.distance;
                volume.uncertainty_[idx] = f.uncertainty;
                volume.color_[idx] = float(f.ratio) * volume.color_[idx] + float(1.0 - f.ratio) * c;
            }
        }
    }
}

namespace {

/// Parameter interval [t0, t1] where origin + t·dir lies inside the box.
bool clip_to_box(const Vec3& origin, const Vec3& dir, const Vec3& lo, const Vec3& hi, double& t0, double& t1) {
    for (int a = 0; a < 3; ++a) {
        if (std::abs(dir[a]) < 1e-300) {
            if (origin[a] < lo[a] || origin[a] > hi[a]) return false;
            continue;
        }
        double ta = (lo[a] - origin[a]) / dir[a];
        double tb = (hi[a] - origin[a]) / dir[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    return t0 <= t1;
}

}  // namespace

namespace {

/// Trilinear distance renormalized over the observed corners; empty when
/// their total weight is below `min_weight`.
std::optional<double> partial_distance(const TsdfVolume& volume, const Vec3& world, double min_weight) {
    const auto cell = trilinear_cell(volume.config(), world);
    if (!cell) return std::nullopt;
    double d = 0.0, w = 0.0;
    for (int c = 0; c < 8; ++c) {
        const size_t idx = cell->corner[c];
        if (!volume.observed(idx)) continue;
        d += cell->weight[c] * volume.distance(idx);
        w += cell->weight[c];
    }
    if (w < min_weight - 1e-9 || w <= 0.0) return std::nullopt;
    return d / w;
}

}  // namespace

SimulatedDepth simulate_depth(const TsdfVolume& volume, const Pose& pose, const CameraIntrinsics& camera,
                              const RaycastSettings& settings) {
    if (volume.observed_count() == 0) throw Error(ErrorKind::EmptyReconstruction, "volume has no observed voxels");
    const VolumeConfig& cfg = volume.config();
    SimulatedDepth out{Image<double>(camera.width, camera.height, 0.0), Mask(camera.width, camera.height, 0)};
    const Mat3 rotation = pose.rotation();
    const Vec3 center = pose.translation();
    const Vec3 lo = cfg.origin;
    const Vec3 hi = cfg.origin + cfg.voxel_size * Vec3(cfg.nx - 1, cfg.ny - 1, cfg.nz - 1);

#pragma omp parallel for schedule(static)
    for (int v = 0; v < camera.height; ++v) {
        for (int u = 0; u < camera.width; ++u) {
            // Parameterized by camera-frame depth z: point = center + z·dir.
            const Vec3 ray((u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0);
            const Vec3 dir = rotation * ray;
            double z0 = 1e-9;
            double z1 = std::numeric_limits<double>::infinity();
            if (!clip_to_box(center, dir, lo, hi, z0, z1)) continue;
            const double step = settings.step_fraction * cfg.voxel_size / ray.norm();
            std::optional<double> prev;
            double prev_z = z0;
            for (double z = z0; z <= z1 + 1e-12; z += step) {
                const auto d = partial_distance(volume, center + z * dir, settings.min_observed_weight);
                if (d && prev && *prev > 0.0 && *d < 0.0) {
                    double a = prev_z;
                    double b = z;
                    double da = *prev;
                    double db = *d;
                    for (int it = 0; it < settings.bisection_iterations; ++it) {
                        const double m = 0.5 * (a + b);
                        const auto dm = partial_distance(volume, center + m * dir, settings.min_observed_weight);
                        if (!dm) break;
                        if (*dm > 0.0) {
                            a = m;
                            da = *dm;
                        } else {
                            b = m;
                            db = *dm;
                        }
                    }
                    const double zc = a + (b - a) * da / (da - db);
                    out.depth(u, v) = zc;
                    out.valid(u, v) = 1;
                    break;
                }
                prev = d;
                prev_z = z;
            }
        }
    }
    return out;
}

TriangleMesh extract_mesh(const TsdfVolume& volume) {
    const VolumeConfig& cfg = volume.config();
    const auto& cases = detail::marching_cubes_cases();
    TriangleMesh mesh;
    std::unordered_map<std::uint64_t, int> edge_vertex;

    // Edge e of cube (i,j,k) starts at grid offset kEdgeOrigin[e] along axis kEdgeAxis[e].
    static constexpr int kEdgeAxis[12] = {0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2};

    auto vertex_for_edge = [&](int i, int j, int k, int e) {
        const int c0 = detail::kEdgeCorners[e][0];
        const int c1 = detail::kEdgeCorners[e][1];
        const int i0 = i + detail::kCubeCorner[c0][0];
        const int j0 = j + detail::kCubeCorner[c0][1];
        const int k0 = k + detail::kCubeCorner[c0][2];
        const size_t a = volume.index(i0, j0, k0);
        const size_t b = volume.index(i + detail::kCubeCorner[c1][0], j + detail::kCubeCorner[c1][1],
                                      k + detail::kCubeCorner[c1][2]);
        const std::uint64_t key = std::uint64_t(a) * 3 + std::uint64_t(kEdgeAxis[e]);
        const auto it = edge_vertex.find(key);
        if (it != edge_vertex.end()) return it->second;
        const double da = volume.distance(a);
        const double db = volume.distance(b);
        const double t = da / (da - db);
        const Vec3 pa = volume.voxel_center(i0, j0, k0);
        const Vec3 pb = volume.voxel_center(i + detail::kCubeCorner[c1][0], j + detail::kCubeCorner[c1][1],
                                            k + detail::kCubeCorner[c1][2]);
        const int id = int(mesh.vertices.size());
        mesh.vertices.push_back(pa + t * (pb - pa));
        mesh.colors.push_back(float(1.0 - t) * volume.color(a) + float(t) * volume.color(b));
        mesh.uncertainty.push_back((1.0 - t) * volume.uncertainty(a) + t * volume.uncertainty(b));
        edge_vertex.emplace(key, id);
        return id;
    };

    for (int k = 0; k + 1 < cfg.nz; ++k) {
        for (int j = 0; j + 1 < cfg.ny; ++j) {
            for (int i = 0; i + 1 < cfg.nx; ++i) {
                int config = 0;
                bool complete = true;
                for (int c = 0; c < 8 && complete; ++c) {
                    const size_t idx = volume.index(i + detail::kCubeCorner[c][0], j + detail::kCubeCorner[c][1],
                                                    k + detail::kCubeCorner[c][2]);
                    if (!volume.observed(idx)) complete = false;
                    else if (volume.distance(idx) < 0.0) config |= 1 << c;
                }
                if (!complete || config == 0 || config == 255) continue;
                for (const auto& tri : cases[config].triangles) {
                    const int a = vertex_for_edge(i, j, k, tri[0]);
                    const int b = vertex_for_edge(i, j, k, tri[1]);
                    const int c = vertex_for_edge(i, j, k, tri[2]);
                    mesh.triangles.emplace_back(a, b, c);
                }
            }
        }
    }
    if (mesh.triangles.empty()) throw Error(ErrorKind::NoSurface, "no observed cube contains a zero crossing");
    return mesh;
}

PointCloud mesh_to_pointcloud(const TriangleMesh& mesh, size_t target_count, std::uint64_t seed) {
    if (mesh.empty()) throw Error(ErrorKind::EmptyMesh, "cannot sample an empty mesh");
    if (target_count == 0) throw Error(ErrorKind::Validation, "target_count must be positive");
    mesh.validate();

    std::vector<double> cumulative(mesh.triangles.size());
    double total = 0.0;
    for (size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& tri = mesh.triangles[t];
        const Vec3& a = mesh.vertices[tri[0]];
        total += 0.5 * (mesh.vertices[tri[1]] - a).cross(mesh.vertices[tri[2]] - a).norm();
        cumulative[t] = total;
    }
    const bool has_color = mesh.colors.size() == mesh.vertices.size();
    const bool has_sigma = mesh.uncertainty.size() == mesh.vertices.size();

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const size_t sample_count = std::max<size_t>(4 * target_count, 64);
    PointCloud samples;
    samples.points.reserve(sample_count);
    for (size_t n = 0; n < sample_count; ++n) {
        size_t t = 0;
        if (total > 0.0) {
            const double pick = unit(rng) * total;
            t = size_t(std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
            t = std::min(t, cumulative.size() - 1);
        } else {
            t = size_t(unit(rng) * double(mesh.triangles.size())) % mesh.triangles.size();
        }
        const auto& tri = mesh.triangles[t];
        const double r1 = std::sqrt(unit(rng));
        const double r2 = unit(rng);
        const double wa = 1.0 - r1;
        const double wb = r1 * (1.0 - r2);
        const double wc = r1 * r2;
        samples.points.push_back(wa * mesh.vertices[tri[0]] + wb * mesh.vertices[tri[1]] + wc * mesh.vertices[tri[2]]);
        if (has_color) {
            samples.colors.push_back(float(wa) * mesh.colors[tri[0]] + float(wb) * mesh.colors[tri[1]] +
                                     float(wc) * mesh.colors[tri[2]]);
        }
        if (has_sigma) {
            samples.uncertainty.push_back(wa * mesh.uncertainty[tri[0]] + wb * mesh.uncertainty[tri[1]] +
                                          wc * mesh.uncertainty[tri[2]]);
        }
    }

    Vec3 lo = samples.points.front();
    Vec3 hi = lo;
    for (const auto& p : samples.points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }

    auto thin = [&](double cell) {
        std::unordered_map<std::uint64_t, size_t> first;
        std::vector<size_t> keep;
        for (size_t n = 0; n < samples.points.size(); ++n) {
            const Vec3 g = ((samples.points[n] - lo) / cell).array().floor();
            const std::uint64_t key = (std::uint64_t(g.x()) & 0x1FFFFF) | ((std::uint64_t(g.y()) & 0x1FFFFF) << 21) |
                                      ((std::uint64_t(g.z()) & 0x1FFFFF) << 42);
            if (first.emplace(key, n).second) keep.push_back(n);
        }
        return keep;
    };

    const double lower_bound_count = 0.9 * double(target_count);
    const double upper_bound_count = 1.1 * double(target_count);
    const double diag = std::max((hi - lo).norm(), 1e-12);
    double small = diag * 1e-6;
    double large = diag * 2.0;
    std::vector<size_t> best = thin(large);
    auto distance_to_target = [&](size_t n) { return std::abs(double(n) - double(target_count)); };
    for (int it = 0; it < 80; ++it) {
        const double cell = std::sqrt(small * large);
        auto keep = thin(cell);
        if (distance_to_target(keep.size()) < distance_to_target(best.size())) best = keep;
        if (double(keep.size()) >= lower_bound_count && double(keep.size()) <= upper_bound_count) break;
        if (double(keep.size()) > upper_bound_count) small = cell;
        else large = cell;
    }
    if (double(best.size()) > upper_bound_count) {
        std::shuffle(best.begin(), best.end(), rng);
        best.resize(target_count);
        std::sort(best.begin(), best.end());
    }

    PointCloud out;
    for (size_t n : best) {
        out.points.push_back(samples.points[n]);
        if (has_color) out.colors.push_back(samples.colors[n]);
        if (has_sigma) out.uncertainty.push_back(samples.uncertainty[n]);
    }
    return out;
}

VolumeConfig fit_volume(const VolumeConfig& base, const VolumeFit& fit, std::span<const DepthMap> depths,
                        std::span<const Pose> poses, const CameraIntrinsics& camera) {
    if (depths.size() != poses.size()) throw Error(ErrorKind::Dimension, "depth and pose counts differ");
    if (fit.resolution < 2 * fit.padding_voxels + 3) throw Error(ErrorKind::Validation, "resolution too small for padding");
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    size_t points = 0;
    const int stride = std::max(1, fit.pixel_stride);
    for (size_t f = 0; f < depths.size(); ++f) {
        const DepthMap& d = depths[f];
        for (int v = 0; v < d.height(); v += stride) {
            for (int u = 0; u < d.width(); u += stride) {
                if (!d.is_valid(u, v)) continue;
                const Vec3 p = poses[f] * unproject(u, v, d.mean(u, v), camera);
                lo = lo.cwiseMin(p);
                hi = hi.cwiseMax(p);
                ++points;
            }
        }
    }
    if (points == 0) throw Error(ErrorKind::EmptyReconstruction, "no valid depth to bound the volume");
    VolumeConfig out = base;
    const double extent = std::max((hi - lo).maxCoeff(), 1e-9);
    out.voxel_size = extent / double(fit.resolution - 1 - 2 * fit.padding_voxels);
    out.nx = out.ny = out.nz = fit.resolution;
    const Vec3 center = 0.5 * (lo + hi);
    out.origin = center - Vec3::Constant(0.5 * (fit.resolution - 1) * out.voxel_size);
    out.delta_min = fit.delta_min_voxels * out.voxel_size;
    return out;
}

TsdfVolume fuse_bundle(const Bundle& bundle, const VolumeConfig& base, const VolumeFit& fit) {
    std::vector<DepthMap> depths;
    for (const auto& f : bundle.frames) depths.push_back(f.depth);
    const auto poses = bundle.poses();
    TsdfVolume volume(fit_volume(base, fit, depths, poses, bundle.camera));
    for (const auto& f : bundle.frames)
        integrate_frame(volume, f.depth, f.color ? &*f.color : nullptr, f.pose, bundle.camera);
    return volume;
}

}  // namespace monofuse
