#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "monofuse/bundle.h"
#include "monofuse/geometry.h"
#include "monofuse/losses.h"

namespace monofuse {

struct VolumeConfig {
    double voxel_size = 0.05;
    int nx = 96;
    int ny = 96;
    int nz = 96;
    /// World position of the center of voxel (0, 0, 0).
    Vec3 origin = Vec3::Zero();
    double c1 = 0.1;
    double c2 = 0.8;
    /// δ = max(delta_min, sigma_scale · S).
    double sigma_scale = 2.0;
    double delta_min = 0.05;

    void validate() const;
    size_t voxel_count() const { return size_t(nx) * size_t(ny) * size_t(nz); }
    bool operator==(const VolumeConfig&) const = default;
};

/// Blend factor r = max(C1, min(C2, S² / (S² + Σ²))) of the exponential
/// averaging rule. Σ = 0 is treated as the limit ratio 1; S = Σ = 0 as 0.5.
double blend_ratio(double frame_std, double fused_uncertainty, double c1, double c2);

struct FusedValue {
    double distance;
    double uncertainty;
    double ratio;
};

/// One exponential-averaging update of an already observed voxel.
FusedValue fuse_observation(double fused_distance, double fused_uncertainty, double frame_distance,
                            double frame_std, double c1, double c2);

struct VoxelSample {
    double distance;
    double uncertainty;
    Color color;
};

/// Dense voxel grid of truncated signed distance (dimensionless, [-1, 1]),
/// uncertainty (scene units) and color. Unobserved voxels carry no data.
class TsdfVolume {
public:
    explicit TsdfVolume(const VolumeConfig& config);

    const VolumeConfig& config() const { return config_; }

    size_t index(int i, int j, int k) const {
        return (size_t(k) * size_t(config_.ny) + size_t(j)) * size_t(config_.nx) + size_t(i);
    }
    Vec3 voxel_center(int i, int j, int k) const {
        return config_.origin + config_.voxel_size * Vec3(i, j, k);
    }

    bool observed(size_t idx) const { return observed_[idx] != 0; }
    double distance(size_t idx) const { return distance_[idx]; }
    double uncertainty(size_t idx) const { return uncertainty_[idx]; }
    const Color& color(size_t idx) const { return color_[idx]; }

    void set_voxel(size_t idx, double distance, double uncertainty, const Color& color);
    void clear_voxel(size_t idx);

    size_t observed_count() const;

    /// Trilinear interpolation; empty unless all eight surrounding voxels are
    /// observed.
    std::optional<VoxelSample> sample(const Vec3& world) const;
    std::optional<double> sample_distance(const Vec3& world) const;

    bool operator==(const TsdfVolume&) const = default;

private:
    friend void integrate_frame(TsdfVolume&, const DepthMap&, const ColorImage*, const Pose&,
                                const CameraIntrinsics&);

    VolumeConfig config_;
    std::vector<double> distance_;
    std::vector<double> uncertainty_;
    std::vector<Color> color_;
    std::vector<std::uint8_t> observed_;
};

/// Fuses one globally scale-consistent depth map. `color` may be null, in
/// which case mid-gray is fused.
void integrate_frame(TsdfVolume& volume, const DepthMap& depth, const ColorImage* color,
                     const Pose& pose, const CameraIntrinsics& camera);

struct RaycastSettings {
    /// March step as a fraction of the voxel size.
    double step_fraction = 0.5;
    int bisection_iterations = 12;
    /// Interpolation uses the observed corners of a cell, renormalized, when
    /// their trilinear weight reaches this fraction. 1 requires all eight.
    double min_observed_weight = 0.5;
};

/// Renders camera-frame depth of the first +/- zero crossing along each ray.
SimulatedDepth simulate_depth(const TsdfVolume& volume, const Pose& pose, const CameraIntrinsics& camera,
                              const RaycastSettings& settings = {});

/// Marching Cubes over fully observed cubes at the D = 0 isolevel. Triangles
/// are wound so that their normals face positive distance (free space).
TriangleMesh extract_mesh(const TsdfVolume& volume);

/// Area-uniform sampling followed by voxel-grid thinning to within ±10% of
/// `target_count`.
PointCloud mesh_to_pointcloud(const TriangleMesh& mesh, size_t target_count, std::uint64_t seed = 0);

/// Bounds a volume around the back-projected valid depth of the given frames.
struct VolumeFit {
    int resolution = 96;
    int padding_voxels = 4;
    double delta_min_voxels = 1.0;
    int pixel_stride = 2;
};

VolumeConfig fit_volume(const VolumeConfig& base, const VolumeFit& fit, std::span<const DepthMap> depths,
                        std::span<const Pose> poses, const CameraIntrinsics& camera);

/// Fits a volume to all frames and integrates them in order.
TsdfVolume fuse_bundle(const Bundle& bundle, const VolumeConfig& base = {}, const VolumeFit& fit = {});

}  // namespace monofuse
