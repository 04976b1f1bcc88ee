#pragma once

// Scalar-generic per-pixel kernels shared by depth_ops, losses and pose_graph.
// Instantiated with double for evaluation and with ceres::Jet for analytic
// derivatives; both paths run the same arithmetic.

#include <cmath>
#include <optional>

#include <ceres/jet.h>
#include <Eigen/Core>

#include "monofuse/geometry.h"

namespace monofuse::detail {

inline double scalar(double x) { return x; }
template <typename T, int N>
double scalar(const ceres::Jet<T, N>& x) {
    return x.a;
}

template <typename T>
using Vec3T = Eigen::Matrix<T, 3, 1>;

template <typename T>
Vec3T<T> cross(const Vec3T<T>& a, const Vec3T<T>& b) {
    return {a.y() * b.z() - a.z() * b.y(), a.z() * b.x() - a.x() * b.z(),
            a.x() * b.y() - a.y() * b.x()};
}

/// Camera-to-world pose with a first-order twist increment applied on the
/// world side. With a zero increment this is exactly the base pose; the first
/// derivative at zero equals that of Exp(ω)·R.
template <typename T>
struct IncrementedPose {
    Mat3 rotation;
    Vec3 translation;
    Vec3T<T> omega = Vec3T<T>::Zero();
    Vec3T<T> delta = Vec3T<T>::Zero();

    explicit IncrementedPose(const Pose& pose)
        : rotation(pose.rotation()), translation(pose.translation()) {}

    Vec3T<T> to_world(const Vec3T<T>& x) const {
        const Vec3T<T> rotated = rotation.template cast<T>() * x;
        return rotated + cross<T>(omega, rotated) + translation.template cast<T>() + delta;
    }

    Vec3T<T> to_camera(const Vec3T<T>& y) const {
        const Vec3T<T> z = y - translation.template cast<T>() - delta;
        return rotation.transpose().template cast<T>() * (z - cross<T>(omega, z));
    }

    /// Seeds derivative slots [offset, offset + 6) as (ω, v).
    void seed(int offset) {
        for (int i = 0; i < 3; ++i) {
            omega[i] = T(0.0, offset + i);
            delta[i] = T(0.0, offset + 3 + i);
        }
    }
};

template <typename T>
Vec3T<T> lift(double u, double v, const T& depth, const CameraIntrinsics& camera) {
    return {T((u - camera.cx) / camera.fx) * depth, T((v - camera.cy) / camera.fy) * depth, depth};
}

template <typename T>
struct PixelT {
    T u;
    T v;
};

template <typename T>
std::optional<PixelT<T>> project_point(const Vec3T<T>& x, const CameraIntrinsics& camera) {
    if (!(scalar(x.z()) > 0.0)) return std::nullopt;
    return PixelT<T>{camera.fx * x.x() / x.z() + camera.cx, camera.fy * x.y() / x.z() + camera.cy};
}

/// Sparse-depth style log-likelihood term for one pixel.
template <typename T>
T likelihood_term(const T& target, const T& mean, double std, double eps) {
    const T residual = target - mean;
    return T(std::log(std + eps)) + residual * residual / T(2.0 * std * std + eps);
}

/// Warps one target pixel of frame j through the depth of frame k.
/// `source_depth(u, v, corner)` returns the (possibly differentiable) depth of k
/// at an integer pixel, corner 0..3 being the position in the bilinear cell;
/// `source_valid(u, v)` its validity.
template <typename T, typename DepthFn, typename ValidFn>
std::optional<T> warp_pixel(double u, double v, const T& target_depth,
                            const IncrementedPose<T>& pose_j, const IncrementedPose<T>& pose_k,
                            const CameraIntrinsics& camera, DepthFn&& source_depth,
                            ValidFn&& source_valid, BilinearCell* cell_out = nullptr) {
    const Vec3T<T> world = pose_j.to_world(lift<T>(u, v, target_depth, camera));
    const auto q = project_point<T>(pose_k.to_camera(world), camera);
    if (!q) return std::nullopt;
    const auto cell = bilinear_cell(camera.width, camera.height, scalar(q->u), scalar(q->v));
    if (!cell) return std::nullopt;
    const int u0 = cell->u0;
    const int v0 = cell->v0;
    if (!source_valid(u0, v0) || !source_valid(u0 + 1, v0) || !source_valid(u0, v0 + 1) ||
        !source_valid(u0 + 1, v0 + 1)) {
        return std::nullopt;
    }
    const T fu = q->u - T(double(u0));
    const T fv = q->v - T(double(v0));
    const T one(1.0);
    const T sampled = (one - fu) * (one - fv) * source_depth(u0, v0, 0) +
                      fu * (one - fv) * source_depth(u0 + 1, v0, 1) +
                      (one - fu) * fv * source_depth(u0, v0 + 1, 2) +
                      fu * fv * source_depth(u0 + 1, v0 + 1, 3);
    if (!(scalar(sampled) > 0.0)) return std::nullopt;
    const Vec3T<T> lifted{(q->u - T(camera.cx)) / T(camera.fx) * sampled,
                          (q->v - T(camera.cy)) / T(camera.fy) * sampled, sampled};
    const Vec3T<T> back = pose_j.to_camera(pose_k.to_world(lifted));
    if (!(scalar(back.z()) > 0.0)) return std::nullopt;
    if (cell_out) *cell_out = *cell;
    return back.z();
}

/// Normalized flow of one pixel of frame j into frame k.
template <typename T>
std::optional<Eigen::Matrix<T, 2, 1>> flow_pixel(double u, double v, const T& depth,
                                                 const IncrementedPose<T>& pose_j,
                                                 const IncrementedPose<T>& pose_k,
                                                 const CameraIntrinsics& camera) {
    const Vec3T<T> world = pose_j.to_world(lift<T>(u, v, depth, camera));
    const auto q = project_point<T>(pose_k.to_camera(world), camera);
    if (!q) return std::nullopt;
    return Eigen::Matrix<T, 2, 1>{(q->u - T(u)) / T(double(camera.width)),
                                  (q->v - T(v)) / T(double(camera.height))};
}

}  // namespace monofuse::detail
