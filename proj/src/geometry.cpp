#include "monofuse/geometry.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace monofuse {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::BehindCamera: return "behind camera";
        case ErrorKind::Domain: return "domain error";
        case ErrorKind::Dimension: return "dimension mismatch";
        case ErrorKind::NoSparseAnchor: return "no sparse anchor";
        case ErrorKind::DegenerateInput: return "degenerate input";
        case ErrorKind::NoSparsePoints: return "no sparse points";
        case ErrorKind::NoOverlap: return "no overlap";
        case ErrorKind::NoMatches: return "no matches";
        case ErrorKind::NoSimulatedCoverage: return "no simulated coverage";
        case ErrorKind::EmptyReconstruction: return "empty reconstruction";
        case ErrorKind::NoSurface: return "no surface";
        case ErrorKind::EmptyMesh: return "empty mesh";
        case ErrorKind::UnconstrainedProblem: return "unconstrained problem";
        case ErrorKind::InvalidTrajectory: return "invalid trajectory";
        case ErrorKind::UnknownCorruption: return "unknown corruption";
        case ErrorKind::Io: return "i/o error";
        case ErrorKind::Validation: return "validation error";
        case ErrorKind::Refused: return "refused";
    }
    return "error";
}

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) {
        throw Error(ErrorKind::Validation, "focal lengths must be positive");
    }
    if (width < 2 || height < 2) {
        throw Error(ErrorKind::Validation, "image must be at least 2x2");
    }
    if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
        throw Error(ErrorKind::Validation, "principal point outside image");
    }
}

Projection project(const Vec3& point, const CameraIntrinsics& camera) {
    if (!(point.z() > 0.0)) {
        throw Error(ErrorKind::BehindCamera, "point has non-positive depth");
    }
    return {camera.fx * point.x() / point.z() + camera.cx,
            camera.fy * point.y() / point.z() + camera.cy, point.z()};
}

Vec3 unproject(double u, double v, double depth, const CameraIntrinsics& camera) {
    if (!(depth > 0.0)) {
        throw Error(ErrorKind::Domain, "depth must be positive");
    }
    if (!std::isfinite(u) || !std::isfinite(v)) {
        throw Error(ErrorKind::Domain, "pixel coordinates must be finite");
    }
    return {(u - camera.cx) / camera.fx * depth, (v - camera.cy) / camera.fy * depth, depth};
}

namespace {

// Quaternions already unit to rounding are kept as given, so a pose written
// and read back keeps its exact bits.
Eigen::Quaterniond unit(const Eigen::Quaterniond& q) {
    if (std::abs(q.squaredNorm() - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon()) return q;
    return q.normalized();
}

}  // namespace

Pose::Pose(const Eigen::Quaterniond& rotation, const Vec3& translation)
    : rotation_(unit(rotation)), translation_(translation) {}

Pose::Pose(const Mat3& rotation, const Vec3& translation)
    : rotation_(unit(Eigen::Quaterniond(rotation))), translation_(translation) {}

Pose Pose::inverse() const {
    const Eigen::Quaterniond inv = rotation_.conjugate();
    return Pose(inv, -(inv * translation_));
}

Eigen::Isometry3d Pose::isometry() const {
    Eigen::Isometry3d iso = Eigen::Isometry3d::Identity();
    iso.linear() = rotation();
    iso.translation() = translation_;
    return iso;
}

Pose compose(const Pose& a, const Pose& b) {
    return Pose(a.quaternion() * b.quaternion(), a.quaternion() * b.translation() + a.translation());
}

Pose invert(const Pose& a) { return a.inverse(); }

Pose relative(const Pose& a, const Pose& b) { return compose(a.inverse(), b); }

double rotation_distance(const Pose& a, const Pose& b) {
    return a.quaternion().angularDistance(b.quaternion());
}

double translation_distance(const Pose& a, const Pose& b) {
    return (a.translation() - b.translation()).norm();
}

Pose apply_increment(const Pose& pose, const Eigen::Matrix<double, 6, 1>& twist) {
    const Vec3 omega = twist.head<3>();
    const double angle = omega.norm();
    Eigen::Quaterniond delta = Eigen::Quaterniond::Identity();
    if (angle > 0.0) {
        delta = Eigen::Quaterniond(Eigen::AngleAxisd(angle, omega / angle));
    }
    return Pose(delta * pose.quaternion(), pose.translation() + twist.tail<3>());
}

size_t DepthMap::valid_count() const {
    size_t n = 0;
    for (auto m : valid.data) n += m != 0;
    return n;
}

void DepthMap::validate() const {
    if (!mean.same_shape(std) || !mean.same_shape(valid)) {
        throw Error(ErrorKind::Dimension, "depth map layers differ in size");
    }
    for (size_t i = 0; i < valid.size(); ++i) {
        if (valid.data[i] && !(mean.data[i] > 0.0 && std.data[i] > 0.0)) {
            throw Error(ErrorKind::Domain, "valid depth pixel with non-positive mean or std");
        }
    }
}

void DepthMap::require_shape(const CameraIntrinsics& camera) const {
    if (!mean.same_shape(camera.width, camera.height) || !std.same_shape(mean) ||
        !valid.same_shape(mean)) {
        throw Error(ErrorKind::Dimension,
                    "depth map is " + std::to_string(width()) + "x" + std::to_string(height()) +
                        ", camera is " + std::to_string(camera.width) + "x" +
                        std::to_string(camera.height));
    }
}

size_t SparseDepth::count() const {
    size_t n = 0;
    for (auto m : mask.data) n += m != 0;
    return n;
}

void TriangleMesh::validate() const {
    const int n = static_cast<int>(vertices.size());
    for (const auto& t : triangles) {
        for (int k = 0; k < 3; ++k) {
            if (t[k] < 0 || t[k] >= n) throw Error(ErrorKind::Validation, "triangle index out of range");
        }
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) {
            throw Error(ErrorKind::Validation, "degenerate triangle");
        }
    }
    if (!colors.empty() && colors.size() != vertices.size()) {
        throw Error(ErrorKind::Validation, "color count differs from vertex count");
    }
    if (!uncertainty.empty() && uncertainty.size() != vertices.size()) {
        throw Error(ErrorKind::Validation, "uncertainty count differs from vertex count");
    }
}

std::optional<BilinearCell> bilinear_cell(int width, int height, double u, double v) {
    // Round-off slack so that reprojected border pixels stay inside.
    constexpr double kSlack = 1e-9;
    if (!(u >= -kSlack && v >= -kSlack && u <= width - 1 + kSlack && v <= height - 1 + kSlack)) {
        return std::nullopt;
    }
    const int u0 = std::clamp(static_cast<int>(std::floor(u)), 0, width - 2);
    const int v0 = std::clamp(static_cast<int>(std::floor(v)), 0, height - 2);
    return BilinearCell{u0, v0, u - u0, v - v0};
}

std::optional<double> sample_bilinear(const Image<double>& image, const Mask& valid, double u, double v) {
    const auto cell = bilinear_cell(image.width, image.height, u, v);
    if (!cell) return std::nullopt;
    const int u0 = cell->u0;
    const int v0 = cell->v0;
    if (!valid(u0, v0) || !valid(u0 + 1, v0) || !valid(u0, v0 + 1) || !valid(u0 + 1, v0 + 1)) {
        return std::nullopt;
    }
    const double fu = cell->fu;
    const double fv = cell->fv;
    return (1 - fu) * (1 - fv) * image(u0, v0) + fu * (1 - fv) * image(u0 + 1, v0) +
           (1 - fu) * fv * image(u0, v0 + 1) + fu * fv * image(u0 + 1, v0 + 1);
}

}  // namespace monofuse
