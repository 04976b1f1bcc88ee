#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "monofuse/error.h"

namespace monofuse {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Color = Eigen::Vector3f;

/// Rectified pinhole camera. Integer pixel (u, v) is the center of its cell.
struct CameraIntrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;

    void validate() const;
    bool inside(double u, double v) const {
        return u >= 0.0 && v >= 0.0 && u <= width - 1 && v <= height - 1;
    }
    bool operator==(const CameraIntrinsics&) const = default;
};

struct Projection {
    double u;
    double v;
    double depth;
};

/// Throws ErrorKind::BehindCamera when z <= 0.
Projection project(const Vec3& point, const CameraIntrinsics& camera);
/// Returns the camera-frame point whose z component equals depth.
Vec3 unproject(double u, double v, double depth, const CameraIntrinsics& camera);

/// Rigid camera-to-world transform.
class Pose {
public:
    Pose() = default;
    Pose(const Eigen::Quaterniond& rotation, const Vec3& translation);
    Pose(const Mat3& rotation, const Vec3& translation);

    static Pose identity() { return {}; }

    const Eigen::Quaterniond& quaternion() const { return rotation_; }
    Mat3 rotation() const { return rotation_.toRotationMatrix(); }
    const Vec3& translation() const { return translation_; }

    Vec3 operator*(const Vec3& point) const { return rotation_ * point + translation_; }

    Pose inverse() const;
    Eigen::Isometry3d isometry() const;

    bool operator==(const Pose& other) const {
        return rotation_.coeffs() == other.rotation_.coeffs() &&
               translation_ == other.translation_;
    }

private:
    Eigen::Quaterniond rotation_ = Eigen::Quaterniond::Identity();
    Vec3 translation_ = Vec3::Zero();
};

Pose compose(const Pose& a, const Pose& b);
Pose invert(const Pose& a);
/// Maps points from b's camera frame into a's camera frame.
Pose relative(const Pose& a, const Pose& b);

/// Rotation angle (radians) of a⁻¹·b.
double rotation_distance(const Pose& a, const Pose& b);
double translation_distance(const Pose& a, const Pose& b);

/// Applies a twist increment (rotation vector, translation) on the world side:
/// R ← Exp(ω)·R, t ← t + v.
Pose apply_increment(const Pose& pose, const Eigen::Matrix<double, 6, 1>& twist);

/// Row-major raster with top-left origin.
template <typename T>
struct Image {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Image() = default;
    Image(int w, int h, const T& fill = T{}) : width(w), height(h), data(size_t(w) * size_t(h), fill) {}

    T& operator()(int u, int v) { return data[size_t(v) * size_t(width) + size_t(u)]; }
    const T& operator()(int u, int v) const { return data[size_t(v) * size_t(width) + size_t(u)]; }
    size_t size() const { return data.size(); }
    bool same_shape(int w, int h) const { return width == w && height == h; }
    template <typename U>
    bool same_shape(const Image<U>& other) const { return same_shape(other.width, other.height); }
    bool operator==(const Image&) const = default;
};

using Mask = Image<std::uint8_t>;
using ColorImage = Image<Color>;

/// Per-pixel Gaussian depth belief. Invalid pixels hold mean = std = 0.
struct DepthMap {
    Image<double> mean;
    Image<double> std;
    Mask valid;

    DepthMap() = default;
    DepthMap(int width, int height) : mean(width, height), std(width, height), valid(width, height) {}

    int width() const { return mean.width; }
    int height() const { return mean.height; }
    bool is_valid(int u, int v) const { return valid(u, v) != 0; }
    void set(int u, int v, double m, double s) {
        mean(u, v) = m;
        std(u, v) = s;
        valid(u, v) = 1;
    }
    void invalidate(int u, int v) {
        mean(u, v) = 0.0;
        std(u, v) = 0.0;
        valid(u, v) = 0;
    }
    size_t valid_count() const;
    /// Throws ErrorKind::Domain if a valid pixel has non-positive mean or std.
    void validate() const;
    void require_shape(const CameraIntrinsics& camera) const;
    bool operator==(const DepthMap&) const = default;
};

struct SparseDepth {
    Mask mask;
    Image<double> values;

    SparseDepth() = default;
    SparseDepth(int width, int height) : mask(width, height), values(width, height) {}
    size_t count() const;
    bool operator==(const SparseDepth&) const = default;
};

struct FeatureMatch {
    int frame_a = 0;
    int frame_b = 0;
    Vec2 pixel_a = Vec2::Zero();
    Vec2 pixel_b = Vec2::Zero();
    bool operator==(const FeatureMatch&) const = default;
};

using FeatureMatchSet = std::vector<FeatureMatch>;

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<Eigen::Vector3i> triangles;
    std::vector<Color> colors;
    std::vector<double> uncertainty;

    bool empty() const { return vertices.empty() || triangles.empty(); }
    void validate() const;
};

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Color> colors;
    std::vector<double> uncertainty;

    size_t size() const { return points.size(); }
};

/// Bilinear sample at a subpixel location. Returns nothing unless all four
/// neighbouring pixels are valid.
std::optional<double> sample_bilinear(const Image<double>& image, const Mask& valid, double u, double v);

/// Integer corner and fractional weights for bilinear interpolation inside
/// [0, width-1] x [0, height-1].
struct BilinearCell {
    int u0;
    int v0;
    double fu;
    double fv;
};
std::optional<BilinearCell> bilinear_cell(int width, int height, double u, double v);

}  // namespace monofuse
