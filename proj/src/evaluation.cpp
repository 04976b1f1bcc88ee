#include "monofuse/evaluation.h"

#include <algorithm>
#include <cmath>

#include <Eigen/Geometry>
#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>

#include "monofuse/error.h"
#include "monofuse/tsdf.h"

namespace monofuse {

namespace {

namespace bg = boost::geometry;
namespace bgi = boost::geometry::index;
using BoostPoint = bg::model::point<double, 3, bg::cs::cartesian>;
using Entry = std::pair<BoostPoint, size_t>;

class NearestNeighbors {
public:
    explicit NearestNeighbors(const std::vector<Vec3>& points) : points_(points) {
        std::vector<Entry> entries;
        entries.reserve(points.size());
        for (size_t i = 0; i < points.size(); ++i) entries.emplace_back(BoostPoint(points[i].x(), points[i].y(), points[i].z()), i);
        tree_ = bgi::rtree<Entry, bgi::rstar<16>>(entries.begin(), entries.end());
    }

    size_t nearest(const Vec3& q) const {
        Entry hit;
        tree_.query(bgi::nearest(BoostPoint(q.x(), q.y(), q.z()), 1), &hit);
        return hit.second;
    }

    const Vec3& point(size_t i) const { return points_[i]; }

private:
    const std::vector<Vec3>& points_;
    bgi::rtree<Entry, bgi::rstar<16>> tree_;
};

Vec3 apply(const Eigen::Matrix4d& t, const Vec3& p) { return t.topLeftCorner<3, 3>() * p + t.topRightCorner<3, 1>(); }

}  // namespace

void RegistrationConfig::validate() const {
    if (target_count == 0) throw Error(ErrorKind::Validation, "target_count must be positive");
    if (max_iterations < 0) throw Error(ErrorKind::Validation, "max_iterations must be nonnegative");
    if (!(tolerance > 0.0)) throw Error(ErrorKind::Validation, "tolerance must be positive");
    if (divergence_window < 1) throw Error(ErrorKind::Validation, "divergence_window must be at least 1");
    if (!initial.allFinite()) throw Error(ErrorKind::Validation, "initial transform must be finite");
    if (initial.row(3) != Eigen::RowVector4d(0, 0, 0, 1)) {
        throw Error(ErrorKind::Validation, "initial transform must be affine");
    }
}

ResidualStats residual_stats(std::vector<double> residuals) {
    ResidualStats s;
    s.count = residuals.size();
    if (residuals.empty()) return s;
    double sum = 0.0, sum_sq = 0.0;
    for (double r : residuals) {
        sum += r;
        sum_sq += r * r;
        s.max = std::max(s.max, r);
    }
    const double n = double(residuals.size());
    s.mean = sum / n;
    s.rms = std::sqrt(sum_sq / n);
    std::sort(residuals.begin(), residuals.end());
    const size_t mid = residuals.size() / 2;
    s.median = residuals.size() % 2 ? residuals[mid] : 0.5 * (residuals[mid - 1] + residuals[mid]);
    return s;
}

RegistrationResult register_points(const std::vector<Vec3>& source, const std::vector<Vec3>& reference,
                                   const RegistrationConfig& config) {
    config.validate();
    if (source.empty() || reference.empty()) throw Error(ErrorKind::EmptyMesh, "registration needs non-empty point sets");
    if (source.size() < 3) throw Error(ErrorKind::DegenerateInput, "registration needs at least 3 source points");

    const NearestNeighbors index(reference);
    const auto n = Eigen::Index(source.size());
    Eigen::Matrix3Xd src(3, n), dst(3, n);
    for (Eigen::Index i = 0; i < n; ++i) src.col(i) = source[size_t(i)];

    RegistrationResult result;
    result.transform = config.initial;
    std::vector<double> distances(source.size());
    int increases = 0;
    for (int it = 0;; ++it) {
        double mse = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const Vec3 moved = apply(result.transform, src.col(i));
            dst.col(i) = index.point(index.nearest(moved));
            distances[size_t(i)] = (dst.col(i) - moved).norm();
            mse += distances[size_t(i)] * distances[size_t(i)];
        }
        mse /= double(n);
        result.mse_history.push_back(mse);
        if (it > 0) {
            const double previous = result.mse_history[size_t(it) - 1];
            if (std::abs(previous - mse) <= config.tolerance * previous) {
                result.converged = true;
                break;
            }
            increases = mse > previous ? increases + 1 : 0;
            if (increases >= config.divergence_window) {
                result.diverged = true;
                break;
            }
        } else if (mse == 0.0) {
            result.converged = true;
            break;
        }
        if (it == config.max_iterations) break;
        result.transform = Eigen::umeyama(src, dst, config.estimate_scale);
        result.iterations = it + 1;
    }
    result.scale = std::cbrt(result.transform.topLeftCorner<3, 3>().determinant());
    result.residuals = residual_stats(std::move(distances));
    return result;
}

RegistrationResult evaluate(const TriangleMesh& reconstruction, const std::vector<Vec3>& reference,
                            const RegistrationConfig& config) {
    config.validate();
    const auto samples = mesh_to_pointcloud(reconstruction, config.target_count, config.seed);
    return register_points(samples.points, reference, config);
}

RegistrationResult evaluate(const TriangleMesh& reconstruction, const TriangleMesh& reference,
                            const RegistrationConfig& config) {
    config.validate();
    const auto samples = mesh_to_pointcloud(reference, config.target_count, config.seed + 1);
    return evaluate(reconstruction, samples.points, config);
}

nlohmann::json to_json(const ResidualStats& s) {
    return {{"count", s.count}, {"mean", s.mean}, {"median", s.median}, {"rms", s.rms}, {"max", s.max}};
}

nlohmann::json to_json(const RegistrationResult& r) {
    nlohmann::json t = nlohmann::json::array();
    for (int i = 0; i < 4; ++i) t.push_back({r.transform(i, 0), r.transform(i, 1), r.transform(i, 2), r.transform(i, 3)});
    return {{"transform", t},       {"scale", r.scale},         {"iterations", r.iterations},
            {"converged", r.converged}, {"diverged", r.diverged}, {"residuals", to_json(r.residuals)}};
}

}  // namespace monofuse
