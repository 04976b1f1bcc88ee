#include "monofuse/depth_ops.h"

#include "warp_kernels.h"

namespace monofuse {

size_t WarpResult::overlap_count() const {
    size_t n = 0;
    for (auto m : overlap.data) n += m != 0;
    return n;
}

WarpResult warp_depth(const Image<double>& source, const Mask& source_valid,
                      const Image<double>& target, const Mask& target_valid, const Pose& pose_k,
                      const Pose& pose_j, const CameraIntrinsics& camera) {
    if (!source.same_shape(camera.width, camera.height) || !target.same_shape(source) ||
        !source_valid.same_shape(source) || !target_valid.same_shape(target)) {
        throw Error(ErrorKind::Dimension, "warp_depth requires equally sized rasters matching the camera");
    }
    const detail::IncrementedPose<double> pj(pose_j);
    const detail::IncrementedPose<double> pk(pose_k);
    WarpResult result{Image<double>(camera.width, camera.height, 0.0), Mask(camera.width, camera.height, 0)};
    auto depth_fn = [&](int u, int v, int) { return source(u, v); };
    auto valid_fn = [&](int u, int v) { return source_valid(u, v) != 0; };

#pragma omp parallel for schedule(static)
    for (int v = 0; v < camera.height; ++v) {
        for (int u = 0; u < camera.width; ++u) {
            if (!target_valid(u, v)) continue;
            const auto warped = detail::warp_pixel<double>(u, v, target(u, v), pj, pk, camera, depth_fn, valid_fn);
            if (warped) {
                result.warped_depth(u, v) = *warped;
                result.overlap(u, v) = 1;
            }
        }
    }
    return result;
}

WarpResult warp_depth(const DepthMap& source, const DepthMap& target, const Pose& pose_k,
                      const Pose& pose_j, const CameraIntrinsics& camera) {
    if (source.width() != target.width() || source.height() != target.height()) {
        throw Error(ErrorKind::Dimension, "source and target depth maps differ in size");
    }
    return warp_depth(source.mean, source.valid, target.mean, target.valid, pose_k, pose_j, camera);
}

ScaledDepth scale_depth(const DepthMap& predicted, const SparseDepth& sparse) {
    if (!sparse.mask.same_shape(predicted.mean.width, predicted.mean.height)) {
        throw Error(ErrorKind::Dimension, "sparse depth and prediction differ in size");
    }
    double sparse_sum = 0.0;
    double predicted_sum = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < sparse.mask.size(); ++i) {
        if (!sparse.mask.data[i]) continue;
        sparse_sum += sparse.values.data[i];
        predicted_sum += predicted.mean.data[i];
        ++count;
    }
    if (count == 0) throw Error(ErrorKind::NoSparseAnchor, "sparse mask is empty");
    if (!(predicted_sum > 0.0)) {
        throw Error(ErrorKind::DegenerateInput, "predicted depth under the sparse mask is zero");
    }
    const double scale = (sparse_sum / count) / (predicted_sum / count);
    ScaledDepth out{predicted, scale};
    for (size_t i = 0; i < out.depth.valid.size(); ++i) {
        out.depth.mean.data[i] *= scale;
        out.depth.std.data[i] *= scale;
    }
    return out;
}

FlowMap dense_flow(const Image<double>& depth_j, const Mask& valid_j, const Pose& pose_j,
                   const Pose& pose_k, const CameraIntrinsics& camera) {
    if (!depth_j.same_shape(camera.width, camera.height) || !valid_j.same_shape(depth_j)) {
        throw Error(ErrorKind::Dimension, "dense_flow depth raster does not match the camera");
    }
    const detail::IncrementedPose<double> pj(pose_j);
    const detail::IncrementedPose<double> pk(pose_k);
    FlowMap result{Image<Vec2>(camera.width, camera.height, Vec2::Zero()), Mask(camera.width, camera.height, 0)};

#pragma omp parallel for schedule(static)
    for (int v = 0; v < camera.height; ++v) {
        for (int u = 0; u < camera.width; ++u) {
            if (!valid_j(u, v)) continue;
            const auto f = detail::flow_pixel<double>(u, v, depth_j(u, v), pj, pk, camera);
            if (f) {
                result.flow(u, v) = *f;
                result.valid(u, v) = 1;
            }
        }
    }
    return result;
}

FlowMap dense_flow(const DepthMap& depth_j, const Pose& pose_j, const Pose& pose_k,
                   const CameraIntrinsics& camera) {
    return dense_flow(depth_j.mean, depth_j.valid, pose_j, pose_k, camera);
}

}  // namespace monofuse
