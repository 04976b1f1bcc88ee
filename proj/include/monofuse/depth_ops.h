#pragma once

#include "monofuse/geometry.h"

namespace monofuse {

/// Depth of frame k resampled onto the pixel grid of frame j.
struct WarpResult {
    Image<double> warped_depth;
    Mask overlap;

    size_t overlap_count() const;
};

/// Per-pixel displacement in normalized units (Δu / width, Δv / height).
struct FlowMap {
    Image<Vec2> flow;
    Mask valid;
};

/// Gather-style depth warping from `source` (frame k) onto `target` (frame j).
/// No occlusion test is made.
WarpResult warp_depth(const DepthMap& source, const DepthMap& target, const Pose& pose_k,
                      const Pose& pose_j, const CameraIntrinsics& camera);

/// Same as above with bare depth rasters, used when the depth source is a
/// simulated depth map.
WarpResult warp_depth(const Image<double>& source, const Mask& source_valid,
                      const Image<double>& target, const Mask& target_valid, const Pose& pose_k,
                      const Pose& pose_j, const CameraIntrinsics& camera);

struct ScaledDepth {
    DepthMap depth;
    double scale;
};

/// Rescales a prediction so that its mean over the sparse mask matches the
/// sparse depths. Mean and std are multiplied by the same factor.
ScaledDepth scale_depth(const DepthMap& predicted, const SparseDepth& sparse);

/// Flow of every valid pixel of frame j when reprojected into frame k.
FlowMap dense_flow(const Image<double>& depth_j, const Mask& valid_j, const Pose& pose_j,
                   const Pose& pose_k, const CameraIntrinsics& camera);
FlowMap dense_flow(const DepthMap& depth_j, const Pose& pose_j, const Pose& pose_k,
                   const CameraIntrinsics& camera);

}  // namespace monofuse
