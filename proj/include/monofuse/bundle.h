#pragma once

#include <optional>
#include <vector>

#include "monofuse/geometry.h"

namespace monofuse {

/// Everything known about one video frame: SfM pose, predicted depth, SfM
/// sparse depth and an optional color image.
struct FrameBundle {
    int id = 0;
    Pose pose;
    DepthMap depth;
    SparseDepth sparse;
    std::optional<ColorImage> color;

    bool operator==(const FrameBundle&) const = default;
};

struct Bundle {
    CameraIntrinsics camera;
    std::vector<FrameBundle> frames;
    FeatureMatchSet matches;

    /// Throws Validation/Dimension errors for inconsistent contents.
    void validate() const;
    /// Index into `frames` of the frame with the given id, or -1.
    int index_of(int id) const;
    std::vector<Pose> poses() const;

    bool operator==(const Bundle&) const = default;
};

}  // namespace monofuse
