#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "json.hpp"
#include "monofuse/bundle.h"
#include "monofuse/evaluation.h"
#include "monofuse/failure_detection.h"
#include "monofuse/pose_graph.h"
#include "monofuse/tsdf.h"

namespace monofuse {

struct PipelineConfig {
    /// Truncation and blending constants; grid placement comes from `fit`.
    VolumeConfig volume;
    VolumeFit fit;
    FailureConfig failure;
    PoseGraphConfig pose_graph;
    OptimizerSettings optimizer;
    RegistrationConfig registration;
    /// std = fraction · mean for bundles without std rasters.
    double default_std_fraction = 0.05;

    void validate() const;
};

enum class PipelineStatus { Reconstructed, ReconstructedAfterPoseOpt, RerunSfmRequired };

const char* to_string(PipelineStatus status);

struct PipelineOutcome {
    PipelineStatus status = PipelineStatus::RerunSfmRequired;
    /// One report per reconstruction attempt.
    std::vector<FailureReport> reports;
    std::optional<OptimizationResult> optimization;
    /// Scaled depths and the poses of the last attempt.
    Bundle bundle;
    std::vector<double> depth_scales;
    /// Frame ids without sparse depth, fused unscaled.
    std::vector<int> unscaled_frames;
    TsdfVolume volume{VolumeConfig{}};
    TriangleMesh mesh;
    std::optional<RegistrationResult> evaluation;
    std::filesystem::path mesh_path;
    std::filesystem::path metrics_path;

    const FailureReport& final_report() const { return reports.back(); }
    bool succeeded() const { return status != PipelineStatus::RerunSfmRequired; }
};

struct ScaledBundle {
    Bundle bundle;
    /// One per frame; 1 for unscaled frames.
    std::vector<double> scales;
    /// Frame ids without sparse depth, left unscaled.
    std::vector<int> unscaled_frames;
};

/// Aligns every depth map to the sparse SfM depths of its frame.
ScaledBundle scale_bundle(const Bundle& bundle);

/// Scale, fuse and detect; on failure refine the poses once, re-fuse into a
/// fresh volume and detect again.
PipelineOutcome run_pipeline(const Bundle& bundle, const PipelineConfig& config = {});

/// Reads a bundle directory, runs the pipeline and writes mesh.ply,
/// trajectory.txt and metrics.json to `output_dir`. Bundles with a
/// ground_truth directory are also evaluated against its surface.
PipelineOutcome run_pipeline(const std::filesystem::path& bundle_dir, const std::filesystem::path& output_dir,
                             const PipelineConfig& config = {});

nlohmann::json metrics_json(const PipelineOutcome& outcome);

/// Renders and writes {id:06d}.dmap per frame (invalid pixels as 0).
/// Refuses when `report` is a failure.
std::vector<SimulatedDepth> export_simulated_depths(const Bundle& bundle, const TsdfVolume& volume,
                                                    const FailureReport& report,
                                                    const std::filesystem::path& output_dir,
                                                    const RaycastSettings& raycast = {});

}  // namespace monofuse
