#include "monofuse/pipeline.h"

#include "monofuse/depth_ops.h"
#include "monofuse/error.h"
#include "monofuse/io.h"
#include "monofuse/synthetic.h"

namespace monofuse {

namespace fs = std::filesystem;

namespace {

struct Attempt {
    TsdfVolume volume;
    FailureReport report;
};

Attempt reconstruct(const Bundle& bundle, const PipelineConfig& config) {
    TsdfVolume volume = fuse_bundle(bundle, config.volume, config.fit);
    FailureReport report = detect(bundle, volume, config.failure);
    return {std::move(volume), std::move(report)};
}

}  // namespace

void PipelineConfig::validate() const {
    volume.validate();
    if (fit.resolution < 2 || fit.padding_voxels < 0 || fit.pixel_stride < 1 || !(fit.delta_min_voxels > 0.0)) {
        throw Error(ErrorKind::Validation, "invalid volume fit settings");
    }
    failure.validate();
    pose_graph.validate();
    optimizer.validate();
    registration.validate();
    if (!(default_std_fraction > 0.0)) throw Error(ErrorKind::Validation, "default_std_fraction must be positive");
}

const char* to_string(PipelineStatus status) {
    switch (status) {
        case PipelineStatus::Reconstructed: return "reconstructed";
        case PipelineStatus::ReconstructedAfterPoseOpt: return "reconstructed_after_pose_opt";
        case PipelineStatus::RerunSfmRequired: return "rerun_sfm_required";
    }
    return "unknown";
}

ScaledBundle scale_bundle(const Bundle& bundle) {
    ScaledBundle out{bundle, {}, {}};
    for (auto& f : out.bundle.frames) {
        try {
            auto scaled = scale_depth(f.depth, f.sparse);
            f.depth = std::move(scaled.depth);
            out.scales.push_back(scaled.scale);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::NoSparseAnchor) throw;
            out.unscaled_frames.push_back(f.id);
            out.scales.push_back(1.0);
        }
    }
    return out;
}

PipelineOutcome run_pipeline(const Bundle& input, const PipelineConfig& config) {
    config.validate();
    if (input.frames.empty()) throw Error(ErrorKind::Validation, "the trajectory is empty");
    input.validate();

    PipelineOutcome out;
    auto scaled = scale_bundle(input);
    out.bundle = std::move(scaled.bundle);
    out.depth_scales = std::move(scaled.scales);
    out.unscaled_frames = std::move(scaled.unscaled_frames);

    auto first = reconstruct(out.bundle, config);
    out.reports.push_back(first.report);
    out.volume = std::move(first.volume);
    if (first.report.verdict == Verdict::Success) {
        out.status = PipelineStatus::Reconstructed;
    } else {
        out.status = PipelineStatus::RerunSfmRequired;
        std::optional<OptimizationResult> refined;
        try {
            refined = optimize(PoseGraphProblem::from_bundle(out.bundle, config.pose_graph), config.optimizer);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::UnconstrainedProblem) throw;
            OptimizationResult unconstrained;
            unconstrained.poses = out.bundle.poses();
            unconstrained.diagnostic = e.what();
            refined = std::move(unconstrained);
        }
        if (refined->refined) {
            for (size_t i = 0; i < out.bundle.frames.size(); ++i) out.bundle.frames[i].pose = refined->poses[i];
            auto second = reconstruct(out.bundle, config);
            out.reports.push_back(second.report);
            out.volume = std::move(second.volume);
            if (second.report.verdict == Verdict::Success) out.status = PipelineStatus::ReconstructedAfterPoseOpt;
        }
        out.optimization = std::move(refined);
    }
    out.mesh = extract_mesh(out.volume);
    return out;
}

PipelineOutcome run_pipeline(const fs::path& bundle_dir, const fs::path& output_dir, const PipelineConfig& config) {
    config.validate();
    const Bundle bundle = io::read_bundle(bundle_dir, config.default_std_fraction);
    PipelineOutcome out = run_pipeline(bundle, config);

    std::error_code ec;
    fs::create_directories(output_dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create " + output_dir.string() + ": " + ec.message());
    if (!out.mesh.empty()) {
        out.mesh_path = output_dir / "mesh.ply";
        io::write_ply(out.mesh_path, out.mesh);
        if (io::has_ground_truth(bundle_dir)) {
            const auto truth = io::read_ground_truth(bundle_dir);
            const auto reference =
                surface_samples(truth, bundle.camera, config.registration.target_count, config.registration.seed);
            if (!reference.empty()) out.evaluation = evaluate(out.mesh, reference, config.registration);
        }
    }
    std::vector<int> ids;
    for (const auto& f : out.bundle.frames) ids.push_back(f.id);
    io::write_trajectory(output_dir / "trajectory.txt", ids, out.bundle.poses());
    out.metrics_path = output_dir / "metrics.json";
    const auto metrics = metrics_json(out);
    io::write_json(out.metrics_path, metrics);
    return out;
}

nlohmann::json metrics_json(const PipelineOutcome& out) {
    nlohmann::json j;
    j["status"] = to_string(out.status);
    if (!out.reports.empty()) {
        const auto last = to_json(out.final_report());
        for (const char* key : {"sim_loss", "flow_loss", "consistency_loss", "thresholds", "verdict", "skipped_frames"})
            j[key] = last.at(key);
    }
    j["attempts"] = nlohmann::json::array();
    for (const auto& r : out.reports) j["attempts"].push_back(to_json(r));
    j["pose_optimization"] = out.optimization ? to_json(*out.optimization) : nlohmann::json(nullptr);
    j["depth_scales"] = out.depth_scales;
    j["unscaled_frames"] = out.unscaled_frames;
    const auto& v = out.volume.config();
    j["volume"] = {{"voxel_size", v.voxel_size},
                   {"dims", {v.nx, v.ny, v.nz}},
                   {"origin", {v.origin.x(), v.origin.y(), v.origin.z()}},
                   {"observed_voxels", out.volume.observed_count()}};
    j["mesh"] = {{"vertices", out.mesh.vertices.size()},
                 {"triangles", out.mesh.triangles.size()},
                 {"path", out.mesh_path.empty() ? nlohmann::json(nullptr) : nlohmann::json(out.mesh_path.filename().string())}};
    if (out.evaluation) {
        auto e = to_json(*out.evaluation);
        e["rms_voxels"] = out.evaluation->residuals.rms / v.voxel_size;
        j["evaluation"] = e;
    } else {
        j["evaluation"] = nullptr;
    }
    return j;
}

std::vector<SimulatedDepth> export_simulated_depths(const Bundle& bundle, const TsdfVolume& volume,
                                                    const FailureReport& report, const fs::path& output_dir,
                                                    const RaycastSettings& raycast) {
    if (report.verdict != Verdict::Success) {
        throw Error(ErrorKind::Refused, "simulated depths are only exported after a successful reconstruction");
    }
    std::vector<SimulatedDepth> sims(bundle.frames.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < long(sims.size()); ++i) {
        sims[size_t(i)] = simulate_depth(volume, bundle.frames[size_t(i)].pose, bundle.camera, raycast);
    }
    std::error_code ec;
    fs::create_directories(output_dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create " + output_dir.string() + ": " + ec.message());
    for (size_t i = 0; i < sims.size(); ++i) {
        io::write_dmap(output_dir / (io::frame_name(bundle.frames[i].id) + ".dmap"), sims[i].depth, sims[i].valid);
    }
    return sims;
}

}  // namespace monofuse
