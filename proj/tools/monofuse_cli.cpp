#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "monofuse/config.h"
#include "monofuse/error.h"
#include "monofuse/evaluation.h"
#include "monofuse/failure_detection.h"
#include "monofuse/io.h"
#include "monofuse/pipeline.h"
#include "monofuse/pose_graph.h"
#include "monofuse/synthetic.h"
#include "monofuse/tsdf.h"

using namespace monofuse;
namespace fs = std::filesystem;

namespace {

enum Exit { kSuccess = 0, kError = 1, kFailureDetected = 2, kRerunSfm = 3 };

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string output = "monofuse_output";
};

AppConfig load(const Globals& g) {
    AppConfig c = g.config_path.empty() ? AppConfig{} : load_config(g.config_path);
    if (g.seed) {
        c.synthetic.seed = *g.seed;
        c.pipeline.registration.seed = *g.seed;
    }
    c.validate();
    return c;
}

fs::path output_dir(const Globals& g) {
    const fs::path dir(g.output);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
    return dir;
}

std::vector<int> frame_ids(const Bundle& bundle) {
    std::vector<int> ids;
    for (const auto& f : bundle.frames) ids.push_back(f.id);
    return ids;
}

Bundle read_bundle(const std::string& dir, const AppConfig& c) {
    Bundle b = io::read_bundle(dir, c.pipeline.default_std_fraction);
    if (b.frames.empty()) throw Error(ErrorKind::Validation, "the trajectory is empty");
    return b;
}

/// Scaled bundle plus a volume read from `volume_path`, or fused when empty.
std::pair<Bundle, TsdfVolume> scaled_volume(const std::string& bundle_dir, const std::string& volume_path,
                                            const AppConfig& c) {
    Bundle bundle = scale_bundle(read_bundle(bundle_dir, c)).bundle;
    TsdfVolume volume = volume_path.empty() ? fuse_bundle(bundle, c.pipeline.volume, c.pipeline.fit)
                                            : io::read_volume(volume_path);
    return {std::move(bundle), std::move(volume)};
}

void print_report(const FailureReport& r) {
    auto show = [](const char* name, const std::optional<double>& v, double t, bool pass) {
        if (v) {
            std::printf("  %-12s %10.4f  threshold %.4f  %s\n", name, *v, t, pass ? "pass" : "FAIL");
        } else {
            std::printf("  %-12s %10s  threshold %.4f\n", name, "n/a", t);
        }
    };
    show("sim", r.metric_sim, r.thresholds.sim, r.sim_pass);
    show("flow", r.metric_flow, r.thresholds.flow, r.flow_pass);
    show("consistency", r.metric_consistency, r.thresholds.consistency, r.consistency_pass);
    std::printf("  verdict      %s%s%s\n", to_string(r.verdict), r.reason.empty() ? "" : ": ", r.reason.c_str());
}

void print_stats(const RegistrationResult& r) {
    const auto& s = r.residuals;
    std::printf("registration: %d iterations, %s%s, scale %.6f\n", r.iterations,
                r.converged ? "converged" : "not converged", r.diverged ? ", diverged" : "", r.scale);
    std::printf("residuals: n %zu  mean %.6g  median %.6g  rms %.6g  max %.6g\n", s.count, s.mean, s.median, s.rms,
                s.max);
}

int cmd_synth(const Globals& g, const std::string& corruption, double magnitude, bool with_truth) {
    const AppConfig c = load(g);
    const auto seq = make_sequence(make_cavity_scene(c.synthetic.seed), c.synthetic);
    Bundle bundle = seq.bundle;
    if (!corruption.empty()) bundle = corrupt_sequence(bundle, corruption, magnitude, c.synthetic.seed + 1);
    const fs::path dir = output_dir(g);
    io::write_bundle(dir, bundle);
    if (with_truth) io::write_ground_truth(dir, seq.truth, frame_ids(bundle));
    std::printf("wrote %zu frames, %zu matches to %s\n", bundle.frames.size(), bundle.matches.size(),
                dir.string().c_str());
    return kSuccess;
}

int cmd_fuse(const Globals& g, const std::string& bundle_dir) {
    const AppConfig c = load(g);
    const auto scaled = scale_bundle(read_bundle(bundle_dir, c));
    const auto volume = fuse_bundle(scaled.bundle, c.pipeline.volume, c.pipeline.fit);
    const fs::path dir = output_dir(g);
    io::write_volume(dir / "volume.tsdf", volume);
    const auto mesh = extract_mesh(volume);
    if (!mesh.empty()) io::write_ply(dir / "mesh.ply", mesh);
    const auto& v = volume.config();
    io::write_json(dir / "fusion.json", {{"voxel_size", v.voxel_size},
                                         {"dims", {v.nx, v.ny, v.nz}},
                                         {"origin", {v.origin.x(), v.origin.y(), v.origin.z()}},
                                         {"observed_voxels", volume.observed_count()},
                                         {"depth_scales", scaled.scales},
                                         {"unscaled_frames", scaled.unscaled_frames},
                                         {"vertices", mesh.vertices.size()},
                                         {"triangles", mesh.triangles.size()}});
    std::printf("fused %zu frames into %dx%dx%d voxels of %.5g; mesh %zu vertices\n", scaled.bundle.frames.size(),
                v.nx, v.ny, v.nz, v.voxel_size, mesh.vertices.size());
    return kSuccess;
}

int cmd_detect(const Globals& g, const std::string& bundle_dir, const std::string& volume_path) {
    const AppConfig c = load(g);
    const auto [bundle, volume] = scaled_volume(bundle_dir, volume_path, c);
    const auto report = detect(bundle, volume, c.pipeline.failure);
    io::write_json(output_dir(g) / "detection.json", to_json(report));
    print_report(report);
    return report.verdict == Verdict::Success ? kSuccess : kFailureDetected;
}

int cmd_simulate_depth(const Globals& g, const std::string& bundle_dir, const std::string& volume_path) {
    const AppConfig c = load(g);
    const auto [bundle, volume] = scaled_volume(bundle_dir, volume_path, c);
    const auto report = detect(bundle, volume, c.pipeline.failure);
    const fs::path dir = output_dir(g);
    io::write_json(dir / "detection.json", to_json(report));
    try {
        const auto sims = export_simulated_depths(bundle, volume, report, dir / "simulated_depth", c.pipeline.failure.raycast);
        size_t valid = 0;
        for (const auto& s : sims) valid += s.valid_count();
        std::printf("wrote %zu simulated depth maps (%zu valid pixels)\n", sims.size(), valid);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::Refused) throw;
        print_report(report);
        std::fprintf(stderr, "%s\n", e.what());
        return kFailureDetected;
    }
    return kSuccess;
}

int cmd_optimize(const Globals& g, const std::string& bundle_dir) {
    const AppConfig c = load(g);
    const Bundle bundle = scale_bundle(read_bundle(bundle_dir, c)).bundle;
    const auto result =
        optimize(PoseGraphProblem::from_bundle(bundle, c.pipeline.pose_graph), c.pipeline.optimizer);
    const fs::path dir = output_dir(g);
    io::write_trajectory(dir / "trajectory.txt", frame_ids(bundle), result.poses);
    io::write_json(dir / "optimization.json", to_json(result));
    std::printf("objective %.6g -> %.6g in %d iterations (%s)\n", result.initial_objective, result.final_objective,
                result.iterations, result.converged ? "converged" : "not converged");
    if (!result.refined) {
        std::fprintf(stderr, "optimization aborted: %s\n", result.diagnostic.c_str());
        return kError;
    }
    return kSuccess;
}

int cmd_pipeline(const Globals& g, const std::string& bundle_dir, bool export_depths) {
    const AppConfig c = load(g);
    const fs::path dir = output_dir(g);
    const auto out = run_pipeline(bundle_dir, dir, c.pipeline);
    for (size_t i = 0; i < out.reports.size(); ++i) {
        std::printf("attempt %zu\n", i + 1);
        print_report(out.reports[i]);
    }
    if (out.optimization) {
        std::printf("pose optimization: objective %.6g -> %.6g in %d iterations\n",
                    out.optimization->initial_objective, out.optimization->final_objective,
                    out.optimization->iterations);
    }
    if (out.evaluation) print_stats(*out.evaluation);
    std::printf("status: %s\n", to_string(out.status));
    if (!out.succeeded()) return kRerunSfm;
    if (export_depths) {
        export_simulated_depths(out.bundle, out.volume, out.final_report(), dir / "simulated_depth",
                                c.pipeline.failure.raycast);
    }
    return kSuccess;
}

int cmd_eval(const Globals& g, const std::string& mesh_path, const std::string& reference) {
    const AppConfig c = load(g);
    const auto mesh = io::read_ply(mesh_path);
    RegistrationResult result;
    if (fs::is_directory(reference)) {
        if (!io::has_ground_truth(reference)) {
            throw Error(ErrorKind::Io, reference + " has no ground_truth directory");
        }
        const auto camera = io::read_camera(fs::path(reference) / "camera.json");
        const auto points = surface_samples(io::read_ground_truth(reference), camera,
                                            c.pipeline.registration.target_count, c.pipeline.registration.seed);
        result = evaluate(mesh, points, c.pipeline.registration);
    } else if (fs::path(reference).extension() == ".ply") {
        const auto ref = io::read_ply(reference);
        result = ref.triangles.empty() ? evaluate(mesh, ref.vertices, c.pipeline.registration)
                                       : evaluate(mesh, ref, c.pipeline.registration);
    } else {
        result = evaluate(mesh, io::read_points(reference), c.pipeline.registration);
    }
    io::write_json(output_dir(g) / "evaluation.json", to_json(result));
    print_stats(result);
    return kSuccess;
}

int cmd_export_mesh(const Globals& g, const std::string& volume_path) {
    load(g);
    const auto mesh = extract_mesh(io::read_volume(volume_path));
    if (mesh.empty()) throw Error(ErrorKind::EmptyMesh, "the volume has no surface");
    const fs::path path = output_dir(g) / "mesh.ply";
    io::write_ply(path, mesh);
    std::printf("wrote %zu vertices, %zu triangles to %s\n", mesh.vertices.size(), mesh.triangles.size(),
                path.string().c_str());
    return kSuccess;
}

int cmd_calibrate(const Globals& g, const std::vector<std::string>& bundles, int runs) {
    AppConfig c = load(g);
    std::vector<FailureReport> reports;
    nlohmann::json per_run = nlohmann::json::array();
    auto score = [&](const Bundle& raw, const std::string& label) {
        const Bundle bundle = scale_bundle(raw).bundle;
        const auto volume = fuse_bundle(bundle, c.pipeline.volume, c.pipeline.fit);
        reports.push_back(detect(bundle, volume, c.pipeline.failure));
        auto j = to_json(reports.back());
        j["source"] = label;
        per_run.push_back(std::move(j));
        std::printf("%s\n", label.c_str());
        print_report(reports.back());
    };
    if (bundles.empty()) {
        if (runs < 1) throw Error(ErrorKind::Validation, "calibration needs at least one run");
        for (int i = 0; i < runs; ++i) {
            SequenceSpec spec = c.synthetic;
            spec.seed = c.synthetic.seed + std::uint64_t(i);
            score(make_sequence(make_cavity_scene(spec.seed), spec).bundle, "synthetic seed " + std::to_string(spec.seed));
        }
    } else {
        for (const auto& b : bundles) score(read_bundle(b, c), b);
    }
    const auto thresholds = calibrate_thresholds(reports, c.pipeline.failure.thresholds);
    c.pipeline.failure.thresholds = thresholds;
    const fs::path dir = output_dir(g);
    io::write_json(dir / "calibration.json",
                   {{"thresholds", to_json(c).at("failure").at("thresholds")}, {"runs", per_run}});
    io::write_json(dir / "config.json", to_json(c));
    std::printf("thresholds: sim %.4f  flow %.4f  consistency %.4f\n", thresholds.sim, thresholds.flow,
                thresholds.consistency);
    return kSuccess;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dense reconstruction back-end: fusion, failure detection, pose-graph refinement and evaluation"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    std::uint64_t seed = 0;
    app.add_option("--config", g.config_path, "JSON config document")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "Seed for synthetic data and registration sampling");
    app.add_option("--output", g.output, "Output directory")->capture_default_str();

    std::vector<std::pair<CLI::App*, std::function<int()>>> commands;
    std::string bundle_dir, volume_path, mesh_path, reference, corruption;
    double magnitude = 0.0;
    bool no_truth = false, export_depths = false;
    std::vector<std::string> bundles;
    int runs = 10;

    auto* synth = app.add_subcommand("synth", "Write a synthetic bundle with ground truth");
    synth->add_option("--corruption", corruption, "pose_scramble, depth_scale_drift or match_shuffle");
    synth->add_option("--magnitude", magnitude, "Corruption magnitude");
    synth->add_flag("--no-ground-truth", no_truth, "Skip the ground_truth directory");
    commands.emplace_back(synth, [&] { return cmd_synth(g, corruption, magnitude, !no_truth); });

    auto* fuse = app.add_subcommand("fuse", "Scale and fuse a bundle into a volume");
    fuse->add_option("bundle", bundle_dir, "Bundle directory")->required()->check(CLI::ExistingDirectory);
    commands.emplace_back(fuse, [&] { return cmd_fuse(g, bundle_dir); });

    auto* sim = app.add_subcommand("simulate-depth", "Export simulated depth maps of a successful reconstruction");
    sim->add_option("bundle", bundle_dir, "Bundle directory")->required()->check(CLI::ExistingDirectory);
    sim->add_option("--volume", volume_path, "Fused volume; fused from the bundle when omitted")
        ->check(CLI::ExistingFile);
    commands.emplace_back(sim, [&] { return cmd_simulate_depth(g, bundle_dir, volume_path); });

    auto* det = app.add_subcommand("detect", "Score a reconstruction for failure");
    det->add_option("bundle", bundle_dir, "Bundle directory")->required()->check(CLI::ExistingDirectory);
    det->add_option("--volume", volume_path, "Fused volume; fused from the bundle when omitted")
        ->check(CLI::ExistingFile);
    commands.emplace_back(det, [&] { return cmd_detect(g, bundle_dir, volume_path); });

    auto* opt = app.add_subcommand("optimize-poses", "Refine the bundle trajectory");
    opt->add_option("bundle", bundle_dir, "Bundle directory")->required()->check(CLI::ExistingDirectory);
    commands.emplace_back(opt, [&] { return cmd_optimize(g, bundle_dir); });

    auto* pipe = app.add_subcommand("pipeline", "Fuse, detect, refine poses on failure and re-fuse");
    pipe->add_option("bundle", bundle_dir, "Bundle directory")->required()->check(CLI::ExistingDirectory);
    pipe->add_flag("--export-depths", export_depths, "Also export simulated depth maps on success");
    commands.emplace_back(pipe, [&] { return cmd_pipeline(g, bundle_dir, export_depths); });

    auto* eval = app.add_subcommand("eval", "Register a mesh to a reference and report residuals");
    eval->add_option("mesh", mesh_path, "Reconstructed mesh (.ply)")->required()->check(CLI::ExistingFile);
    eval->add_option("reference", reference, "Reference mesh or points (.ply, .xyz) or a bundle with ground truth")
        ->required()
        ->check(CLI::ExistingPath);
    commands.emplace_back(eval, [&] { return cmd_eval(g, mesh_path, reference); });

    auto* mesh = app.add_subcommand("export-mesh", "Extract the surface of a fused volume");
    mesh->add_option("volume", volume_path, "Fused volume")->required()->check(CLI::ExistingFile);
    commands.emplace_back(mesh, [&] { return cmd_export_mesh(g, volume_path); });

    auto* cal = app.add_subcommand("calibrate-thresholds", "Derive detection thresholds from clean runs");
    cal->add_option("bundles", bundles, "Clean bundle directories; synthetic runs when omitted")
        ->check(CLI::ExistingDirectory);
    cal->add_option("--runs", runs, "Number of synthetic runs")->capture_default_str();
    commands.emplace_back(cal, [&] { return cmd_calibrate(g, bundles, runs); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kSuccess : kError;
    }
    if (*seed_opt) g.seed = seed;
    try {
        for (const auto& [sub, run] : commands)
            if (sub->parsed()) return run();
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kError;
    }
    return kError;
}
