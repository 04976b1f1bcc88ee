#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "monofuse/bundle.h"
#include "monofuse/geometry.h"

namespace monofuse {

struct PoseGraphConfig {
    /// Frame id offsets that define the pairs (j, j + interval).
    std::vector<int> intervals = {5, 6, 7, 8};
    double w_consistency = 1.0;
    double w_flow = 100.0;
    double epsilon = 1.0e-8;

    void validate() const;
};

/// Frames with fixed depth predictions and the poses to refine. The first
/// frame is the anchor and never moves.
struct PoseGraphProblem {
    CameraIntrinsics camera;
    std::vector<int> ids;
    std::vector<DepthMap> depths;
    std::vector<Pose> initial_poses;
    FeatureMatchSet matches;
    PoseGraphConfig config;

    static PoseGraphProblem from_bundle(const Bundle& bundle, const PoseGraphConfig& config = {});
    void validate() const;
    /// Index pairs (a, b) with ids[b] = ids[a] + interval, grouped by interval.
    std::vector<std::pair<size_t, size_t>> pairs() const;
};

struct ObjectiveBreakdown {
    double value = 0.0;
    size_t pairs = 0;
    /// Pairs where neither term could be evaluated.
    size_t degenerate_pairs = 0;
    size_t pairs_without_overlap = 0;
    size_t pairs_without_matches = 0;
};

/// Weighted sum of symmetric depth consistency and sparse flow over all
/// pairs. Throws UnconstrainedProblem when every pair is degenerate.
ObjectiveBreakdown evaluate_objective(const PoseGraphProblem& problem, const std::vector<Pose>& poses);
double objective(const PoseGraphProblem& problem, const std::vector<Pose>& poses);

enum class GradientMode { Analytic, FiniteDifference };

/// Gradient over per-frame twists (ω, v), six entries per frame in frame
/// order. Entries of the anchor frame are zero.
struct ObjectiveGradient {
    double value = 0.0;
    Eigen::VectorXd gradient;
};
ObjectiveGradient objective_gradient(const PoseGraphProblem& problem, const std::vector<Pose>& poses,
                                     GradientMode mode = GradientMode::Analytic, double fd_step = 1.0e-6);

enum class OptimizerMethod {
    /// Damped Gauss-Newton over the residual Jacobians; each accepted step
    /// lowers the objective.
    LevenbergMarquardt,
    /// Gradient-only limited-memory quasi-Newton descent.
    Lbfgs,
};

struct OptimizerSettings {
    OptimizerMethod method = OptimizerMethod::LevenbergMarquardt;
    int max_iterations = 200;
    /// Stop when the relative objective decrease stays below this for
    /// `patience` consecutive accepted steps.
    double tolerance = 1.0e-6;
    int patience = 3;
    GradientMode gradient = GradientMode::Analytic;
    double fd_step = 1.0e-6;
    /// Per-parameter step (radians or scene units) of the RMS-normalized
    /// gradient, used until curvature pairs are available.
    double initial_step = 1.0e-3;
    /// Number of curvature pairs kept; 0 gives plain RMS-scaled descent.
    int memory = 10;
    double backtrack = 0.5;
    int max_backtracks = 30;
    double armijo = 1.0e-4;
    double rms_decay = 0.9;
    /// Levenberg-Marquardt damping, relative to the Gauss-Newton diagonal.
    double initial_damping = 1.0e-3;
    double damping_increase = 10.0;
    double damping_decrease = 0.3;
    double max_damping = 1.0e10;
    /// Doublings tried after an accepted Levenberg-Marquardt step.
    int max_expansions = 4;

    void validate() const;
};

struct OptimizationResult {
    std::vector<Pose> poses;
    /// False when the run aborted; poses are then the initial ones.
    bool refined = false;
    bool converged = false;
    int iterations = 0;
    double initial_objective = 0.0;
    double final_objective = 0.0;
    /// Objective after each accepted step, starting with the initial value.
    std::vector<double> history;
    size_t degenerate_pairs = 0;
    std::string diagnostic;
};

/// Refines every pose but the anchor. The L-BFGS method uses the
/// per-parameter RMS scaling as initial inverse Hessian with Armijo
/// backtracking. Increments are composed on the left of each pose.
OptimizationResult optimize(const PoseGraphProblem& problem, const OptimizerSettings& settings = {});

/// Summary without the poses.
nlohmann::json to_json(const OptimizationResult& result);

}  // namespace monofuse
