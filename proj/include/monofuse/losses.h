#pragma once

#include <optional>
#include <variant>

#include <Eigen/Core>

#include "monofuse/depth_ops.h"
#include "monofuse/geometry.h"

namespace monofuse {

struct LossConfig {
    double epsilon = 1.0e-8;
    double w_sparse_depth = 1.0;
    double w_depth_consistency = 0.5;
    double w_sparse_flow = 100.0;
    double w_dense_simulation = 0.1;

    void validate() const;
};

/// Depth raycast from a fused volume.
struct SimulatedDepth {
    Image<double> depth;
    Mask valid;

    size_t valid_count() const;
};

struct KernelResult {
    double value = 0.0;
    size_t count = 0;
};

/// Masked Gaussian negative log-likelihood
///   (1/ΣM) Σ M·( ln(S + ε) + (target − mean)² / (2S² + ε) ),
/// summed in row-major order. Every loss below reduces to this kernel.
/// `count` is 0 (and `value` NaN) when the mask is empty.
KernelResult log_likelihood_kernel(const Mask& mask, const Image<double>& target,
                                   const Image<double>& mean, const Image<double>& std, double eps);

double sparse_depth_loss(const DepthMap& pred, const SparseDepth& sparse, double eps);

/// One direction (k → j) of the depth consistency loss.
double depth_consistency_loss(const DepthMap& pred_j, const WarpResult& warp, double eps);

/// Average of the k → j and j → k directions. A direction without overlap is
/// left out; throws NoOverlap when neither has any.
double symmetric_depth_consistency_loss(const DepthMap& depth_j, const DepthMap& depth_k,
                                        const Pose& pose_j, const Pose& pose_k,
                                        const CameraIntrinsics& camera, double eps);

/// Mean squared difference between the model flow (bilinearly interpolated
/// at the match location in frame j) and the observed normalized match flow.
/// Matches of the pair in either orientation are used; matches on invalid
/// depth are dropped.
double sparse_flow_loss(const Image<double>& depth_j, const Mask& valid_j, const Pose& pose_j,
                        const Pose& pose_k, const FeatureMatchSet& matches, int frame_j, int frame_k,
                        const CameraIntrinsics& camera);
double sparse_flow_loss(const DepthMap& depth_j, const Pose& pose_j, const Pose& pose_k,
                        const FeatureMatchSet& matches, int frame_j, int frame_k,
                        const CameraIntrinsics& camera);
double sparse_flow_loss(const SimulatedDepth& depth_j, const Pose& pose_j, const Pose& pose_k,
                        const FeatureMatchSet& matches, int frame_j, int frame_k,
                        const CameraIntrinsics& camera);

double dense_simulation_loss(const DepthMap& pred, const SimulatedDepth& sim, double eps);

/// Weighted sum of whichever training terms are available for a frame.
struct TrainingTerms {
    std::optional<double> sparse_depth;
    std::optional<double> depth_consistency;
    std::optional<double> sparse_flow;
    std::optional<double> dense_simulation;
};
double weighted_training_loss(const TrainingTerms& terms, const LossConfig& config);

// Differentiation ------------------------------------------------------------

struct SparseDepthInputs {
    const DepthMap& pred;
    const SparseDepth& sparse;
    double eps;
};

struct ConsistencyInputs {
    const DepthMap& depth_j;
    const DepthMap& depth_k;
    Pose pose_j;
    Pose pose_k;
    CameraIntrinsics camera;
    double eps;
};

struct SparseFlowInputs {
    const Image<double>& depth_j;
    const Mask& valid_j;
    Pose pose_j;
    Pose pose_k;
    const FeatureMatchSet& matches;
    int frame_j;
    int frame_k;
    CameraIntrinsics camera;
};

struct DenseSimulationInputs {
    const DepthMap& pred;
    const SimulatedDepth& sim;
    double eps;
};

using LossInputs = std::variant<SparseDepthInputs, ConsistencyInputs, SparseFlowInputs, DenseSimulationInputs>;

enum class GradientTarget { DepthMeans, PoseParameters };

struct LossEvaluation {
    double value = 0.0;
    Eigen::VectorXd gradient;
};

double evaluate_loss(const LossInputs& inputs);

/// Value and gradient of the selected loss.
///
/// DepthMeans: one entry per pixel (row-major) of each differentiable depth
/// raster: the prediction for sparse depth and dense simulation, depth_j then
/// depth_k for consistency, depth_j for sparse flow.
///
/// PoseParameters: twist (ω, v) of pose_j followed by that of pose_k, where a
/// pose is perturbed as R ← Exp(ω)·R, t ← t + v. Losses that do not depend on
/// poses return an empty vector.
LossEvaluation evaluate_with_gradient(const LossInputs& inputs, GradientTarget target);
Eigen::VectorXd loss_gradient(const LossInputs& inputs, GradientTarget target);

/// Value, pose gradient and Gauss-Newton matrix (twice the sum of outer
/// products of residual Jacobians, normalized like the loss) over the twists
/// of pose_j then pose_k.
struct PoseNormalEquations {
    double value = 0.0;
    Eigen::Matrix<double, 12, 1> gradient = Eigen::Matrix<double, 12, 1>::Zero();
    Eigen::Matrix<double, 12, 12> gauss_newton = Eigen::Matrix<double, 12, 12>::Zero();
};
PoseNormalEquations consistency_pose_normal_equations(const ConsistencyInputs& inputs);
PoseNormalEquations sparse_flow_pose_normal_equations(const SparseFlowInputs& inputs);

}  // namespace monofuse
