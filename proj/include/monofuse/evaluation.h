#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "monofuse/geometry.h"

namespace monofuse {

struct RegistrationConfig {
    /// Points sampled from each mesh before registration.
    size_t target_count = 40000;
    int max_iterations = 50;
    /// Stop when the relative change of the mean squared residual falls
    /// below this.
    double tolerance = 1.0e-6;
    /// Consecutive residual increases that count as divergence.
    int divergence_window = 5;
    /// Also estimate a uniform scale.
    bool estimate_scale = false;
    /// Similarity transform applied to the reconstruction before the first
    /// iteration.
    Eigen::Matrix4d initial = Eigen::Matrix4d::Identity();
    std::uint64_t seed = 0;

    void validate() const;
};

struct ResidualStats {
    size_t count = 0;
    double mean = 0.0;
    double median = 0.0;
    double rms = 0.0;
    double max = 0.0;
};

ResidualStats residual_stats(std::vector<double> residuals);

struct RegistrationResult {
    /// Maps reconstruction points onto the reference.
    Eigen::Matrix4d transform = Eigen::Matrix4d::Identity();
    double scale = 1.0;
    int iterations = 0;
    bool converged = false;
    /// Set when the residual rose for `divergence_window` consecutive
    /// iterations; the statistics are then those of the last transform.
    bool diverged = false;
    /// Mean squared closest-point residual per iteration, starting with the
    /// initial transform.
    std::vector<double> mse_history;
    /// Closest-point distances under the final transform.
    ResidualStats residuals;
};

/// Point-to-point ICP of `source` onto `reference`.
RegistrationResult register_points(const std::vector<Vec3>& source, const std::vector<Vec3>& reference,
                                   const RegistrationConfig& config = {});

/// Samples the reconstruction to the target count and registers it onto the
/// reference points.
RegistrationResult evaluate(const TriangleMesh& reconstruction, const std::vector<Vec3>& reference,
                            const RegistrationConfig& config = {});
/// Same, sampling the reference mesh as well.
RegistrationResult evaluate(const TriangleMesh& reconstruction, const TriangleMesh& reference,
                            const RegistrationConfig& config = {});

nlohmann::json to_json(const ResidualStats& stats);
nlohmann::json to_json(const RegistrationResult& result);

}  // namespace monofuse
