#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "monofuse/bundle.h"
#include "monofuse/losses.h"
#include "monofuse/tsdf.h"

namespace monofuse {

struct FailureThresholds {
    double sim = 2.0;
    double flow = 0.1;
    double consistency = 2.0;

    bool operator==(const FailureThresholds&) const = default;
};

struct FailureConfig {
    FailureThresholds thresholds;
    /// Frame pairs (j, j + interval) for the flow and consistency metrics.
    int interval = 5;
    /// Frames whose simulated depth covers less than this fraction of the
    /// predicted valid pixels are left out of every metric.
    double min_coverage = 0.05;
    double epsilon = 1.0e-8;
    RaycastSettings raycast;

    void validate() const;
};

enum class Verdict { Success, Failure };

struct FailureReport {
    /// Unset when no frame or pair produced a value.
    std::optional<double> metric_sim;
    std::optional<double> metric_flow;
    std::optional<double> metric_consistency;
    /// Value the sim and consistency metrics take with zero residual on the
    /// same pixels (the mean log-std term). metric - floor is never negative.
    /// The flow floor is 0.
    std::optional<double> floor_sim;
    std::optional<double> floor_consistency;
    FailureThresholds thresholds;
    Verdict verdict = Verdict::Failure;
    bool sim_pass = false;
    bool flow_pass = false;
    bool consistency_pass = false;
    /// Frame ids dropped for insufficient simulated coverage.
    std::vector<int> skipped_frames;
    size_t pairs_used_flow = 0;
    size_t pairs_used_consistency = 0;
    /// Empty on success.
    std::string reason;

    bool operator==(const FailureReport&) const = default;
};

/// Simulates depth at every frame pose and scores the reconstruction.
/// Depth maps in `bundle` are the (scaled) predictions.
FailureReport detect(const Bundle& bundle, const TsdfVolume& volume, const FailureConfig& config);

/// Same, with simulated depths already rendered (one per frame).
FailureReport detect(const Bundle& bundle, const std::vector<SimulatedDepth>& simulated,
                     const FailureConfig& config);

const char* to_string(Verdict verdict);
nlohmann::json to_json(const FailureReport& report);

/// Per-metric threshold p95 + 0.5 · max(p95 − p50, median residual) over
/// clean runs, where the residual is metric − floor. The second term keeps a
/// margin proportional to the clean residual when runs barely differ.
/// Metrics unavailable in every run keep the given fallback.
FailureThresholds calibrate_thresholds(const std::vector<FailureReport>& clean_runs,
                                       const FailureThresholds& fallback = {});

}  // namespace monofuse
