#include "monofuse/failure_detection.h"

#include <algorithm>
#include <cmath>

#include "monofuse/error.h"

namespace monofuse {

namespace {

DepthMap simulated_belief(const SimulatedDepth& sim, const DepthMap& pred) {
    DepthMap d(pred.mean.width, pred.mean.height);
    for (size_t i = 0; i < d.mean.size(); ++i) {
        if (!sim.valid.data[i] || !pred.valid.data[i]) continue;
        d.mean.data[i] = sim.depth.data[i];
        d.std.data[i] = pred.std.data[i];
        d.valid.data[i] = 1;
    }
    return d;
}

std::optional<double> mean_of(const std::vector<std::optional<double>>& values, size_t* used) {
    double sum = 0.0;
    size_t n = 0;
    for (const auto& v : values) {
        if (!v) continue;
        sum += *v;
        ++n;
    }
    if (used) *used = n;
    if (n == 0) return std::nullopt;
    return sum / double(n);
}

/// Zero-residual value of the symmetric consistency loss on the same overlap.
std::optional<double> consistency_floor(const DepthMap& dj, const DepthMap& dk, const Pose& pj, const Pose& pk,
                                        const CameraIntrinsics& camera, double eps) {
    double sum = 0.0;
    int used = 0;
    const auto direction = [&](const DepthMap& source, const DepthMap& target, const Pose& ps, const Pose& pt) {
        const auto warp = warp_depth(source, target, ps, pt, camera);
        const auto r = log_likelihood_kernel(warp.overlap, target.mean, target.mean, target.std, eps);
        if (r.count == 0) return;
        sum += r.value;
        ++used;
    };
    direction(dk, dj, pk, pj);
    direction(dj, dk, pj, pk);
    if (used == 0) return std::nullopt;
    return sum / double(used);
}

double percentile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double pos = p * double(v.size() - 1);
    const auto lo = size_t(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

}  // namespace

void FailureConfig::validate() const {
    if (interval < 1) throw Error(ErrorKind::Validation, "failure interval must be at least 1");
    if (!(min_coverage >= 0.0 && min_coverage <= 1.0)) throw Error(ErrorKind::Validation, "min_coverage must lie in [0, 1]");
    if (!(epsilon > 0.0)) throw Error(ErrorKind::Validation, "epsilon must be positive");
    for (double t : {thresholds.sim, thresholds.flow, thresholds.consistency})
        if (!std::isfinite(t)) throw Error(ErrorKind::Validation, "thresholds must be finite");
}

const char* to_string(Verdict verdict) { return verdict == Verdict::Success ? "success" : "failure"; }

FailureReport detect(const Bundle& bundle, const TsdfVolume& volume, const FailureConfig& config) {
    config.validate();
    if (bundle.frames.size() < 2) throw Error(ErrorKind::Validation, "failure detection needs at least 2 frames");
    if (volume.observed_count() == 0) {
        FailureReport r;
        r.thresholds = config.thresholds;
        for (const auto& f : bundle.frames) r.skipped_frames.push_back(f.id);
        r.reason = "insufficient coverage: volume is empty";
        return r;
    }
    std::vector<SimulatedDepth> sims(bundle.frames.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < long(sims.size()); ++i) {
        sims[size_t(i)] = simulate_depth(volume, bundle.frames[size_t(i)].pose, bundle.camera, config.raycast);
    }
    return detect(bundle, sims, config);
}

FailureReport detect(const Bundle& bundle, const std::vector<SimulatedDepth>& simulated,
                     const FailureConfig& config) {
    config.validate();
    const size_t n = bundle.frames.size();
    if (n < 2) throw Error(ErrorKind::Validation, "failure detection needs at least 2 frames");
    if (simulated.size() != n) throw Error(ErrorKind::Dimension, "one simulated depth per frame is required");

    FailureReport report;
    report.thresholds = config.thresholds;

    std::vector<char> usable(n, 0);
    std::vector<std::optional<double>> sim_terms(n), sim_floors(n);
    std::vector<DepthMap> beliefs(n);
    for (size_t i = 0; i < n; ++i) {
        const auto& pred = bundle.frames[i].depth;
        beliefs[i] = simulated_belief(simulated[i], pred);
        const size_t pred_count = pred.valid_count();
        const size_t overlap = beliefs[i].valid_count();
        if (pred_count == 0 || double(overlap) < config.min_coverage * double(pred_count) || overlap == 0) {
            report.skipped_frames.push_back(bundle.frames[i].id);
            continue;
        }
        usable[i] = 1;
        sim_terms[i] = dense_simulation_loss(pred, simulated[i], config.epsilon);
        sim_floors[i] = log_likelihood_kernel(beliefs[i].valid, pred.mean, pred.mean, pred.std, config.epsilon).value;
    }

    // Pairs are keyed by frame id so gaps in the trajectory are respected.
    std::vector<std::pair<size_t, size_t>> pairs;
    for (size_t a = 0; a < n; ++a) {
        const int target = bundle.frames[a].id + config.interval;
        for (size_t b = 0; b < n; ++b)
            if (bundle.frames[b].id == target) pairs.emplace_back(a, b);
    }
    std::vector<std::optional<double>> flow_terms(pairs.size()), cons_terms(pairs.size()), cons_floors(pairs.size());
    for (size_t p = 0; p < pairs.size(); ++p) {
        const auto [a, b] = pairs[p];
        if (!usable[a] || !usable[b]) continue;
        const auto& fa = bundle.frames[a];
        const auto& fb = bundle.frames[b];
        try {
            flow_terms[p] = sparse_flow_loss(simulated[a], fa.pose, fb.pose, bundle.matches, fa.id, fb.id, bundle.camera);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::NoMatches) throw;
        }
        try {
            cons_terms[p] = symmetric_depth_consistency_loss(beliefs[a], beliefs[b], fa.pose, fb.pose, bundle.camera,
                                                             config.epsilon);
            cons_floors[p] = consistency_floor(beliefs[a], beliefs[b], fa.pose, fb.pose, bundle.camera, config.epsilon);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::NoOverlap) throw;
        }
    }

    report.metric_sim = mean_of(sim_terms, nullptr);
    report.metric_flow = mean_of(flow_terms, &report.pairs_used_flow);
    report.metric_consistency = mean_of(cons_terms, &report.pairs_used_consistency);
    report.floor_sim = mean_of(sim_floors, nullptr);
    report.floor_consistency = mean_of(cons_floors, nullptr);

    const auto passes = [](const std::optional<double>& m, double t) { return m && std::isfinite(*m) && *m <= t; };
    report.sim_pass = passes(report.metric_sim, config.thresholds.sim);
    report.flow_pass = passes(report.metric_flow, config.thresholds.flow);
    report.consistency_pass = passes(report.metric_consistency, config.thresholds.consistency);

    if (!report.metric_sim || !report.metric_flow || !report.metric_consistency) {
        std::string missing;
        if (!report.metric_sim) missing += " sim";
        if (!report.metric_flow) missing += " flow";
        if (!report.metric_consistency) missing += " consistency";
        report.reason = "insufficient coverage:" + missing;
    } else if (!(report.sim_pass && report.flow_pass && report.consistency_pass)) {
        std::string over;
        if (!report.sim_pass) over += " sim";
        if (!report.flow_pass) over += " flow";
        if (!report.consistency_pass) over += " consistency";
        report.reason = "threshold exceeded:" + over;
    }
    report.verdict = report.reason.empty() ? Verdict::Success : Verdict::Failure;
    return report;
}

nlohmann::json to_json(const FailureReport& r) {
    const auto metric = [](const std::optional<double>& m) { return m ? nlohmann::json(*m) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["sim_loss"] = metric(r.metric_sim);
    j["flow_loss"] = metric(r.metric_flow);
    j["consistency_loss"] = metric(r.metric_consistency);
    j["floors"] = {{"sim", metric(r.floor_sim)}, {"flow", 0.0}, {"consistency", metric(r.floor_consistency)}};
    j["thresholds"] = {{"sim", r.thresholds.sim}, {"flow", r.thresholds.flow}, {"consistency", r.thresholds.consistency}};
    j["verdict"] = to_string(r.verdict);
    j["passes"] = {{"sim", r.sim_pass}, {"flow", r.flow_pass}, {"consistency", r.consistency_pass}};
    j["skipped_frames"] = r.skipped_frames;
    j["pairs_used"] = {{"flow", r.pairs_used_flow}, {"consistency", r.pairs_used_consistency}};
    j["reason"] = r.reason;
    return j;
}

FailureThresholds calibrate_thresholds(const std::vector<FailureReport>& clean_runs, const FailureThresholds& fallback) {
    using Member = std::optional<double> FailureReport::*;
    const auto fit = [&](Member metric, Member floor, double fb) {
        std::vector<double> v, residual;
        for (const auto& r : clean_runs) {
            if (!(r.*metric) || !std::isfinite(*(r.*metric))) continue;
            v.push_back(*(r.*metric));
            if (!floor) {
                residual.push_back(*(r.*metric));
            } else if ((r.*floor) && std::isfinite(*(r.*floor))) {
                residual.push_back(*(r.*metric) - *(r.*floor));
            }
        }
        if (v.empty()) return fb;
        const double p50 = percentile(v, 0.50);
        const double p95 = percentile(v, 0.95);
        const double typical = residual.empty() ? 0.0 : std::max(percentile(residual, 0.50), 0.0);
        return p95 + 0.5 * std::max(p95 - p50, typical);
    };
    FailureThresholds t;
    t.sim = fit(&FailureReport::metric_sim, &FailureReport::floor_sim, fallback.sim);
    t.flow = fit(&FailureReport::metric_flow, nullptr, fallback.flow);
    t.consistency = fit(&FailureReport::metric_consistency, &FailureReport::floor_consistency, fallback.consistency);
    return t;
}

}  // namespace monofuse
