#include "monofuse/pose_graph.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <optional>

#include "monofuse/error.h"
#include "monofuse/losses.h"

namespace monofuse {

namespace {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec12 = Eigen::Matrix<double, 12, 1>;

struct PairTerm {
    double value = 0.0;
    Vec12 gradient = Vec12::Zero();
    bool has_consistency = false;
    bool has_flow = false;
};

ConsistencyInputs consistency_inputs(const PoseGraphProblem& p, size_t a, size_t b, const std::vector<Pose>& poses) {
    return ConsistencyInputs{p.depths[a], p.depths[b], poses[a], poses[b], p.camera, p.config.epsilon};
}

SparseFlowInputs flow_inputs(const PoseGraphProblem& p, size_t a, size_t b, const std::vector<Pose>& poses) {
    return SparseFlowInputs{p.depths[a].mean, p.depths[a].valid, poses[a], poses[b], p.matches, p.ids[a], p.ids[b],
                            p.camera};
}

PairTerm pair_term(const PoseGraphProblem& p, size_t a, size_t b, const std::vector<Pose>& poses, bool gradient) {
    PairTerm t;
    const auto& c = p.config;
    try {
        const LossInputs in = consistency_inputs(p, a, b, poses);
        if (gradient) {
            const auto e = evaluate_with_gradient(in, GradientTarget::PoseParameters);
            t.value += c.w_consistency * e.value;
            t.gradient += c.w_consistency * e.gradient;
        } else {
            t.value += c.w_consistency * evaluate_loss(in);
        }
        t.has_consistency = true;
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::NoOverlap) throw;
    }
    try {
        const LossInputs in = flow_inputs(p, a, b, poses);
        if (gradient) {
            const auto e = evaluate_with_gradient(in, GradientTarget::PoseParameters);
            t.value += c.w_flow * e.value;
            t.gradient += c.w_flow * e.gradient;
        } else {
            t.value += c.w_flow * evaluate_loss(in);
        }
        t.has_flow = true;
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::NoMatches) throw;
    }
    return t;
}

std::vector<PairTerm> all_terms(const PoseGraphProblem& p, const std::vector<std::pair<size_t, size_t>>& pairs,
                                const std::vector<Pose>& poses, bool gradient) {
    std::vector<PairTerm> terms(pairs.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < long(pairs.size()); ++i) {
        terms[size_t(i)] = pair_term(p, pairs[size_t(i)].first, pairs[size_t(i)].second, poses, gradient);
    }
    return terms;
}

ObjectiveBreakdown summarize(const std::vector<PairTerm>& terms) {
    ObjectiveBreakdown out;
    out.pairs = terms.size();
    for (const auto& t : terms) {
        out.value += t.value;
        if (!t.has_consistency) ++out.pairs_without_overlap;
        if (!t.has_flow) ++out.pairs_without_matches;
        if (!t.has_consistency && !t.has_flow) ++out.degenerate_pairs;
    }
    if (out.degenerate_pairs == out.pairs) {
        throw Error(ErrorKind::UnconstrainedProblem, "no frame pair has overlap or matches");
    }
    return out;
}

struct PairNormal {
    PoseNormalEquations ne;
    bool has_consistency = false;
    bool has_flow = false;
};

PairNormal pair_normal(const PoseGraphProblem& p, size_t a, size_t b, const std::vector<Pose>& poses) {
    PairNormal t;
    const auto& c = p.config;
    const auto add = [&](const PoseNormalEquations& e, double w) {
        t.ne.value += w * e.value;
        t.ne.gradient += w * e.gradient;
        t.ne.gauss_newton += w * e.gauss_newton;
    };
    try {
        add(consistency_pose_normal_equations(consistency_inputs(p, a, b, poses)), c.w_consistency);
        t.has_consistency = true;
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::NoOverlap) throw;
    }
    try {
        add(sparse_flow_pose_normal_equations(flow_inputs(p, a, b, poses)), c.w_flow);
        t.has_flow = true;
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::NoMatches) throw;
    }
    return t;
}

struct NormalEquations {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd gauss_newton;
};

NormalEquations normal_equations(const PoseGraphProblem& p, const std::vector<Pose>& poses) {
    const auto pairs = p.pairs();
    std::vector<PairNormal> terms(pairs.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < long(pairs.size()); ++i) {
        terms[size_t(i)] = pair_normal(p, pairs[size_t(i)].first, pairs[size_t(i)].second, poses);
    }
    const auto n = Eigen::Index(6 * poses.size());
    NormalEquations out{0.0, Eigen::VectorXd::Zero(n), Eigen::MatrixXd::Zero(n, n)};
    size_t degenerate = 0;
    for (size_t i = 0; i < pairs.size(); ++i) {
        const auto& t = terms[i];
        if (!t.has_consistency && !t.has_flow) ++degenerate;
        const Eigen::Index ia = Eigen::Index(6 * pairs[i].first), ib = Eigen::Index(6 * pairs[i].second);
        out.value += t.ne.value;
        out.gradient.segment<6>(ia) += t.ne.gradient.head<6>();
        out.gradient.segment<6>(ib) += t.ne.gradient.tail<6>();
        const auto& h = t.ne.gauss_newton;
        out.gauss_newton.block<6, 6>(ia, ia) += h.topLeftCorner<6, 6>();
        out.gauss_newton.block<6, 6>(ia, ib) += h.topRightCorner<6, 6>();
        out.gauss_newton.block<6, 6>(ib, ia) += h.bottomLeftCorner<6, 6>();
        out.gauss_newton.block<6, 6>(ib, ib) += h.bottomRightCorner<6, 6>();
    }
    if (pairs.empty() || degenerate == pairs.size()) {
        throw Error(ErrorKind::UnconstrainedProblem, "no frame pair has overlap or matches");
    }
    out.gradient.head<6>().setZero();
    return out;
}

std::vector<Pose> step_poses(const std::vector<Pose>& poses, const Eigen::VectorXd& step) {
    std::vector<Pose> out = poses;
    for (size_t i = 1; i < poses.size(); ++i) out[i] = apply_increment(poses[i], step.segment<6>(Eigen::Index(6 * i)));
    return out;
}

}  // namespace

void PoseGraphConfig::validate() const {
    if (intervals.empty()) throw Error(ErrorKind::Validation, "at least one pair interval is required");
    for (int d : intervals)
        if (d < 1) throw Error(ErrorKind::Validation, "pair intervals must be positive");
    if (!(w_consistency >= 0.0 && w_flow >= 0.0)) throw Error(ErrorKind::Validation, "weights must be nonnegative");
    if (!(epsilon > 0.0)) throw Error(ErrorKind::Validation, "epsilon must be positive");
}

PoseGraphProblem PoseGraphProblem::from_bundle(const Bundle& bundle, const PoseGraphConfig& config) {
    PoseGraphProblem p;
    p.camera = bundle.camera;
    for (const auto& f : bundle.frames) {
        p.ids.push_back(f.id);
        p.depths.push_back(f.depth);
        p.initial_poses.push_back(f.pose);
    }
    p.matches = bundle.matches;
    p.config = config;
    p.validate();
    return p;
}

void PoseGraphProblem::validate() const {
    config.validate();
    camera.validate();
    if (ids.size() < 2) throw Error(ErrorKind::Validation, "pose graph needs at least 2 frames");
    if (depths.size() != ids.size() || initial_poses.size() != ids.size()) {
        throw Error(ErrorKind::Dimension, "frame, depth and pose counts differ");
    }
    for (const auto& d : depths) d.require_shape(camera);
}

std::vector<std::pair<size_t, size_t>> PoseGraphProblem::pairs() const {
    std::map<int, size_t> index;
    for (size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;
    std::vector<std::pair<size_t, size_t>> out;
    std::vector<int> intervals_sorted = config.intervals;
    std::sort(intervals_sorted.begin(), intervals_sorted.end());
    intervals_sorted.erase(std::unique(intervals_sorted.begin(), intervals_sorted.end()), intervals_sorted.end());
    for (int d : intervals_sorted)
        for (size_t a = 0; a < ids.size(); ++a) {
            const auto it = index.find(ids[a] + d);
            if (it != index.end()) out.emplace_back(a, it->second);
        }
    return out;
}

ObjectiveBreakdown evaluate_objective(const PoseGraphProblem& problem, const std::vector<Pose>& poses) {
    if (poses.size() != problem.ids.size()) throw Error(ErrorKind::Dimension, "one pose per frame is required");
    const auto pairs = problem.pairs();
    if (pairs.empty()) throw Error(ErrorKind::UnconstrainedProblem, "no frame pairs at the configured intervals");
    return summarize(all_terms(problem, pairs, poses, false));
}

double objective(const PoseGraphProblem& problem, const std::vector<Pose>& poses) {
    return evaluate_objective(problem, poses).value;
}

ObjectiveGradient objective_gradient(const PoseGraphProblem& problem, const std::vector<Pose>& poses,
                                     GradientMode mode, double fd_step) {
    if (poses.size() != problem.ids.size()) throw Error(ErrorKind::Dimension, "one pose per frame is required");
    const auto pairs = problem.pairs();
    if (pairs.empty()) throw Error(ErrorKind::UnconstrainedProblem, "no frame pairs at the configured intervals");
    ObjectiveGradient out;
    out.gradient = Eigen::VectorXd::Zero(Eigen::Index(6 * poses.size()));

    if (mode == GradientMode::Analytic) {
        const auto terms = all_terms(problem, pairs, poses, true);
        out.value = summarize(terms).value;
        for (size_t i = 0; i < pairs.size(); ++i) {
            const auto [a, b] = pairs[i];
            out.gradient.segment<6>(Eigen::Index(6 * a)) += terms[i].gradient.head<6>();
            out.gradient.segment<6>(Eigen::Index(6 * b)) += terms[i].gradient.tail<6>();
        }
    } else {
        if (!(fd_step > 0.0)) throw Error(ErrorKind::Validation, "fd_step must be positive");
        out.value = summarize(all_terms(problem, pairs, poses, false)).value;
        // Only the pairs touching a frame change when that frame moves.
        std::vector<std::vector<size_t>> touching(poses.size());
        for (size_t i = 0; i < pairs.size(); ++i) {
            touching[pairs[i].first].push_back(i);
            touching[pairs[i].second].push_back(i);
        }
#pragma omp parallel for schedule(dynamic)
        for (long f = 1; f < long(poses.size()); ++f) {
            std::vector<Pose> shifted = poses;
            for (int axis = 0; axis < 6; ++axis) {
                double side[2];
                for (int s = 0; s < 2; ++s) {
                    Vec6 twist = Vec6::Zero();
                    twist[axis] = s == 0 ? fd_step : -fd_step;
                    shifted[size_t(f)] = apply_increment(poses[size_t(f)], twist);
                    side[s] = 0.0;
                    for (size_t i : touching[size_t(f)])
                        side[s] += pair_term(problem, pairs[i].first, pairs[i].second, shifted, false).value;
                }
                out.gradient[Eigen::Index(6 * f + axis)] = (side[0] - side[1]) / (2.0 * fd_step);
            }
        }
    }
    out.gradient.head<6>().setZero();
    return out;
}

void OptimizerSettings::validate() const {
    if (max_iterations < 1) throw Error(ErrorKind::Validation, "max_iterations must be at least 1");
    if (!(tolerance > 0.0)) throw Error(ErrorKind::Validation, "tolerance must be positive");
    if (patience < 1) throw Error(ErrorKind::Validation, "patience must be at least 1");
    if (!(initial_step > 0.0)) throw Error(ErrorKind::Validation, "initial_step must be positive");
    if (memory < 0) throw Error(ErrorKind::Validation, "memory must be nonnegative");
    if (!(backtrack > 0.0 && backtrack < 1.0)) throw Error(ErrorKind::Validation, "backtrack must lie in (0, 1)");
    if (max_backtracks < 1) throw Error(ErrorKind::Validation, "max_backtracks must be at least 1");
    if (!(armijo > 0.0 && armijo < 1.0)) throw Error(ErrorKind::Validation, "armijo must lie in (0, 1)");
    if (!(rms_decay >= 0.0 && rms_decay < 1.0)) throw Error(ErrorKind::Validation, "rms_decay must lie in [0, 1)");
    if (!(fd_step > 0.0)) throw Error(ErrorKind::Validation, "fd_step must be positive");
    if (!(initial_damping > 0.0 && max_damping > initial_damping)) {
        throw Error(ErrorKind::Validation, "damping must satisfy 0 < initial_damping < max_damping");
    }
    if (!(damping_increase > 1.0)) throw Error(ErrorKind::Validation, "damping_increase must exceed 1");
    if (!(damping_decrease > 0.0 && damping_decrease < 1.0)) {
        throw Error(ErrorKind::Validation, "damping_decrease must lie in (0, 1)");
    }
}

namespace {

OptimizationResult optimize_lbfgs(const PoseGraphProblem& problem, const OptimizerSettings& settings);
OptimizationResult optimize_levenberg_marquardt(const PoseGraphProblem& problem, const OptimizerSettings& settings);

}  // namespace

OptimizationResult optimize(const PoseGraphProblem& problem, const OptimizerSettings& settings) {
    problem.validate();
    settings.validate();
    return settings.method == OptimizerMethod::Lbfgs ? optimize_lbfgs(problem, settings)
                                                     : optimize_levenberg_marquardt(problem, settings);
}

namespace {

OptimizationResult optimize_levenberg_marquardt(const PoseGraphProblem& problem, const OptimizerSettings& settings) {
    OptimizationResult result;
    result.poses = problem.initial_poses;
    const auto initial = evaluate_objective(problem, problem.initial_poses);
    result.degenerate_pairs = initial.degenerate_pairs;
    result.initial_objective = result.final_objective = initial.value;
    if (!std::isfinite(initial.value)) {
        result.diagnostic = "non-finite initial objective";
        return result;
    }
    const auto abort = [&](const std::string& why) {
        result.poses = problem.initial_poses;
        result.final_objective = initial.value;
        result.refined = false;
        result.diagnostic = why;
        return result;
    };
    const auto linearize = [&](const std::vector<Pose>& at) {
        auto ne = normal_equations(problem, at);
        if (settings.gradient == GradientMode::FiniteDifference) {
            ne.gradient = objective_gradient(problem, at, settings.gradient, settings.fd_step).gradient;
        }
        return ne;
    };

    std::vector<Pose> poses = problem.initial_poses;
    auto lin = linearize(poses);
    if (!lin.gradient.allFinite() || !lin.gauss_newton.allFinite()) {
        return abort("non-finite gradient at the initial poses");
    }
    double f = initial.value;
    result.history.push_back(f);
    const Eigen::Index free = lin.gradient.size() - 6;
    double damping = settings.initial_damping;
    int quiet = 0;

    for (int iter = 0; iter < settings.max_iterations; ++iter) {
        result.iterations = iter + 1;
        // The anchor frame is excluded from the solve.
        Eigen::MatrixXd h = lin.gauss_newton.bottomRightCorner(free, free);
        const Eigen::VectorXd g = lin.gradient.tail(free);
        const double floor = 1e-9 * std::max(h.diagonal().maxCoeff(), 1e-300);
        for (Eigen::Index i = 0; i < free; ++i) h(i, i) += damping * std::max(h(i, i), floor) + floor;
        const Eigen::VectorXd delta = h.ldlt().solve(-g);
        if (!delta.allFinite() || !(g.dot(delta) < 0.0)) {
            damping *= settings.damping_increase;
            if (damping > settings.max_damping) {
                result.converged = true;
                break;
            }
            continue;
        }
        Eigen::VectorXd step = Eigen::VectorXd::Zero(lin.gradient.size());
        step.tail(free) = delta;
        auto trial_poses = step_poses(poses, step);
        double trial = evaluate_objective(problem, trial_poses).value;
        int expand = 0;
        if (std::isfinite(trial) && trial <= f) {
            // Noisy depth inflates the Gauss-Newton curvature, so accepted
            // steps are lengthened while the objective keeps falling.
            for (; expand < settings.max_expansions; ++expand) {
                auto longer = step_poses(poses, double(2 << expand) * step);
                const double value = evaluate_objective(problem, longer).value;
                if (!(std::isfinite(value) && value < trial)) break;
                trial_poses = std::move(longer);
                trial = value;
            }
        }
        if (!(std::isfinite(trial) && trial <= f)) {
            // A rejected step whose model gain is already negligible means
            // the remaining decrease is below the objective's roughness.
            const Eigen::VectorXd hd = lin.gauss_newton.bottomRightCorner(free, free) * delta;
            const double predicted = -(g.dot(delta) + 0.5 * delta.dot(hd));
            quiet = predicted < 10.0 * settings.tolerance * std::max(std::abs(f), 1.0) ? quiet + 1 : 0;
            if (quiet >= settings.patience) {
                result.converged = true;
                break;
            }
            damping *= settings.damping_increase;
            if (damping > settings.max_damping) {
                result.converged = true;
                break;
            }
            continue;
        }
        const double decrease = (f - trial) / std::max(std::abs(f), 1.0);
        poses = std::move(trial_poses);
        f = trial;
        result.history.push_back(f);
        damping = std::max(damping * settings.damping_decrease, 1e-12);
        quiet = decrease < settings.tolerance ? quiet + 1 : 0;
        if (quiet >= settings.patience) {
            result.converged = true;
            break;
        }
        lin = linearize(poses);
        if (!lin.gradient.allFinite() || !lin.gauss_newton.allFinite()) {
            return abort("non-finite gradient at iteration " + std::to_string(iter));
        }
    }

    result.poses = std::move(poses);
    result.final_objective = f;
    result.refined = true;
    return result;
}

OptimizationResult optimize_lbfgs(const PoseGraphProblem& problem, const OptimizerSettings& settings) {
    OptimizationResult result;
    result.poses = problem.initial_poses;

    const auto initial = evaluate_objective(problem, problem.initial_poses);
    result.degenerate_pairs = initial.degenerate_pairs;
    result.initial_objective = result.final_objective = initial.value;
    if (!std::isfinite(initial.value)) {
        result.diagnostic = "non-finite initial objective";
        return result;
    }

    const auto abort = [&](const std::string& why) {
        result.poses = problem.initial_poses;
        result.final_objective = initial.value;
        result.refined = false;
        result.diagnostic = why;
        return result;
    };

    std::vector<Pose> poses = problem.initial_poses;
    auto current = objective_gradient(problem, poses, settings.gradient, settings.fd_step);
    if (!current.gradient.allFinite()) return abort("non-finite gradient at the initial poses");
    double f = initial.value;
    result.history.push_back(f);
    Eigen::VectorXd rms = current.gradient.cwiseAbs2();
    std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> memory;  // (s, y)
    int quiet = 0;

    for (int iter = 0; iter < settings.max_iterations; ++iter) {
        const Eigen::VectorXd& g = current.gradient;
        result.iterations = iter + 1;
        rms = settings.rms_decay * rms + (1.0 - settings.rms_decay) * g.cwiseAbs2();
        Eigen::VectorXd scale(g.size());
        for (Eigen::Index i = 0; i < g.size(); ++i) scale[i] = rms[i] > 0.0 ? 1.0 / std::sqrt(rms[i]) : 0.0;

        // Two-loop recursion with the RMS diagonal as initial inverse Hessian.
        Eigen::VectorXd direction = g;
        std::vector<double> rho(memory.size()), a(memory.size());
        for (size_t k = memory.size(); k-- > 0;) {
            const auto& [sk, yk] = memory[k];
            rho[k] = 1.0 / yk.dot(sk);
            a[k] = rho[k] * sk.dot(direction);
            direction -= a[k] * yk;
        }
        double gamma = settings.initial_step;
        if (!memory.empty()) {
            const auto& [sk, yk] = memory.back();
            gamma = sk.dot(yk) / yk.dot(scale.cwiseProduct(yk));
        }
        direction = gamma * scale.cwiseProduct(direction);
        for (size_t k = 0; k < memory.size(); ++k) {
            const auto& [sk, yk] = memory[k];
            const double b = rho[k] * yk.dot(direction);
            direction += (a[k] - b) * sk;
        }
        direction = -direction;
        double slope = g.dot(direction);
        if (!(slope < 0.0) || !direction.allFinite()) {
            memory.clear();
            direction = -settings.initial_step * scale.cwiseProduct(g);
            slope = g.dot(direction);
            if (!(slope < 0.0)) {
                result.converged = true;
                break;
            }
        }

        // The full step is usually accepted, so its gradient is computed
        // together with the value; backtracking evaluates values only.
        bool accepted = false;
        double alpha = 1.0;
        std::vector<Pose> trial_poses;
        double trial = 0.0;
        std::optional<ObjectiveGradient> next;
        for (int b = 0; b < settings.max_backtracks; ++b) {
            trial_poses = step_poses(poses, alpha * direction);
            if (b == 0) {
                next = objective_gradient(problem, trial_poses, settings.gradient, settings.fd_step);
                trial = next->value;
            } else {
                next.reset();
                trial = evaluate_objective(problem, trial_poses).value;
            }
            if (std::isfinite(trial) && trial <= f + settings.armijo * alpha * slope) {
                accepted = true;
                break;
            }
            alpha *= settings.backtrack;
        }
        if (!accepted) {
            if (!memory.empty()) {
                // Retry from a plain scaled gradient before giving up.
                memory.clear();
                continue;
            }
            result.converged = true;
            break;
        }

        const double decrease = (f - trial) / std::max(std::abs(f), 1.0);
        poses = std::move(trial_poses);
        f = trial;
        result.history.push_back(f);
        if (!next) next = objective_gradient(problem, poses, settings.gradient, settings.fd_step);
        if (!next->gradient.allFinite()) return abort("non-finite gradient at iteration " + std::to_string(iter));
        const Eigen::VectorXd step = alpha * direction;
        const Eigen::VectorXd dy = next->gradient - g;
        if (step.dot(dy) > 1e-12 * step.norm() * dy.norm()) {
            memory.emplace_back(step, dy);
            if (int(memory.size()) > settings.memory) memory.pop_front();
        }
        current = std::move(*next);
        quiet = decrease < settings.tolerance ? quiet + 1 : 0;
        if (quiet >= settings.patience) {
            result.converged = true;
            break;
        }
    }

    result.poses = std::move(poses);
    result.final_objective = f;
    result.refined = true;
    return result;
}

}  // namespace

nlohmann::json to_json(const OptimizationResult& r) {
    return {{"refined", r.refined},
            {"converged", r.converged},
            {"iterations", r.iterations},
            {"initial_objective", r.initial_objective},
            {"final_objective", r.final_objective},
            {"history", r.history},
            {"degenerate_pairs", r.degenerate_pairs},
            {"diagnostic", r.diagnostic}};
}

}  // namespace monofuse
