#include "monofuse/losses.h"

#include <cmath>
#include <limits>

#include "warp_kernels.h"

namespace monofuse {

namespace {

using detail::IncrementedPose;
using detail::scalar;

constexpr int kPoseSlots = 12;

struct OrientedMatch {
    Vec2 pixel;     // in frame j
    Vec2 observed;  // normalized flow j -> k
};

std::vector<OrientedMatch> orient_matches(const FeatureMatchSet& matches, int frame_j, int frame_k,
                                          const CameraIntrinsics& camera) {
    std::vector<OrientedMatch> out;
    const Vec2 norm(camera.width, camera.height);
    for (const auto& m : matches) {
        if (m.frame_a == frame_j && m.frame_b == frame_k) {
            out.push_back({m.pixel_a, (m.pixel_b - m.pixel_a).cwiseQuotient(norm)});
        } else if (m.frame_a == frame_k && m.frame_b == frame_j) {
            out.push_back({m.pixel_b, (m.pixel_a - m.pixel_b).cwiseQuotient(norm)});
        }
    }
    return out;
}

constexpr int kCornerDu[4] = {0, 1, 0, 1};
constexpr int kCornerDv[4] = {0, 0, 1, 1};

/// Flow residual (model minus observed) of one match. `depth(u, v, corner)`
/// supplies depths at the four corners of the bilinear cell around the match
/// pixel.
template <typename T, typename DepthFn>
std::optional<Eigen::Matrix<T, 2, 1>> match_flow_residual(const OrientedMatch& match, const Mask& valid,
                                                          const IncrementedPose<T>& pj, const IncrementedPose<T>& pk,
                                                          const CameraIntrinsics& camera, DepthFn&& depth,
                                                          BilinearCell* cell_out) {
    const auto cell = bilinear_cell(camera.width, camera.height, match.pixel.x(), match.pixel.y());
    if (!cell) return std::nullopt;
    Eigen::Matrix<T, 2, 1> flow = Eigen::Matrix<T, 2, 1>::Zero();
    const double weights[4] = {(1 - cell->fu) * (1 - cell->fv), cell->fu * (1 - cell->fv),
                               (1 - cell->fu) * cell->fv, cell->fu * cell->fv};
    for (int c = 0; c < 4; ++c) {
        const int u = cell->u0 + kCornerDu[c];
        const int v = cell->v0 + kCornerDv[c];
        if (!valid(u, v)) return std::nullopt;
        const auto f = detail::flow_pixel<T>(u, v, depth(u, v, c), pj, pk, camera);
        if (!f) return std::nullopt;
        flow += *f * T(weights[c]);
    }
    if (cell_out) *cell_out = *cell;
    return Eigen::Matrix<T, 2, 1>(flow - match.observed.template cast<T>());
}

/// Squared flow residual of one match.
template <typename T, typename DepthFn>
std::optional<T> match_residual(const OrientedMatch& match, const Mask& valid,
                                const IncrementedPose<T>& pj, const IncrementedPose<T>& pk,
                                const CameraIntrinsics& camera, DepthFn&& depth,
                                BilinearCell* cell_out) {
    const auto r = match_flow_residual<T>(match, valid, pj, pk, camera, depth, cell_out);
    if (!r) return std::nullopt;
    return r->x() * r->x() + r->y() * r->y();
}

struct FlowAccumulation {
    double value = 0.0;
    size_t count = 0;
};

FlowAccumulation flow_value(const SparseFlowInputs& in) {
    const auto oriented = orient_matches(in.matches, in.frame_j, in.frame_k, in.camera);
    const IncrementedPose<double> pj(in.pose_j);
    const IncrementedPose<double> pk(in.pose_k);
    auto depth = [&](int u, int v, int) { return in.depth_j(u, v); };
    FlowAccumulation acc;
    for (const auto& m : oriented) {
        const auto r = match_residual<double>(m, in.valid_j, pj, pk, in.camera, depth, nullptr);
        if (!r) continue;
        acc.value += *r;
        ++acc.count;
    }
    return acc;
}

void require_flow_inputs(const SparseFlowInputs& in) {
    if (!in.depth_j.same_shape(in.camera.width, in.camera.height) || !in.valid_j.same_shape(in.depth_j)) {
        throw Error(ErrorKind::Dimension, "sparse_flow_loss depth raster does not match the camera");
    }
}

template <int kDepthSlots, bool kPose>
LossEvaluation flow_gradient(const SparseFlowInputs& in) {
    constexpr int N = kDepthSlots + (kPose ? kPoseSlots : 0);
    using T = ceres::Jet<double, N>;
    require_flow_inputs(in);
    const auto oriented = orient_matches(in.matches, in.frame_j, in.frame_k, in.camera);
    IncrementedPose<T> pj(in.pose_j);
    IncrementedPose<T> pk(in.pose_k);
    if constexpr (kPose) {
        pj.seed(kDepthSlots);
        pk.seed(kDepthSlots + 6);
    }
    auto depth = [&](int u, int v, int corner) {
        if constexpr (kDepthSlots > 0) return T(in.depth_j(u, v), corner);
        else return T(in.depth_j(u, v));
    };
    LossEvaluation out;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(kPose ? kPoseSlots : in.depth_j.size());
    double value = 0.0;
    size_t count = 0;
    for (const auto& m : oriented) {
        BilinearCell cell{};
        const auto r = match_residual<T>(m, in.valid_j, pj, pk, in.camera, depth, &cell);
        if (!r) continue;
        value += r->a;
        ++count;
        if constexpr (kDepthSlots > 0) {
            for (int c = 0; c < 4; ++c) {
                const size_t idx = size_t(cell.v0 + kCornerDv[c]) * in.depth_j.width + size_t(cell.u0 + kCornerDu[c]);
                grad[idx] += r->v[c];
            }
        } else {
            grad += r->v.template tail<kPoseSlots>();
        }
    }
    if (count == 0) throw Error(ErrorKind::NoMatches, "no usable matches for the frame pair");
    out.value = value / count;
    out.gradient = grad / double(count);
    return out;
}

// Consistency ---------------------------------------------------------------

struct DirectionGradient {
    double value = 0.0;
    size_t count = 0;
    Eigen::VectorXd target_depth;
    Eigen::VectorXd source_depth;
    Eigen::Matrix<double, 6, 1> target_pose = Eigen::Matrix<double, 6, 1>::Zero();
    Eigen::Matrix<double, 6, 1> source_pose = Eigen::Matrix<double, 6, 1>::Zero();
};

/// Derivatives of the k -> j direction (target j, source k). Unnormalized sums.
template <int kDepthSlots, bool kPose>
DirectionGradient consistency_direction(const DepthMap& target, const DepthMap& source,
                                        const Pose& pose_target, const Pose& pose_source,
                                        const CameraIntrinsics& camera, double eps) {
    constexpr int N = kDepthSlots + (kPose ? kPoseSlots : 0);
    using T = ceres::Jet<double, N>;
    IncrementedPose<T> pt(pose_target);
    IncrementedPose<T> ps(pose_source);
    if constexpr (kPose) {
        pt.seed(kDepthSlots);
        ps.seed(kDepthSlots + 6);
    }
    auto depth_fn = [&](int u, int v, int corner) {
        if constexpr (kDepthSlots > 0) return T(source.mean(u, v), 1 + corner);
        else return T(source.mean(u, v));
    };
    auto valid_fn = [&](int u, int v) { return source.valid(u, v) != 0; };

    DirectionGradient out;
    if constexpr (kDepthSlots > 0) {
        out.target_depth = Eigen::VectorXd::Zero(target.mean.size());
        out.source_depth = Eigen::VectorXd::Zero(source.mean.size());
    }
    for (int v = 0; v < camera.height; ++v) {
        for (int u = 0; u < camera.width; ++u) {
            if (!target.valid(u, v)) continue;
            T z;
            if constexpr (kDepthSlots > 0) z = T(target.mean(u, v), 0);
            else z = T(target.mean(u, v));
            BilinearCell cell{};
            const auto warped = detail::warp_pixel<T>(u, v, z, pt, ps, camera, depth_fn, valid_fn, &cell);
            if (!warped) continue;
            const T term = detail::likelihood_term<T>(*warped, z, target.std(u, v), eps);
            out.value += term.a;
            ++out.count;
            if constexpr (kDepthSlots > 0) {
                out.target_depth[size_t(v) * camera.width + u] += term.v[0];
                for (int c = 0; c < 4; ++c) {
                    const size_t idx = size_t(cell.v0 + kCornerDv[c]) * camera.width + size_t(cell.u0 + kCornerDu[c]);
                    out.source_depth[idx] += term.v[1 + c];
                }
            }
            if constexpr (kPose) {
                out.target_pose += term.v.template segment<6>(kDepthSlots);
                out.source_pose += term.v.template segment<6>(kDepthSlots + 6);
            }
        }
    }
    return out;
}

/// Pose derivatives of the k -> j direction by explicit chain rule; much
/// cheaper than 12-slot jets. The source twist is differentiated directly and
/// the target twist follows from invariance under a common rigid motion:
/// g_v,t = -g_v,s and g_ω,t = -g_ω,s + (t_t - t_s) × g_v,s.
DirectionGradient consistency_direction_pose(const DepthMap& target, const DepthMap& source,
                                             const Pose& pose_target, const Pose& pose_source,
                                             const CameraIntrinsics& camera, double eps,
                                             Eigen::Matrix<double, 12, 12>* gauss_newton = nullptr) {
    const Mat3 rt = pose_target.rotation();
    const Mat3 rs = pose_source.rotation();
    const Vec3& tt = pose_target.translation();
    const Vec3& ts = pose_source.translation();
    const Vec3 c = rt.col(2);
    DirectionGradient out;
    Vec3 g_omega = Vec3::Zero();
    Vec3 g_v = Vec3::Zero();
    for (int v = 0; v < camera.height; ++v) {
        for (int u = 0; u < camera.width; ++u) {
            if (!target.valid(u, v)) continue;
            const double z = target.mean(u, v);
            const Vec3 x = detail::lift<double>(u, v, z, camera);
            const Vec3 y = rt * x + tt - ts;
            const Vec3 p = rs.transpose() * y;
            if (!(p.z() > 0.0)) continue;
            const double qu = camera.fx * p.x() / p.z() + camera.cx;
            const double qv = camera.fy * p.y() / p.z() + camera.cy;
            const auto cell = bilinear_cell(camera.width, camera.height, qu, qv);
            if (!cell) continue;
            const int u0 = cell->u0;
            const int v0 = cell->v0;
            if (!source.valid(u0, v0) || !source.valid(u0 + 1, v0) || !source.valid(u0, v0 + 1) ||
                !source.valid(u0 + 1, v0 + 1)) {
                continue;
            }
            const double d0 = source.mean(u0, v0), d1 = source.mean(u0 + 1, v0);
            const double d2 = source.mean(u0, v0 + 1), d3 = source.mean(u0 + 1, v0 + 1);
            const double fu = qu - double(u0);
            const double fv = qv - double(v0);
            const double s = (1 - fu) * (1 - fv) * d0 + fu * (1 - fv) * d1 + (1 - fu) * fv * d2 + fu * fv * d3;
            if (!(s > 0.0)) continue;
            const Vec3 lifted((qu - camera.cx) / camera.fx * s, (qv - camera.cy) / camera.fy * s, s);
            const Vec3 world_back = rs * lifted + ts;
            const double warped = c.dot(world_back - tt);
            if (!(warped > 0.0)) continue;

            const double std = target.std(u, v);
            const double r = warped - z;
            out.value += std::log(std + eps) + r * r / (2.0 * std * std + eps);
            ++out.count;
            const double dl = 2.0 * r / (2.0 * std * std + eps);

            // ∂s/∂q and ∂q/∂p.
            const double ds_du = (1 - fv) * (d1 - d0) + fv * (d3 - d2);
            const double ds_dv = (1 - fu) * (d2 - d0) + fu * (d3 - d1);
            const double iz = 1.0 / p.z();
            const Vec3 ds_dp(camera.fx * iz * ds_du, camera.fy * iz * ds_dv,
                             -iz * iz * (camera.fx * p.x() * ds_du + camera.fy * p.y() * ds_dv));
            const Vec3 m = p * iz;
            Mat3 dm_dp = Mat3::Identity();
            dm_dp.col(2) -= m;
            dm_dp *= iz;
            const Mat3 dl_dp = m * ds_dp.transpose() + s * dm_dp;

            // Derivative of the warped depth; the loss gradient scales it by dl.
            const Vec3 rotated_lifted = rs * lifted;
            const Vec3 p_world = rs * (dl_dp.transpose() * (rs.transpose() * c));
            const Vec3 j_omega = rotated_lifted.cross(c) + p_world.cross(y);
            const Vec3 j_v = c - p_world;
            g_omega += dl * j_omega;
            g_v += dl * j_v;
            if (gauss_newton) {
                Eigen::Matrix<double, 12, 1> jac;
                jac << -j_omega + (tt - ts).cross(j_v), -j_v, j_omega, j_v;
                gauss_newton->selfadjointView<Eigen::Upper>().rankUpdate(jac, 2.0 / (2.0 * std * std + eps));
            }
        }
    }
    out.source_pose << g_omega, g_v;
    out.target_pose << -g_omega + (tt - ts).cross(g_v), -g_v;
    return out;
}

void require_consistency_inputs(const ConsistencyInputs& in) {
    in.depth_j.require_shape(in.camera);
    in.depth_k.require_shape(in.camera);
}

double consistency_value(const ConsistencyInputs& in) {
    require_consistency_inputs(in);
    const auto kj = warp_depth(in.depth_k, in.depth_j, in.pose_k, in.pose_j, in.camera);
    const auto jk = warp_depth(in.depth_j, in.depth_k, in.pose_j, in.pose_k, in.camera);
    const auto a = log_likelihood_kernel(kj.overlap, kj.warped_depth, in.depth_j.mean, in.depth_j.std, in.eps);
    const auto b = log_likelihood_kernel(jk.overlap, jk.warped_depth, in.depth_k.mean, in.depth_k.std, in.eps);
    if (a.count == 0 && b.count == 0) throw Error(ErrorKind::NoOverlap, "frames do not overlap");
    if (a.count == 0) return b.value;
    if (b.count == 0) return a.value;
    return 0.5 * (a.value + b.value);
}

template <int kDepthSlots, bool kPose>
LossEvaluation consistency_gradient(const ConsistencyInputs& in) {
    require_consistency_inputs(in);
    const auto direction = [&](const DepthMap& t, const DepthMap& s, const Pose& pt, const Pose& ps) {
        if constexpr (kPose && kDepthSlots == 0) return consistency_direction_pose(t, s, pt, ps, in.camera, in.eps);
        else return consistency_direction<kDepthSlots, kPose>(t, s, pt, ps, in.camera, in.eps);
    };
    const auto kj = direction(in.depth_j, in.depth_k, in.pose_j, in.pose_k);
    const auto jk = direction(in.depth_k, in.depth_j, in.pose_k, in.pose_j);
    if (kj.count == 0 && jk.count == 0) throw Error(ErrorKind::NoOverlap, "frames do not overlap");
    const double wkj = kj.count == 0 ? 0.0 : (jk.count == 0 ? 1.0 : 0.5) / double(kj.count);
    const double wjk = jk.count == 0 ? 0.0 : (kj.count == 0 ? 1.0 : 0.5) / double(jk.count);
    LossEvaluation out;
    if (kj.count == 0) out.value = jk.value / jk.count;
    else if (jk.count == 0) out.value = kj.value / kj.count;
    else out.value = 0.5 * (kj.value / kj.count + jk.value / jk.count);
    if constexpr (kDepthSlots > 0) {
        const Eigen::Index n = in.depth_j.mean.size();
        out.gradient = Eigen::VectorXd::Zero(2 * n);
        out.gradient.head(n) = wkj * kj.target_depth + wjk * jk.source_depth;
        out.gradient.tail(n) = wkj * kj.source_depth + wjk * jk.target_depth;
    } else {
        out.gradient = Eigen::VectorXd::Zero(kPoseSlots);
        out.gradient.head<6>() = wkj * kj.target_pose + wjk * jk.source_pose;
        out.gradient.tail<6>() = wkj * kj.source_pose + wjk * jk.target_pose;
    }
    return out;
}

/// Gradient of the kernel with respect to `mean` for a fixed target.
Eigen::VectorXd kernel_mean_gradient(const Mask& mask, const Image<double>& target,
                                     const Image<double>& mean, const Image<double>& std,
                                     double eps, size_t count) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(mean.size());
    for (size_t i = 0; i < mask.size(); ++i) {
        if (!mask.data[i]) continue;
        const double s = std.data[i];
        g[i] = -2.0 * (target.data[i] - mean.data[i]) / (2.0 * s * s + eps) / double(count);
    }
    return g;
}

Mask sparse_mask(const DepthMap& pred, const SparseDepth& sparse) {
    if (!sparse.mask.same_shape(pred.mean) || !sparse.values.same_shape(pred.mean)) {
        throw Error(ErrorKind::Dimension, "sparse depth and prediction differ in size");
    }
    return sparse.mask;
}

Mask simulation_mask(const DepthMap& pred, const SimulatedDepth& sim) {
    if (!sim.depth.same_shape(pred.mean) || !sim.valid.same_shape(pred.mean)) {
        throw Error(ErrorKind::Dimension, "simulated depth and prediction differ in size");
    }
    Mask m(pred.width(), pred.height(), 0);
    for (size_t i = 0; i < m.size(); ++i) m.data[i] = (sim.valid.data[i] && pred.valid.data[i]) ? 1 : 0;
    return m;
}

}  // namespace

void LossConfig::validate() const {
    if (!(epsilon > 0.0)) throw Error(ErrorKind::Validation, "epsilon must be positive");
    if (w_sparse_depth < 0 || w_depth_consistency < 0 || w_sparse_flow < 0 || w_dense_simulation < 0) {
        throw Error(ErrorKind::Validation, "loss weights must be nonnegative");
    }
}

size_t SimulatedDepth::valid_count() const {
    size_t n = 0;
    for (auto m : valid.data) n += m != 0;
    return n;
}

KernelResult log_likelihood_kernel(const Mask& mask, const Image<double>& target,
                                   const Image<double>& mean, const Image<double>& std, double eps) {
    if (!mask.same_shape(target) || !mask.same_shape(mean) || !mask.same_shape(std)) {
        throw Error(ErrorKind::Dimension, "loss kernel inputs differ in size");
    }
    KernelResult out;
    double sum = 0.0;
    for (size_t i = 0; i < mask.size(); ++i) {
        if (!mask.data[i]) continue;
        sum += detail::likelihood_term<double>(target.data[i], mean.data[i], std.data[i], eps);
        ++out.count;
    }
    out.value = out.count == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / double(out.count);
    return out;
}

double sparse_depth_loss(const DepthMap& pred, const SparseDepth& sparse, double eps) {
    const auto r = log_likelihood_kernel(sparse_mask(pred, sparse), sparse.values, pred.mean, pred.std, eps);
    if (r.count == 0) throw Error(ErrorKind::NoSparsePoints, "frame has no sparse depth points");
    return r.value;
}

double depth_consistency_loss(const DepthMap& pred_j, const WarpResult& warp, double eps) {
    const auto r = log_likelihood_kernel(warp.overlap, warp.warped_depth, pred_j.mean, pred_j.std, eps);
    if (r.count == 0) throw Error(ErrorKind::NoOverlap, "warped depth has no overlap");
    return r.value;
}

double symmetric_depth_consistency_loss(const DepthMap& depth_j, const DepthMap& depth_k,
                                        const Pose& pose_j, const Pose& pose_k,
                                        const CameraIntrinsics& camera, double eps) {
    return consistency_value(ConsistencyInputs{depth_j, depth_k, pose_j, pose_k, camera, eps});
}

double sparse_flow_loss(const Image<double>& depth_j, const Mask& valid_j, const Pose& pose_j,
                        const Pose& pose_k, const FeatureMatchSet& matches, int frame_j, int frame_k,
                        const CameraIntrinsics& camera) {
    const SparseFlowInputs in{depth_j, valid_j, pose_j, pose_k, matches, frame_j, frame_k, camera};
    require_flow_inputs(in);
    const auto acc = flow_value(in);
    if (acc.count == 0) throw Error(ErrorKind::NoMatches, "no usable matches for the frame pair");
    return acc.value / double(acc.count);
}

double sparse_flow_loss(const DepthMap& depth_j, const Pose& pose_j, const Pose& pose_k,
                        const FeatureMatchSet& matches, int frame_j, int frame_k,
                        const CameraIntrinsics& camera) {
    return sparse_flow_loss(depth_j.mean, depth_j.valid, pose_j, pose_k, matches, frame_j, frame_k, camera);
}

double sparse_flow_loss(const SimulatedDepth& depth_j, const Pose& pose_j, const Pose& pose_k,
                        const FeatureMatchSet& matches, int frame_j, int frame_k,
                        const CameraIntrinsics& camera) {
    return sparse_flow_loss(depth_j.depth, depth_j.valid, pose_j, pose_k, matches, frame_j, frame_k, camera);
}

double dense_simulation_loss(const DepthMap& pred, const SimulatedDepth& sim, double eps) {
    const auto r = log_likelihood_kernel(simulation_mask(pred, sim), sim.depth, pred.mean, pred.std, eps);
    if (r.count == 0) throw Error(ErrorKind::NoSimulatedCoverage, "simulated depth does not cover the prediction");
    return r.value;
}

double weighted_training_loss(const TrainingTerms& terms, const LossConfig& config) {
    double total = 0.0;
    if (terms.sparse_depth) total += config.w_sparse_depth * *terms.sparse_depth;
    if (terms.depth_consistency) total += config.w_depth_consistency * *terms.depth_consistency;
    if (terms.sparse_flow) total += config.w_sparse_flow * *terms.sparse_flow;
    if (terms.dense_simulation) total += config.w_dense_simulation * *terms.dense_simulation;
    return total;
}

double evaluate_loss(const LossInputs& inputs) {
    struct Visitor {
        double operator()(const SparseDepthInputs& in) const { return sparse_depth_loss(in.pred, in.sparse, in.eps); }
        double operator()(const ConsistencyInputs& in) const { return consistency_value(in); }
        double operator()(const SparseFlowInputs& in) const {
            return sparse_flow_loss(in.depth_j, in.valid_j, in.pose_j, in.pose_k, in.matches, in.frame_j, in.frame_k, in.camera);
        }
        double operator()(const DenseSimulationInputs& in) const { return dense_simulation_loss(in.pred, in.sim, in.eps); }
    };
    return std::visit(Visitor{}, inputs);
}

LossEvaluation evaluate_with_gradient(const LossInputs& inputs, GradientTarget target) {
    const bool depth = target == GradientTarget::DepthMeans;
    struct Visitor {
        bool depth;
        LossEvaluation operator()(const SparseDepthInputs& in) const {
            LossEvaluation out;
            const Mask mask = sparse_mask(in.pred, in.sparse);
            const auto r = log_likelihood_kernel(mask, in.sparse.values, in.pred.mean, in.pred.std, in.eps);
            if (r.count == 0) throw Error(ErrorKind::NoSparsePoints, "frame has no sparse depth points");
            out.value = r.value;
            out.gradient = depth ? kernel_mean_gradient(mask, in.sparse.values, in.pred.mean, in.pred.std, in.eps, r.count)
                                 : Eigen::VectorXd();
            return out;
        }
        LossEvaluation operator()(const ConsistencyInputs& in) const {
            return depth ? consistency_gradient<5, false>(in) : consistency_gradient<0, true>(in);
        }
        LossEvaluation operator()(const SparseFlowInputs& in) const {
            return depth ? flow_gradient<4, false>(in) : flow_gradient<0, true>(in);
        }
        LossEvaluation operator()(const DenseSimulationInputs& in) const {
            LossEvaluation out;
            const Mask mask = simulation_mask(in.pred, in.sim);
            const auto r = log_likelihood_kernel(mask, in.sim.depth, in.pred.mean, in.pred.std, in.eps);
            if (r.count == 0) throw Error(ErrorKind::NoSimulatedCoverage, "simulated depth does not cover the prediction");
            out.value = r.value;
            out.gradient = depth ? kernel_mean_gradient(mask, in.sim.depth, in.pred.mean, in.pred.std, in.eps, r.count)
                                 : Eigen::VectorXd();
            return out;
        }
    };
    return std::visit(Visitor{depth}, inputs);
}

Eigen::VectorXd loss_gradient(const LossInputs& inputs, GradientTarget target) {
    return evaluate_with_gradient(inputs, target).gradient;
}

PoseNormalEquations consistency_pose_normal_equations(const ConsistencyInputs& in) {
    require_consistency_inputs(in);
    using Mat12 = Eigen::Matrix<double, 12, 12>;
    Mat12 h_kj = Mat12::Zero(), h_jk = Mat12::Zero();
    const auto kj = consistency_direction_pose(in.depth_j, in.depth_k, in.pose_j, in.pose_k, in.camera, in.eps, &h_kj);
    const auto jk = consistency_direction_pose(in.depth_k, in.depth_j, in.pose_k, in.pose_j, in.camera, in.eps, &h_jk);
    if (kj.count == 0 && jk.count == 0) throw Error(ErrorKind::NoOverlap, "frames do not overlap");
    const double wkj = kj.count == 0 ? 0.0 : (jk.count == 0 ? 1.0 : 0.5) / double(kj.count);
    const double wjk = jk.count == 0 ? 0.0 : (kj.count == 0 ? 1.0 : 0.5) / double(jk.count);
    PoseNormalEquations out;
    out.value = wkj * kj.value + wjk * jk.value;
    out.gradient.head<6>() = wkj * kj.target_pose + wjk * jk.source_pose;
    out.gradient.tail<6>() = wkj * kj.source_pose + wjk * jk.target_pose;
    // The j -> k direction orders its parameters (k, j); swap the blocks.
    Mat12 swapped = h_jk.selfadjointView<Eigen::Upper>();
    swapped.topLeftCorner<6, 6>().swap(swapped.bottomRightCorner<6, 6>());
    swapped.topRightCorner<6, 6>().swap(swapped.bottomLeftCorner<6, 6>());
    out.gauss_newton = wkj * Mat12(h_kj.selfadjointView<Eigen::Upper>()) + wjk * swapped;
    return out;
}

PoseNormalEquations sparse_flow_pose_normal_equations(const SparseFlowInputs& in) {
    using T = ceres::Jet<double, kPoseSlots>;
    require_flow_inputs(in);
    const auto oriented = orient_matches(in.matches, in.frame_j, in.frame_k, in.camera);
    IncrementedPose<T> pj(in.pose_j);
    IncrementedPose<T> pk(in.pose_k);
    pj.seed(0);
    pk.seed(6);
    auto depth = [&](int u, int v, int) { return T(in.depth_j(u, v)); };
    PoseNormalEquations out;
    size_t count = 0;
    for (const auto& m : oriented) {
        const auto r = match_flow_residual<T>(m, in.valid_j, pj, pk, in.camera, depth, nullptr);
        if (!r) continue;
        ++count;
        for (int a = 0; a < 2; ++a) {
            const T& ra = (*r)[a];
            out.value += ra.a * ra.a;
            out.gradient += 2.0 * ra.a * ra.v;
            out.gauss_newton.selfadjointView<Eigen::Upper>().rankUpdate(ra.v, 2.0);
        }
    }
    if (count == 0) throw Error(ErrorKind::NoMatches, "no usable matches for the frame pair");
    out.value /= double(count);
    out.gradient /= double(count);
    out.gauss_newton = Eigen::Matrix<double, 12, 12>(out.gauss_newton.selfadjointView<Eigen::Upper>()) / double(count);
    return out;
}

}  // namespace monofuse
