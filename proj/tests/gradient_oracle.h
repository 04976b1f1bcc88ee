#pragma once

// Central finite-difference reference for loss gradients, plus generators for
// random smooth instances. Depth rasters are affine in pixel coordinates so
// that bilinear sampling has no kinks; instances where a perturbation changes
// the overlap or match sets are reported as non-smooth and redrawn.

#include <functional>
#include <random>

#include "monofuse/losses.h"
#include "test_util.h"

namespace monofuse::testing {

struct GradientCheck {
    double worst_ratio = 0.0;  // max |analytic - fd| / allowed
    bool smooth = true;
};

/// Compares analytic and numeric gradients component-wise. Each component is
/// allowed 1e-4 relative error against max(|fd_i|, 1e-3 * ||fd||_inf).
inline double gradient_mismatch(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
    const double scale = numeric.lpNorm<Eigen::Infinity>();
    double worst = 0.0;
    for (Eigen::Index i = 0; i < numeric.size(); ++i) {
        const double allowed = 1e-4 * std::max(std::abs(numeric[i]), 1e-3 * scale) + 1e-14;
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / allowed);
    }
    return worst;
}

/// f(x + h e_i) and f(x - h e_i) for each coordinate, with h relative to |x_i|
/// (an absolute `zero_step` when x_i is zero, as for twist parameters).
inline Eigen::VectorXd central_difference(const std::function<double(int, double)>& f_perturbed,
                                          const Eigen::VectorXd& x, double rel = 1e-4,
                                          double zero_step = 1e-6) {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = x[i] != 0.0 ? rel * std::abs(x[i]) : zero_step;
        g[i] = (f_perturbed(int(i), h) - f_perturbed(int(i), -h)) / (2.0 * h);
    }
    return g;
}

inline Pose perturb_pose(const Pose& p, int axis, double h) {
    Eigen::Matrix<double, 6, 1> tw = Eigen::Matrix<double, 6, 1>::Zero();
    tw[axis] = h;
    return apply_increment(p, tw);
}

struct RandomPair {
    CameraIntrinsics camera;
    DepthMap depth_j;
    DepthMap depth_k;
    Pose pose_j;
    Pose pose_k;
    FeatureMatchSet matches;
};

inline DepthMap random_affine_depth(const CameraIntrinsics& k, std::mt19937_64& rng, bool holes) {
    std::uniform_real_distribution<double> base(1.5, 3.0), slope(-0.02, 0.02), s(0.05, 0.5);
    const double b = base(rng), du = slope(rng), dv = slope(rng);
    DepthMap d(k.width, k.height);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int v = 0; v < k.height; ++v)
        for (int u = 0; u < k.width; ++u) {
            if (holes && unit(rng) < 0.05) continue;
            d.set(u, v, b + du * u + dv * v, s(rng));
        }
    return d;
}

inline RandomPair random_pair(std::mt19937_64& rng, bool holes = true) {
    RandomPair p;
    p.camera = small_camera(20, 16, 18.0);
    p.depth_j = random_affine_depth(p.camera, rng, holes);
    p.depth_k = random_affine_depth(p.camera, rng, holes);
    p.pose_j = random_pose(rng, 0.5, 1.0);
    p.pose_k = compose(p.pose_j, random_pose(rng, 0.06, 0.2));
    std::uniform_real_distribution<double> pu(1.0, p.camera.width - 2.0), pv(1.0, p.camera.height - 2.0),
        off(-2.0, 2.0);
    for (int n = 0; n < 12; ++n) {
        FeatureMatch m;
        const bool flipped = n % 3 == 0;
        m.frame_a = flipped ? 1 : 0;
        m.frame_b = flipped ? 0 : 1;
        m.pixel_a = Vec2(pu(rng), pv(rng));
        m.pixel_b = m.pixel_a + Vec2(off(rng), off(rng));
        m.pixel_b.x() = std::clamp(m.pixel_b.x(), 0.0, p.camera.width - 1.0);
        m.pixel_b.y() = std::clamp(m.pixel_b.y(), 0.0, p.camera.height - 1.0);
        p.matches.push_back(m);
    }
    return p;
}

}  // namespace monofuse::testing
