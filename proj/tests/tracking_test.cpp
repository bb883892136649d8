#include <gtest/gtest.h>

#include "monogs/tracking.hpp"

#include <random>

using namespace monogs;

namespace {

// Planar pointmap: every pixel sees the z = depth plane through a pinhole.
Image<double> plane_pointmap(int h, int w, double fx, double depth) {
    Image<double> pm(h, w, 3);
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            pm.at(y, x, 0) = (x - cx) / fx * depth;
            pm.at(y, x, 1) = (y - cy) / fx * depth;
            pm.at(y, x, 2) = depth;
        }
    return pm;
}

SE3 random_pose(Rng& rng, double rot = 0.3, double trans = 0.4) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::Matrix<double, 6, 1> xi;
    for (int i = 0; i < 3; ++i) xi[i] = trans * u(rng);
    for (int i = 3; i < 6; ++i) xi[i] = rot * u(rng);
    return SE3::exp(xi);
}

// Synthetic correspondence problem: points seen from a keyframe and from a
// frame displaced by T_true (so points_k = T_true * points_f).
struct PoseProblem {
    std::vector<Correspondence> matches;
    std::vector<Eigen::Vector3d> points_f, points_k;
    SE3 T_true;
};

PoseProblem make_problem(int n, Rng& rng) {
    PoseProblem pb;
    pb.T_true = random_pose(rng);
    std::uniform_real_distribution<double> ux(-1.0, 1.0), uz(2.0, 5.0);
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector3d pf(ux(rng), ux(rng), uz(rng));
        pb.points_f.push_back(pf);
        pb.points_k.push_back(pb.T_true * pf);
        Correspondence c;
        c.target_index = i;
        c.q_match = 1.0;
        pb.matches.push_back(c);
    }
    return pb;
}

SE3 perturbed(const SE3& T, Rng& rng) { return random_pose(rng, 0.05, 0.05) * T; }

double pose_error_rot(const SE3& a, const SE3& b) {
    return rotation_distance(a.R, b.R);
}

}  // namespace

TEST(NormalizeRay, BasicAndDegenerate) {
    EXPECT_LT((normalize_ray({0, 0, 2}) - Eigen::Vector3d(0, 0, 1)).norm(), 1e-15);
    EXPECT_LT((normalize_ray({3, 4, 0}) - Eigen::Vector3d(0.6, 0.8, 0)).norm(),
              1e-15);
    EXPECT_THROW(normalize_ray(Eigen::Vector3d::Zero()), DegenerateRayError);
}

TEST(MatchRays, IdentityWarpRecoversPixels) {
    const int H = 32, W = 32;
    const Image<double> pm = plane_pointmap(H, W, 28.0, 2.0);
    const Image<double> conf(H, W, 1, 1.0);
    std::vector<Eigen::Vector3d> targets;
    std::vector<double> tconf;
    std::vector<std::pair<int, int>> px;
    for (int y = 4; y < H - 4; y += 4)
        for (int x = 4; x < W - 4; x += 4) {
            targets.emplace_back(pm.at(y, x, 0), pm.at(y, x, 1), pm.at(y, x, 2));
            tconf.push_back(1.0);
            px.emplace_back(y, x);
        }
    const auto matches = match_rays(pm, targets, conf, tconf);
    ASSERT_EQ(matches.size(), targets.size());
    for (const auto& c : matches) {
        EXPECT_LT(c.residual, 1e-6);
        EXPECT_NEAR(c.ref_pixel.x(), px[c.target_index].second, 0.05);
        EXPECT_NEAR(c.ref_pixel.y(), px[c.target_index].first, 0.05);
        EXPECT_NEAR(c.q_match, 1.0, 1e-9);
    }
}

TEST(MatchRays, SubpixelShiftIsRefined) {
    const int H = 32, W = 32;
    const Image<double> pm = plane_pointmap(H, W, 28.0, 2.0);
    const Image<double> conf(H, W, 1, 1.0);
    // Target rays taken half a pixel to the right of grid pixels.
    const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
    std::vector<Eigen::Vector3d> targets;
    std::vector<double> tconf;
    std::vector<double> expect_u;
    for (int y = 8; y < H - 8; y += 4)
        for (int x = 8; x < W - 8; x += 4) {
            targets.emplace_back((x + 0.5 - cx) / 28.0 * 2.0, (y - cy) / 28.0 * 2.0,
                                 2.0);
            tconf.push_back(1.0);
            expect_u.push_back(x + 0.5);
        }
    const auto matches = match_rays(pm, targets, conf, tconf);
    // The outlier filter may drop a few near-duplicate residuals.
    ASSERT_GE(matches.size(), targets.size() / 2);
    for (const auto& c : matches)
        EXPECT_NEAR(c.ref_pixel.x(), expect_u[c.target_index], 0.05);
}

TEST(MatchRays, NoConfidentReferenceThrows) {
    const Image<double> pm = plane_pointmap(16, 16, 14.0, 2.0);
    const Image<double> dead(16, 16, 1, 0.0);
    std::vector<Eigen::Vector3d> targets(10, Eigen::Vector3d(0, 0, 2));
    std::vector<double> tconf(10, 1.0);
    EXPECT_THROW(match_rays(pm, targets, dead, tconf), InsufficientMatchesError);

    const Image<double> conf(16, 16, 1, 1.0);
    std::vector<double> zero_conf(10, 0.0);
    EXPECT_THROW(match_rays(pm, targets, conf, zero_conf),
                 InsufficientMatchesError);
}

TEST(OptimizePose, IdentityProblemStaysPut) {
    Rng rng(1);
    PoseProblem pb = make_problem(40, rng);
    pb.T_true = SE3::identity();
    pb.points_k = pb.points_f;
    const auto est = optimize_pose(pb.matches, pb.points_f, pb.points_k,
                                   SE3::identity());
    EXPECT_LT(est.final_cost, 1e-20);
    EXPECT_LT(pose_error_rot(est.T_kf, SE3::identity()), 1e-7);
    EXPECT_LT(est.T_kf.t.norm(), 1e-7);
}

TEST(OptimizePose, RecoversPerturbedInit) {
    Rng rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        PoseProblem pb = make_problem(60, rng);
        const SE3 init = perturbed(pb.T_true, rng);
        const auto est =
            optimize_pose(pb.matches, pb.points_f, pb.points_k, init);
        EXPECT_LT(pose_error_rot(est.T_kf, pb.T_true), 1e-5);
        EXPECT_LT((est.T_kf.t - pb.T_true.t).norm(), 1e-4);
        EXPECT_LE(est.final_cost, 1e-8);
    }
}

TEST(OptimizePose, RobustToOutliers) {
    Rng rng(3);
    PoseProblem pb = make_problem(80, rng);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 16; ++i)  // corrupt 20% of the keyframe points
        pb.points_k[i] += Eigen::Vector3d(u(rng), u(rng), std::abs(u(rng)) + 0.5);
    const SE3 init = perturbed(pb.T_true, rng);
    const auto est = optimize_pose(pb.matches, pb.points_f, pb.points_k, init);
    EXPECT_LT(pose_error_rot(est.T_kf, pb.T_true), 0.02);
    EXPECT_LT((est.T_kf.t - pb.T_true.t).norm(), 0.05);
}

TEST(OptimizePose, ConfidenceWeightingDownweightsBadPoints) {
    Rng rng(4);
    PoseProblem pb = make_problem(60, rng);
    // One grossly wrong correspondence with near-zero confidence.
    pb.points_k[0] += Eigen::Vector3d(3.0, -2.0, 1.0);
    pb.matches[0].q_match = 1e-8;
    const SE3 init = perturbed(pb.T_true, rng);
    const auto est = optimize_pose(pb.matches, pb.points_f, pb.points_k, init);
    EXPECT_LT(pose_error_rot(est.T_kf, pb.T_true), 1e-4);
    EXPECT_LT((est.T_kf.t - pb.T_true.t).norm(), 1e-3);
}

TEST(OptimizePose, CostNeverIncreases) {
    Rng rng(5);
    PoseProblem pb = make_problem(50, rng);
    const SE3 init = random_pose(rng) * pb.T_true;
    TrackerConfig cfg;

    auto cost_at = [&](const SE3& T) {
        double E = 0;
        for (size_t i = 0; i < pb.matches.size(); ++i) {
            const Eigen::Vector3d y = T * pb.points_f[i];
            const Eigen::Vector3d rk = pb.points_k[i].normalized();
            const double e =
                ((rk - y.normalized()) * (std::sqrt(1.0) / cfg.sigma_r)).norm();
            E += e <= cfg.huber_delta ? 0.5 * e * e
                                      : cfg.huber_delta * (e - 0.5 * cfg.huber_delta);
        }
        return E;
    };
    const auto est = optimize_pose(pb.matches, pb.points_f, pb.points_k, init, cfg);
    EXPECT_LE(est.final_cost, cost_at(init) + 1e-12);
    EXPECT_NEAR(est.final_cost, cost_at(est.T_kf), 1e-9);
}

TEST(OptimizePose, RotationEquivariance) {
    Rng rng(6);
    PoseProblem pb = make_problem(50, rng);
    const auto base =
        optimize_pose(pb.matches, pb.points_f, pb.points_k, perturbed(pb.T_true, rng));

    // Rotate the keyframe coordinate system: optimum becomes R0 * T.
    const SE3 R0 = random_pose(rng, 0.5, 0.0);
    PoseProblem rotated = pb;
    for (auto& p : rotated.points_k) p = R0 * p;
    const auto rot = optimize_pose(rotated.matches, rotated.points_f,
                                   rotated.points_k, R0 * base.T_kf);
    EXPECT_LT(pose_error_rot(rot.T_kf, R0 * base.T_kf), 1e-6);
    EXPECT_LT((rot.T_kf.t - (R0 * base.T_kf).t).norm(), 1e-6);
}

TEST(OptimizePose, InputValidation) {
    Rng rng(7);
    PoseProblem pb = make_problem(5, rng);  // below the 6-match minimum
    EXPECT_THROW(optimize_pose(pb.matches, pb.points_f, pb.points_k, SE3::identity()),
                 InsufficientMatchesError);
    pb = make_problem(10, rng);
    pb.points_k.pop_back();
    EXPECT_THROW(optimize_pose(pb.matches, pb.points_f, pb.points_k, SE3::identity()),
                 ValidationError);
}

TEST(KeyframeDecision, ThresholdAndInterval) {
    TrackerConfig cfg;  // threshold 0.7, mapping interval 10
    const FrameRole low = keyframe_decision(12, 0.5, 9, cfg);
    EXPECT_TRUE(low.is_keyframe);
    EXPECT_FALSE(low.is_mapping_frame);

    const FrameRole mid = keyframe_decision(12, 0.9, 9, cfg);
    EXPECT_FALSE(mid.is_keyframe);
    EXPECT_FALSE(mid.is_mapping_frame);

    const FrameRole map = keyframe_decision(19, 0.9, 9, cfg);
    EXPECT_FALSE(map.is_keyframe);
    EXPECT_TRUE(map.is_mapping_frame);

    const FrameRole same = keyframe_decision(9, 0.9, 9, cfg);
    EXPECT_FALSE(same.is_keyframe);
    EXPECT_FALSE(same.is_mapping_frame);
}
