#pragma once

#include <algorithm>
#include <numeric>

#include "monogs/dataset.hpp"

namespace monogs {

// ---------------------------------------------------------------------------
// 3D Gaussian map and a CPU software rasterizer with depth-ordered alpha
// blending of color and semantic features, plus analytic gradients.
//
// Opacity and color are stored as logits, scales as logs, so the rendering
// invariants hold by construction under unconstrained optimization.
// ---------------------------------------------------------------------------

struct Gaussian {
    Eigen::Vector3d x = Eigen::Vector3d::Zero();   // world position
    Eigen::Vector4d q = Eigen::Vector4d(1, 0, 0, 0);  // quaternion (w,x,y,z)
    Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();
    double opacity_logit = 0.0;
    Eigen::Vector3d color_logit = Eigen::Vector3d::Zero();
    Eigen::VectorXd feature;                        // learnable, dim d
};

struct GaussianGrad {
    Eigen::Vector3d x = Eigen::Vector3d::Zero();
    Eigen::Vector4d q = Eigen::Vector4d::Zero();
    Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();
    double opacity_logit = 0.0;
    Eigen::Vector3d color_logit = Eigen::Vector3d::Zero();
    Eigen::VectorXd feature;
};

using GradientBuffer = std::vector<GaussianGrad>;

inline GradientBuffer make_gradient_buffer(size_t n, int feature_dim) {
    GradientBuffer g(n);
    for (auto& e : g) e.feature = Eigen::VectorXd::Zero(feature_dim);
    return g;
}

struct RenderOutput {
    Image<double> color;                // H x W x 3
    Image<double> feature;              // H x W x d
    Image<double> final_transmittance;  // H x W
    Image<double> depth;                // H x W, alpha-weighted expected depth
    Image<int32_t> contrib_count;       // H x W
};

struct RenderOptions {
    double alpha_clip = 0.999;
    double transmit_eps = 1e-4;  // stop blending below this transmittance
    bool sigma_cutoff = true;    // 3-sigma ellipse cutoff + offscreen culling
    double near_plane = 0.01;
    double cov_reg = 0.3;        // low-pass added to the 2D covariance diagonal
    int tile_size = 16;
};

inline Eigen::Matrix3d quat_to_rotation(const Eigen::Vector4d& q) {
    const double n = q.norm();
    const double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
    Eigen::Matrix3d R;
    R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return R;
}

// ---------------------------------------------------------------------------
// Initialization from a pointmap: one Gaussian per sampled confident pixel.
// Isotropic scale k * depth / fx with k = stride / sqrt(2).
// ---------------------------------------------------------------------------

inline std::vector<Gaussian> init_from_pointmap(const FrameRecord& frame,
                                                const SE3& pose_wc,
                                                const Intrinsics& K, int stride,
                                                int feature_dim, Rng& rng,
                                                double conf_threshold = 0.0,
                                                const Image<double>* keep_mask = nullptr) {
    if (stride < 1) throw ConfigError("stride must be >= 1");
    std::normal_distribution<double> feat_init(0.0, 0.01);
    std::vector<Gaussian> out;
    const double k = stride / std::sqrt(2.0);
    for (int y = 0; y < frame.pointmap.height(); y += stride) {
        for (int x = 0; x < frame.pointmap.width(); x += stride) {
            if (frame.confidence.at(y, x) <= conf_threshold) continue;
            if (keep_mask && keep_mask->at(y, x) <= 0) continue;
            Gaussian g;
            const Eigen::Vector3d p_cam(frame.pointmap.at(y, x, 0),
                                        frame.pointmap.at(y, x, 1),
                                        frame.pointmap.at(y, x, 2));
            g.x = pose_wc * p_cam;
            const double s = std::max(1e-8, k * p_cam.z() / K.fx);
            g.log_scale.setConstant(std::log(s));
            g.opacity_logit = 0.0;  // sigmoid^-1(0.5)
            for (int c = 0; c < 3; ++c) g.color_logit[c] = logit(frame.rgb.at(y, x, c));
            g.feature = Eigen::VectorXd::Zero(feature_dim);
            for (int i = 0; i < feature_dim; ++i) g.feature[i] = feat_init(rng);
            out.push_back(std::move(g));
        }
    }
    if (out.empty()) throw EmptyInitError("no confident pixels to initialize from");
    return out;
}

// ---------------------------------------------------------------------------
// EWA projection of one Gaussian.
// ---------------------------------------------------------------------------

struct ProjectedGaussian {
    bool culled = true;
    Eigen::Vector2d mean2d = Eigen::Vector2d::Zero();
    double cov_a = 0, cov_b = 0, cov_c = 0;  // [[a,b],[b,c]], regularized
    double depth = 0;
    double radius = 0;  // 3-sigma screen radius
};

inline ProjectedGaussian project_gaussian(const Gaussian& g, const SE3& pose_cw,
                                          const Intrinsics& K,
                                          const RenderOptions& opt = {}) {
    ProjectedGaussian out;
    const Eigen::Vector3d t = pose_cw * g.x;
    if (t.z() <= opt.near_plane) return out;
    out.depth = t.z();
    out.mean2d = Eigen::Vector2d(K.fx * t.x() / t.z() + K.cx,
                                 K.fy * t.y() / t.z() + K.cy);

    const Eigen::Matrix3d R = quat_to_rotation(g.q);
    const Eigen::Vector3d s2 = (2.0 * g.log_scale).array().exp();
    const Eigen::Matrix3d sigma3 = R * s2.asDiagonal() * R.transpose();
    Eigen::Matrix<double, 2, 3> J;
    const double iz = 1.0 / t.z();
    J << K.fx * iz, 0, -K.fx * t.x() * iz * iz,
         0, K.fy * iz, -K.fy * t.y() * iz * iz;
    const Eigen::Matrix<double, 2, 3> M = J * pose_cw.R;
    const Eigen::Matrix2d cov = M * sigma3 * M.transpose();
    out.cov_a = cov(0, 0) + opt.cov_reg;
    out.cov_b = 0.5 * (cov(0, 1) + cov(1, 0));
    out.cov_c = cov(1, 1) + opt.cov_reg;

    const double mid = 0.5 * (out.cov_a + out.cov_c);
    const double det = out.cov_a * out.cov_c - out.cov_b * out.cov_b;
    const double lmax = mid + std::sqrt(std::max(0.0, mid * mid - det));
    out.radius = 3.0 * std::sqrt(std::max(0.0, lmax));

    if (opt.sigma_cutoff) {
        if (out.mean2d.x() + out.radius < 0 || out.mean2d.x() - out.radius > K.width - 1 ||
            out.mean2d.y() + out.radius < 0 || out.mean2d.y() - out.radius > K.height - 1)
            return out;  // fully offscreen
    }
    out.culled = false;
    return out;
}

namespace detail {

// Depth-sorted order with ties broken by insertion index.
inline std::vector<int> depth_order(const std::vector<ProjectedGaussian>& proj) {
    std::vector<int> order;
    order.reserve(proj.size());
    for (size_t i = 0; i < proj.size(); ++i)
        if (!proj[i].culled) order.push_back(static_cast<int>(i));
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return proj[a].depth < proj[b].depth;
    });
    return order;
}

struct PixelBlendState {
    double T = 1.0;
    int count = 0;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Tiled forward renderer.
// ---------------------------------------------------------------------------

inline RenderOutput render(const std::vector<Gaussian>& map, const SE3& pose_cw,
                           const Intrinsics& K, const RenderOptions& opt = {}) {
    if (map.empty()) throw ValidationError("render requires a non-empty map");
    const int H = K.height, W = K.width;
    const int d = static_cast<int>(map[0].feature.size());
    RenderOutput out;
    out.color = Image<double>(H, W, 3);
    out.feature = Image<double>(H, W, d);
    out.final_transmittance = Image<double>(H, W, 1, 1.0);
    out.depth = Image<double>(H, W, 1);
    out.contrib_count = Image<int32_t>(H, W, 1, 0);

    std::vector<ProjectedGaussian> proj(map.size());
    for (size_t i = 0; i < map.size(); ++i)
        proj[i] = project_gaussian(map[i], pose_cw, K, opt);
    const auto order = detail::depth_order(proj);

    const int ts = opt.tile_size;
    const int tx = (W + ts - 1) / ts, ty = (H + ts - 1) / ts;
    std::vector<std::vector<int>> tiles(static_cast<size_t>(tx) * ty);
    for (int oi : order) {
        const auto& p = proj[oi];
        int x0 = 0, x1 = tx - 1, y0 = 0, y1 = ty - 1;
        if (opt.sigma_cutoff) {
            x0 = std::max(0, int((p.mean2d.x() - p.radius) / ts));
            x1 = std::min(tx - 1, int((p.mean2d.x() + p.radius) / ts));
            y0 = std::max(0, int((p.mean2d.y() - p.radius) / ts));
            y1 = std::min(ty - 1, int((p.mean2d.y() + p.radius) / ts));
        }
        for (int tyi = y0; tyi <= y1; ++tyi)
            for (int txi = x0; txi <= x1; ++txi)
                tiles[static_cast<size_t>(tyi) * tx + txi].push_back(oi);
    }

    std::vector<double> opac(map.size()), col(map.size() * 3);
    for (size_t i = 0; i < map.size(); ++i) {
        opac[i] = sigmoid(map[i].opacity_logit);
        for (int c = 0; c < 3; ++c) col[i * 3 + c] = sigmoid(map[i].color_logit[c]);
    }

    for (int tyi = 0; tyi < ty; ++tyi) {
        for (int txi = 0; txi < tx; ++txi) {
            const auto& list = tiles[static_cast<size_t>(tyi) * tx + txi];
            if (list.empty()) continue;
            const int yend = std::min(H, (tyi + 1) * ts);
            const int xend = std::min(W, (txi + 1) * ts);
            for (int y = tyi * ts; y < yend; ++y) {
                for (int x = txi * ts; x < xend; ++x) {
                    double T = 1.0;
                    int count = 0;
                    for (int gi : list) {
                        const auto& p = proj[gi];
                        const double dx = x - p.mean2d.x();
                        const double dy = y - p.mean2d.y();
                        const double det = p.cov_a * p.cov_c - p.cov_b * p.cov_b;
                        const double inv_det = 1.0 / det;
                        const double power =
                            -0.5 * inv_det *
                            (p.cov_c * dx * dx - 2 * p.cov_b * dx * dy + p.cov_a * dy * dy);
                        if (opt.sigma_cutoff && power < -4.5) continue;
                        const double alpha =
                            std::min(opt.alpha_clip, opac[gi] * std::exp(power));
                        const double w = alpha * T;
                        for (int c = 0; c < 3; ++c)
                            out.color.at(y, x, c) += col[gi * 3 + c] * w;
                        const auto& f = map[gi].feature;
                        for (int c = 0; c < d; ++c)
                            out.feature.at(y, x, c) += f[c] * w;
                        out.depth.at(y, x) += p.depth * w;
                        T *= 1.0 - alpha;
                        ++count;
                        if (T < opt.transmit_eps) break;
                    }
                    out.final_transmittance.at(y, x) = T;
                    out.contrib_count.at(y, x) = count;
                }
            }
        }
    }
    return out;
}

// Literal per-pixel loop over all Gaussians, depth sorted, no tiling and no
// early termination. Testing oracle for the tiled renderer.
inline RenderOutput brute_force_render(const std::vector<Gaussian>& map,
                                       const SE3& pose_cw, const Intrinsics& K,
                                       const RenderOptions& opt_in = {}) {
    const int H = K.height, W = K.width;
    const int d = map.empty() ? 0 : static_cast<int>(map[0].feature.size());
    RenderOutput out;
    out.color = Image<double>(H, W, 3);
    out.feature = Image<double>(H, W, d);
    out.final_transmittance = Image<double>(H, W, 1, 1.0);
    out.depth = Image<double>(H, W, 1);
    out.contrib_count = Image<int32_t>(H, W, 1, 0);

    RenderOptions opt = opt_in;
    opt.transmit_eps = 0.0;

    std::vector<ProjectedGaussian> proj(map.size());
    for (size_t i = 0; i < map.size(); ++i)
        proj[i] = project_gaussian(map[i], pose_cw, K, opt);
    const auto order = detail::depth_order(proj);

    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double T = 1.0;
            int count = 0;
            for (int gi : order) {
                const auto& p = proj[gi];
                const double dx = x - p.mean2d.x();
                const double dy = y - p.mean2d.y();
                const double det = p.cov_a * p.cov_c - p.cov_b * p.cov_b;
                const double power =
                    -0.5 / det *
                    (p.cov_c * dx * dx - 2 * p.cov_b * dx * dy + p.cov_a * dy * dy);
                if (opt.sigma_cutoff && power < -4.5) continue;
                const double alpha = std::min(
                    opt.alpha_clip, sigmoid(map[gi].opacity_logit) * std::exp(power));
                const double w = alpha * T;
                for (int c = 0; c < 3; ++c)
                    out.color.at(y, x, c) += sigmoid(map[gi].color_logit[c]) * w;
                for (int c = 0; c < d; ++c)
                    out.feature.at(y, x, c) += map[gi].feature[c] * w;
                out.depth.at(y, x) += p.depth * w;
                T *= 1.0 - alpha;
                ++count;
            }
            out.final_transmittance.at(y, x) = T;
            out.contrib_count.at(y, x) = count;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Analytic backward pass. Recomputes the forward blend per pixel, then
// accumulates gradients of the upstream color / feature losses into every
// Gaussian attribute, flowing through the blend weights, the 2D Gaussian
// evaluation, the EWA covariance projection and the perspective mean.
// ---------------------------------------------------------------------------

namespace detail {

// d(quat-to-rotation)/dq for a normalized quaternion (w,x,y,z).
inline std::array<Eigen::Matrix3d, 4> rotation_quat_jacobian(const Eigen::Vector4d& qn) {
    const double w = qn[0], x = qn[1], y = qn[2], z = qn[3];
    std::array<Eigen::Matrix3d, 4> dR;
    dR[0] << 0, -2 * z, 2 * y,
             2 * z, 0, -2 * x,
            -2 * y, 2 * x, 0;
    dR[1] << 0, 2 * y, 2 * z,
             2 * y, -4 * x, -2 * w,
             2 * z, 2 * w, -4 * x;
    dR[2] << -4 * y, 2 * x, 2 * w,
             2 * x, 0, 2 * z,
            -2 * w, 2 * z, -4 * y;
    dR[3] << -4 * z, -2 * w, 2 * x,
             2 * w, -4 * z, 2 * y,
             2 * x, 2 * y, 0;
    return dR;
}

struct ProjectionCache {
    Eigen::Vector3d t;                 // camera-frame mean
    Eigen::Matrix<double, 2, 3> J;     // perspective Jacobian
    Eigen::Matrix<double, 2, 3> M;     // J * R_cw
    Eigen::Matrix3d sigma3;
    Eigen::Matrix3d R;                 // rotation from (normalized) quaternion
    Eigen::Vector3d s2;                // exp(2 * log_scale)
};

}  // namespace detail

inline GradientBuffer render_backward(const std::vector<Gaussian>& map,
                                      const SE3& pose_cw, const Intrinsics& K,
                                      const Image<double>& dL_dcolor,
                                      const Image<double>& dL_dfeature,
                                      const RenderOptions& opt = {}) {
    if (map.empty()) throw ValidationError("render_backward requires a non-empty map");
    for (double v : dL_dcolor.raw())
        if (!std::isfinite(v)) throw NumericalError("non-finite upstream color gradient");
    for (double v : dL_dfeature.raw())
        if (!std::isfinite(v)) throw NumericalError("non-finite upstream feature gradient");

    const int H = K.height, W = K.width;
    const int d = static_cast<int>(map[0].feature.size());
    GradientBuffer grad = make_gradient_buffer(map.size(), d);

    std::vector<ProjectedGaussian> proj(map.size());
    std::vector<detail::ProjectionCache> cache(map.size());
    for (size_t i = 0; i < map.size(); ++i) {
        proj[i] = project_gaussian(map[i], pose_cw, K, opt);
        if (proj[i].culled) continue;
        auto& c = cache[i];
        c.t = pose_cw * map[i].x;
        const double iz = 1.0 / c.t.z();
        c.J << K.fx * iz, 0, -K.fx * c.t.x() * iz * iz,
               0, K.fy * iz, -K.fy * c.t.y() * iz * iz;
        c.M = c.J * pose_cw.R;
        c.R = quat_to_rotation(map[i].q);
        c.s2 = (2.0 * map[i].log_scale).array().exp();
        c.sigma3 = c.R * c.s2.asDiagonal() * c.R.transpose();
    }
    const auto order = detail::depth_order(proj);

    std::vector<double> opac(map.size());
    std::vector<Eigen::Vector3d> col(map.size());
    for (size_t i = 0; i < map.size(); ++i) {
        opac[i] = sigmoid(map[i].opacity_logit);
        for (int c = 0; c < 3; ++c) col[i][c] = sigmoid(map[i].color_logit[c]);
    }

    // Aggregated per-Gaussian gradients on intermediate quantities; expanded
    // to attribute gradients once per Gaussian at the end.
    std::vector<Eigen::Vector2d> g_mean(map.size(), Eigen::Vector2d::Zero());
    std::vector<Eigen::Vector3d> g_cov(map.size(), Eigen::Vector3d::Zero());  // (a,b,c)

    struct Contrib {
        int gi;
        double alpha;
        double G;        // exp(power)
        bool clipped;
        double dx, dy;
    };
    std::vector<Contrib> stack;
    stack.reserve(256);

    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            stack.clear();
            double T = 1.0;
            for (int gi : order) {
                const auto& p = proj[gi];
                const double dx = x - p.mean2d.x();
                const double dy = y - p.mean2d.y();
                const double det = p.cov_a * p.cov_c - p.cov_b * p.cov_b;
                const double power =
                    -0.5 / det *
                    (p.cov_c * dx * dx - 2 * p.cov_b * dx * dy + p.cov_a * dy * dy);
                if (opt.sigma_cutoff && power < -4.5) continue;
                const double G = std::exp(power);
                const double raw = opac[gi] * G;
                const bool clipped = raw > opt.alpha_clip;
                const double alpha = clipped ? opt.alpha_clip : raw;
                stack.push_back({gi, alpha, G, clipped, dx, dy});
                T *= 1.0 - alpha;
                if (T < opt.transmit_eps) break;
            }
            if (stack.empty()) continue;

            Eigen::Vector3d gC;
            for (int c = 0; c < 3; ++c) gC[c] = dL_dcolor.at(y, x, c);
            Eigen::Map<const Eigen::VectorXd> gF(&dL_dfeature.at(y, x, 0), d);
            if (gC.isZero(0.0) && gF.isZero(0.0)) continue;

            // Suffix accumulators S = sum_{j>i} attr_j * alpha_j * T_j.
            Eigen::Vector3d Sc = Eigen::Vector3d::Zero();
            Eigen::VectorXd Sf = Eigen::VectorXd::Zero(d);
            // Recover T_i front-to-back first.
            std::vector<double> Ti(stack.size());
            double Tacc = 1.0;
            for (size_t i = 0; i < stack.size(); ++i) {
                Ti[i] = Tacc;
                Tacc *= 1.0 - stack[i].alpha;
            }
            for (size_t ii = stack.size(); ii-- > 0;) {
                const auto& s = stack[ii];
                const double w = s.alpha * Ti[ii];
                auto& gr = grad[s.gi];
                // Color / feature attribute gradients.
                const Eigen::Vector3d& ci = col[s.gi];
                for (int c = 0; c < 3; ++c)
                    gr.color_logit[c] += gC[c] * w * ci[c] * (1.0 - ci[c]);
                gr.feature.noalias() += gF * w;
                // Alpha gradient from the blend.
                double g_alpha = gC.dot(ci) * Ti[ii] + gF.dot(map[s.gi].feature) * Ti[ii];
                g_alpha -= (gC.dot(Sc) + gF.dot(Sf)) / (1.0 - s.alpha);
                Sc += ci * w;
                Sf += map[s.gi].feature * w;
                if (s.clipped) continue;  // clip: zero subgradient upstream
                // alpha = opac * G
                gr.opacity_logit += g_alpha * s.G * opac[s.gi] * (1.0 - opac[s.gi]);
                const double g_G = g_alpha * opac[s.gi];
                const double g_power = g_G * s.G;
                const auto& p = proj[s.gi];
                const double det = p.cov_a * p.cov_c - p.cov_b * p.cov_b;
                const double inv_det = 1.0 / det;
                // P = Sigma^{-1}; P*d where d = (dx,dy)
                const double Pd_x = inv_det * (p.cov_c * s.dx - p.cov_b * s.dy);
                const double Pd_y = inv_det * (-p.cov_b * s.dx + p.cov_a * s.dy);
                // mean2d gradient: d(power)/d(mean) = +P*d
                g_mean[s.gi].x() += g_power * Pd_x;
                g_mean[s.gi].y() += g_power * Pd_y;
                // d(power)/dP_full = -0.5 * d d^T, then dL/dSigma = -P G_P P.
                // Collapsed: dL/dSigma = 0.5 * g_power * (P d)(P d)^T.
                const double ha = 0.5 * g_power * Pd_x * Pd_x;
                const double hb = g_power * Pd_x * Pd_y;  // both off-diagonals
                const double hc = 0.5 * g_power * Pd_y * Pd_y;
                g_cov[s.gi] += Eigen::Vector3d(ha, hb, hc);
            }
        }
    }

    // Expand mean2d / cov2d gradients into attribute gradients.
    for (size_t i = 0; i < map.size(); ++i) {
        if (proj[i].culled) continue;
        if (g_mean[i].isZero(0.0) && g_cov[i].isZero(0.0)) continue;
        const auto& c = cache[i];
        const double iz = 1.0 / c.t.z();

        // dL/dSigma2d as a full symmetric matrix.
        Eigen::Matrix2d Gs;
        Gs << g_cov[i][0], 0.5 * g_cov[i][1],
              0.5 * g_cov[i][1], g_cov[i][2];

        // Sigma2d = M Sigma3 M^T (+reg): gradients wrt Sigma3 and M.
        const Eigen::Matrix3d Gsig3 = c.M.transpose() * Gs * c.M;
        const Eigen::Matrix<double, 2, 3> GM = 2.0 * Gs * c.M * c.sigma3;

        // Scale gradient: Sigma3 = R diag(exp(2s)) R^T.
        const Eigen::Matrix3d RtGR = c.R.transpose() * Gsig3 * c.R;
        for (int k = 0; k < 3; ++k)
            grad[i].log_scale[k] += RtGR(k, k) * 2.0 * c.s2[k];

        // Quaternion gradient: dL/dR = Gsig3 R D + Gsig3^T R D (Gsig3 symmetric).
        const Eigen::Matrix3d GR = 2.0 * Gsig3 * c.R * c.s2.asDiagonal();
        const Eigen::Vector4d qn = map[i].q.normalized();
        const auto dRdq = detail::rotation_quat_jacobian(qn);
        Eigen::Vector4d gq_hat;
        for (int k = 0; k < 4; ++k) gq_hat[k] = (GR.array() * dRdq[k].array()).sum();
        const double qnorm = map[i].q.norm();
        grad[i].q += (gq_hat - qn * qn.dot(gq_hat)) / qnorm;

        // Position gradient: through the projected mean and through J in M.
        const Eigen::Matrix<double, 2, 3> GJ = GM * pose_cw.R.transpose();
        Eigen::Vector3d g_t = c.J.transpose() * g_mean[i];
        g_t.x() += GJ(0, 2) * (-K.fx * iz * iz);
        g_t.y() += GJ(1, 2) * (-K.fy * iz * iz);
        g_t.z() += GJ(0, 0) * (-K.fx * iz * iz) + GJ(1, 1) * (-K.fy * iz * iz) +
                   GJ(0, 2) * (2.0 * K.fx * c.t.x() * iz * iz * iz) +
                   GJ(1, 2) * (2.0 * K.fy * c.t.y() * iz * iz * iz);
        grad[i].x += pose_cw.R.transpose() * g_t;
    }
    return grad;
}

// Optional pruning pass (off by default in the pipeline).
inline size_t prune_by_opacity(std::vector<Gaussian>& map, double min_opacity) {
    const size_t before = map.size();
    map.erase(std::remove_if(map.begin(), map.end(),
                             [&](const Gaussian& g) {
                                 return sigmoid(g.opacity_logit) < min_opacity;
                             }),
              map.end());
    return before - map.size();
}

}  // namespace monogs
