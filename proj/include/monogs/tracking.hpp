#pragma once

#include <Eigen/Cholesky>

#include "monogs/dataset.hpp"

namespace monogs {

// ---------------------------------------------------------------------------
// Ray-error correspondence search and robust pose optimization between the
// current frame and the reference keyframe.
// ---------------------------------------------------------------------------

struct Correspondence {
    Eigen::Vector2d ref_pixel;  // continuous pixel coords in the reference frame
    int target_index = -1;      // index into the target point list
    double q_match = 0;         // sqrt(Q_f * Q_k)
    double residual = 0;        // final ray error norm
};

struct PoseEstimate {
    SE3 T_kf;        // frame -> keyframe
    int iterations = 0;
    double final_cost = 0;  // robust cost E_r
};

struct TrackerConfig {
    double huber_delta = 0.01;
    double sigma_r = 0.003;
    int max_iterations = 50;
    double convergence_tol = 1e-8;
    double keyframe_match_threshold = 0.7;
    int grid_stride = 4;
    int mapping_frame_interval = 10;
};

inline Eigen::Vector3d normalize_ray(const Eigen::Vector3d& x) {
    const double n = x.norm();
    if (n <= 1e-12) throw DegenerateRayError("cannot normalize a zero-length ray");
    return x / n;
}

namespace detail {

inline double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        std::nth_element(v.begin(), v.begin() + mid - 1, v.end());
        m = 0.5 * (m + v[mid - 1]);
    }
    return m;
}

// Bilinear interpolation of a 3-channel pointmap (and its pixel derivatives).
inline void bilinear_point(const Image<double>& pm, double u, double v,
                           Eigen::Vector3d& p, Eigen::Vector3d& dpdu,
                           Eigen::Vector3d& dpdv) {
    const int W = pm.width(), H = pm.height();
    u = std::min(std::max(u, 0.0), W - 1.000001);
    v = std::min(std::max(v, 0.0), H - 1.000001);
    const int x0 = static_cast<int>(u), y0 = static_cast<int>(v);
    const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
    const double fu = u - x0, fv = v - y0;
    for (int c = 0; c < 3; ++c) {
        const double p00 = pm.at(y0, x0, c), p01 = pm.at(y0, x1, c);
        const double p10 = pm.at(y1, x0, c), p11 = pm.at(y1, x1, c);
        p[c] = (1 - fv) * ((1 - fu) * p00 + fu * p01) +
               fv * ((1 - fu) * p10 + fu * p11);
        dpdu[c] = (1 - fv) * (p01 - p00) + fv * (p11 - p10);
        dpdv[c] = (1 - fu) * (p10 - p00) + fu * (p11 - p01);
    }
}

inline double bilinear_scalar(const Image<double>& img, double u, double v) {
    const int W = img.width(), H = img.height();
    u = std::min(std::max(u, 0.0), W - 1.000001);
    v = std::min(std::max(v, 0.0), H - 1.000001);
    const int x0 = static_cast<int>(u), y0 = static_cast<int>(v);
    const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
    const double fu = u - x0, fv = v - y0;
    return (1 - fv) * ((1 - fu) * img.at(y0, x0) + fu * img.at(y0, x1)) +
           fv * ((1 - fu) * img.at(y1, x0) + fu * img.at(y1, x1));
}

}  // namespace detail

// For each target point, find the reference pixel whose unit viewing ray is
// closest: coarse grid search, then continuous Gauss-Newton refinement on the
// bilinearly interpolated pointmap. Matches with outlier residuals or low
// confidence are discarded.
inline std::vector<Correspondence> match_rays(
    const Image<double>& pointmap_ref, const std::vector<Eigen::Vector3d>& target_points,
    const Image<double>& conf_ref, const std::vector<double>& conf_target,
    const TrackerConfig& cfg = {}) {
    const int H = pointmap_ref.height(), W = pointmap_ref.width();

    // Coarse candidate grid of normalized reference rays.
    struct GridRay {
        Eigen::Vector3d ray;
        int x, y;
    };
    std::vector<GridRay> grid;
    for (int y = 0; y < H; y += cfg.grid_stride) {
        for (int x = 0; x < W; x += cfg.grid_stride) {
            if (conf_ref.at(y, x) <= 0) continue;
            Eigen::Vector3d p(pointmap_ref.at(y, x, 0), pointmap_ref.at(y, x, 1),
                              pointmap_ref.at(y, x, 2));
            const double n = p.norm();
            if (n <= 1e-12) continue;
            grid.push_back({p / n, x, y});
        }
    }
    if (grid.empty()) throw InsufficientMatchesError("reference frame has no confident pixels");

    std::vector<Correspondence> matches;
    for (size_t m = 0; m < target_points.size(); ++m) {
        if (conf_target[m] <= 0) continue;
        const double tn = target_points[m].norm();
        if (tn <= 1e-12) continue;
        const Eigen::Vector3d tray = target_points[m] / tn;

        double best = -2.0;
        int bx = 0, by = 0;
        for (const auto& g : grid) {
            const double dot = g.ray.dot(tray);
            if (dot > best) {
                best = dot;
                bx = g.x;
                by = g.y;
            }
        }

        // Continuous refinement with bilinear pointmap interpolation.
        double u = bx, v = by;
        Eigen::Vector3d p, dpdu, dpdv;
        for (int it = 0; it < 10; ++it) {
            detail::bilinear_point(pointmap_ref, u, v, p, dpdu, dpdv);
            const double pn = p.norm();
            if (pn <= 1e-9) break;
            const Eigen::Vector3d ph = p / pn;
            const Eigen::Vector3d r = ph - tray;
            const Eigen::Matrix3d dpsi =
                (Eigen::Matrix3d::Identity() - ph * ph.transpose()) / pn;
            Eigen::Matrix<double, 3, 2> Jpix;
            Jpix.col(0) = dpsi * dpdu;
            Jpix.col(1) = dpsi * dpdv;
            const Eigen::Matrix2d Ht =
                Jpix.transpose() * Jpix + 1e-12 * Eigen::Matrix2d::Identity();
            const Eigen::Vector2d step = Ht.ldlt().solve(-Jpix.transpose() * r);
            if (!step.allFinite()) break;
            u = std::min(std::max(u + step.x(), 0.0), W - 1.0);
            v = std::min(std::max(v + step.y(), 0.0), H - 1.0);
            if (step.norm() < 0.01) break;
        }

        detail::bilinear_point(pointmap_ref, u, v, p, dpdu, dpdv);
        const double pn = p.norm();
        if (pn <= 1e-9) continue;
        Correspondence c;
        c.ref_pixel = Eigen::Vector2d(u, v);
        c.target_index = static_cast<int>(m);
        c.residual = (p / pn - tray).norm();
        const double qr = detail::bilinear_scalar(conf_ref, u, v);
        c.q_match = std::sqrt(std::max(0.0, conf_target[m] * qr));
        matches.push_back(c);
    }

    if (!matches.empty()) {
        std::vector<double> res, qs;
        for (const auto& c : matches) {
            res.push_back(c.residual);
            qs.push_back(c.q_match);
        }
        const double med_r = detail::median_of(res);
        const double med_q = detail::median_of(qs);
        std::vector<Correspondence> kept;
        for (const auto& c : matches) {
            if (med_r > 0 && c.residual > 2.0 * med_r) continue;
            if (c.q_match < 0.1 * med_q) continue;
            kept.push_back(c);
        }
        matches = std::move(kept);
    }
    if (matches.size() < 6)
        throw InsufficientMatchesError("only " + std::to_string(matches.size()) +
                                       " ray matches survived filtering");
    return matches;
}

// Robust Gauss-Newton on SE(3). Residual per match: the difference of unit
// rays, scaled by the confidence weight w(q, sigma_r) = sigma_r / sqrt(q),
// under a Huber norm. Backtracking line search keeps the cost non-increasing.
inline PoseEstimate optimize_pose(const std::vector<Correspondence>& matches,
                                  const std::vector<Eigen::Vector3d>& points_f,
                                  const std::vector<Eigen::Vector3d>& points_k,
                                  const SE3& T_init, const TrackerConfig& cfg = {}) {
    if (matches.size() < 6)
        throw InsufficientMatchesError("pose optimization needs at least 6 matches");
    if (points_f.size() != matches.size() || points_k.size() != matches.size())
        throw ValidationError("match/point list size mismatch");

    const double delta = cfg.huber_delta;
    auto huber = [&](double e) {
        return e <= delta ? 0.5 * e * e : delta * (e - 0.5 * delta);
    };

    // Precompute keyframe rays and weights.
    std::vector<Eigen::Vector3d> rays_k(matches.size());
    std::vector<double> inv_w(matches.size());
    for (size_t i = 0; i < matches.size(); ++i) {
        rays_k[i] = normalize_ray(points_k[i]);
        const double q = std::max(1e-12, matches[i].q_match);
        inv_w[i] = std::sqrt(q) / cfg.sigma_r;  // 1 / w(q, sigma_r^2)
    }

    auto cost = [&](const SE3& T) {
        double E = 0;
        for (size_t i = 0; i < matches.size(); ++i) {
            const Eigen::Vector3d y = T * points_f[i];
            const double yn = y.norm();
            if (yn <= 1e-12) return std::numeric_limits<double>::infinity();
            E += huber(((rays_k[i] - y / yn) * inv_w[i]).norm());
        }
        return E;
    };

    SE3 T = T_init;
    double E = cost(T);
    int iterations = 0;
    for (; iterations < cfg.max_iterations; ++iterations) {
        Eigen::Matrix<double, 6, 6> Hm = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
        for (size_t i = 0; i < matches.size(); ++i) {
            const Eigen::Vector3d y = T * points_f[i];
            const double yn = y.norm();
            if (yn <= 1e-12) continue;
            const Eigen::Vector3d yh = y / yn;
            const Eigen::Vector3d r = (rays_k[i] - yh) * inv_w[i];
            const double e = r.norm();
            const double w_rob = (e <= delta || e <= 1e-15) ? 1.0 : delta / e;
            const Eigen::Matrix3d dpsi =
                (Eigen::Matrix3d::Identity() - yh * yh.transpose()) / yn;
            Eigen::Matrix<double, 3, 6> Jy;  // d(y)/d(xi), left perturbation
            Jy.leftCols<3>() = Eigen::Matrix3d::Identity();
            Jy.rightCols<3>() = -skew(y);
            const Eigen::Matrix<double, 3, 6> Jr = -inv_w[i] * dpsi * Jy;
            Hm.noalias() += w_rob * Jr.transpose() * Jr;
            g.noalias() += w_rob * Jr.transpose() * r;
        }

        Eigen::Matrix<double, 6, 1> step;
        bool solved = false;
        double damping = 0.0;
        for (int attempt = 0; attempt < 6 && !solved; ++attempt) {
            const Eigen::Matrix<double, 6, 6> Hd =
                Hm + damping * Eigen::Matrix<double, 6, 6>::Identity();
            Eigen::LDLT<Eigen::Matrix<double, 6, 6>> ldlt(Hd);
            if (ldlt.info() == Eigen::Success) {
                step = ldlt.solve(-g);
                if (step.allFinite() && (Hd * step + g).norm() < 1e-6 * (g.norm() + 1e-12)) {
                    solved = true;
                    break;
                }
            }
            damping = damping == 0.0 ? 1e-6 * Hm.trace() : damping * 10.0;
            if (!(damping > 0)) damping = 1e-9;
        }
        if (!solved)
            throw DegenerateGeometryError("singular normal equations in pose optimization");

        if (step.norm() < cfg.convergence_tol) break;

        // Backtracking line search.
        double scale = 1.0;
        bool accepted = false;
        for (int h = 0; h < 12; ++h) {
            const SE3 T_new = SE3::exp(scale * step) * T;
            const double E_new = cost(T_new);
            if (E_new <= E) {
                T = T_new;
                E = E_new;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if (!accepted) break;
        if ((scale * step).norm() < cfg.convergence_tol) { ++iterations; break; }
    }

    return PoseEstimate{T, iterations, E};
}

struct FrameRole {
    bool is_keyframe = false;
    bool is_mapping_frame = false;
};

// match_fraction: surviving matches over confident target pixels offered.
inline FrameRole keyframe_decision(int frame_index, double match_fraction,
                                   int last_selected_index,
                                   const TrackerConfig& cfg = {}) {
    FrameRole role;
    if (match_fraction < cfg.keyframe_match_threshold) {
        role.is_keyframe = true;
        return role;
    }
    const int gap = frame_index - last_selected_index;
    if (gap > 0 && gap % cfg.mapping_frame_interval == 0)
        role.is_mapping_frame = true;
    return role;
}

}  // namespace monogs
