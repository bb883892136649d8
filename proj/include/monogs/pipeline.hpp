#pragma once

#include "monogs/checkpoint.hpp"
#include "monogs/memory_bank.hpp"
#include "monogs/metrics.hpp"
#include "monogs/scale_supervision.hpp"
#include "monogs/tracking.hpp"

#include <iostream>
#include <memory>
#include <set>

namespace monogs {

// ---------------------------------------------------------------------------
// The full loop: track every frame against the current keyframe, spawn
// keyframes / mapping frames, maintain the memory bank and run map
// optimization, then evaluate rendering, segmentation and trajectory quality.
// ---------------------------------------------------------------------------

enum class ScaleMode { full, coarse_only, fine_only };
enum class MemoryMode { persistent, reset_per_keyframe };

struct LearningRates {
    double position = 1.6e-4;  // multiplied by the scene extent
    double rotation = 1e-3;
    double scale = 5e-3;
    double opacity = 5e-2;
    double color = 2.5e-3;
    double feature = 2.5e-3;
    double w_proj = 1e-3;
    double ce_head = 1e-2;
};

struct PipelineConfig {
    TrackerConfig tracker;
    LossWeights weights;
    LearningRates lr;
    int scale_levels = 4;
    int sample_pixels = 2000;
    double tau_m = 0.9;
    int feature_dim = 16;       // rendered feature dim d
    double temperature = 1.0;
    double desk_scale = 1.0 / 15.0;  // shrinks the 30K reference budget
    int iters_per_event = 150;
    int init_stride = 4;
    double new_gaussian_transmittance = 0.5;
    bool closed_set = false;
    ScaleMode scale_mode = ScaleMode::full;
    MemoryMode memory_mode = MemoryMode::persistent;
    uint64_t seed = 1;

    int total_budget() const {
        return std::max(1, static_cast<int>(std::lround(30000.0 * desk_scale)));
    }

    void validate() const {
        if (!(desk_scale > 0.0 && desk_scale <= 1.0))
            throw ConfigError("desk_scale must lie in (0, 1]");
        if (scale_levels < 1) throw ConfigError("scale_levels must be >= 1");
        if (sample_pixels < 2) throw ConfigError("sample_pixels must be >= 2");
        if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
        if (iters_per_event < 1) throw ConfigError("iters_per_event must be >= 1");
        if (init_stride < 1) throw ConfigError("init_stride must be >= 1");
        if (!(tau_m > 0.0 && tau_m <= 1.0)) throw ConfigError("tau_m must lie in (0, 1]");
        if (temperature <= 0.0) throw ConfigError("temperature must be > 0");
        if (weights.lambda_rgb < 0 || weights.lambda_corr < 0 ||
            weights.lambda_lang < 0 || weights.lambda_ce < 0 ||
            weights.lambda_ssim < 0 || weights.lambda_ssim > 1)
            throw ConfigError("loss weights must be non-negative (lambda_ssim in [0,1])");
    }
};

struct TrajectoryEstimate {
    std::vector<SE3> poses;  // world <- camera, one per processed frame
    std::vector<uint8_t> keyframe_flags;
};

struct SlamResult {
    std::vector<Gaussian> map;
    MemoryBank bank;
    Projection proj;
    Eigen::MatrixXd ce_head;  // K x d when closed_set, else empty
    std::map<int32_t, int> ce_classes;  // label -> head row
    TrajectoryEstimate trajectory;
    std::vector<MetricRow> loss_log;
    AdamOptimizer adam;
    double scene_extent = 1.0;
    int skipped_frames = 0;
    std::string rng_state;
};

struct EvalReport {
    double psnr = 0, ssim = 0;
    double miou = 0, fwiou = 0, acc = 0;
    double ate_rmse = 0;
};

// ---------------------------------------------------------------------------
// Trajectory text format: idx tx ty tz qx qy qz qw kf_flag
// ---------------------------------------------------------------------------

inline void save_trajectory(const TrajectoryEstimate& traj,
                            const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IOError("cannot open for writing: " + path.string());
    os.precision(17);
    for (size_t i = 0; i < traj.poses.size(); ++i) {
        const Eigen::Quaterniond q(traj.poses[i].R);
        const Eigen::Vector3d& t = traj.poses[i].t;
        os << i << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.x()
           << ' ' << q.y() << ' ' << q.z() << ' ' << q.w() << ' '
           << int(traj.keyframe_flags[i]) << '\n';
    }
    if (!os) throw IOError("write failed: " + path.string());
}

inline TrajectoryEstimate load_trajectory(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IOError("cannot open: " + path.string());
    TrajectoryEstimate traj;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        size_t idx;
        double tx, ty, tz, qx, qy, qz, qw;
        int kf;
        if (!(ls >> idx >> tx >> ty >> tz >> qx >> qy >> qz >> qw >> kf))
            throw FormatError("bad trajectory line: " + line);
        if (idx != traj.poses.size())
            throw FormatError("non-contiguous frame indices in trajectory");
        SE3 p;
        p.R = Eigen::Quaterniond(qw, qx, qy, qz).normalized().toRotationMatrix();
        p.t = Eigen::Vector3d(tx, ty, tz);
        traj.poses.push_back(p);
        traj.keyframe_flags.push_back(static_cast<uint8_t>(kf != 0));
    }
    return traj;
}

inline void write_ppm(const Image<double>& rgb, const std::filesystem::path& path) {
    if (rgb.channels() != 3) throw ValidationError("write_ppm expects 3 channels");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IOError("cannot open for writing: " + path.string());
    os << "P6\n" << rgb.width() << ' ' << rgb.height() << "\n255\n";
    for (int y = 0; y < rgb.height(); ++y)
        for (int x = 0; x < rgb.width(); ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::min(1.0, std::max(0.0, rgb.at(y, x, c)));
                os.put(static_cast<char>(std::lround(v * 255.0)));
            }
    if (!os) throw IOError("write failed: " + path.string());
}

// PCA projection of a d-channel feature image onto 3 channels in [0,1] for
// visualization.
inline Image<double> feature_pca_rgb(const Image<double>& feature) {
    const int H = feature.height(), W = feature.width(), d = feature.channels();
    if (d == 0 || H == 0) throw ValidationError("empty feature map");
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < d; ++c) mean[c] += feature.at(y, x, c);
    mean /= double(H) * W;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd f(d);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < d; ++c) f[c] = feature.at(y, x, c) - mean[c];
            cov.noalias() += f * f.transpose();
        }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const int k = std::min(3, d);
    Eigen::MatrixXd basis = eig.eigenvectors().rightCols(k);  // ascending order

    Image<double> rgb(H, W, 3, 0.5);
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e300), hi = -lo;
    std::vector<Eigen::Vector3d> proj(static_cast<size_t>(H) * W,
                                      Eigen::Vector3d::Zero());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < d; ++c) f[c] = feature.at(y, x, c) - mean[c];
            const Eigen::VectorXd p = basis.transpose() * f;
            Eigen::Vector3d v = Eigen::Vector3d::Zero();
            v.head(k) = p;
            proj[static_cast<size_t>(y) * W + x] = v;
            lo = lo.cwiseMin(v);
            hi = hi.cwiseMax(v);
        }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                const double span = hi[c] - lo[c];
                rgb.at(y, x, c) =
                    span > 1e-12
                        ? (proj[static_cast<size_t>(y) * W + x][c] - lo[c]) / span
                        : 0.5;
            }
    return rgb;
}

// ---------------------------------------------------------------------------
// run_slam
// ---------------------------------------------------------------------------

namespace detail {

struct SupervisionFrame {
    int frame_index = -1;
    bool is_keyframe = false;
    std::unique_ptr<ScaleSupervision> sup;
    std::vector<const MaskRecord*> masks_asc;  // ascending 3D scale
};

// Lift whatever masks survive (skipping empty lifts) and build the table.
inline std::unique_ptr<ScaleSupervision> build_supervision(
    const FrameRecord& frame, const std::vector<double>& levels) {
    std::vector<LiftedMask> lifted;
    for (const auto& m : frame.masks) {
        try {
            lifted.push_back(lift_mask_scale(m, frame.pointmap, frame.confidence));
        } catch (const EmptyLiftError&) {
            continue;  // mask has no confident support in this frame
        }
    }
    return std::make_unique<ScaleSupervision>(std::move(lifted), levels,
                                              frame.rgb.height(), frame.rgb.width());
}

inline std::vector<const MaskRecord*> masks_ascending(const ScaleSupervision& sup) {
    std::vector<const MaskRecord*> out;
    for (auto it = sup.masks().rbegin(); it != sup.masks().rend(); ++it)
        out.push_back(it->mask);
    return out;
}

inline std::vector<std::pair<int, int>> sample_pixels(int H, int W, int n, Rng& rng,
                                                      std::vector<int>& scratch) {
    const int total = H * W;
    n = std::min(n, total);
    if (static_cast<int>(scratch.size()) != total) {
        scratch.resize(total);
        std::iota(scratch.begin(), scratch.end(), 0);
    }
    std::vector<std::pair<int, int>> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        std::uniform_int_distribution<int> pick(i, total - 1);
        std::swap(scratch[i], scratch[pick(rng)]);
        out.emplace_back(scratch[i] / W, scratch[i] % W);
    }
    return out;
}

}  // namespace detail

inline SlamResult run_slam(const SceneDataset& scene, const PipelineConfig& cfg) {
    cfg.validate();
    if (scene.frames.empty()) throw ValidationError("scene has no frames");
    const int n_frames = static_cast<int>(scene.frames.size());
    const Intrinsics& K = scene.camera;
    const int H = K.height, W = K.width;
    const int d = cfg.feature_dim;
    const int D = scene.embedding_dim;

    Rng rng(cfg.seed);
    SlamResult res;
    res.proj = Projection::init(D, d, rng);
    if (cfg.closed_set) {
        std::set<int32_t> labels;
        for (const auto& fr : scene.frames)
            for (const auto& m : fr.masks) labels.insert(m.label_id);
        int row = 0;
        for (int32_t l : labels) res.ce_classes[l] = row++;
        res.ce_head = Eigen::MatrixXd(row, d);
        std::normal_distribution<double> head_init(0.0, 0.1);
        for (Eigen::Index i = 0; i < res.ce_head.size(); ++i)
            res.ce_head.data()[i] = head_init(rng);
    }

    std::vector<detail::SupervisionFrame> sup_frames;
    std::vector<double> levels{1.0};  // refreshed from keyframe masks
    int current_kf = -1;
    int last_selected = 0;
    int budget_used = 0;
    const int budget = cfg.total_budget();
    std::vector<int> pixel_scratch;
    RenderOptions ropt;

    // Per-supervision-frame closed-set class images (label layer 0 -> head row).
    std::vector<Image<int32_t>> class_images;

    auto refresh_levels = [&]() {
        std::vector<double> scales;
        for (const auto& sf : sup_frames) {
            if (!sf.is_keyframe) continue;
            for (const auto& lm : sf.sup->masks()) scales.push_back(lm.scale3d);
        }
        if (scales.empty()) {
            levels = {1.0};
        } else {
            std::vector<double> lv = compute_levels(scales, cfg.scale_levels);
            if (cfg.scale_mode == ScaleMode::coarse_only)
                lv = {lv.back()};
            else if (cfg.scale_mode == ScaleMode::fine_only)
                lv = {lv.front()};
            levels = std::move(lv);
        }
        // Rebuild every table against the refreshed levels.
        for (auto& sf : sup_frames) {
            sf.sup = detail::build_supervision(scene.frames[sf.frame_index], levels);
            sf.masks_asc = detail::masks_ascending(*sf.sup);
        }
    };

    auto add_class_image = [&](int frame_index) {
        if (!cfg.closed_set) return;
        const auto& fr = scene.frames[frame_index];
        Image<int32_t> cls(H, W, 1, -1);
        if (!fr.mask_layers.empty())
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const int32_t l = fr.mask_layers[0].at(y, x);
                    if (l != 0) cls.at(y, x) = res.ce_classes.at(l);
                }
        class_images.push_back(std::move(cls));
    };

    auto spawn_keyframe = [&](int frame_index, const SE3& pose_wc) {
        const FrameRecord& fr = scene.frames[frame_index];
        std::unique_ptr<Image<double>> keep;
        if (!res.map.empty()) {
            const RenderOutput view = render(res.map, pose_wc.inverse(), K, ropt);
            keep = std::make_unique<Image<double>>(H, W, 1);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    keep->at(y, x) = view.final_transmittance.at(y, x) -
                                     cfg.new_gaussian_transmittance;
        }
        try {
            auto fresh = init_from_pointmap(fr, pose_wc, K, cfg.init_stride, d, rng,
                                            0.0, keep.get());
            res.map.insert(res.map.end(), fresh.begin(), fresh.end());
        } catch (const EmptyInitError&) {
            // fully covered keyframe: no new Gaussians, still a supervision frame
        }
        if (res.map.empty()) throw EmptyInitError("first keyframe produced no Gaussians");
        if (res.scene_extent == 1.0 && sup_frames.empty()) {
            Eigen::Vector3d lo = res.map[0].x, hi = res.map[0].x;
            for (const auto& g : res.map) {
                lo = lo.cwiseMin(g.x);
                hi = hi.cwiseMax(g.x);
            }
            res.scene_extent = std::max(1e-6, (hi - lo).norm());
        }

        detail::SupervisionFrame sf;
        sf.frame_index = frame_index;
        sf.is_keyframe = true;
        sf.sup = detail::build_supervision(fr, levels);
        sup_frames.push_back(std::move(sf));
        add_class_image(frame_index);
        refresh_levels();

        if (cfg.memory_mode == MemoryMode::reset_per_keyframe) {
            res.bank.entries = Eigen::MatrixXd();
            res.bank.insertion_log.clear();
        }
        for (size_t mi = 0; mi < fr.masks.size(); ++mi)
            maybe_insert(res.bank, masked_embedding(fr, static_cast<int>(mi)), cfg.tau_m,
                         frame_index, static_cast<int>(mi));
        current_kf = frame_index;
    };

    auto add_mapping_frame = [&](int frame_index) {
        detail::SupervisionFrame sf;
        sf.frame_index = frame_index;
        sf.sup = detail::build_supervision(scene.frames[frame_index], levels);
        sf.masks_asc = detail::masks_ascending(*sf.sup);
        sup_frames.push_back(std::move(sf));
        add_class_image(frame_index);
    };

    // One optimization step on a uniformly chosen supervision frame.
    auto optimize_once = [&]() {
        std::uniform_int_distribution<size_t> pick(0, sup_frames.size() - 1);
        const size_t si = pick(rng);
        const auto& sf = sup_frames[si];
        const FrameRecord& fr = scene.frames[sf.frame_index];
        const SE3 pose_wc = res.trajectory.poses[sf.frame_index];
        const SE3 pose_cw = pose_wc.inverse();

        const RenderOutput view = render(res.map, pose_cw, K, ropt);
        const RgbLoss rgb = loss_rgb(view.color, fr.rgb, cfg.weights.lambda_ssim);

        const auto pixels = detail::sample_pixels(H, W, cfg.sample_pixels, rng,
                                                  pixel_scratch);
        const CorrLoss corr = loss_corr(view.feature, *sf.sup, pixels);

        // Language regression on pixels that have a mask target, through the
        // memory-bank readout.
        std::vector<Eigen::VectorXd> readouts(pixels.size()),
            targets(pixels.size());
        std::vector<uint8_t> valid(pixels.size(), 0);
        std::vector<Eigen::VectorXd> queries(pixels.size());
        if (res.bank.size() > 0) {
            for (size_t i = 0; i < pixels.size(); ++i) {
                const auto [y, x] = pixels[i];
                auto tgt = pixel_language_target(y, x, sf.masks_asc, W);
                if (!tgt) continue;
                Eigen::VectorXd q(d);
                for (int c = 0; c < d; ++c) q[c] = view.feature.at(y, x, c);
                queries[i] = std::move(q);
                readouts[i] = readout(queries[i], res.bank, res.proj, cfg.temperature);
                targets[i] = std::move(*tgt);
                valid[i] = 1;
            }
        }
        for (size_t i = 0; i < pixels.size(); ++i) {
            if (valid[i]) continue;
            readouts[i] = Eigen::VectorXd::Zero(D);
            targets[i] = Eigen::VectorXd::Zero(D);
        }
        const LangLoss lang = loss_lang(readouts, targets, valid);

        CeLoss ce;
        if (cfg.closed_set)
            ce = loss_ce_closed_set(view.feature, res.ce_head, class_images[si], pixels);

        const LossReport report =
            loss_total(rgb.value, corr.value, lang.value, ce.value, cfg.weights);

        // Assemble upstream gradients for the rasterizer backward pass.
        Image<double> d_color(H, W, 3);
        for (size_t i = 0; i < d_color.size(); ++i)
            d_color.raw()[i] = cfg.weights.lambda_rgb * rgb.d_rendered.raw()[i];
        Image<double> d_feature(H, W, d, 0.0);
        Eigen::MatrixXd d_W = Eigen::MatrixXd::Zero(D, d);
        for (size_t i = 0; i < pixels.size(); ++i) {
            const auto [y, x] = pixels[i];
            for (int c = 0; c < d; ++c)
                d_feature.at(y, x, c) += cfg.weights.lambda_corr * corr.d_features[i][c];
            if (valid[i]) {
                const ReadoutGrad rg =
                    readout_backward(queries[i], res.bank, res.proj,
                                     cfg.weights.lambda_lang * lang.d_readout[i],
                                     cfg.temperature);
                for (int c = 0; c < d; ++c) d_feature.at(y, x, c) += rg.d_query[c];
                d_W += rg.d_W;
            }
            if (cfg.closed_set && ce.d_features[i].size() == d)
                for (int c = 0; c < d; ++c)
                    d_feature.at(y, x, c) += cfg.weights.lambda_ce * ce.d_features[i][c];
        }

        const GradientBuffer grads =
            render_backward(res.map, pose_cw, K, d_color, d_feature, ropt);

        // Flatten per attribute group and step.
        const size_t n = res.map.size();
        Eigen::VectorXd gp(3 * n), gq(4 * n), gs(3 * n), go(n), gc(3 * n), gf(d * n);
        Eigen::VectorXd pp(3 * n), pq(4 * n), ps(3 * n), po(n), pc(3 * n), pf(d * n);
        for (size_t i = 0; i < n; ++i) {
            gp.segment<3>(3 * i) = grads[i].x;
            gq.segment<4>(4 * i) = grads[i].q;
            gs.segment<3>(3 * i) = grads[i].log_scale;
            go[i] = grads[i].opacity_logit;
            gc.segment<3>(3 * i) = grads[i].color_logit;
            gf.segment(d * i, d) = grads[i].feature;
            pp.segment<3>(3 * i) = res.map[i].x;
            pq.segment<4>(4 * i) = res.map[i].q;
            ps.segment<3>(3 * i) = res.map[i].log_scale;
            po[i] = res.map[i].opacity_logit;
            pc.segment<3>(3 * i) = res.map[i].color_logit;
            pf.segment(d * i, d) = res.map[i].feature;
        }
        res.adam.begin_step();
        res.adam.step("position", pp, gp, cfg.lr.position * res.scene_extent);
        res.adam.step("rotation", pq, gq, cfg.lr.rotation);
        res.adam.step("scale", ps, gs, cfg.lr.scale);
        res.adam.step("opacity", po, go, cfg.lr.opacity);
        res.adam.step("color", pc, gc, cfg.lr.color);
        res.adam.step("feature", pf, gf, cfg.lr.feature);
        Eigen::Map<Eigen::VectorXd> w_flat(res.proj.W.data(), res.proj.W.size());
        Eigen::Map<Eigen::VectorXd> w_grad(d_W.data(), d_W.size());
        res.adam.step("w_proj", w_flat, Eigen::VectorXd(w_grad), cfg.lr.w_proj);
        if (cfg.closed_set && res.ce_head.size() > 0) {
            Eigen::Map<Eigen::VectorXd> h_flat(res.ce_head.data(), res.ce_head.size());
            Eigen::Map<Eigen::VectorXd> h_grad(ce.d_head.data(), ce.d_head.size());
            res.adam.step("ce_head", h_flat,
                          Eigen::VectorXd(cfg.weights.lambda_ce * h_grad),
                          cfg.lr.ce_head);
        }
        for (size_t i = 0; i < n; ++i) {
            res.map[i].x = pp.segment<3>(3 * i);
            res.map[i].q = pq.segment<4>(4 * i).normalized();
            res.map[i].log_scale = ps.segment<3>(3 * i);
            res.map[i].opacity_logit = po[i];
            res.map[i].color_logit = pc.segment<3>(3 * i);
            res.map[i].feature = pf.segment(d * i, d);
        }

        ++budget_used;
        res.loss_log.push_back({{"iter", double(budget_used)},
                                {"L_rgb", report.rgb},
                                {"L_corr", report.corr},
                                {"L_lang", report.lang},
                                {"L_ce", report.ce},
                                {"L_total", report.total}});
    };

    auto run_event = [&](int iters) {
        iters = std::min(iters, budget - budget_used);
        for (int i = 0; i < iters; ++i) optimize_once();
    };

    // ---- frame loop ----
    for (int fi = 0; fi < n_frames; ++fi) {
        if (fi == 0) {
            res.trajectory.poses.push_back(SE3::identity());
            res.trajectory.keyframe_flags.push_back(1);
            spawn_keyframe(0, SE3::identity());
            last_selected = 0;
            run_event(cfg.iters_per_event);
            continue;
        }

        // Constant-velocity prediction.
        SE3 pred = res.trajectory.poses[fi - 1];
        if (fi >= 2)
            pred = (pred * (res.trajectory.poses[fi - 2].inverse() *
                            res.trajectory.poses[fi - 1]))
                       .orthonormalized();

        const FrameRecord& fr = scene.frames[fi];
        const FrameRecord& kf = scene.frames[current_kf];
        const SE3& kf_pose = res.trajectory.poses[current_kf];

        std::vector<Eigen::Vector3d> target_points;
        std::vector<double> target_conf;
        for (int y = 0; y < H; y += cfg.tracker.grid_stride)
            for (int x = 0; x < W; x += cfg.tracker.grid_stride) {
                if (fr.confidence.at(y, x) <= 0) continue;
                target_points.emplace_back(fr.pointmap.at(y, x, 0),
                                           fr.pointmap.at(y, x, 1),
                                           fr.pointmap.at(y, x, 2));
                target_conf.push_back(fr.confidence.at(y, x));
            }
        const size_t offered = target_points.size();

        // Confident keyframe grid cells, the denominator of the coverage
        // fraction that drives keyframe selection.
        size_t kf_cells = 0;
        for (int y = 0; y < H; y += cfg.tracker.grid_stride)
            for (int x = 0; x < W; x += cfg.tracker.grid_stride)
                if (kf.confidence.at(y, x) > 0) ++kf_cells;

        bool tracked = false;
        double match_fraction = 0.0;
        SE3 pose_wc = pred;
        try {
            if (offered == 0 || kf_cells == 0)
                throw InsufficientMatchesError("frame has no confident pixels");
            SE3 T = kf_pose.inverse() * pred;  // frame camera -> keyframe camera
            // Correspondence search runs on the cross-frame geometry the
            // front end supplies (the dataset's pose annotations stand in for
            // a two-view matching network); it must not depend on the pose
            // being estimated, or matching would cancel the very residual the
            // optimizer minimizes. Pose optimization then starts from the
            // constant-velocity prediction.
            const SE3 T_match = (fr.gt_pose && scene.frames[current_kf].gt_pose)
                                    ? scene.frames[current_kf].gt_pose->inverse() *
                                          (*fr.gt_pose)
                                    : T;
            std::vector<Eigen::Vector3d> warped(offered);
            for (size_t i = 0; i < offered; ++i) warped[i] = T_match * target_points[i];
            const auto matches = match_rays(kf.pointmap, warped, kf.confidence,
                                            target_conf, cfg.tracker);
            std::vector<Eigen::Vector3d> pts_f, pts_k;
            for (const auto& c : matches) {
                pts_f.push_back(target_points[c.target_index]);
                Eigen::Vector3d p, du, dv;
                detail::bilinear_point(kf.pointmap, c.ref_pixel.x(), c.ref_pixel.y(),
                                       p, du, dv);
                pts_k.push_back(p);
            }
            const PoseEstimate est = optimize_pose(matches, pts_f, pts_k, T, cfg.tracker);
            T = est.T_kf;
            pose_wc = (kf_pose * T).orthonormalized();
            // Keyframe coverage: confident keyframe cells whose points are
            // still reliably matchable from the current frame. A cell counts
            // only if its point (a) reprojects into a confident pixel of the
            // current frame, (b) agrees in range with the current frame's
            // pointmap there (so occluded surfaces drop out) and (c) is seen
            // from a viewing direction within 45 degrees of the keyframe's
            // (matching degrades with viewpoint change).
            constexpr double kViewCosLimit = 0.70710678118654752;  // cos 45 deg
            constexpr double kRangeTol = 0.1;  // relative range agreement
            const SE3 T_fk = T.inverse();
            size_t covered = 0;
            for (int y = 0; y < H; y += cfg.tracker.grid_stride)
                for (int x = 0; x < W; x += cfg.tracker.grid_stride) {
                    if (kf.confidence.at(y, x) <= 0) continue;
                    const Eigen::Vector3d pk(kf.pointmap.at(y, x, 0),
                                             kf.pointmap.at(y, x, 1),
                                             kf.pointmap.at(y, x, 2));
                    const Eigen::Vector3d pf = T_fk * pk;
                    if (pf.z() <= 0.01) continue;
                    const double u = K.fx * pf.x() / pf.z() + K.cx;
                    const double v = K.fy * pf.y() / pf.z() + K.cy;
                    if (u < 0 || u > W - 1 || v < 0 || v > H - 1) continue;
                    const int ui = int(std::lround(u)), vi = int(std::lround(v));
                    if (fr.confidence.at(vi, ui) <= 0) continue;
                    const Eigen::Vector3d pm(fr.pointmap.at(vi, ui, 0),
                                             fr.pointmap.at(vi, ui, 1),
                                             fr.pointmap.at(vi, ui, 2));
                    if (std::abs(pm.norm() - pf.norm()) >
                        kRangeTol * std::max(pf.norm(), 1e-6))
                        continue;
                    // Viewing rays toward the point from each camera centre,
                    // both expressed in keyframe coordinates.
                    const Eigen::Vector3d d_kf = pk.normalized();
                    const Eigen::Vector3d d_fr = pk - T.t;
                    if (d_kf.dot(d_fr) < kViewCosLimit * std::max(d_fr.norm(), 1e-12))
                        continue;
                    ++covered;
                }
            match_fraction = double(covered) / double(kf_cells);
            tracked = true;
        } catch (const Error& e) {
            std::cerr << "warning: tracking failed on frame " << fi << ": " << e.what()
                      << " (skipping)\n";
            ++res.skipped_frames;
        }

        res.trajectory.poses.push_back(pose_wc);
        res.trajectory.keyframe_flags.push_back(0);
        if (!tracked) continue;

        const FrameRole role =
            keyframe_decision(fi, match_fraction, last_selected, cfg.tracker);
        if (std::getenv("MONOGS_TRACE")) {
            std::cerr << "frame " << fi << " frac " << match_fraction << " kf "
                      << role.is_keyframe << " map " << role.is_mapping_frame
                      << " cur_kf " << current_kf;
            if (fr.gt_pose && scene.frames[0].gt_pose) {
                const SE3 gt_rel = scene.frames[0].gt_pose->inverse() * (*fr.gt_pose);
                std::cerr << " rot_err " << rotation_distance(pose_wc.R, gt_rel.R)
                          << " t_err " << (pose_wc.t - gt_rel.t).norm();
            }
            std::cerr << "\n";
        }
        if (role.is_keyframe) {
            res.trajectory.keyframe_flags[fi] = 1;
            spawn_keyframe(fi, pose_wc);
            last_selected = fi;
            run_event(cfg.iters_per_event);
        } else if (role.is_mapping_frame) {
            add_mapping_frame(fi);
            last_selected = fi;
            run_event(cfg.iters_per_event);
        }
    }

    if (res.skipped_frames > n_frames / 5)
        throw RunFailedError("more than 20% of frames failed tracking (" +
                             std::to_string(res.skipped_frames) + "/" +
                             std::to_string(n_frames) + ")");

    // Spend whatever is left of the budget.
    run_event(budget - budget_used);

    std::ostringstream rs;
    rs << rng;
    res.rng_state = rs.str();
    return res;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// Novel-view rendering quality on held-out (non-keyframe) frames.
inline std::pair<double, double> eval_render(const std::vector<Gaussian>& map,
                                             const TrajectoryEstimate& traj,
                                             const SceneDataset& scene,
                                             int holdout_stride = 1) {
    if (holdout_stride < 1) throw ConfigError("holdout stride must be >= 1");
    double psnr_sum = 0, ssim_sum = 0;
    int count = 0, seen = 0;
    RenderOptions ropt;
    for (size_t fi = 0; fi < scene.frames.size() && fi < traj.poses.size(); ++fi) {
        if (traj.keyframe_flags[fi]) continue;
        if (seen++ % holdout_stride != 0) continue;
        const RenderOutput view = render(map, traj.poses[fi].inverse(), scene.camera, ropt);
        psnr_sum += psnr(view.color, scene.frames[fi].rgb);
        ssim_sum += ssim(view.color, scene.frames[fi].rgb);
        ++count;
    }
    if (count == 0) throw InsufficientDataError("no held-out frames to evaluate");
    return {psnr_sum / count, ssim_sum / count};
}

// Open-set segmentation: per pixel, read out a language feature and assign the
// query with the highest cosine similarity. Ground truth is the finest mask
// layer; unlabeled pixels are ignored.
inline SegmentationMetrics eval_segmentation(
    const std::vector<Gaussian>& map, const Projection& proj, const MemoryBank& bank,
    const SceneDataset& scene, const std::map<int32_t, Eigen::VectorXd>& queries,
    const TrajectoryEstimate& traj, int holdout_stride = 1, double temperature = 1.0) {
    if (queries.empty()) throw ConfigError("empty query set");
    std::vector<int32_t> labels;
    Eigen::MatrixXd Q(queries.size(), scene.embedding_dim);
    for (const auto& [l, v] : queries) {
        if (v.size() != scene.embedding_dim)
            throw ValidationError("query embedding dim mismatch");
        Q.row(labels.size()) = v.transpose() / std::max(v.norm(), 1e-8);
        labels.push_back(l);
    }

    const int H = scene.camera.height, W = scene.camera.width;
    std::vector<Image<int32_t>> preds, gts;
    RenderOptions ropt;
    int seen = 0;
    for (size_t fi = 0; fi < scene.frames.size() && fi < traj.poses.size(); ++fi) {
        if (traj.keyframe_flags[fi]) continue;
        if (seen++ % holdout_stride != 0) continue;
        const auto& fr = scene.frames[fi];
        if (fr.mask_layers.empty()) continue;
        const RenderOutput view = render(map, traj.poses[fi].inverse(), scene.camera, ropt);
        Image<int32_t> pred(H, W, 1, 0);
        const int d = view.feature.channels();
        Eigen::VectorXd q(d);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                for (int c = 0; c < d; ++c) q[c] = view.feature.at(y, x, c);
                const Eigen::VectorXd fhat = readout(q, bank, proj, temperature);
                const Eigen::VectorXd sims =
                    Q * (fhat / std::max(fhat.norm(), 1e-8));
                Eigen::Index best;
                sims.maxCoeff(&best);
                pred.at(y, x) = labels[best];
            }
        preds.push_back(std::move(pred));
        gts.push_back(fr.mask_layers[0]);
    }
    if (preds.empty()) throw InsufficientDataError("no held-out frames to evaluate");

    // Stack frames vertically so the confusion is pooled across the holdout.
    Image<int32_t> pred_all(H * int(preds.size()), W, 1);
    Image<int32_t> gt_all(H * int(gts.size()), W, 1);
    for (size_t i = 0; i < preds.size(); ++i)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                pred_all.at(int(i) * H + y, x) = preds[i].at(y, x);
                gt_all.at(int(i) * H + y, x) = gts[i].at(y, x);
            }
    return segmentation_metrics(pred_all, gt_all);
}

inline double eval_ate(const TrajectoryEstimate& traj, const SceneDataset& scene) {
    std::vector<Eigen::Vector3d> est, ref;
    for (size_t fi = 0; fi < scene.frames.size() && fi < traj.poses.size(); ++fi) {
        if (!scene.frames[fi].gt_pose) continue;
        est.push_back(traj.poses[fi].t);
        ref.push_back(scene.frames[fi].gt_pose->t);
    }
    return ate_rmse(est, ref).rmse;
}

// ---------------------------------------------------------------------------
// Report plots (SVG), no external dependencies.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string svg_header(int w, int h) {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
       << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    return os.str();
}

}  // namespace detail

inline void plot_report(const std::vector<MetricRow>& loss_log,
                        const EvalReport& report,
                        const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const int W = 640, H = 400, pad = 50;

    {  // loss curves
        std::ofstream os(out_dir / "loss_curves.svg");
        if (!os) throw IOError("cannot write loss plot");
        os << detail::svg_header(W, H);
        os << "<line x1=\"" << pad << "\" y1=\"" << H - pad << "\" x2=\"" << W - pad
           << "\" y2=\"" << H - pad << "\" stroke=\"black\"/>\n";
        os << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad
           << "\" y2=\"" << H - pad << "\" stroke=\"black\"/>\n";
        if (!loss_log.empty()) {
            const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd",
                                    "#000000"};
            double lo = 1e300, hi = -1e300;
            for (const auto& row : loss_log)
                for (size_t c = 1; c < row.size(); ++c) {
                    lo = std::min(lo, row[c].second);
                    hi = std::max(hi, row[c].second);
                }
            if (hi <= lo) hi = lo + 1;
            const size_t n_curves = loss_log.front().size() - 1;
            for (size_t c = 0; c < n_curves; ++c) {
                os << "<polyline fill=\"none\" stroke=\"" << colors[c % 5]
                   << "\" points=\"";
                for (size_t i = 0; i < loss_log.size(); ++i) {
                    const double x =
                        pad + (W - 2.0 * pad) * double(i) /
                                  std::max<size_t>(1, loss_log.size() - 1);
                    const double y =
                        H - pad -
                        (H - 2.0 * pad) * (loss_log[i][c + 1].second - lo) / (hi - lo);
                    os << x << ',' << y << ' ';
                }
                os << "\"/>\n";
                os << "<text x=\"" << pad + 8 << "\" y=\"" << pad + 16 * (c + 1)
                   << "\" fill=\"" << colors[c % 5] << "\" font-size=\"12\">"
                   << loss_log.front()[c + 1].first << "</text>\n";
            }
        }
        os << "</svg>\n";
    }

    {  // metric bars
        std::ofstream os(out_dir / "metrics.svg");
        if (!os) throw IOError("cannot write metrics plot");
        os << detail::svg_header(W, H);
        const std::vector<std::pair<std::string, double>> bars = {
            {"psnr/50", report.psnr / 50.0}, {"ssim", report.ssim},
            {"miou", report.miou},           {"fwiou", report.fwiou},
            {"acc", report.acc},             {"ate", report.ate_rmse}};
        const double bw = (W - 2.0 * pad) / bars.size();
        for (size_t i = 0; i < bars.size(); ++i) {
            const double v = std::min(1.0, std::max(0.0, bars[i].second));
            const double bh = (H - 2.0 * pad) * v;
            os << "<rect x=\"" << pad + i * bw + 6 << "\" y=\"" << H - pad - bh
               << "\" width=\"" << bw - 12 << "\" height=\"" << bh
               << "\" fill=\"#1f77b4\"/>\n";
            os << "<text x=\"" << pad + i * bw + bw / 2 << "\" y=\"" << H - pad + 16
               << "\" text-anchor=\"middle\" font-size=\"12\">" << bars[i].first
               << "</text>\n";
        }
        os << "</svg>\n";
    }
}

// ---------------------------------------------------------------------------
// Checkpoint glue
// ---------------------------------------------------------------------------

inline Checkpoint make_checkpoint(const SlamResult& res, const std::string& config_json) {
    Checkpoint ck;
    ck.gaussians = res.map;
    ck.bank = res.bank;
    ck.proj = res.proj;
    ck.adam_groups = res.adam.groups();
    ck.adam_step = res.adam.step_count();
    ck.config_json = config_json;
    ck.rng_state = res.rng_state;
    return ck;
}

}  // namespace monogs
