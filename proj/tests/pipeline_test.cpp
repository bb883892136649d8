#include <gtest/gtest.h>

#include "monogs/config.hpp"

#include <fstream>
#include <sstream>

using namespace monogs;
namespace fs = std::filesystem;

namespace {

SceneDataset small_scene() {
    SynthConfig sc;
    sc.height = 48;
    sc.width = 48;
    sc.n_frames = 24;
    sc.n_objects = 3;
    sc.parts_per_object = 2;
    sc.angular_span = M_PI;
    sc.seed = 5;
    return generate_scene(sc);
}

PipelineConfig small_config() {
    PipelineConfig cfg;
    cfg.desk_scale = 0.01;  // 300-iteration budget
    cfg.sample_pixels = 500;
    cfg.feature_dim = 8;
    cfg.seed = 1;
    return cfg;
}

std::map<int32_t, Eigen::VectorXd> finest_queries(const SceneDataset& scene) {
    std::map<int32_t, Eigen::VectorXd> q;
    for (const auto& fr : scene.frames)
        for (const auto& m : fr.masks)
            if (m.layer == 0) q.emplace(m.label_id, m.embedding);
    return q;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST(PipelineConfig, Validation) {
    PipelineConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(cfg.total_budget(), 2000);  // 30000 / 15

    PipelineConfig bad = cfg;
    bad.desk_scale = 0.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = cfg;
    bad.sample_pixels = 1;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = cfg;
    bad.tau_m = 1.5;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = cfg;
    bad.temperature = 0.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = cfg;
    bad.weights.lambda_ssim = 1.5;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(RunSlam, TracksMapsAndEvaluates) {
    const SceneDataset scene = small_scene();
    const PipelineConfig cfg = small_config();
    const SlamResult res = run_slam(scene, cfg);

    // Frame 0 is the anchor keyframe at the identity.
    ASSERT_EQ(res.trajectory.poses.size(), scene.frames.size());
    ASSERT_EQ(res.trajectory.keyframe_flags.size(), scene.frames.size());
    EXPECT_TRUE(res.trajectory.keyframe_flags[0]);
    EXPECT_LT((res.trajectory.poses[0].matrix() - SE3::identity().matrix()).norm(),
              1e-15);

    EXPECT_FALSE(res.map.empty());
    EXPECT_GE(res.bank.size(), 1);
    EXPECT_EQ(res.proj.W.rows(), scene.embedding_dim);
    EXPECT_EQ(res.proj.W.cols(), cfg.feature_dim);
    EXPECT_EQ(res.skipped_frames, 0);
    EXPECT_FALSE(res.loss_log.empty());
    EXPECT_LE(res.loss_log.size(), size_t(cfg.total_budget()));

    // The trajectory recovers the ground-truth orbit: poses 0 and k are both
    // expressed in the frame-0 camera frame, so compare relative motion.
    for (size_t i = 0; i < scene.frames.size(); ++i) {
        const SE3 gt_rel =
            scene.frames[0].gt_pose->inverse() * (*scene.frames[i].gt_pose);
        EXPECT_LT(rotation_distance(res.trajectory.poses[i].R, gt_rel.R), 1e-4)
            << "frame " << i;
        EXPECT_LT((res.trajectory.poses[i].t - gt_rel.t).norm(), 1e-4)
            << "frame " << i;
    }

    // All evaluation passes run on the result.
    const auto [psnr_v, ssim_v] = eval_render(res.map, res.trajectory, scene);
    EXPECT_GT(psnr_v, 14.0);
    EXPECT_GT(ssim_v, 0.3);
    const SegmentationMetrics seg = eval_segmentation(
        res.map, res.proj, res.bank, scene, finest_queries(scene), res.trajectory,
        1, cfg.temperature);
    EXPECT_GT(seg.miou, 0.0);
    EXPECT_LE(seg.miou, 1.0);
    EXPECT_GT(seg.accuracy, 0.1);
    EXPECT_LT(eval_ate(res.trajectory, scene), 1e-6);

    // Losses decrease overall.
    auto total_of = [](const MetricRow& row) {
        for (const auto& [k, v] : row)
            if (k == "L_total") return v;
        return 0.0;
    };
    EXPECT_LT(total_of(res.loss_log.back()), total_of(res.loss_log.front()));
}

TEST(RunSlam, DeterministicAcrossRuns) {
    const SceneDataset scene = small_scene();
    const PipelineConfig cfg = small_config();
    const SlamResult a = run_slam(scene, cfg);
    const SlamResult b = run_slam(scene, cfg);

    const fs::path dir = fs::temp_directory_path() / "monogs_pipeline_det";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string js = pipeline_config_json(cfg);
    save_checkpoint(make_checkpoint(a, js), (dir / "a.bin").string());
    save_checkpoint(make_checkpoint(b, js), (dir / "b.bin").string());
    EXPECT_EQ(read_file(dir / "a.bin"), read_file(dir / "b.bin"));

    write_metrics_csv(a.loss_log, dir / "a.csv");
    write_metrics_csv(b.loss_log, dir / "b.csv");
    EXPECT_EQ(read_file(dir / "a.csv"), read_file(dir / "b.csv"));

    // And a checkpoint round trip preserves the state.
    const Checkpoint back = load_checkpoint((dir / "a.bin").string());
    EXPECT_EQ(back.gaussians.size(), a.map.size());
    EXPECT_EQ(back.bank.size(), a.bank.size());
    EXPECT_EQ(back.config_json, js);
    EXPECT_EQ(back.rng_state, a.rng_state);
}

TEST(RunSlam, ClosedSetHeadIsTrained) {
    const SceneDataset scene = small_scene();
    PipelineConfig cfg = small_config();
    cfg.closed_set = true;
    cfg.weights.lambda_ce = 0.1;
    const SlamResult res = run_slam(scene, cfg);
    EXPECT_GT(res.ce_head.rows(), 0);
    EXPECT_EQ(res.ce_head.cols(), cfg.feature_dim);
    EXPECT_FALSE(res.ce_classes.empty());
    EXPECT_GT(res.ce_head.norm(), 0.0);

    bool has_ce = false;
    for (const auto& [k, v] : res.loss_log.back())
        if (k == "L_ce" && v > 0.0) has_ce = true;
    EXPECT_TRUE(has_ce);
}

TEST(RunSlam, RejectsEmptySceneAndBadConfig) {
    SceneDataset empty;
    EXPECT_THROW(run_slam(empty, PipelineConfig{}), ValidationError);

    const SceneDataset scene = small_scene();
    PipelineConfig bad = small_config();
    bad.scale_levels = 0;
    EXPECT_THROW(run_slam(scene, bad), ConfigError);
}
