// Command-line front end: scene synthesis, the SLAM run, evaluation,
// single-frame rendering and report plots.

#include <CLI11.hpp>

#include "monogs/config.hpp"
#include "monogs/synth.hpp"

namespace {

using namespace monogs;

std::vector<MetricRow> read_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IOError("cannot open: " + path.string());
    std::string line;
    if (!std::getline(is, line)) return {};
    std::vector<std::string> cols;
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) cols.push_back(cell);
    std::vector<MetricRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        MetricRow row;
        size_t i = 0;
        while (std::getline(ls, cell, ',')) {
            if (i >= cols.size()) throw FormatError("ragged CSV row in " + path.string());
            row.emplace_back(cols[i++], std::stod(cell));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// Per-label query embeddings from the finest mask layer of the scene.
std::map<int32_t, Eigen::VectorXd> scene_queries(const SceneDataset& scene) {
    std::map<int32_t, Eigen::VectorXd> q;
    for (const auto& fr : scene.frames)
        for (const auto& m : fr.masks)
            if (m.layer == 0 && !q.count(m.label_id)) q[m.label_id] = m.embedding;
    return q;
}

int cmd_synth(const std::string& config_path, const std::string& out_dir) {
    SynthConfig cfg;
    if (!config_path.empty()) apply_synth_config(load_config_file(config_path), cfg);
    const SceneDataset scene = generate_scene(cfg);
    save_scene(scene, out_dir);
    std::cout << "wrote " << scene.frames.size() << " frames to " << out_dir << "\n";
    return 0;
}

int cmd_run(const std::string& scene_dir, const std::string& config_path,
            const std::string& out_dir) {
    PipelineConfig cfg;
    if (!config_path.empty()) apply_pipeline_config(load_config_file(config_path), cfg);
    cfg.validate();
    const SceneDataset scene = load_scene(scene_dir);
    const SlamResult res = run_slam(scene, cfg);

    std::filesystem::create_directories(out_dir);
    const std::filesystem::path out(out_dir);
    save_checkpoint(make_checkpoint(res, pipeline_config_json(cfg)),
                    (out / "checkpoint.bin").string());
    save_trajectory(res.trajectory, out / "trajectory.txt");
    write_metrics_csv(res.loss_log, out / "losses.csv",
                      {"iter", "L_rgb", "L_corr", "L_lang", "L_ce", "L_total"});
    std::cout << "map size " << res.map.size() << ", bank size " << res.bank.size()
              << ", skipped " << res.skipped_frames << " frames\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& scene_dir,
             const std::string& report_path, std::string traj_path) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const SceneDataset scene = load_scene(scene_dir);
    if (traj_path.empty())
        traj_path =
            (std::filesystem::path(ckpt_path).parent_path() / "trajectory.txt").string();
    const TrajectoryEstimate traj = load_trajectory(traj_path);

    double temperature = 1.0;
    if (!ck.config_json.empty()) {
        const auto j = nlohmann::json::parse(ck.config_json);
        if (j.contains("temperature")) temperature = j["temperature"].get<double>();
    }

    EvalReport report;
    std::tie(report.psnr, report.ssim) = eval_render(ck.gaussians, traj, scene);
    const SegmentationMetrics seg = eval_segmentation(
        ck.gaussians, ck.proj, ck.bank, scene, scene_queries(scene), traj, 1, temperature);
    report.miou = seg.miou;
    report.fwiou = seg.fwiou;
    report.acc = seg.accuracy;
    try {
        report.ate_rmse = eval_ate(traj, scene);
    } catch (const InsufficientDataError&) {
        report.ate_rmse = std::numeric_limits<double>::quiet_NaN();
    }

    write_metrics_csv({{{"psnr", report.psnr},
                        {"ssim", report.ssim},
                        {"miou", report.miou},
                        {"fwiou", report.fwiou},
                        {"acc", report.acc},
                        {"ate_rmse", report.ate_rmse}}},
                      report_path);
    std::cout << "psnr " << report.psnr << " ssim " << report.ssim << " miou "
              << report.miou << " fwiou " << report.fwiou << " acc " << report.acc
              << " ate " << report.ate_rmse << "\n";
    return 0;
}

int cmd_render(const std::string& ckpt_path, const std::string& scene_dir, int frame,
               const std::string& out_path, std::string traj_path,
               const std::string& feature_path) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const SceneDataset scene = load_scene(scene_dir);
    if (traj_path.empty())
        traj_path =
            (std::filesystem::path(ckpt_path).parent_path() / "trajectory.txt").string();
    const TrajectoryEstimate traj = load_trajectory(traj_path);
    if (frame < 0 || frame >= static_cast<int>(traj.poses.size()))
        throw ValidationError("frame index out of range");
    const RenderOutput view =
        render(ck.gaussians, traj.poses[frame].inverse(), scene.camera);
    write_ppm(view.color, out_path);
    if (!feature_path.empty()) write_ppm(feature_pca_rgb(view.feature), feature_path);
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int cmd_plot(const std::string& run_dir) {
    const std::filesystem::path dir(run_dir);
    std::vector<MetricRow> losses;
    if (std::filesystem::exists(dir / "losses.csv")) losses = read_csv(dir / "losses.csv");
    EvalReport report;
    if (std::filesystem::exists(dir / "report.csv")) {
        const auto rows = read_csv(dir / "report.csv");
        if (!rows.empty())
            for (const auto& [k, v] : rows.front()) {
                if (k == "psnr") report.psnr = v;
                else if (k == "ssim") report.ssim = v;
                else if (k == "miou") report.miou = v;
                else if (k == "fwiou") report.fwiou = v;
                else if (k == "acc") report.acc = v;
                else if (k == "ate_rmse") report.ate_rmse = v;
            }
    }
    plot_report(losses, report, dir);
    std::cout << "wrote plots to " << run_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Monocular semantic Gaussian-splatting SLAM toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, scene_dir, ckpt_path, report_path, traj_path,
        out_path, run_dir;
    int frame = 0;

    auto* synth = app.add_subcommand("synth", "generate a synthetic scene");
    synth->add_option("--config", config_path, "key=value config file");
    synth->add_option("--out", out_dir, "output scene directory")->required();

    auto* run = app.add_subcommand("run", "run SLAM on a scene");
    run->add_option("--scene", scene_dir, "scene directory")->required();
    run->add_option("--config", config_path, "key=value config file");
    run->add_option("--out", out_dir, "output run directory")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval->add_option("--scene", scene_dir, "scene directory")->required();
    eval->add_option("--report", report_path, "output CSV path")->required();
    eval->add_option("--trajectory", traj_path, "trajectory file (default: next to checkpoint)");

    auto* rend = app.add_subcommand("render", "render one frame from a checkpoint");
    rend->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    rend->add_option("--scene", scene_dir, "scene directory (camera intrinsics)")->required();
    rend->add_option("--frame", frame, "frame index")->required();
    rend->add_option("--out", out_path, "output PPM path")->required();
    rend->add_option("--trajectory", traj_path, "trajectory file (default: next to checkpoint)");
    std::string feature_path;
    rend->add_option("--features", feature_path, "also write a PCA feature-map PPM");

    auto* plot = app.add_subcommand("plot", "plot loss curves and metrics for a run");
    plot->add_option("--run", run_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
        if (synth->parsed()) return cmd_synth(config_path, out_dir);
        if (run->parsed()) return cmd_run(scene_dir, config_path, out_dir);
        if (eval->parsed()) return cmd_eval(ckpt_path, scene_dir, report_path, traj_path);
        if (rend->parsed())
            return cmd_render(ckpt_path, scene_dir, frame, out_path, traj_path,
                              feature_path);
        if (plot->parsed()) return cmd_plot(run_dir);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const monogs::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const monogs::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const monogs::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const monogs::IOError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const monogs::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
