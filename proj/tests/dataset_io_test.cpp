#include <gtest/gtest.h>

#include "monogs/synth.hpp"

#include <fstream>

using namespace monogs;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("monogs_dataset_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
    std::ofstream os(p, std::ios::binary);
    os.write(bytes.data(), std::streamsize(bytes.size()));
}

void truncate_file(const fs::path& p, size_t drop) {
    std::string bytes = read_file(p);
    ASSERT_GT(bytes.size(), drop);
    bytes.resize(bytes.size() - drop);
    write_file(p, bytes);
}

SceneDataset tiny_scene() {
    SynthConfig cfg;
    cfg.height = 32;
    cfg.width = 32;
    cfg.n_frames = 2;
    cfg.n_objects = 2;
    cfg.parts_per_object = 2;
    cfg.seed = 3;
    return generate_scene(cfg);
}

}  // namespace

TEST(ArrayIO, RoundTripFloatAndInt) {
    const fs::path dir = temp_dir("array");
    std::vector<float> f = {1.5f, -2.25f, 0.0f, 3e7f, -1e-8f, 42.0f};
    save_array<float>(dir / "f.bin", {2, 3}, f);
    std::vector<uint32_t> dims;
    auto f2 = load_array<float>(dir / "f.bin", dims);
    EXPECT_EQ(dims, (std::vector<uint32_t>{2, 3}));
    EXPECT_EQ(f2, f);

    std::vector<int32_t> i = {-7, 0, 2147483647};
    save_array<int32_t>(dir / "i.bin", {3}, i);
    auto i2 = load_array<int32_t>(dir / "i.bin", dims);
    EXPECT_EQ(dims, (std::vector<uint32_t>{3}));
    EXPECT_EQ(i2, i);
}

TEST(ArrayIO, Rejections) {
    const fs::path dir = temp_dir("array_bad");
    std::vector<uint32_t> dims;
    EXPECT_THROW(save_array<float>(dir / "x.bin", {2, 2}, {1.0f}), ValidationError);
    EXPECT_THROW(load_array<float>(dir / "missing.bin", dims), IOError);

    save_array<float>(dir / "ok.bin", {2}, {1.0f, 2.0f});
    EXPECT_THROW(load_array<int32_t>(dir / "ok.bin", dims), FormatError);  // dtype

    std::string bytes = read_file(dir / "ok.bin");
    bytes[0] = 'X';
    write_file(dir / "magic.bin", bytes);
    EXPECT_THROW(load_array<float>(dir / "magic.bin", dims), FormatError);

    save_array<float>(dir / "trunc.bin", {4}, {1.f, 2.f, 3.f, 4.f});
    truncate_file(dir / "trunc.bin", 6);
    EXPECT_THROW(load_array<float>(dir / "trunc.bin", dims), FormatError);
}

TEST(EmbeddingIO, RoundTripAndRejections) {
    const fs::path dir = temp_dir("emb");
    std::map<int, Eigen::VectorXd> table;
    table[3] = Eigen::VectorXd::LinSpaced(4, -1.0, 0.5);
    table[9] = Eigen::VectorXd::Constant(4, 0.25);
    save_embeddings(dir / "e.bin", table, 4);
    int D = 0;
    auto back = load_embeddings(dir / "e.bin", D);
    EXPECT_EQ(D, 4);
    ASSERT_EQ(back.size(), 2u);
    for (const auto& [l, v] : table)
        for (int k = 0; k < 4; ++k)
            EXPECT_NEAR(back.at(l)[k], v[k], 1e-7);  // float32 on disk

    table[3] = Eigen::VectorXd::Zero(3);
    EXPECT_THROW(save_embeddings(dir / "bad.bin", table, 4), ValidationError);
    EXPECT_THROW(load_embeddings(dir / "missing.bin", D), IOError);
    truncate_file(dir / "e.bin", 4);
    EXPECT_THROW(load_embeddings(dir / "e.bin", D), FormatError);
}

TEST(SceneIO, RoundTripPreservesEverything) {
    const fs::path dir = temp_dir("scene");
    const SceneDataset scene = tiny_scene();
    save_scene(scene, dir);
    const SceneDataset back = load_scene(dir);

    EXPECT_EQ(back.frames.size(), scene.frames.size());
    EXPECT_EQ(back.embedding_dim, scene.embedding_dim);
    EXPECT_EQ(back.camera.width, scene.camera.width);
    EXPECT_NEAR(back.camera.fx, scene.camera.fx, 0.0);
    EXPECT_EQ(back.class_table, scene.class_table);
    for (size_t f = 0; f < scene.frames.size(); ++f) {
        const auto& a = scene.frames[f];
        const auto& b = back.frames[f];
        for (size_t i = 0; i < a.rgb.size(); ++i)
            EXPECT_EQ(float(a.rgb.raw()[i]), float(b.rgb.raw()[i]));
        for (size_t i = 0; i < a.pointmap.size(); ++i)
            EXPECT_EQ(float(a.pointmap.raw()[i]), float(b.pointmap.raw()[i]));
        EXPECT_EQ(a.mask_layers[0].raw(), b.mask_layers[0].raw());
        EXPECT_EQ(a.mask_layers[1].raw(), b.mask_layers[1].raw());
        ASSERT_EQ(a.masks.size(), b.masks.size());
        for (size_t m = 0; m < a.masks.size(); ++m) {
            EXPECT_EQ(a.masks[m].label_id, b.masks[m].label_id);
            EXPECT_EQ(a.masks[m].layer, b.masks[m].layer);
            EXPECT_EQ(a.masks[m].pixel_count, b.masks[m].pixel_count);
            EXPECT_EQ(a.masks[m].pixels, b.masks[m].pixels);
            EXPECT_LT((a.masks[m].embedding - b.masks[m].embedding).norm(), 1e-6);
        }
        ASSERT_TRUE(b.gt_pose.has_value());
        EXPECT_LT((a.gt_pose->matrix() - b.gt_pose->matrix()).norm(), 1e-15);
    }
}

TEST(SceneIO, LoadRejectsCorruptedPayloads) {
    const SceneDataset scene = tiny_scene();

    {  // truncated pointmap
        const fs::path dir = temp_dir("scene_trunc");
        save_scene(scene, dir);
        truncate_file(dir / "frame_0000" / "pointmap.bin", 16);
        EXPECT_THROW(load_scene(dir), FormatError);
    }
    {  // missing frame payload
        const fs::path dir = temp_dir("scene_missing");
        save_scene(scene, dir);
        fs::remove(dir / "frame_0001" / "rgb.bin");
        EXPECT_THROW(load_scene(dir), IOError);
    }
    {  // bad magic on a mask layer
        const fs::path dir = temp_dir("scene_magic");
        save_scene(scene, dir);
        std::string bytes = read_file(dir / "frame_0000" / "masks_l0.bin");
        bytes[3] = '?';
        write_file(dir / "frame_0000" / "masks_l0.bin", bytes);
        EXPECT_THROW(load_scene(dir), FormatError);
    }
    {  // embedding table disagrees with the manifest dimension
        const fs::path dir = temp_dir("scene_dim");
        save_scene(scene, dir);
        std::map<int, Eigen::VectorXd> emb;
        for (const auto& m : scene.frames[0].masks)
            emb[m.label_id] = Eigen::VectorXd::Unit(8, 0);
        save_embeddings(dir / "frame_0000" / "emb.bin", emb, 8);
        EXPECT_THROW(load_scene(dir), ValidationError);
    }
    {  // non-unit embedding
        const fs::path dir = temp_dir("scene_unit");
        save_scene(scene, dir);
        std::map<int, Eigen::VectorXd> emb;
        for (const auto& m : scene.frames[0].masks)
            emb[m.label_id] = 2.0 * m.embedding;
        save_embeddings(dir / "frame_0000" / "emb.bin", emb, scene.embedding_dim);
        EXPECT_THROW(load_scene(dir), ValidationError);
    }
    {  // non-positive depth at a confident pixel
        const fs::path dir = temp_dir("scene_depth");
        SceneDataset bad = scene;
        int y = -1, x = -1;
        for (int yy = 0; yy < bad.camera.height && y < 0; ++yy)
            for (int xx = 0; xx < bad.camera.width && y < 0; ++xx)
                if (bad.frames[0].confidence.at(yy, xx) > 0) { y = yy; x = xx; }
        ASSERT_GE(y, 0);
        bad.frames[0].pointmap.at(y, x, 2) = -0.5;
        save_scene(bad, dir);
        EXPECT_THROW(load_scene(dir), ValidationError);
    }
    {  // unreadable manifest
        const fs::path dir = temp_dir("scene_manifest");
        save_scene(scene, dir);
        write_file(dir / "manifest.json", "{ not json");
        EXPECT_THROW(load_scene(dir), FormatError);
        fs::remove(dir / "manifest.json");
        EXPECT_THROW(load_scene(dir), IOError);
    }
}

TEST(MetricsCsv, FormattingAndErrors) {
    const fs::path dir = temp_dir("csv");
    std::vector<MetricRow> rows = {
        {{"iter", 1.0}, {"loss", 0.123456789}},
        {{"iter", 2.0}, {"loss", 3141592.6}},
    };
    write_metrics_csv(rows, dir / "m.csv");
    EXPECT_EQ(read_file(dir / "m.csv"),
              "iter,loss\n1,0.123457\n2,3.14159e+06\n");  // %.6g values

    write_metrics_csv({}, dir / "empty.csv", {"a", "b", "c"});
    EXPECT_EQ(read_file(dir / "empty.csv"), "a,b,c\n");

    rows.push_back({{"iter", 3.0}});
    EXPECT_THROW(write_metrics_csv(rows, dir / "bad.csv"), ValidationError);
    rows.pop_back();
    rows.push_back({{"iter", 3.0}, {"other", 1.0}});
    EXPECT_THROW(write_metrics_csv(rows, dir / "bad2.csv"), ValidationError);
}
