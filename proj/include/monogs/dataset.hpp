#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "monogs/common.hpp"

namespace monogs {

// ---------------------------------------------------------------------------
// Scene containers
//
// A scene is an ordered frame stream with per-frame RGB, camera-frame
// pointmaps, confidences, multi-granularity instance masks and per-mask
// embeddings. Masks live on disk as one int32 label image per granularity
// layer (label 0 = unlabeled) plus a per-label embedding table.
// ---------------------------------------------------------------------------

struct MaskRecord {
    std::vector<uint8_t> pixels;   // H*W binary map
    int label_id = 0;
    Eigen::VectorXd embedding;     // unit vector of length D
    int layer = 0;
    int pixel_count = 0;
};

struct FrameRecord {
    Image<double> rgb;                       // H x W x 3, values in [0,1]
    Image<double> pointmap;                  // H x W x 3, camera-frame points
    Image<double> confidence;                // H x W
    std::vector<Image<int32_t>> mask_layers; // label images, layer 0 = finest
    std::vector<MaskRecord> masks;
    std::optional<SE3> gt_pose;              // world <- camera

    const MaskRecord* mask_by_label(int label) const {
        for (const auto& m : masks)
            if (m.label_id == label) return &m;
        return nullptr;
    }
};

struct SceneDataset {
    std::vector<FrameRecord> frames;
    Intrinsics camera;
    int embedding_dim = 0;
    std::map<int, std::string> class_table;
};

// ---------------------------------------------------------------------------
// Binary array files: 8-byte magic, u32 dtype, u32 ndim, u32 dims[],
// then little-endian payload. dtype 0 = float32, 1 = int32.
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kArrayMagic[8] = {'M', 'G', 'S', 'A', 'R', 'R', '0', '1'};
constexpr char kEmbedMagic[8] = {'M', 'G', 'S', 'E', 'M', 'B', '0', '1'};

inline void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t read_u32(std::istream& is, const std::string& ctx) {
    uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4))
        throw FormatError("truncated file: " + ctx);
    return v;
}

inline void write_u64(std::ostream& os, uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), 8);
}

inline uint64_t read_u64(std::istream& is, const std::string& ctx) {
    uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8))
        throw FormatError("truncated file: " + ctx);
    return v;
}

}  // namespace detail

template <typename T>
inline void save_array(const std::filesystem::path& path,
                       const std::vector<uint32_t>& dims,
                       const std::vector<T>& values) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, int32_t>);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IOError("cannot open for writing: " + path.string());
    os.write(detail::kArrayMagic, 8);
    detail::write_u32(os, std::is_same_v<T, float> ? 0u : 1u);
    detail::write_u32(os, static_cast<uint32_t>(dims.size()));
    size_t n = 1;
    for (uint32_t d : dims) {
        detail::write_u32(os, d);
        n *= d;
    }
    if (n != values.size())
        throw ValidationError("array dims do not match payload size");
    os.write(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(T));
    if (!os) throw IOError("write failed: " + path.string());
}

template <typename T>
inline std::vector<T> load_array(const std::filesystem::path& path,
                                 std::vector<uint32_t>& dims) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, int32_t>);
    if (!std::filesystem::exists(path))
        throw IOError("missing file: " + path.string());
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IOError("cannot open: " + path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, detail::kArrayMagic, 8) != 0)
        throw FormatError("bad array magic: " + path.string());
    const uint32_t dtype = detail::read_u32(is, path.string());
    const uint32_t want = std::is_same_v<T, float> ? 0u : 1u;
    if (dtype != want) throw FormatError("array dtype mismatch: " + path.string());
    const uint32_t ndim = detail::read_u32(is, path.string());
    if (ndim > 8) throw FormatError("implausible ndim: " + path.string());
    dims.resize(ndim);
    size_t n = 1;
    for (uint32_t i = 0; i < ndim; ++i) {
        dims[i] = detail::read_u32(is, path.string());
        n *= dims[i];
    }
    std::vector<T> values(n);
    if (!is.read(reinterpret_cast<char*>(values.data()), n * sizeof(T)))
        throw FormatError("truncated array payload: " + path.string());
    return values;
}

// Embedding table file: magic, u32 count, u32 D, then count x (i32 label,
// f32 x D).
inline void save_embeddings(const std::filesystem::path& path,
                            const std::map<int, Eigen::VectorXd>& table, int D) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IOError("cannot open for writing: " + path.string());
    os.write(detail::kEmbedMagic, 8);
    detail::write_u32(os, static_cast<uint32_t>(table.size()));
    detail::write_u32(os, static_cast<uint32_t>(D));
    for (const auto& [label, vec] : table) {
        if (vec.size() != D) throw ValidationError("embedding length mismatch on save");
        int32_t l = label;
        os.write(reinterpret_cast<const char*>(&l), 4);
        for (int i = 0; i < D; ++i) {
            float f = static_cast<float>(vec[i]);
            os.write(reinterpret_cast<const char*>(&f), 4);
        }
    }
    if (!os) throw IOError("write failed: " + path.string());
}

inline std::map<int, Eigen::VectorXd> load_embeddings(
    const std::filesystem::path& path, int& D_out) {
    if (!std::filesystem::exists(path))
        throw IOError("missing file: " + path.string());
    std::ifstream is(path, std::ios::binary);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, detail::kEmbedMagic, 8) != 0)
        throw FormatError("bad embedding magic: " + path.string());
    const uint32_t count = detail::read_u32(is, path.string());
    const uint32_t D = detail::read_u32(is, path.string());
    D_out = static_cast<int>(D);
    std::map<int, Eigen::VectorXd> table;
    for (uint32_t i = 0; i < count; ++i) {
        int32_t label = 0;
        if (!is.read(reinterpret_cast<char*>(&label), 4))
            throw FormatError("truncated embedding table: " + path.string());
        Eigen::VectorXd v(D);
        for (uint32_t k = 0; k < D; ++k) {
            float f = 0;
            if (!is.read(reinterpret_cast<char*>(&f), 4))
                throw FormatError("truncated embedding table: " + path.string());
            v[k] = f;
        }
        table[label] = v;
    }
    return table;
}

// ---------------------------------------------------------------------------
// Scene save / load. The manifest is a JSON index referencing per-frame
// binary payload files relative to the manifest directory.
// ---------------------------------------------------------------------------

namespace detail {

inline void build_masks_from_layers(FrameRecord& fr,
                                    const std::map<int, Eigen::VectorXd>& emb,
                                    int D, int frame_idx) {
    fr.masks.clear();
    const int h = fr.rgb.height(), w = fr.rgb.width();
    std::map<int, int> seen_label_layer;
    for (size_t layer = 0; layer < fr.mask_layers.size(); ++layer) {
        const auto& img = fr.mask_layers[layer];
        std::map<int, MaskRecord> by_label;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int label = img.at(y, x);
                if (label == 0) continue;
                auto& m = by_label[label];
                if (m.pixels.empty()) {
                    m.pixels.assign(static_cast<size_t>(h) * w, 0);
                    m.label_id = label;
                    m.layer = static_cast<int>(layer);
                }
                m.pixels[static_cast<size_t>(y) * w + x] = 1;
                ++m.pixel_count;
            }
        for (auto& [label, m] : by_label) {
            if (seen_label_layer.count(label))
                throw ValidationError("duplicate mask label " + std::to_string(label) +
                                      " in frame " + std::to_string(frame_idx));
            seen_label_layer[label] = static_cast<int>(layer);
            auto it = emb.find(label);
            if (it == emb.end())
                throw ValidationError("no embedding for label " + std::to_string(label) +
                                      " in frame " + std::to_string(frame_idx));
            if (it->second.size() != D)
                throw ValidationError("embedding length mismatch for label " +
                                      std::to_string(label));
            m.embedding = it->second;
            if (std::abs(m.embedding.norm() - 1.0) > 1e-6)
                throw ValidationError("non-unit embedding for label " +
                                      std::to_string(label));
            fr.masks.push_back(std::move(m));
        }
    }
}

}  // namespace detail

inline void save_scene(const SceneDataset& scene, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["width"] = scene.camera.width;
    manifest["height"] = scene.camera.height;
    manifest["intrinsics"] = {scene.camera.fx, scene.camera.fy,
                              scene.camera.cx, scene.camera.cy};
    manifest["D"] = scene.embedding_dim;
    if (!scene.class_table.empty()) {
        nlohmann::json ct;
        for (const auto& [id, name] : scene.class_table) ct[std::to_string(id)] = name;
        manifest["class_table"] = ct;
    }
    manifest["frames"] = nlohmann::json::array();
    const int h = scene.camera.height, w = scene.camera.width;
    for (size_t fi = 0; fi < scene.frames.size(); ++fi) {
        const auto& fr = scene.frames[fi];
        char buf[32];
        std::snprintf(buf, sizeof(buf), "frame_%04zu", fi);
        const std::string stem = buf;
        fs::create_directories(dir / stem);

        auto to_f32 = [](const Image<double>& img) {
            std::vector<float> out(img.size());
            for (size_t i = 0; i < img.size(); ++i)
                out[i] = static_cast<float>(img.raw()[i]);
            return out;
        };
        save_array<float>(dir / stem / "rgb.bin",
                          {uint32_t(h), uint32_t(w), 3}, to_f32(fr.rgb));
        save_array<float>(dir / stem / "pointmap.bin",
                          {uint32_t(h), uint32_t(w), 3}, to_f32(fr.pointmap));
        save_array<float>(dir / stem / "confidence.bin",
                          {uint32_t(h), uint32_t(w)}, to_f32(fr.confidence));

        nlohmann::json fj;
        fj["rgb"] = stem + "/rgb.bin";
        fj["pointmap"] = stem + "/pointmap.bin";
        fj["confidence"] = stem + "/confidence.bin";
        fj["mask_layers"] = nlohmann::json::array();
        for (size_t li = 0; li < fr.mask_layers.size(); ++li) {
            std::snprintf(buf, sizeof(buf), "masks_l%zu.bin", li);
            const std::string name = stem + "/" + buf;
            save_array<int32_t>(dir / name, {uint32_t(h), uint32_t(w)},
                                fr.mask_layers[li].raw());
            fj["mask_layers"].push_back(name);
        }
        std::map<int, Eigen::VectorXd> emb;
        for (const auto& m : fr.masks) emb[m.label_id] = m.embedding;
        save_embeddings(dir / stem / "emb.bin", emb, scene.embedding_dim);
        fj["embeddings"] = stem + "/emb.bin";
        if (fr.gt_pose) {
            const Eigen::Matrix4d m = fr.gt_pose->matrix();
            std::vector<double> pose16;
            for (int r = 0; r < 4; ++r)
                for (int c = 0; c < 4; ++c) pose16.push_back(m(r, c));
            fj["gt_pose"] = pose16;
        }
        manifest["frames"].push_back(fj);
    }
    std::ofstream os(dir / "manifest.json");
    if (!os) throw IOError("cannot write manifest in " + dir.string());
    os << manifest.dump(1);
}

inline SceneDataset load_scene(const std::filesystem::path& manifest_path) {
    namespace fs = std::filesystem;
    fs::path mp = manifest_path;
    if (fs::is_directory(mp)) mp /= "manifest.json";
    if (!fs::exists(mp)) throw IOError("missing manifest: " + mp.string());
    std::ifstream is(mp);
    nlohmann::json manifest;
    try {
        is >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest parse error: ") + e.what());
    }
    const fs::path dir = mp.parent_path();

    SceneDataset scene;
    try {
        scene.camera.width = manifest.at("width").get<int>();
        scene.camera.height = manifest.at("height").get<int>();
        const auto K = manifest.at("intrinsics");
        scene.camera.fx = K.at(0).get<double>();
        scene.camera.fy = K.at(1).get<double>();
        scene.camera.cx = K.at(2).get<double>();
        scene.camera.cy = K.at(3).get<double>();
        scene.embedding_dim = manifest.at("D").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest missing fields: ") + e.what());
    }
    if (scene.embedding_dim <= 0) throw ValidationError("non-positive embedding dim");
    if (manifest.contains("class_table"))
        for (auto& [k, v] : manifest["class_table"].items())
            scene.class_table[std::stoi(k)] = v.get<std::string>();

    const int h = scene.camera.height, w = scene.camera.width;
    auto to_image = [&](std::vector<float>&& v, int ch,
                        const std::string& what) {
        if (v.size() != static_cast<size_t>(h) * w * ch)
            throw FormatError("dimension mismatch in " + what);
        Image<double> img(h, w, ch);
        for (size_t i = 0; i < v.size(); ++i) img.raw()[i] = v[i];
        return img;
    };

    int fi = 0;
    for (const auto& fj : manifest.at("frames")) {
        FrameRecord fr;
        std::vector<uint32_t> dims;
        fr.rgb = to_image(load_array<float>(dir / fj.at("rgb").get<std::string>(), dims),
                          3, "rgb");
        fr.pointmap = to_image(
            load_array<float>(dir / fj.at("pointmap").get<std::string>(), dims), 3,
            "pointmap");
        fr.confidence = to_image(
            load_array<float>(dir / fj.at("confidence").get<std::string>(), dims), 1,
            "confidence");
        for (const auto& lp : fj.at("mask_layers")) {
            auto vals = load_array<int32_t>(dir / lp.get<std::string>(), dims);
            if (vals.size() != static_cast<size_t>(h) * w)
                throw FormatError("mask layer dimension mismatch");
            Image<int32_t> img(h, w, 1);
            img.raw() = std::move(vals);
            fr.mask_layers.push_back(std::move(img));
        }
        int D_file = 0;
        auto emb = load_embeddings(dir / fj.at("embeddings").get<std::string>(), D_file);
        if (D_file != scene.embedding_dim)
            throw ValidationError("embedding table dim " + std::to_string(D_file) +
                                  " != manifest D " +
                                  std::to_string(scene.embedding_dim));
        if (fj.contains("gt_pose")) {
            const auto& p = fj["gt_pose"];
            if (p.size() != 16) throw FormatError("gt_pose must have 16 entries");
            Eigen::Matrix4d m;
            for (int r = 0; r < 4; ++r)
                for (int c = 0; c < 4; ++c) m(r, c) = p[r * 4 + c].get<double>();
            fr.gt_pose = SE3::from_matrix(m);
        }
        // Invariant: positive depth wherever confident.
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (fr.confidence.at(y, x) > 0 && fr.pointmap.at(y, x, 2) <= 0)
                    throw ValidationError("non-positive pointmap depth at confident pixel");
        detail::build_masks_from_layers(fr, emb, scene.embedding_dim, fi);
        scene.frames.push_back(std::move(fr));
        ++fi;
    }
    return scene;
}

// ---------------------------------------------------------------------------
// Metrics CSV: one header row, column order of the first row, %.6g values.
// ---------------------------------------------------------------------------

using MetricRow = std::vector<std::pair<std::string, double>>;

inline void write_metrics_csv(const std::vector<MetricRow>& rows,
                              const std::filesystem::path& path,
                              const std::vector<std::string>& columns = {}) {
    std::ofstream os(path);
    if (!os) throw IOError("cannot open for writing: " + path.string());
    if (rows.empty()) {
        for (size_t i = 0; i < columns.size(); ++i)
            os << columns[i] << (i + 1 < columns.size() ? "," : "\n");
        return;
    }
    const auto& head = rows.front();
    for (size_t i = 0; i < head.size(); ++i)
        os << head[i].first << (i + 1 < head.size() ? "," : "\n");
    char buf[64];
    for (const auto& row : rows) {
        if (row.size() != head.size())
            throw ValidationError("metric rows have mismatched columns");
        for (size_t i = 0; i < row.size(); ++i) {
            if (row[i].first != head[i].first)
                throw ValidationError("metric rows have mismatched columns");
            std::snprintf(buf, sizeof(buf), "%.6g", row[i].second);
            os << buf << (i + 1 < row.size() ? "," : "\n");
        }
    }
    if (!os) throw IOError("write failed: " + path.string());
}

}  // namespace monogs
