#pragma once

#include "monogs/dataset.hpp"

namespace monogs {

// ---------------------------------------------------------------------------
// Synthetic scene generator. Stands in for the visual-foundation-model
// inputs: exact ray-cast pointmaps with optional multiplicative depth noise
// (geometry), two nested mask granularity layers (segmentation), and
// hierarchical unit embeddings per label (language features): objects are
// well separated, parts correlate with their parent object.
// ---------------------------------------------------------------------------

struct SynthConfig {
    int n_objects = 4;
    int parts_per_object = 3;
    int height = 96;
    int width = 96;
    int n_frames = 120;
    double orbit_radius = 3.0;
    double orbit_height = 1.6;
    double angular_span = 2.0 * M_PI;
    double depth_noise_sigma = 0.0;   // relative std of multiplicative noise
    double confidence_floor = 0.1;
    int D = 32;
    uint64_t seed = 0;
};

// Unit vectors with pairwise cosine similarity < 0.5, rejection-sampled.
inline std::vector<Eigen::VectorXd> make_embeddings(int n_labels, int D,
                                                    uint64_t seed) {
    if (n_labels < 1) throw ConfigError("n_labels must be >= 1");
    if (D < 8) throw ConfigError("embedding dim must be >= 8");
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Eigen::VectorXd> out;
    out.reserve(n_labels);
    const int max_tries = 500 + 200 * n_labels;
    for (int i = 0; i < n_labels; ++i) {
        bool ok = false;
        for (int attempt = 0; attempt < max_tries && !ok; ++attempt) {
            Eigen::VectorXd v(D);
            for (int k = 0; k < D; ++k) v[k] = gauss(rng);
            const double norm = v.norm();
            if (norm < 1e-9) continue;
            v /= norm;
            ok = true;
            for (const auto& u : out)
                if (u.dot(v) >= 0.5) { ok = false; break; }
            if (ok) out.push_back(std::move(v));
        }
        if (!ok)
            throw ConfigError("cannot satisfy embedding separation for " +
                              std::to_string(n_labels) + " labels at D=" +
                              std::to_string(D));
    }
    return out;
}

// Fixed-magnitude random SE(3) perturbation, left-composed onto the pose.
inline SE3 perturb_pose(const SE3& pose, double rot_sigma, double trans_sigma,
                        uint64_t seed) {
    if (rot_sigma < 0 || trans_sigma < 0)
        throw ConfigError("perturbation sigmas must be >= 0");
    Rng rng(seed);
    SE3 pert;
    if (rot_sigma > 0) {
        Eigen::Matrix<double, 6, 1> xi = Eigen::Matrix<double, 6, 1>::Zero();
        xi.tail<3>() = rot_sigma * random_unit_vector(rng);
        pert = SE3::exp(xi) * pert;
    } else {
        (void)random_unit_vector(rng);  // keep draw order stable
    }
    pert.t = trans_sigma > 0 ? Eigen::Vector3d(trans_sigma * random_unit_vector(rng))
                             : Eigen::Vector3d::Zero();
    return pert * pose;
}

namespace detail {

struct SynthObject {
    bool is_sphere = false;
    Eigen::Vector3d center;
    Eigen::Vector3d half_extent;  // spheres use x as radius
    int split_axis = 0;
    int object_label = 0;
    int first_part_label = 0;
    int n_parts = 1;
};

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    Eigen::Vector3d normal;
    int object_label = 0;  // 0 = unlabeled geometry (ground)
    int part_label = 0;
    int albedo_index = -1;
};

inline bool intersect_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                          const Eigen::Vector3d& c, const Eigen::Vector3d& e,
                          double& t_hit, int& face_axis, double& face_sign) {
    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
    int axis0 = -1;
    double sign0 = 0;
    for (int a = 0; a < 3; ++a) {
        const double lo = c[a] - e[a], hi = c[a] + e[a];
        if (std::abs(d[a]) < 1e-12) {
            if (o[a] < lo || o[a] > hi) return false;
            continue;
        }
        double ta = (lo - o[a]) / d[a];
        double tb = (hi - o[a]) / d[a];
        double sa = -1, sb = 1;
        if (ta > tb) { std::swap(ta, tb); std::swap(sa, sb); }
        if (ta > t0) { t0 = ta; axis0 = a; sign0 = sa; }
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
    }
    if (t0 <= 1e-9 || axis0 < 0) return false;
    t_hit = t0;
    face_axis = axis0;
    face_sign = sign0;
    return true;
}

inline bool intersect_sphere(const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                             const Eigen::Vector3d& c, double r, double& t_hit) {
    const Eigen::Vector3d oc = o - c;
    const double a = d.dot(d);
    const double b = 2.0 * oc.dot(d);
    const double cc = oc.dot(oc) - r * r;
    const double disc = b * b - 4 * a * cc;
    if (disc < 0) return false;
    const double sq = std::sqrt(disc);
    double t = (-b - sq) / (2 * a);
    if (t <= 1e-9) t = (-b + sq) / (2 * a);
    if (t <= 1e-9) return false;
    t_hit = t;
    return true;
}

}  // namespace detail

inline SceneDataset generate_scene(const SynthConfig& cfg) {
    if (cfg.height < 32 || cfg.width < 32)
        throw ConfigError("image size must be at least 32x32");
    if (cfg.n_objects < 1) throw ConfigError("need at least one object");
    if (cfg.parts_per_object < 1) throw ConfigError("need at least one part per object");
    if (cfg.depth_noise_sigma < 0) throw ConfigError("depth noise sigma must be >= 0");
    if (cfg.orbit_radius <= 0) throw ConfigError("degenerate trajectory: zero orbit radius");
    if (cfg.n_frames < 1) throw ConfigError("need at least one frame");

    Rng rng(cfg.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // Object layout: ring around the origin on the ground plane y = 0.
    std::vector<detail::SynthObject> objects;
    const int n = cfg.n_objects;
    const double max_half = 0.45;
    const double ring_r =
        n == 1 ? 0.0 : std::max(0.9, 2.4 * max_half / (2.0 * std::sin(M_PI / n)));
    int next_part_label = n + 1;
    for (int o = 0; o < n; ++o) {
        detail::SynthObject obj;
        obj.is_sphere = (o % 2 == 1);
        const double ang = 2.0 * M_PI * o / std::max(1, n);
        const double hx = 0.25 + 0.2 * uni(rng);
        const double hy = 0.25 + 0.2 * uni(rng);
        const double hz = 0.25 + 0.2 * uni(rng);
        if (obj.is_sphere) {
            obj.half_extent = Eigen::Vector3d(hx, hx, hx);
            obj.center = Eigen::Vector3d(ring_r * std::cos(ang), hx,
                                         ring_r * std::sin(ang));
            obj.split_axis = 1;
        } else {
            obj.half_extent = Eigen::Vector3d(hx, hy, hz);
            obj.center = Eigen::Vector3d(ring_r * std::cos(ang), hy,
                                         ring_r * std::sin(ang));
            int axis = 0;
            if (hy > hx && hy > hz) axis = 1;
            else if (hz > hx && hz > hy) axis = 2;
            obj.split_axis = axis;
        }
        obj.object_label = o + 1;
        obj.first_part_label = next_part_label;
        obj.n_parts = cfg.parts_per_object;
        next_part_label += cfg.parts_per_object;
        objects.push_back(obj);
    }
    const int n_labels = n + n * cfg.parts_per_object;

    // Hierarchical label embeddings: well-separated unit vectors per object,
    // and each part embedding a normalized mix of its parent object embedding
    // with a fresh random direction. Mirrors the structure of real
    // vision-language features, where part vectors correlate with their
    // parent object (cos ~ 0.8) and siblings with each other (cos ~ 0.64)
    // while staying clearly below the memory-bank duplicate gate.
    std::vector<Eigen::VectorXd> embeddings(n_labels);
    {
        const auto obj_emb = make_embeddings(n, cfg.D, cfg.seed + 0x9e3779b9ULL);
        Rng erng(cfg.seed + 0x7f4a7c15ULL);
        std::normal_distribution<double> gauss(0.0, 1.0);
        constexpr double kPartMix = 0.75;  // cos(part, object) = 1/sqrt(1+mix^2)
        for (int o = 0; o < n; ++o) {
            embeddings[o] = obj_emb[o];
            for (int p = 0; p < cfg.parts_per_object; ++p) {
                const int label = objects[o].first_part_label + p;
                Eigen::VectorXd dir(cfg.D);
                double c = 1.0;
                while (c >= 0.85) {  // keep siblings below the duplicate gate
                    for (int d = 0; d < cfg.D; ++d) dir(d) = gauss(erng);
                    dir.normalize();
                    Eigen::VectorXd cand = (obj_emb[o] + kPartMix * dir).normalized();
                    c = 0.0;
                    for (int q = 0; q < p; ++q)
                        c = std::max(c, cand.dot(
                            embeddings[objects[o].first_part_label + q - 1]));
                    if (c < 0.85) embeddings[label - 1] = std::move(cand);
                }
            }
        }
    }

    // Part albedos; ground is unlabeled flat gray.
    std::vector<Eigen::Vector3d> albedo(n_labels);
    for (auto& a : albedo)
        a = Eigen::Vector3d(0.15 + 0.8 * uni(rng), 0.15 + 0.8 * uni(rng),
                            0.15 + 0.8 * uni(rng));

    SceneDataset scene;
    scene.embedding_dim = cfg.D;
    scene.camera.width = cfg.width;
    scene.camera.height = cfg.height;
    scene.camera.fx = 0.85 * cfg.width;
    scene.camera.fy = 0.85 * cfg.width;
    scene.camera.cx = (cfg.width - 1) / 2.0;
    scene.camera.cy = (cfg.height - 1) / 2.0;
    for (const auto& obj : objects) {
        scene.class_table[obj.object_label] =
            "object_" + std::to_string(obj.object_label);
        for (int p = 0; p < obj.n_parts; ++p)
            scene.class_table[obj.first_part_label + p] =
                "object_" + std::to_string(obj.object_label) + "_part_" +
                std::to_string(p);
    }

    const Eigen::Vector3d light = Eigen::Vector3d(0.4, 1.0, 0.25).normalized();
    const Eigen::Vector3d look_at(0.0, 0.35, 0.0);
    const double ground_half = ring_r + 1.5;

    auto cast = [&](const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
        detail::Hit best;
        // Ground square.
        if (std::abs(d.y()) > 1e-12) {
            const double t = -o.y() / d.y();
            if (t > 1e-9) {
                const Eigen::Vector3d p = o + t * d;
                if (std::abs(p.x()) <= ground_half && std::abs(p.z()) <= ground_half) {
                    best.t = t;
                    best.normal = Eigen::Vector3d(0, 1, 0);
                }
            }
        }
        for (const auto& obj : objects) {
            double t = 0;
            if (obj.is_sphere) {
                if (!detail::intersect_sphere(o, d, obj.center, obj.half_extent.x(), t))
                    continue;
                if (t >= best.t) continue;
                const Eigen::Vector3d p = o + t * d;
                best.t = t;
                best.normal = (p - obj.center).normalized();
                best.object_label = obj.object_label;
                const double r = obj.half_extent.x();
                const double frac = ((p - obj.center)[obj.split_axis] / r + 1.0) / 2.0;
                int part = std::min(obj.n_parts - 1,
                                    std::max(0, int(frac * obj.n_parts)));
                best.part_label = obj.first_part_label + part;
            } else {
                int face_axis = 0;
                double face_sign = 0;
                if (!detail::intersect_box(o, d, obj.center, obj.half_extent, t,
                                           face_axis, face_sign))
                    continue;
                if (t >= best.t) continue;
                const Eigen::Vector3d p = o + t * d;
                best.t = t;
                best.normal = Eigen::Vector3d::Zero();
                best.normal[face_axis] = face_sign;
                best.object_label = obj.object_label;
                const int a = obj.split_axis;
                const double frac =
                    ((p - obj.center)[a] / obj.half_extent[a] + 1.0) / 2.0;
                int part = std::min(obj.n_parts - 1,
                                    std::max(0, int(frac * obj.n_parts)));
                best.part_label = obj.first_part_label + part;
            }
            if (best.object_label > 0)
                best.albedo_index = best.part_label - (n + 1);
        }
        return best;
    };

    const Intrinsics& K = scene.camera;
    for (int f = 0; f < cfg.n_frames; ++f) {
        const double theta =
            cfg.n_frames == 1 ? 0.0 : cfg.angular_span * f / cfg.n_frames;
        const Eigen::Vector3d pos(cfg.orbit_radius * std::cos(theta),
                                  cfg.orbit_height,
                                  cfg.orbit_radius * std::sin(theta));
        const Eigen::Vector3d fwd = (look_at - pos).normalized();
        const Eigen::Vector3d up(0, 1, 0);
        Eigen::Vector3d xc = fwd.cross(up).normalized();
        Eigen::Vector3d yc = fwd.cross(xc);
        SE3 T_wc;
        T_wc.R.col(0) = xc;
        T_wc.R.col(1) = yc;
        T_wc.R.col(2) = fwd;
        T_wc.t = pos;

        FrameRecord fr;
        fr.rgb = Image<double>(cfg.height, cfg.width, 3);
        fr.pointmap = Image<double>(cfg.height, cfg.width, 3);
        fr.confidence = Image<double>(cfg.height, cfg.width, 1);
        fr.mask_layers.assign(2, Image<int32_t>(cfg.height, cfg.width, 1, 0));
        fr.gt_pose = T_wc;

        for (int y = 0; y < cfg.height; ++y) {
            for (int x = 0; x < cfg.width; ++x) {
                const Eigen::Vector3d dir_cam((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
                const Eigen::Vector3d dir_w = T_wc.R * dir_cam;
                const auto hit = cast(pos, dir_w);
                if (!std::isfinite(hit.t)) continue;  // background: conf 0
                Eigen::Vector3d color(0.35, 0.35, 0.35);
                if (hit.albedo_index >= 0) color = albedo[hit.albedo_index];
                const double shade = 0.35 + 0.65 * std::max(0.0, hit.normal.dot(light));
                for (int c = 0; c < 3; ++c)
                    fr.rgb.at(y, x, c) = std::min(1.0, color[c] * shade);
                double eta = 1.0;
                if (cfg.depth_noise_sigma > 0)
                    eta = std::max(0.05, 1.0 + cfg.depth_noise_sigma * gauss(rng));
                const Eigen::Vector3d pt = hit.t * eta * dir_cam;
                for (int c = 0; c < 3; ++c) fr.pointmap.at(y, x, c) = pt[c];
                fr.confidence.at(y, x) =
                    cfg.confidence_floor +
                    (1.0 - cfg.confidence_floor) * std::exp(-std::abs(eta - 1.0));
                if (hit.part_label > 0) fr.mask_layers[0].at(y, x) = hit.part_label;
                if (hit.object_label > 0) fr.mask_layers[1].at(y, x) = hit.object_label;
            }
        }

        std::map<int, Eigen::VectorXd> emb;
        for (const auto& layer : fr.mask_layers)
            for (int32_t label : layer.raw())
                if (label > 0 && !emb.count(label)) emb[label] = embeddings[label - 1];
        detail::build_masks_from_layers(fr, emb, cfg.D, f);
        scene.frames.push_back(std::move(fr));
    }
    return scene;
}

}  // namespace monogs
