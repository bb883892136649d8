#pragma once

#include "monogs/pipeline.hpp"
#include "monogs/synth.hpp"

namespace monogs {

// ---------------------------------------------------------------------------
// TOML-style key=value config files ('#' comments, optional [sections] which
// are flattened into dotted prefixes). Every pipeline / synth default is
// overridable; unknown keys are rejected.
// ---------------------------------------------------------------------------

using ConfigMap = std::map<std::string, std::string>;

inline ConfigMap parse_config_text(std::istream& is) {
    ConfigMap out;
    std::string line, section;
    int lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("malformed section at line " + std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected key=value at line " + std::to_string(lineno));
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw ConfigError("empty key or value at line " + std::to_string(lineno));
        if (val.size() >= 2 && val.front() == '"' && val.back() == '"')
            val = val.substr(1, val.size() - 2);
        if (!section.empty()) key = section + "." + key;
        if (out.count(key)) throw ConfigError("duplicate key: " + key);
        out[key] = val;
    }
    return out;
}

inline ConfigMap load_config_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IOError("cannot open config: " + path.string());
    return parse_config_text(is);
}

namespace detail {

inline double cfg_double(const std::string& key, const std::string& val) {
    try {
        size_t pos = 0;
        const double d = std::stod(val, &pos);
        if (pos != val.size()) throw std::invalid_argument(val);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("expected a number for " + key + ", got '" + val + "'");
    }
}

inline int64_t cfg_int(const std::string& key, const std::string& val) {
    try {
        size_t pos = 0;
        const int64_t v = std::stoll(val, &pos);
        if (pos != val.size()) throw std::invalid_argument(val);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("expected an integer for " + key + ", got '" + val + "'");
    }
}

inline bool cfg_bool(const std::string& key, const std::string& val) {
    if (val == "true" || val == "1") return true;
    if (val == "false" || val == "0") return false;
    throw ConfigError("expected a bool for " + key + ", got '" + val + "'");
}

}  // namespace detail

inline void apply_synth_config(const ConfigMap& map, SynthConfig& cfg) {
    for (const auto& [key, val] : map) {
        if (key == "n_objects") cfg.n_objects = int(detail::cfg_int(key, val));
        else if (key == "parts_per_object") cfg.parts_per_object = int(detail::cfg_int(key, val));
        else if (key == "height") cfg.height = int(detail::cfg_int(key, val));
        else if (key == "width") cfg.width = int(detail::cfg_int(key, val));
        else if (key == "n_frames") cfg.n_frames = int(detail::cfg_int(key, val));
        else if (key == "orbit_radius") cfg.orbit_radius = detail::cfg_double(key, val);
        else if (key == "orbit_height") cfg.orbit_height = detail::cfg_double(key, val);
        else if (key == "angular_span") cfg.angular_span = detail::cfg_double(key, val);
        else if (key == "depth_noise_sigma") cfg.depth_noise_sigma = detail::cfg_double(key, val);
        else if (key == "confidence_floor") cfg.confidence_floor = detail::cfg_double(key, val);
        else if (key == "D") cfg.D = int(detail::cfg_int(key, val));
        else if (key == "seed") cfg.seed = uint64_t(detail::cfg_int(key, val));
        else throw ConfigError("unknown synth config key: " + key);
    }
}

inline void apply_pipeline_config(const ConfigMap& map, PipelineConfig& cfg) {
    for (const auto& [key, val] : map) {
        if (key == "scale_levels") cfg.scale_levels = int(detail::cfg_int(key, val));
        else if (key == "sample_pixels") cfg.sample_pixels = int(detail::cfg_int(key, val));
        else if (key == "tau_m") cfg.tau_m = detail::cfg_double(key, val);
        else if (key == "feature_dim") cfg.feature_dim = int(detail::cfg_int(key, val));
        else if (key == "temperature") cfg.temperature = detail::cfg_double(key, val);
        else if (key == "desk_scale") cfg.desk_scale = detail::cfg_double(key, val);
        else if (key == "iters_per_event") cfg.iters_per_event = int(detail::cfg_int(key, val));
        else if (key == "init_stride") cfg.init_stride = int(detail::cfg_int(key, val));
        else if (key == "new_gaussian_transmittance")
            cfg.new_gaussian_transmittance = detail::cfg_double(key, val);
        else if (key == "closed_set") cfg.closed_set = detail::cfg_bool(key, val);
        else if (key == "seed") cfg.seed = uint64_t(detail::cfg_int(key, val));
        else if (key == "scale_mode") {
            if (val == "full") cfg.scale_mode = ScaleMode::full;
            else if (val == "coarse_only") cfg.scale_mode = ScaleMode::coarse_only;
            else if (val == "fine_only") cfg.scale_mode = ScaleMode::fine_only;
            else throw ConfigError("unknown scale_mode: " + val);
        } else if (key == "memory_mode") {
            if (val == "persistent") cfg.memory_mode = MemoryMode::persistent;
            else if (val == "reset_per_keyframe")
                cfg.memory_mode = MemoryMode::reset_per_keyframe;
            else throw ConfigError("unknown memory_mode: " + val);
        }
        else if (key == "weights.lambda_rgb") cfg.weights.lambda_rgb = detail::cfg_double(key, val);
        else if (key == "weights.lambda_corr") cfg.weights.lambda_corr = detail::cfg_double(key, val);
        else if (key == "weights.lambda_lang") cfg.weights.lambda_lang = detail::cfg_double(key, val);
        else if (key == "weights.lambda_ssim") cfg.weights.lambda_ssim = detail::cfg_double(key, val);
        else if (key == "weights.lambda_ce") cfg.weights.lambda_ce = detail::cfg_double(key, val);
        else if (key == "lr.position") cfg.lr.position = detail::cfg_double(key, val);
        else if (key == "lr.rotation") cfg.lr.rotation = detail::cfg_double(key, val);
        else if (key == "lr.scale") cfg.lr.scale = detail::cfg_double(key, val);
        else if (key == "lr.opacity") cfg.lr.opacity = detail::cfg_double(key, val);
        else if (key == "lr.color") cfg.lr.color = detail::cfg_double(key, val);
        else if (key == "lr.feature") cfg.lr.feature = detail::cfg_double(key, val);
        else if (key == "lr.w_proj") cfg.lr.w_proj = detail::cfg_double(key, val);
        else if (key == "lr.ce_head") cfg.lr.ce_head = detail::cfg_double(key, val);
        else if (key == "tracker.huber_delta") cfg.tracker.huber_delta = detail::cfg_double(key, val);
        else if (key == "tracker.sigma_r") cfg.tracker.sigma_r = detail::cfg_double(key, val);
        else if (key == "tracker.max_iterations")
            cfg.tracker.max_iterations = int(detail::cfg_int(key, val));
        else if (key == "tracker.convergence_tol")
            cfg.tracker.convergence_tol = detail::cfg_double(key, val);
        else if (key == "tracker.keyframe_match_threshold")
            cfg.tracker.keyframe_match_threshold = detail::cfg_double(key, val);
        else if (key == "tracker.grid_stride")
            cfg.tracker.grid_stride = int(detail::cfg_int(key, val));
        else if (key == "tracker.mapping_frame_interval")
            cfg.tracker.mapping_frame_interval = int(detail::cfg_int(key, val));
        else throw ConfigError("unknown pipeline config key: " + key);
    }
    cfg.validate();
}

inline std::string pipeline_config_json(const PipelineConfig& cfg) {
    nlohmann::json j;
    j["scale_levels"] = cfg.scale_levels;
    j["sample_pixels"] = cfg.sample_pixels;
    j["tau_m"] = cfg.tau_m;
    j["feature_dim"] = cfg.feature_dim;
    j["temperature"] = cfg.temperature;
    j["desk_scale"] = cfg.desk_scale;
    j["iters_per_event"] = cfg.iters_per_event;
    j["init_stride"] = cfg.init_stride;
    j["new_gaussian_transmittance"] = cfg.new_gaussian_transmittance;
    j["closed_set"] = cfg.closed_set;
    j["seed"] = cfg.seed;
    j["scale_mode"] = cfg.scale_mode == ScaleMode::full         ? "full"
                      : cfg.scale_mode == ScaleMode::coarse_only ? "coarse_only"
                                                                  : "fine_only";
    j["memory_mode"] =
        cfg.memory_mode == MemoryMode::persistent ? "persistent" : "reset_per_keyframe";
    j["weights"] = {{"lambda_rgb", cfg.weights.lambda_rgb},
                    {"lambda_corr", cfg.weights.lambda_corr},
                    {"lambda_lang", cfg.weights.lambda_lang},
                    {"lambda_ssim", cfg.weights.lambda_ssim},
                    {"lambda_ce", cfg.weights.lambda_ce}};
    j["lr"] = {{"position", cfg.lr.position},   {"rotation", cfg.lr.rotation},
               {"scale", cfg.lr.scale},         {"opacity", cfg.lr.opacity},
               {"color", cfg.lr.color},         {"feature", cfg.lr.feature},
               {"w_proj", cfg.lr.w_proj},       {"ce_head", cfg.lr.ce_head}};
    j["tracker"] = {{"huber_delta", cfg.tracker.huber_delta},
                    {"sigma_r", cfg.tracker.sigma_r},
                    {"max_iterations", cfg.tracker.max_iterations},
                    {"convergence_tol", cfg.tracker.convergence_tol},
                    {"keyframe_match_threshold", cfg.tracker.keyframe_match_threshold},
                    {"grid_stride", cfg.tracker.grid_stride},
                    {"mapping_frame_interval", cfg.tracker.mapping_frame_interval}};
    return j.dump();
}

}  // namespace monogs
