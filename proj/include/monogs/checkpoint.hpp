#pragma once

#include "monogs/losses.hpp"
#include "monogs/memory_bank.hpp"
#include "monogs/splatting.hpp"

namespace monogs {

// ---------------------------------------------------------------------------
// Binary checkpoint: full map, memory bank, projection, optimizer state and
// run configuration. All floating point state is stored as little-endian
// float64, so save -> load -> save is byte-identical.
// ---------------------------------------------------------------------------

struct Checkpoint {
    std::vector<Gaussian> gaussians;
    MemoryBank bank;
    Projection proj;
    std::map<std::string, AdamOptimizer::Group> adam_groups;
    int64_t adam_step = 0;
    std::string config_json;  // snapshot of the run configuration
    std::string rng_state;    // serialized engine state
};

namespace detail {

inline constexpr char kCkptMagic[8] = {'M', 'G', 'S', 'C', 'K', 'P', 'T', '1'};
inline constexpr uint32_t kCkptVersion = 1;

inline void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_i64(std::ostream& os, int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

inline uint32_t get_u32(std::istream& is) {
    uint32_t v;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw FormatError("truncated checkpoint");
    return v;
}
inline int64_t get_i64(std::istream& is) {
    int64_t v;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw FormatError("truncated checkpoint");
    return v;
}
inline uint64_t get_u64(std::istream& is) {
    uint64_t v;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw FormatError("truncated checkpoint");
    return v;
}
inline double get_f64(std::istream& is) {
    double v;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw FormatError("truncated checkpoint");
    return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_string(std::istream& is) {
    const uint64_t n = get_u64(is);
    if (n > (1ull << 32)) throw FormatError("implausible string length in checkpoint");
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw FormatError("truncated checkpoint");
    return s;
}

inline void put_vec(std::ostream& os, const Eigen::VectorXd& v) {
    put_u64(os, static_cast<uint64_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) put_f64(os, v[i]);
}
inline Eigen::VectorXd get_vec(std::istream& is) {
    const uint64_t n = get_u64(is);
    if (n > (1ull << 32)) throw FormatError("implausible vector length in checkpoint");
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (uint64_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = get_f64(is);
    return v;
}

inline void put_mat(std::ostream& os, const Eigen::MatrixXd& m) {
    put_u64(os, static_cast<uint64_t>(m.rows()));
    put_u64(os, static_cast<uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(os, m(r, c));
}
inline Eigen::MatrixXd get_mat(std::istream& is) {
    const uint64_t rows = get_u64(is), cols = get_u64(is);
    if (rows > (1ull << 24) || cols > (1ull << 24))
        throw FormatError("implausible matrix shape in checkpoint");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (uint64_t r = 0; r < rows; ++r)
        for (uint64_t c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = get_f64(is);
    return m;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IOError("cannot open checkpoint for writing: " + path);
    os.write(detail::kCkptMagic, 8);
    detail::put_u32(os, detail::kCkptVersion);

    const uint32_t feat_dim =
        ck.gaussians.empty() ? 0 : static_cast<uint32_t>(ck.gaussians[0].feature.size());
    detail::put_u64(os, ck.gaussians.size());
    detail::put_u32(os, feat_dim);
    for (const auto& g : ck.gaussians) {
        if (static_cast<uint32_t>(g.feature.size()) != feat_dim)
            throw ValidationError("inconsistent feature dimensions in checkpoint");
        for (int i = 0; i < 3; ++i) detail::put_f64(os, g.x[i]);
        for (int i = 0; i < 4; ++i) detail::put_f64(os, g.q[i]);
        for (int i = 0; i < 3; ++i) detail::put_f64(os, g.log_scale[i]);
        detail::put_f64(os, g.opacity_logit);
        for (int i = 0; i < 3; ++i) detail::put_f64(os, g.color_logit[i]);
        for (Eigen::Index i = 0; i < g.feature.size(); ++i) detail::put_f64(os, g.feature[i]);
    }

    detail::put_mat(os, ck.bank.entries);
    detail::put_u64(os, ck.bank.insertion_log.size());
    for (const auto& [kf, mi] : ck.bank.insertion_log) {
        detail::put_i64(os, kf);
        detail::put_i64(os, mi);
    }
    detail::put_mat(os, ck.proj.W);

    detail::put_i64(os, ck.adam_step);
    detail::put_u64(os, ck.adam_groups.size());
    for (const auto& [name, grp] : ck.adam_groups) {
        detail::put_string(os, name);
        detail::put_vec(os, grp.m);
        detail::put_vec(os, grp.v);
    }

    detail::put_string(os, ck.config_json);
    detail::put_string(os, ck.rng_state);
    if (!os) throw IOError("failed to write checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IOError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
        throw FormatError("bad checkpoint magic: " + path);
    const uint32_t version = detail::get_u32(is);
    if (version != detail::kCkptVersion)
        throw FormatError("unsupported checkpoint version");

    Checkpoint ck;
    const uint64_t n = detail::get_u64(is);
    const uint32_t feat_dim = detail::get_u32(is);
    if (n > (1ull << 28)) throw FormatError("implausible gaussian count in checkpoint");
    ck.gaussians.resize(n);
    for (auto& g : ck.gaussians) {
        for (int i = 0; i < 3; ++i) g.x[i] = detail::get_f64(is);
        for (int i = 0; i < 4; ++i) g.q[i] = detail::get_f64(is);
        for (int i = 0; i < 3; ++i) g.log_scale[i] = detail::get_f64(is);
        g.opacity_logit = detail::get_f64(is);
        for (int i = 0; i < 3; ++i) g.color_logit[i] = detail::get_f64(is);
        g.feature.resize(feat_dim);
        for (uint32_t i = 0; i < feat_dim; ++i) g.feature[i] = detail::get_f64(is);
    }

    ck.bank.entries = detail::get_mat(is);
    const uint64_t n_log = detail::get_u64(is);
    if (n_log > (1ull << 28)) throw FormatError("implausible insertion log length");
    for (uint64_t i = 0; i < n_log; ++i) {
        const int64_t kf = detail::get_i64(is);
        const int64_t mi = detail::get_i64(is);
        ck.bank.insertion_log.emplace_back(static_cast<int>(kf), static_cast<int>(mi));
    }
    ck.proj.W = detail::get_mat(is);
    ck.proj.grad = Eigen::MatrixXd::Zero(ck.proj.W.rows(), ck.proj.W.cols());

    ck.adam_step = detail::get_i64(is);
    const uint64_t n_groups = detail::get_u64(is);
    if (n_groups > (1ull << 16)) throw FormatError("implausible optimizer group count");
    for (uint64_t i = 0; i < n_groups; ++i) {
        const std::string name = detail::get_string(is);
        AdamOptimizer::Group grp;
        grp.m = detail::get_vec(is);
        grp.v = detail::get_vec(is);
        ck.adam_groups[name] = std::move(grp);
    }

    ck.config_json = detail::get_string(is);
    ck.rng_state = detail::get_string(is);
    return ck;
}

}  // namespace monogs
