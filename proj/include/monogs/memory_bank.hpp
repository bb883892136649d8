#pragma once

#include "monogs/dataset.hpp"

namespace monogs {

// ---------------------------------------------------------------------------
// Language-embedded semantic memory bank: online insertion of representative
// high-dimensional embeddings, a learnable projection, and softmax-attention
// readout of high-dimensional features from low-dimensional queries.
//
// Bank entries are frozen; only the projection (and the Gaussian features
// upstream) receive gradients.
// ---------------------------------------------------------------------------

struct MemoryBank {
    Eigen::MatrixXd entries;  // M x D, unit rows
    std::vector<std::pair<int, int>> insertion_log;  // (keyframe, mask index)

    int size() const { return static_cast<int>(entries.rows()); }
    int dim() const { return static_cast<int>(entries.cols()); }
};

struct Projection {
    Eigen::MatrixXd W;     // D x d
    Eigen::MatrixXd grad;  // same shape, accumulated

    static Projection init(int D, int d, Rng& rng) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        Projection p;
        p.W = Eigen::MatrixXd(D, d);
        const double scale = 1.0 / std::sqrt(double(d));
        for (int i = 0; i < D; ++i)
            for (int j = 0; j < d; ++j) p.W(i, j) = scale * gauss(rng);
        p.grad = Eigen::MatrixXd::Zero(D, d);
        return p;
    }
};

// The stored per-mask embedding, renormalized to unit norm.
inline Eigen::VectorXd masked_embedding(const FrameRecord& frame, int mask_index) {
    if (mask_index < 0 || mask_index >= static_cast<int>(frame.masks.size()))
        throw DataError("mask index out of range");
    const Eigen::VectorXd& e = frame.masks[mask_index].embedding;
    if (e.size() == 0) throw DataError("mask has no embedding");
    const double n = e.norm();
    if (n <= 1e-12) throw DataError("mask embedding has zero norm");
    return e / n;
}

// Insert iff the max cosine similarity against all entries is below tau_m.
inline bool maybe_insert(MemoryBank& bank, const Eigen::VectorXd& e, double tau_m,
                         int keyframe_index = -1, int mask_index = -1) {
    if (std::abs(e.norm() - 1.0) > 1e-6)
        throw ValidationError("memory bank offers must be unit vectors");
    if (bank.size() > 0) {
        if (bank.dim() != e.size())
            throw ValidationError("embedding dim does not match bank");
        const double max_sim = (bank.entries * e).maxCoeff();
        if (max_sim >= tau_m) return false;
    }
    bank.entries.conservativeResize(bank.size() + 1, e.size());
    bank.entries.row(bank.size() - 1) = e.transpose();
    bank.insertion_log.emplace_back(keyframe_index, mask_index);
    return true;
}

// F_hat = softmax((W q) M^T / temperature) M
inline Eigen::VectorXd readout(const Eigen::VectorXd& query, const MemoryBank& bank,
                               const Projection& proj, double temperature = 1.0) {
    if (bank.size() == 0) throw EmptyBankError("readout from an empty memory bank");
    const Eigen::VectorXd projected = proj.W * query;  // D
    Eigen::VectorXd logits = bank.entries * projected / temperature;  // M
    logits.array() -= logits.maxCoeff();
    Eigen::VectorXd attn = logits.array().exp();
    attn /= attn.sum();
    return bank.entries.transpose() * attn;  // D
}

struct ReadoutGrad {
    Eigen::VectorXd d_query;  // d
    Eigen::MatrixXd d_W;      // D x d
};

inline ReadoutGrad readout_backward(const Eigen::VectorXd& query,
                                    const MemoryBank& bank, const Projection& proj,
                                    const Eigen::VectorXd& dL_dout,
                                    double temperature = 1.0) {
    if (bank.size() == 0) throw EmptyBankError("readout from an empty memory bank");
    if (!dL_dout.allFinite())
        throw NumericalError("non-finite upstream gradient into readout");
    const Eigen::VectorXd projected = proj.W * query;
    Eigen::VectorXd logits = bank.entries * projected / temperature;
    logits.array() -= logits.maxCoeff();
    Eigen::VectorXd attn = logits.array().exp();
    attn /= attn.sum();

    const Eigen::VectorXd d_attn = bank.entries * dL_dout;  // M
    const Eigen::VectorXd d_logits =
        attn.array() * (d_attn.array() - attn.dot(d_attn));
    const Eigen::VectorXd d_projected =
        bank.entries.transpose() * d_logits / temperature;  // D
    ReadoutGrad g;
    g.d_query = proj.W.transpose() * d_projected;
    g.d_W = d_projected * query.transpose();
    return g;
}

// Language target for a pixel: the embedding of the smallest mask that
// contains it; empty when no mask does.
inline std::optional<Eigen::VectorXd> pixel_language_target(
    int y, int x, const std::vector<const MaskRecord*>& masks_by_scale_ascending,
    int width) {
    const size_t px = static_cast<size_t>(y) * width + x;
    for (const MaskRecord* m : masks_by_scale_ascending)
        if (m->pixels[px]) return m->embedding;
    return std::nullopt;
}

}  // namespace monogs
