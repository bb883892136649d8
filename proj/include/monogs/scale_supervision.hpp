#pragma once

#include "monogs/dataset.hpp"

namespace monogs {

// ---------------------------------------------------------------------------
// Scale-conditioned mask supervision: lifted 3D mask scales, S discrete
// levels, per-pixel identity vectors and the binary mask correspondence used
// by the contrastive objective.
//
// A mask is active at pixel p and level value s iff p is inside it and there
// exists no smaller containing mask whose size lies in [s, size(mask)).
// ---------------------------------------------------------------------------

struct LiftedMask {
    int mask_index = -1;       // index into the frame's mask list
    double scale3d = 0;        // bbox diagonal of the lifted points
    const MaskRecord* mask = nullptr;
};

inline LiftedMask lift_mask_scale(const MaskRecord& mask, const Image<double>& pointmap,
                                  const Image<double>& confidence) {
    const int H = pointmap.height(), W = pointmap.width();
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    Eigen::Vector3d hi = -lo;
    bool any = false;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            if (!mask.pixels[static_cast<size_t>(y) * W + x]) continue;
            if (confidence.at(y, x) <= 0) continue;
            any = true;
            for (int c = 0; c < 3; ++c) {
                const double v = pointmap.at(y, x, c);
                lo[c] = std::min(lo[c], v);
                hi[c] = std::max(hi[c], v);
            }
        }
    }
    if (!any) throw EmptyLiftError("mask has no confident pixels");
    LiftedMask out;
    out.mask = &mask;
    out.scale3d = std::max((hi - lo).norm(), 1e-6);
    return out;
}

// Level k (1..S) is the nearest-rank quantile of the scale multiset at
// fraction (k - 0.5) / S; duplicates are nudged to keep strict ascent.
inline std::vector<double> compute_levels(std::vector<double> scales, int S) {
    if (scales.empty()) throw ValidationError("compute_levels needs at least one scale");
    if (S < 1) throw ValidationError("S must be >= 1");
    std::sort(scales.begin(), scales.end());
    const size_t n = scales.size();
    std::vector<double> levels(S);
    for (int k = 1; k <= S; ++k) {
        const double frac = (k - 0.5) / S;
        size_t rank = static_cast<size_t>(std::ceil(frac * n));
        rank = std::min(std::max<size_t>(rank, 1), n);
        levels[k - 1] = scales[rank - 1];
    }
    for (int k = 1; k < S; ++k)
        if (levels[k] <= levels[k - 1]) levels[k] = levels[k - 1] + k * 1e-9;
    return levels;
}

class ScaleSupervision {
public:
    // Masks are held coarse -> fine (descending scale3d).
    ScaleSupervision(std::vector<LiftedMask> masks, std::vector<double> levels,
                     int height, int width)
        : masks_(std::move(masks)), levels_(std::move(levels)), h_(height), w_(width) {
        if (masks_.size() > 64)
            throw ValidationError("at most 64 masks per frame are supported");
        for (size_t k = 1; k < levels_.size(); ++k)
            if (levels_[k] <= levels_[k - 1])
                throw ValidationError("levels must be strictly ascending");
        std::stable_sort(masks_.begin(), masks_.end(),
                         [](const LiftedMask& a, const LiftedMask& b) {
                             return a.scale3d > b.scale3d;
                         });
        for (size_t i = 0; i < masks_.size(); ++i) masks_[i].mask_index = int(i);
        build_tables();
    }

    int num_levels() const { return static_cast<int>(levels_.size()); }
    int num_masks() const { return static_cast<int>(masks_.size()); }
    const std::vector<double>& levels() const { return levels_; }
    const std::vector<LiftedMask>& masks() const { return masks_; }
    int height() const { return h_; }
    int width() const { return w_; }

    // Bit i set <=> mask i (coarse -> fine order) is active at p for level s.
    uint64_t identity_bits(int level_index, int y, int x) const {
        check_level(level_index);
        return table_[static_cast<size_t>(level_index - 1) * h_ * w_ +
                      static_cast<size_t>(y) * w_ + x];
    }

    std::vector<uint8_t> identity_vector(int level_index, int y, int x) const {
        const uint64_t bits = identity_bits(level_index, y, x);
        std::vector<uint8_t> v(masks_.size(), 0);
        for (size_t i = 0; i < masks_.size(); ++i) v[i] = (bits >> i) & 1;
        return v;
    }

    int mask_correspondence(int level_index, int y1, int x1, int y2, int x2) const {
        return (identity_bits(level_index, y1, x1) & identity_bits(level_index, y2, x2))
                   ? 1
                   : 0;
    }

    // Per-level int32 label image for visualization: the finest active mask.
    Image<int32_t> debug_label_image(int level_index) const {
        check_level(level_index);
        Image<int32_t> img(h_, w_, 1, 0);
        for (int y = 0; y < h_; ++y)
            for (int x = 0; x < w_; ++x) {
                const uint64_t bits = identity_bits(level_index, y, x);
                if (!bits) continue;
                // Highest set bit = finest active mask.
                const int i = 63 - __builtin_clzll(bits);
                img.at(y, x) = masks_[i].mask->label_id;
            }
        return img;
    }

private:
    void check_level(int level_index) const {
        if (level_index < 1 || level_index > num_levels())
            throw ValidationError("level index out of range");
    }

    void build_tables() {
        const int S = num_levels();
        table_.assign(static_cast<size_t>(S) * h_ * w_, 0);
        const size_t n = masks_.size();
        std::vector<int> containing;
        for (int y = 0; y < h_; ++y) {
            for (int x = 0; x < w_; ++x) {
                containing.clear();
                const size_t px = static_cast<size_t>(y) * w_ + x;
                for (size_t i = 0; i < n; ++i)
                    if (masks_[i].mask->pixels[px]) containing.push_back(int(i));
                if (containing.empty()) continue;
                for (int k = 0; k < S; ++k) {
                    const double s = levels_[k];
                    uint64_t bits = 0;
                    for (int i : containing) {
                        bool suppressed = false;
                        for (int j : containing) {
                            if (j == i) continue;
                            const double sj = masks_[j].scale3d;
                            if (s <= sj && sj < masks_[i].scale3d) {
                                suppressed = true;
                                break;
                            }
                        }
                        if (!suppressed) bits |= uint64_t(1) << i;
                    }
                    table_[static_cast<size_t>(k) * h_ * w_ + px] = bits;
                }
            }
        }
    }

    std::vector<LiftedMask> masks_;
    std::vector<double> levels_;
    int h_, w_;
    std::vector<uint64_t> table_;
};

// Convenience: lift every mask of a frame and build supervision with the
// given levels (or per-frame quantile levels when none are supplied).
inline ScaleSupervision build_scale_supervision(const FrameRecord& frame, int S,
                                                const std::vector<double>* levels = nullptr) {
    std::vector<LiftedMask> lifted;
    for (const auto& m : frame.masks)
        lifted.push_back(lift_mask_scale(m, frame.pointmap, frame.confidence));
    std::vector<double> lv;
    if (levels) {
        lv = *levels;
    } else {
        std::vector<double> scales;
        for (const auto& l : lifted) scales.push_back(l.scale3d);
        lv = compute_levels(scales, S);
    }
    return ScaleSupervision(std::move(lifted), std::move(lv), frame.rgb.height(),
                            frame.rgb.width());
}

}  // namespace monogs
