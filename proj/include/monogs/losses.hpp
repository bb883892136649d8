#pragma once

#include "monogs/scale_supervision.hpp"

namespace monogs {

// ---------------------------------------------------------------------------
// Self-supervised losses with exact gradients, plus the Adam step.
// ---------------------------------------------------------------------------

struct LossWeights {
    double lambda_rgb = 1.0;
    double lambda_corr = 0.05;
    double lambda_lang = 0.05;
    double lambda_ssim = 0.2;  // SSIM share inside the photometric loss
    double lambda_ce = 0.0;
};

struct LossReport {
    double rgb = 0, corr = 0, lang = 0, ce = 0, total = 0;
};

// ---------------------------------------------------------------------------
// Photometric loss: (1 - lambda) L1 + lambda (1 - SSIM), SSIM with an 11x11
// Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2 on [0,1] images,
// zero-padded, per-channel averaged.
// ---------------------------------------------------------------------------

namespace detail {

inline const std::array<double, 11>& ssim_kernel() {
    static const std::array<double, 11> k = [] {
        std::array<double, 11> w{};
        double sum = 0;
        for (int i = 0; i < 11; ++i) {
            const double x = i - 5;
            w[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
            sum += w[i];
        }
        for (auto& v : w) v /= sum;
        return w;
    }();
    return k;
}

// Separable zero-padded convolution with the symmetric SSIM kernel
// (self-adjoint, so it also implements the backward pass).
inline Eigen::MatrixXd conv_gauss(const Eigen::MatrixXd& in) {
    const auto& k = ssim_kernel();
    const int H = static_cast<int>(in.rows()), W = static_cast<int>(in.cols());
    Eigen::MatrixXd tmp = Eigen::MatrixXd::Zero(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double acc = 0;
            for (int i = -5; i <= 5; ++i) {
                const int xx = x + i;
                if (xx < 0 || xx >= W) continue;
                acc += k[i + 5] * in(y, xx);
            }
            tmp(y, x) = acc;
        }
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double acc = 0;
            for (int i = -5; i <= 5; ++i) {
                const int yy = y + i;
                if (yy < 0 || yy >= H) continue;
                acc += k[i + 5] * tmp(yy, x);
            }
            out(y, x) = acc;
        }
    return out;
}

inline Eigen::MatrixXd channel_plane(const Image<double>& img, int c) {
    Eigen::MatrixXd m(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) m(y, x) = img.at(y, x, c);
    return m;
}

}  // namespace detail

struct RgbLoss {
    double value = 0;
    Image<double> d_rendered;  // H x W x 3
};

inline RgbLoss loss_rgb(const Image<double>& rendered, const Image<double>& target,
                        double lambda_ssim) {
    if (!rendered.same_shape(target))
        throw ValidationError("loss_rgb shape mismatch");
    const int H = rendered.height(), W = rendered.width();
    const double n_px = double(H) * W * 3;

    RgbLoss out;
    out.d_rendered = Image<double>(H, W, 3);

    // L1 term.
    double l1 = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                const double diff = rendered.at(y, x, c) - target.at(y, x, c);
                l1 += std::abs(diff);
                out.d_rendered.at(y, x, c) =
                    (1.0 - lambda_ssim) * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0)) / n_px;
            }
    l1 /= n_px;

    double ssim_mean = 0;
    if (lambda_ssim != 0.0) {
        const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
        for (int c = 0; c < 3; ++c) {
            const Eigen::MatrixXd x = detail::channel_plane(rendered, c);
            const Eigen::MatrixXd yv = detail::channel_plane(target, c);
            const Eigen::MatrixXd mu_x = detail::conv_gauss(x);
            const Eigen::MatrixXd mu_y = detail::conv_gauss(yv);
            const Eigen::MatrixXd s_xx =
                detail::conv_gauss(x.cwiseProduct(x)) - mu_x.cwiseProduct(mu_x);
            const Eigen::MatrixXd s_yy =
                detail::conv_gauss(yv.cwiseProduct(yv)) - mu_y.cwiseProduct(mu_y);
            const Eigen::MatrixXd s_xy =
                detail::conv_gauss(x.cwiseProduct(yv)) - mu_x.cwiseProduct(mu_y);

            Eigen::MatrixXd g_mu(x.rows(), x.cols());
            Eigen::MatrixXd g_sxx(x.rows(), x.cols());
            Eigen::MatrixXd g_sxy(x.rows(), x.cols());
            for (int iy = 0; iy < H; ++iy)
                for (int ix = 0; ix < W; ++ix) {
                    const double A = 2 * mu_x(iy, ix) * mu_y(iy, ix) + C1;
                    const double B = 2 * s_xy(iy, ix) + C2;
                    const double Cq = mu_x(iy, ix) * mu_x(iy, ix) +
                                      mu_y(iy, ix) * mu_y(iy, ix) + C1;
                    const double Dq = s_xx(iy, ix) + s_yy(iy, ix) + C2;
                    const double ssim = A * B / (Cq * Dq);
                    ssim_mean += ssim;
                    // dL/dssim for L = lambda (1 - mean ssim)
                    const double gs = -lambda_ssim / n_px;
                    const double d_mu = gs * (2 * mu_y(iy, ix) * B / (Cq * Dq) -
                                              A * B * 2 * mu_x(iy, ix) / (Cq * Cq * Dq));
                    const double d_sxx = gs * (-A * B / (Cq * Dq * Dq));
                    const double d_sxy = gs * (2 * A / (Cq * Dq));
                    // Fold the -mu_x^2 / -mu_x mu_y parts of the variances
                    // into the mu gradient.
                    g_mu(iy, ix) = d_mu - 2 * mu_x(iy, ix) * d_sxx -
                                   mu_y(iy, ix) * d_sxy;
                    g_sxx(iy, ix) = d_sxx;
                    g_sxy(iy, ix) = d_sxy;
                }
            const Eigen::MatrixXd back = detail::conv_gauss(g_mu) +
                                         2.0 * x.cwiseProduct(detail::conv_gauss(g_sxx)) +
                                         yv.cwiseProduct(detail::conv_gauss(g_sxy));
            for (int iy = 0; iy < H; ++iy)
                for (int ix = 0; ix < W; ++ix)
                    out.d_rendered.at(iy, ix, c) += back(iy, ix);
        }
        ssim_mean /= n_px;
    }

    out.value = (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - ssim_mean);
    return out;
}

// Cosine similarity of rendered feature vectors, norms floored at 1e-8.
inline double corr_f(const Eigen::VectorXd& f1, const Eigen::VectorXd& f2) {
    const double n1 = std::max(f1.norm(), 1e-8);
    const double n2 = std::max(f2.norm(), 1e-8);
    return f1.dot(f2) / (n1 * n2);
}

// ---------------------------------------------------------------------------
// Multi-view contrastive loss over sampled pixels: mean over scales and
// ordered pixel pairs of (1 - 2 Corr_m) * max(Corr_f, 0), diagonal included.
// ---------------------------------------------------------------------------

struct CorrLoss {
    double value = 0;
    std::vector<Eigen::VectorXd> d_features;  // aligned with the sampled pixels
};

inline CorrLoss loss_corr(const Image<double>& feature_map, const ScaleSupervision& sup,
                          const std::vector<std::pair<int, int>>& pixels) {
    const int n = static_cast<int>(pixels.size());
    if (n < 2) throw ValidationError("loss_corr needs at least two sampled pixels");
    const int d = feature_map.channels();
    const int S = sup.num_levels();

    Eigen::MatrixXd F(n, d);
    Eigen::VectorXd norms(n);
    for (int i = 0; i < n; ++i) {
        const auto [y, x] = pixels[i];
        for (int c = 0; c < d; ++c) F(i, c) = feature_map.at(y, x, c);
        norms[i] = std::max(F.row(i).norm(), 1e-8);
    }
    Eigen::MatrixXd Fn = F.array().colwise() / norms.array();
    const Eigen::MatrixXd C = Fn * Fn.transpose();

    std::vector<uint64_t> bits(static_cast<size_t>(S) * n);
    for (int s = 0; s < S; ++s)
        for (int i = 0; i < n; ++i)
            bits[static_cast<size_t>(s) * n + i] =
                sup.identity_bits(s + 1, pixels[i].first, pixels[i].second);

    const double inv_norm = 1.0 / (double(S) * n * n);
    double value = 0;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);  // K_ij * 1[C_ij > 0]
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            int coeff = 0;  // sum over scales of (1 - 2 Corr_m)
            for (int s = 0; s < S; ++s) {
                const bool corr = (bits[size_t(s) * n + i] & bits[size_t(s) * n + j]) != 0;
                coeff += corr ? -1 : 1;
            }
            const double cf = C(i, j);
            if (cf > 0) {
                value += coeff * cf;
                A(i, j) = coeff;
            }
        }
    }
    value *= inv_norm;

    CorrLoss out;
    out.value = value;
    out.d_features.resize(n);
    const Eigen::MatrixXd M = A * Fn;                        // n x d
    const Eigen::VectorXd rowsum = (A.array() * C.array()).rowwise().sum();
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd g = M.row(i).transpose();
        if (F.row(i).norm() > 1e-8) g -= rowsum[i] * Fn.row(i).transpose();
        out.d_features[i] = (2.0 * inv_norm / norms[i]) * g;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Language regression loss: mean over valid pixels of
// (1 - cos(F_hat, F_clip)) + ||F_hat - F_clip||^2.
// ---------------------------------------------------------------------------

struct LangLoss {
    double value = 0;
    std::vector<Eigen::VectorXd> d_readout;  // aligned with the inputs
};

inline LangLoss loss_lang(const std::vector<Eigen::VectorXd>& readouts,
                          const std::vector<Eigen::VectorXd>& targets,
                          const std::vector<uint8_t>& valid) {
    if (readouts.size() != targets.size() || readouts.size() != valid.size())
        throw ValidationError("loss_lang input size mismatch");
    LangLoss out;
    out.d_readout.resize(readouts.size());
    int n_valid = 0;
    for (uint8_t v : valid) n_valid += v ? 1 : 0;
    if (n_valid == 0) {
        for (size_t i = 0; i < readouts.size(); ++i)
            out.d_readout[i] = Eigen::VectorXd::Zero(readouts[i].size());
        return out;  // no valid pixels: value 0, zero gradients
    }
    const double inv_n = 1.0 / n_valid;
    for (size_t i = 0; i < readouts.size(); ++i) {
        const auto& fh = readouts[i];
        if (!valid[i]) {
            out.d_readout[i] = Eigen::VectorXd::Zero(fh.size());
            continue;
        }
        const auto& t = targets[i];
        const double nf = std::max(fh.norm(), 1e-8);
        const double nt = std::max(t.norm(), 1e-8);
        const double cosv = fh.dot(t) / (nf * nt);
        const Eigen::VectorXd diff = fh - t;
        out.value += (1.0 - cosv) + diff.squaredNorm();
        Eigen::VectorXd dcos = t / (nf * nt);
        if (fh.norm() > 1e-8) dcos -= cosv * fh / (nf * nf);
        out.d_readout[i] = inv_n * (-dcos + 2.0 * diff);
    }
    out.value *= inv_n;
    return out;
}

// ---------------------------------------------------------------------------
// Auxiliary closed-set cross-entropy over sampled pixels.
// ---------------------------------------------------------------------------

struct CeLoss {
    double value = 0;
    Eigen::MatrixXd d_head;                   // K x d
    std::vector<Eigen::VectorXd> d_features;  // aligned with pixels
};

inline CeLoss loss_ce_closed_set(const Image<double>& feature_map,
                                 const Eigen::MatrixXd& head,
                                 const Image<int32_t>& gt_classes,
                                 const std::vector<std::pair<int, int>>& pixels) {
    const int K = static_cast<int>(head.rows());
    const int d = static_cast<int>(head.cols());
    if (feature_map.channels() != d)
        throw ValidationError("CE head dim does not match feature map");
    CeLoss out;
    out.d_head = Eigen::MatrixXd::Zero(K, d);
    out.d_features.assign(pixels.size(), Eigen::VectorXd::Zero(d));
    int n_valid = 0;
    for (const auto& [y, x] : pixels) {
        const int32_t cls = gt_classes.at(y, x);
        if (cls >= K) throw DataError("class label out of range");
        if (cls >= 0) ++n_valid;
    }
    if (n_valid == 0) return out;
    const double inv_n = 1.0 / n_valid;
    for (size_t i = 0; i < pixels.size(); ++i) {
        const auto [y, x] = pixels[i];
        const int32_t cls = gt_classes.at(y, x);
        if (cls < 0) continue;
        Eigen::VectorXd f(d);
        for (int c = 0; c < d; ++c) f[c] = feature_map.at(y, x, c);
        Eigen::VectorXd logits = head * f;
        const double mx = logits.maxCoeff();
        const Eigen::VectorXd ex = (logits.array() - mx).exp();
        const double Z = ex.sum();
        out.value += inv_n * (std::log(Z) - (logits[cls] - mx));
        Eigen::VectorXd p = ex / Z;
        p[cls] -= 1.0;
        out.d_head.noalias() += inv_n * p * f.transpose();
        out.d_features[i] = inv_n * head.transpose() * p;
    }
    return out;
}

inline LossReport loss_total(double rgb, double corr, double lang, double ce,
                             const LossWeights& w) {
    auto check = [](double v, const char* name) {
        if (!std::isfinite(v))
            throw NumericalError(std::string("non-finite loss component: ") + name);
    };
    check(rgb, "rgb");
    check(corr, "corr");
    check(lang, "lang");
    check(ce, "ce");
    LossReport r;
    r.rgb = rgb;
    r.corr = corr;
    r.lang = lang;
    r.ce = ce;
    r.total = w.lambda_rgb * rgb + w.lambda_corr * corr + w.lambda_lang * lang +
              w.lambda_ce * ce;
    return r;
}

// ---------------------------------------------------------------------------
// Adam with per-group learning rates.
// ---------------------------------------------------------------------------

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

class AdamOptimizer {
public:
    struct Group {
        Eigen::VectorXd m, v;
    };

    explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

    void begin_step() { ++t_; }
    int64_t step_count() const { return t_; }

    void step(const std::string& group_name, Eigen::Ref<Eigen::VectorXd> param,
              const Eigen::VectorXd& grad, double lr) {
        if (!grad.allFinite())
            throw NumericalError("non-finite gradient in group " + group_name);
        auto& g = groups_[group_name];
        if (g.m.size() != grad.size()) {
            g.m = Eigen::VectorXd::Zero(grad.size());
            g.v = Eigen::VectorXd::Zero(grad.size());
        }
        g.m = cfg_.beta1 * g.m + (1.0 - cfg_.beta1) * grad;
        g.v = cfg_.beta2 * g.v.array().matrix() +
              (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        param.array() -= lr * (g.m.array() / bc1) /
                         ((g.v.array() / bc2).sqrt() + cfg_.eps);
    }

    std::map<std::string, Group>& groups() { return groups_; }
    const std::map<std::string, Group>& groups() const { return groups_; }
    void set_step_count(int64_t t) { t_ = t; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    int64_t t_ = 0;
    std::map<std::string, Group> groups_;
};

}  // namespace monogs
