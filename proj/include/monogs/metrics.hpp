#pragma once

#include "monogs/losses.hpp"

namespace monogs {

// ---------------------------------------------------------------------------
// Evaluation metrics: image quality, segmentation and trajectory error.
// ---------------------------------------------------------------------------

inline double psnr(const Image<double>& a, const Image<double>& b) {
    if (!a.same_shape(b)) throw ValidationError("psnr shape mismatch");
    double mse = 0;
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) {
        const double d = a.raw()[i] - b.raw()[i];
        mse += d * d;
    }
    mse /= double(n);
    if (mse < 1e-10) return 99.0;
    return 10.0 * std::log10(1.0 / mse);
}

// Mean SSIM on [0,1] images (11x11 Gaussian window, sigma 1.5, zero-padded).
inline double ssim(const Image<double>& a, const Image<double>& b) {
    if (!a.same_shape(b)) throw ValidationError("ssim shape mismatch");
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const int H = a.height(), W = a.width(), ch = a.channels();
    double acc = 0;
    for (int c = 0; c < ch; ++c) {
        const Eigen::MatrixXd x = detail::channel_plane(a, c);
        const Eigen::MatrixXd y = detail::channel_plane(b, c);
        const Eigen::MatrixXd mu_x = detail::conv_gauss(x);
        const Eigen::MatrixXd mu_y = detail::conv_gauss(y);
        const Eigen::MatrixXd s_xx = detail::conv_gauss(x.cwiseProduct(x)) - mu_x.cwiseProduct(mu_x);
        const Eigen::MatrixXd s_yy = detail::conv_gauss(y.cwiseProduct(y)) - mu_y.cwiseProduct(mu_y);
        const Eigen::MatrixXd s_xy = detail::conv_gauss(x.cwiseProduct(y)) - mu_x.cwiseProduct(mu_y);
        for (int iy = 0; iy < H; ++iy)
            for (int ix = 0; ix < W; ++ix) {
                const double A = 2 * mu_x(iy, ix) * mu_y(iy, ix) + C1;
                const double B = 2 * s_xy(iy, ix) + C2;
                const double Cq = mu_x(iy, ix) * mu_x(iy, ix) + mu_y(iy, ix) * mu_y(iy, ix) + C1;
                const double Dq = s_xx(iy, ix) + s_yy(iy, ix) + C2;
                acc += A * B / (Cq * Dq);
            }
    }
    return acc / (double(H) * W * ch);
}

// ---------------------------------------------------------------------------
// Segmentation metrics over int label images; label 0 means unlabeled and is
// excluded from both the class set and the pixel count.
// ---------------------------------------------------------------------------

struct SegmentationMetrics {
    double miou = 0;
    double fwiou = 0;
    double accuracy = 0;
    std::map<int32_t, double> per_class_iou;
};

inline SegmentationMetrics segmentation_metrics(const Image<int32_t>& predicted,
                                                const Image<int32_t>& gt) {
    if (!predicted.same_shape(gt))
        throw ValidationError("segmentation metric shape mismatch");
    std::map<int32_t, int64_t> inter, pred_count, gt_count;
    int64_t correct = 0, total = 0;
    for (size_t i = 0; i < gt.size(); ++i) {
        const int32_t g = gt.raw()[i];
        if (g == 0) continue;  // unlabeled pixels are ignored
        const int32_t p = predicted.raw()[i];
        ++total;
        ++gt_count[g];
        if (p != 0) ++pred_count[p];
        if (p == g) {
            ++correct;
            ++inter[g];
        }
    }
    if (total == 0) throw DataError("ground truth has no labeled pixels");
    SegmentationMetrics m;
    m.accuracy = double(correct) / double(total);
    double iou_sum = 0, fw_sum = 0;
    for (const auto& [cls, gc] : gt_count) {
        const int64_t is = inter.count(cls) ? inter.at(cls) : 0;
        const int64_t pc = pred_count.count(cls) ? pred_count.at(cls) : 0;
        const int64_t uni = gc + pc - is;
        const double iou = uni > 0 ? double(is) / double(uni) : 0.0;
        m.per_class_iou[cls] = iou;
        iou_sum += iou;
        fw_sum += double(gc) / double(total) * iou;
    }
    m.miou = iou_sum / double(gt_count.size());
    m.fwiou = fw_sum;
    return m;
}

// ---------------------------------------------------------------------------
// Absolute trajectory error after a rigid (rotation + translation) alignment
// of the estimated positions onto the reference, least-squares optimal.
// ---------------------------------------------------------------------------

struct AteResult {
    double rmse = 0;
    SE3 alignment;  // maps estimated positions onto the reference frame
};

inline AteResult ate_rmse(const std::vector<Eigen::Vector3d>& estimated,
                          const std::vector<Eigen::Vector3d>& reference) {
    if (estimated.size() != reference.size())
        throw ValidationError("trajectory length mismatch");
    const size_t n = estimated.size();
    if (n < 3) throw InsufficientDataError("need at least 3 poses for alignment");

    Eigen::Vector3d mu_e = Eigen::Vector3d::Zero(), mu_r = Eigen::Vector3d::Zero();
    for (size_t i = 0; i < n; ++i) {
        mu_e += estimated[i];
        mu_r += reference[i];
    }
    mu_e /= double(n);
    mu_r /= double(n);

    Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
    for (size_t i = 0; i < n; ++i)
        H += (reference[i] - mu_r) * (estimated[i] - mu_e).transpose();
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d S = Eigen::Matrix3d::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) S(2, 2) = -1;
    AteResult out;
    out.alignment.R = svd.matrixU() * S * svd.matrixV().transpose();
    out.alignment.t = mu_r - out.alignment.R * mu_e;

    double sq = 0;
    for (size_t i = 0; i < n; ++i)
        sq += (out.alignment * estimated[i] - reference[i]).squaredNorm();
    out.rmse = std::sqrt(sq / double(n));
    return out;
}

}  // namespace monogs
