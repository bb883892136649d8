#include <gtest/gtest.h>

#include "monogs/losses.hpp"

#include <random>
#include <set>

using namespace monogs;

namespace {

Image<double> random_image(int h, int w, int c, Rng& rng, double lo = 0.0,
                           double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Image<double> img(h, w, c);
    for (auto& v : img.raw()) v = u(rng);
    return img;
}

MaskRecord rect_mask(int h, int w, int y0, int x0, int y1, int x1, int label) {
    MaskRecord m;
    m.label_id = label;
    m.pixels.assign(size_t(h) * w, 0);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            m.pixels[size_t(y) * w + x] = 1;
            ++m.pixel_count;
        }
    return m;
}

// Literal translation of the contrastive objective, used as an oracle.
double naive_corr(const Image<double>& fmap, const ScaleSupervision& sup,
                  const std::vector<std::pair<int, int>>& pixels) {
    const int n = int(pixels.size());
    const int S = sup.num_levels();
    double value = 0;
    for (int s = 1; s <= S; ++s)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const int corr_m = sup.mask_correspondence(
                    s, pixels[i].first, pixels[i].second, pixels[j].first,
                    pixels[j].second);
                Eigen::VectorXd fi(fmap.channels()), fj(fmap.channels());
                for (int c = 0; c < fmap.channels(); ++c) {
                    fi[c] = fmap.at(pixels[i].first, pixels[i].second, c);
                    fj[c] = fmap.at(pixels[j].first, pixels[j].second, c);
                }
                value += (1.0 - 2.0 * corr_m) * std::max(corr_f(fi, fj), 0.0);
            }
    return value / (double(S) * n * n);
}

}  // namespace

TEST(LossRgb, ClosedForms) {
    Rng rng(1);
    const Image<double> a = random_image(12, 12, 3, rng);
    const RgbLoss zero = loss_rgb(a, a, 0.2);
    EXPECT_NEAR(zero.value, 0.0, 1e-12);
    for (double v : zero.d_rendered.raw()) EXPECT_NEAR(v, 0.0, 1e-12);

    // Constant offset, no SSIM: pure mean absolute error.
    Image<double> b = a;
    for (auto& v : b.raw()) v += 0.5;
    const RgbLoss l1 = loss_rgb(b, a, 0.0);
    EXPECT_NEAR(l1.value, 0.5, 1e-12);
    const double n = double(12 * 12 * 3);
    for (double v : l1.d_rendered.raw()) EXPECT_NEAR(v, 1.0 / n, 1e-15);

    Image<double> wrong(8, 8, 3);
    EXPECT_THROW(loss_rgb(wrong, a, 0.2), ValidationError);
}

TEST(LossRgb, FiniteDifferenceWithSsim) {
    Rng rng(2);
    const int H = 12, W = 12;
    Image<double> rendered = random_image(H, W, 3, rng, 0.1, 0.9);
    const Image<double> target = random_image(H, W, 3, rng, 0.1, 0.9);
    const double lam = 0.2, h = 1e-6;
    const RgbLoss base = loss_rgb(rendered, target, lam);
    for (int probe = 0; probe < 30; ++probe) {
        std::uniform_int_distribution<int> uy(0, H - 1), ux(0, W - 1), uc(0, 2);
        const int y = uy(rng), x = ux(rng), c = uc(rng);
        const double orig = rendered.at(y, x, c);
        rendered.at(y, x, c) = orig + h;
        const double lp = loss_rgb(rendered, target, lam).value;
        rendered.at(y, x, c) = orig - h;
        const double lm = loss_rgb(rendered, target, lam).value;
        rendered.at(y, x, c) = orig;
        const double fd = (lp - lm) / (2 * h);
        const double an = base.d_rendered.at(y, x, c);
        EXPECT_LT(std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6}),
                  1e-3);
    }
}

TEST(CorrF, CosineClosedForms) {
    Eigen::VectorXd a = Eigen::VectorXd::Unit(4, 0);
    Eigen::VectorXd b = Eigen::VectorXd::Unit(4, 1);
    EXPECT_NEAR(corr_f(a, 3.0 * a), 1.0, 1e-12);
    EXPECT_NEAR(corr_f(a, b), 0.0, 1e-12);
    EXPECT_NEAR(corr_f(a, -2.0 * a), -1.0, 1e-12);
}

TEST(LossCorr, BoundaryValues) {
    const int h = 8, w = 8, d = 3;
    std::vector<std::pair<int, int>> pixels = {{1, 1}, {2, 3}, {5, 6}, {7, 0}};

    // Identical features everywhere.
    Image<double> fmap(h, w, d);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            fmap.at(y, x, 0) = 1.0;
            fmap.at(y, x, 1) = -0.5;
        }

    // Everything in one mask: fully correlated pairs pull the loss to -1.
    MaskRecord all = rect_mask(h, w, 0, 0, h, w, 1);
    std::vector<LiftedMask> lifted(1);
    lifted[0].mask = &all;
    lifted[0].scale3d = 1.0;
    const ScaleSupervision same(lifted, {0.5}, h, w);
    EXPECT_NEAR(loss_corr(fmap, same, pixels).value, -1.0, 1e-12);

    // No masks: identical features across uncorrelated pixels cost +1.
    const ScaleSupervision none({}, {0.5}, h, w);
    EXPECT_NEAR(loss_corr(fmap, none, pixels).value, 1.0, 1e-12);

    // Uncorrelated but mutually negative features clamp to the diagonal only.
    Image<double> anti(h, w, d);
    anti.at(1, 1, 0) = 1.0;
    anti.at(2, 3, 0) = -1.0;
    anti.at(5, 6, 1) = 1.0;
    anti.at(7, 0, 1) = -1.0;
    // Each pixel correlates positively only with itself: value = n / n^2.
    EXPECT_NEAR(loss_corr(anti, none, pixels).value, 0.25, 1e-12);

    EXPECT_THROW(loss_corr(fmap, same, {{0, 0}}), ValidationError);
}

TEST(LossCorr, MatchesNaiveOracleAndGradients) {
    Rng rng(3);
    const int h = 10, w = 10, d = 4;
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Image<double> fmap(h, w, d);
        for (auto& v : fmap.raw()) v = g(rng);

        std::vector<MaskRecord> masks;
        masks.push_back(rect_mask(h, w, 0, 0, h, w, 1));
        masks.push_back(rect_mask(h, w, 1, 1, 6, 6, 2));
        masks.push_back(rect_mask(h, w, 4, 4, 9, 9, 3));
        std::vector<LiftedMask> lifted(3);
        for (int i = 0; i < 3; ++i) lifted[i].mask = &masks[i];
        lifted[0].scale3d = 5.0;
        lifted[1].scale3d = 2.0;
        lifted[2].scale3d = 2.5;
        const ScaleSupervision sup(lifted, {1.0, 3.0}, h, w);

        std::vector<std::pair<int, int>> pixels;
        std::uniform_int_distribution<int> up(0, h - 1);
        std::set<std::pair<int, int>> seen;
        while (pixels.size() < 8) {
            auto p = std::make_pair(up(rng), up(rng));
            if (seen.insert(p).second) pixels.push_back(p);
        }

        const CorrLoss out = loss_corr(fmap, sup, pixels);
        EXPECT_NEAR(out.value, naive_corr(fmap, sup, pixels), 1e-12);
        EXPECT_GE(out.value, -1.0 - 1e-12);
        EXPECT_LE(out.value, 1.0 + 1e-12);

        if (trial < 3) {  // finite-difference feature gradients
            const double h_fd = 1e-6;
            for (size_t i = 0; i < pixels.size(); ++i)
                for (int c = 0; c < d; ++c) {
                    auto [py, px] = pixels[i];
                    const double orig = fmap.at(py, px, c);
                    fmap.at(py, px, c) = orig + h_fd;
                    const double lp = loss_corr(fmap, sup, pixels).value;
                    fmap.at(py, px, c) = orig - h_fd;
                    const double lm = loss_corr(fmap, sup, pixels).value;
                    fmap.at(py, px, c) = orig;
                    const double fd = (lp - lm) / (2 * h_fd);
                    const double an = out.d_features[i][c];
                    if (std::abs(an) > 1e-6 || std::abs(fd) > 1e-6)
                        EXPECT_LT(std::abs(an - fd) /
                                      std::max({std::abs(an), std::abs(fd), 1e-6}),
                                  1e-3);
                }
        }
    }
}

TEST(LossLang, ClosedFormsAndGradients) {
    Rng rng(4);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::VectorXd u(6);
    for (int i = 0; i < 6; ++i) u[i] = g(rng);
    u.normalize();

    // Perfect regression: zero loss.
    const LangLoss zero = loss_lang({u}, {u}, {1});
    EXPECT_NEAR(zero.value, 0.0, 1e-12);

    // Antipodal unit vectors: (1 - (-1)) + ||2u||^2 = 6.
    const LangLoss anti = loss_lang({u}, {Eigen::VectorXd(-u)}, {1});
    EXPECT_NEAR(anti.value, 6.0, 1e-12);

    // Invalid entries contribute nothing.
    const LangLoss skip = loss_lang({u, u}, {Eigen::VectorXd(-u), u}, {0, 1});
    EXPECT_NEAR(skip.value, 0.0, 1e-12);
    EXPECT_EQ(skip.d_readout[0].norm(), 0.0);

    const LangLoss none = loss_lang({u}, {u}, {0});
    EXPECT_EQ(none.value, 0.0);
    EXPECT_EQ(none.d_readout[0].norm(), 0.0);

    EXPECT_THROW(loss_lang({u}, {u, u}, {1}), ValidationError);

    // Finite differences on a batch.
    std::vector<Eigen::VectorXd> readouts(3), targets(3);
    std::vector<uint8_t> valid = {1, 1, 0};
    for (int i = 0; i < 3; ++i) {
        readouts[i] = Eigen::VectorXd(4);
        targets[i] = Eigen::VectorXd(4);
        for (int k = 0; k < 4; ++k) {
            readouts[i][k] = g(rng);
            targets[i][k] = g(rng);
        }
        targets[i].normalize();
    }
    const LangLoss base = loss_lang(readouts, targets, valid);
    const double h = 1e-6;
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 4; ++k) {
            auto rp = readouts, rm = readouts;
            rp[i][k] += h;
            rm[i][k] -= h;
            const double fd = (loss_lang(rp, targets, valid).value -
                               loss_lang(rm, targets, valid).value) /
                              (2 * h);
            EXPECT_NEAR(base.d_readout[i][k], fd, 1e-4);
        }
}

TEST(LossCe, ClosedFormsAndGradients) {
    const int d = 3, K = 3;
    Image<double> fmap(2, 2, d);
    Image<int32_t> cls(2, 2, 1, -1);
    std::vector<std::pair<int, int>> pixels = {{0, 0}, {1, 1}};

    // Confident correct prediction: loss vanishes with a large margin.
    Eigen::MatrixXd head = 20.0 * Eigen::MatrixXd::Identity(K, d);
    fmap.at(0, 0, 1) = 1.0;
    cls.at(0, 0) = 1;
    const CeLoss easy = loss_ce_closed_set(fmap, head, cls, pixels);
    EXPECT_LT(easy.value, 1e-6);

    // Uniform logits: ln K.
    const CeLoss uniform =
        loss_ce_closed_set(fmap, Eigen::MatrixXd::Zero(K, d), cls, pixels);
    EXPECT_NEAR(uniform.value, std::log(double(K)), 1e-12);

    cls.at(0, 0) = K;  // out of range
    EXPECT_THROW(loss_ce_closed_set(fmap, head, cls, pixels), DataError);
    cls.at(0, 0) = 1;

    Image<double> bad(2, 2, d + 1);
    EXPECT_THROW(loss_ce_closed_set(bad, head, cls, pixels), ValidationError);

    // All pixels unlabeled: zero loss and gradients.
    Image<int32_t> unlabeled(2, 2, 1, -1);
    const CeLoss none = loss_ce_closed_set(fmap, head, unlabeled, pixels);
    EXPECT_EQ(none.value, 0.0);
    EXPECT_EQ(none.d_head.norm(), 0.0);

    // Finite differences on head and features.
    Rng rng(5);
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& v : fmap.raw()) v = g(rng);
    for (Eigen::Index i = 0; i < head.size(); ++i) head.data()[i] = g(rng);
    cls.at(1, 1) = 2;
    const CeLoss base = loss_ce_closed_set(fmap, head, cls, pixels);
    const double h = 1e-6;
    for (int r = 0; r < K; ++r)
        for (int c = 0; c < d; ++c) {
            Eigen::MatrixXd hp = head, hm = head;
            hp(r, c) += h;
            hm(r, c) -= h;
            const double fd = (loss_ce_closed_set(fmap, hp, cls, pixels).value -
                               loss_ce_closed_set(fmap, hm, cls, pixels).value) /
                              (2 * h);
            EXPECT_NEAR(base.d_head(r, c), fd, 1e-4);
        }
    for (size_t i = 0; i < pixels.size(); ++i)
        for (int c = 0; c < d; ++c) {
            auto [py, px] = pixels[i];
            const double orig = fmap.at(py, px, c);
            fmap.at(py, px, c) = orig + h;
            const double lp = loss_ce_closed_set(fmap, head, cls, pixels).value;
            fmap.at(py, px, c) = orig - h;
            const double lm = loss_ce_closed_set(fmap, head, cls, pixels).value;
            fmap.at(py, px, c) = orig;
            EXPECT_NEAR(base.d_features[i][c], (lp - lm) / (2 * h), 1e-4);
        }
}

TEST(LossTotal, WeightingAndValidation) {
    LossWeights w;
    w.lambda_rgb = 1.0;
    w.lambda_corr = 0.05;
    w.lambda_lang = 0.05;
    w.lambda_ce = 0.5;
    const LossReport r = loss_total(1.0, 2.0, -1.0, 0.2, w);
    EXPECT_NEAR(r.total, 1.0 + 0.1 - 0.05 + 0.1, 1e-15);
    EXPECT_EQ(r.rgb, 1.0);
    EXPECT_EQ(r.corr, 2.0);

    const double nan = std::numeric_limits<double>::quiet_NaN();
    try {
        loss_total(1.0, nan, 0.0, 0.0, w);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("corr"), std::string::npos);
    }
    EXPECT_THROW(loss_total(1.0, 0.0, std::numeric_limits<double>::infinity(), 0.0, w),
                 NumericalError);
}

TEST(Adam, FirstStepAndZeroGrad) {
    AdamOptimizer opt;
    Eigen::VectorXd param = Eigen::VectorXd::Constant(3, 1.0);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
    opt.begin_step();
    opt.step("p", param, zero, 0.1);
    EXPECT_EQ((param - Eigen::VectorXd::Constant(3, 1.0)).norm(), 0.0);

    Eigen::VectorXd grad(3);
    grad << 2.0, -0.5, 0.0;
    AdamOptimizer fresh;
    Eigen::VectorXd p2 = Eigen::VectorXd::Zero(3);
    fresh.begin_step();
    fresh.step("p", p2, grad, 0.1);
    const double eps = fresh.config().eps;
    for (int i = 0; i < 3; ++i) {
        const double expect = -0.1 * grad[i] / (std::abs(grad[i]) + eps);
        EXPECT_NEAR(p2[i], expect, 1e-12);
    }

    Eigen::VectorXd bad(3);
    bad << 1.0, std::numeric_limits<double>::quiet_NaN(), 0.0;
    EXPECT_THROW(fresh.step("p", p2, bad, 0.1), NumericalError);
}

TEST(Adam, DeterministicAndDescends) {
    Rng rng(6);
    std::normal_distribution<double> g(0.0, 1.0);
    int improved = 0;
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::VectorXd target(5), x = Eigen::VectorXd::Zero(5);
        for (int i = 0; i < 5; ++i) target[i] = g(rng);
        auto loss = [&](const Eigen::VectorXd& v) {
            return 0.5 * (v - target).squaredNorm();
        };
        AdamOptimizer opt;
        opt.begin_step();
        const double before = loss(x);
        Eigen::VectorXd grad = x - target;
        opt.step("x", x, grad, 1e-4);
        if (loss(x) < before) ++improved;
    }
    EXPECT_GE(improved, 48);

    // Identical gradient streams give identical trajectories.
    AdamOptimizer a, b;
    Eigen::VectorXd xa = Eigen::VectorXd::Ones(4), xb = Eigen::VectorXd::Ones(4);
    for (int i = 0; i < 10; ++i) {
        Eigen::VectorXd grad(4);
        for (int k = 0; k < 4; ++k) grad[k] = std::sin(i + k);
        a.begin_step();
        b.begin_step();
        a.step("x", xa, grad, 0.01);
        b.step("x", xb, grad, 0.01);
    }
    EXPECT_EQ((xa - xb).norm(), 0.0);
}
