#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace monogs {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IOError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct NumericalError : Error { using Error::Error; };
struct EmptyInitError : Error { using Error::Error; };
struct DegenerateRayError : Error { using Error::Error; };
struct InsufficientMatchesError : Error { using Error::Error; };
struct DegenerateGeometryError : Error { using Error::Error; };
struct EmptyLiftError : Error { using Error::Error; };
struct EmptyBankError : Error { using Error::Error; };
struct InsufficientDataError : Error { using Error::Error; };
struct RunFailedError : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Dense interleaved image container (row-major, channels innermost)
// ---------------------------------------------------------------------------

template <typename T>
class Image {
public:
    Image() = default;
    Image(int height, int width, int channels, T fill = T{})
        : h_(height), w_(width), c_(channels),
          data_(static_cast<size_t>(height) * width * channels, fill) {}

    int height() const { return h_; }
    int width() const { return w_; }
    int channels() const { return c_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& at(int y, int x, int ch = 0) { return data_[idx(y, x, ch)]; }
    const T& at(int y, int x, int ch = 0) const { return data_[idx(y, x, ch)]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

    bool same_shape(const Image& o) const {
        return h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
    }

private:
    size_t idx(int y, int x, int ch) const {
        return (static_cast<size_t>(y) * w_ + x) * c_ + ch;
    }
    int h_ = 0, w_ = 0, c_ = 0;
    std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// Camera intrinsics (pinhole, pixel units)
// ---------------------------------------------------------------------------

struct Intrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
};

// ---------------------------------------------------------------------------
// Rigid transform SE(3)
// ---------------------------------------------------------------------------

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d m;
    m << 0, -v.z(), v.y(),
         v.z(), 0, -v.x(),
        -v.y(), v.x(), 0;
    return m;
}

struct SE3 {
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();

    static SE3 identity() { return SE3{}; }

    SE3 inverse() const { return SE3{R.transpose(), -(R.transpose() * t)}; }

    // Project R back onto SO(3). Long composition chains drift off the
    // manifold numerically, and inverse()/exp() silently amplify the
    // deviation because they assume a rigid rotation.
    SE3 orthonormalized() const {
        Eigen::Quaterniond q(R);
        q.normalize();
        return SE3{q.toRotationMatrix(), t};
    }

    SE3 operator*(const SE3& o) const { return SE3{R * o.R, R * o.t + t}; }

    Eigen::Vector3d operator*(const Eigen::Vector3d& p) const { return R * p + t; }

    // Tangent convention: xi = [rho; phi], translation first.
    static SE3 exp(const Eigen::Matrix<double, 6, 1>& xi) {
        const Eigen::Vector3d rho = xi.head<3>();
        const Eigen::Vector3d phi = xi.tail<3>();
        const double theta = phi.norm();
        Eigen::Matrix3d R, V;
        if (theta < 1e-10) {
            const Eigen::Matrix3d K = skew(phi);
            R = Eigen::Matrix3d::Identity() + K + 0.5 * K * K;
            V = Eigen::Matrix3d::Identity() + 0.5 * K + K * K / 6.0;
        } else {
            const Eigen::Vector3d a = phi / theta;
            const Eigen::Matrix3d K = skew(a);
            R = Eigen::Matrix3d::Identity() + std::sin(theta) * K +
                (1.0 - std::cos(theta)) * K * K;
            V = Eigen::Matrix3d::Identity() +
                ((1.0 - std::cos(theta)) / theta) * K +
                ((theta - std::sin(theta)) / theta) * K * K;
        }
        return SE3{R, V * rho};
    }

    Eigen::Matrix<double, 6, 1> log() const {
        Eigen::Matrix<double, 6, 1> xi;
        const double c = std::min(1.0, std::max(-1.0, (R.trace() - 1.0) / 2.0));
        const double theta = std::acos(c);
        Eigen::Vector3d phi;
        if (theta < 1e-10) {
            phi << (R(2, 1) - R(1, 2)) / 2.0,
                   (R(0, 2) - R(2, 0)) / 2.0,
                   (R(1, 0) - R(0, 1)) / 2.0;
        } else {
            const double s = std::sin(theta);
            phi << (R(2, 1) - R(1, 2)), (R(0, 2) - R(2, 0)), (R(1, 0) - R(0, 1));
            phi *= theta / (2.0 * s);
        }
        const double t2 = phi.norm();
        Eigen::Matrix3d Vinv;
        if (t2 < 1e-10) {
            Vinv = Eigen::Matrix3d::Identity() - 0.5 * skew(phi);
        } else {
            const Eigen::Matrix3d K = skew(phi / t2);
            Vinv = Eigen::Matrix3d::Identity() - 0.5 * t2 * K +
                   (1.0 - t2 * std::sin(t2) / (2.0 * (1.0 - std::cos(t2)))) * K * K;
        }
        xi.head<3>() = Vinv * t;
        xi.tail<3>() = phi;
        return xi;
    }

    Eigen::Matrix4d matrix() const {
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        m.topLeftCorner<3, 3>() = R;
        m.topRightCorner<3, 1>() = t;
        return m;
    }

    static SE3 from_matrix(const Eigen::Matrix4d& m) {
        return SE3{m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
    }
};

// Geodesic rotation distance in radians.
inline double rotation_distance(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
    const double c = std::min(1.0, std::max(-1.0, ((a.transpose() * b).trace() - 1.0) / 2.0));
    return std::acos(c);
}

// ---------------------------------------------------------------------------
// Scalar helpers
// ---------------------------------------------------------------------------

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) {
    const double eps = 1e-6;
    p = std::min(1.0 - eps, std::max(eps, p));
    return std::log(p / (1.0 - p));
}

using Rng = std::mt19937_64;

inline Eigen::Vector3d random_unit_vector(Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Vector3d v;
    do {
        v << n(rng), n(rng), n(rng);
    } while (v.norm() < 1e-9);
    return v.normalized();
}

}  // namespace monogs
