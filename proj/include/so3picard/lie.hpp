#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace so3picard {

using Rng = std::mt19937_64;

/// Rotation vector (axis times angle, radians) in so(3). Also used for scores
/// and tangent noise.
using Tangent = Eigen::Vector3d;

/// Element of SO(3) stored as a 3x3 matrix.
///
/// Construction from an arbitrary matrix does not validate; use
/// orthonormality_residual() or Rotation::checked() when the source is
/// untrusted.
class Rotation {
public:
    Rotation() : mat_(Eigen::Matrix3d::Identity()) {}
    explicit Rotation(const Eigen::Matrix3d& m) : mat_(m) {}

    static Rotation identity() { return Rotation(); }

    /// Accepts `m` if it is a rotation within `tol`, otherwise throws.
    static Rotation checked(const Eigen::Matrix3d& m, double tol = 1e-6);

    /// From a (not necessarily normalized) quaternion (w, x, y, z).
    static Rotation from_quaternion(double w, double x, double y, double z) {
        Eigen::Quaterniond q(w, x, y, z);
        if (!(q.norm() > 0.0) || !std::isfinite(q.norm()))
            throw std::invalid_argument("quaternion must be finite and nonzero");
        q.normalize();
        return Rotation(q.toRotationMatrix());
    }

    const Eigen::Matrix3d& matrix() const { return mat_; }
    double operator()(int r, int c) const { return mat_(r, c); }

    /// Unit quaternion (w, x, y, z) with w >= 0.
    Eigen::Vector4d quaternion() const {
        Eigen::Quaterniond q(mat_);
        q.normalize();
        Eigen::Vector4d out(q.w(), q.x(), q.y(), q.z());
        if (out[0] < 0.0) out = -out;
        return out;
    }

    /// max(||R^T R - I||_F, |det R - 1|)
    double orthonormality_residual() const {
        const double ortho = (mat_.transpose() * mat_ - Eigen::Matrix3d::Identity()).norm();
        return std::max(ortho, std::abs(mat_.determinant() - 1.0));
    }

    bool is_valid(double tol = 1e-9) const { return orthonormality_residual() <= tol; }

private:
    Eigen::Matrix3d mat_;
};

inline constexpr double kSmallAngle = 1e-4;
inline constexpr double kReorthoThreshold = 1e-9;

inline Eigen::Matrix3d hat(const Tangent& w) {
    Eigen::Matrix3d k;
    k << 0.0, -w.z(), w.y(),
         w.z(), 0.0, -w.x(),
         -w.y(), w.x(), 0.0;
    return k;
}

inline Tangent vee(const Eigen::Matrix3d& k) {
    return Tangent(k(2, 1), k(0, 2), k(1, 0));
}

/// Nearest rotation in Frobenius norm (polar factor of `m`).
inline Rotation orthonormalize(const Eigen::Matrix3d& m) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    const Eigen::Matrix3d& v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) u.col(2) = -u.col(2);
    return Rotation(u * v.transpose());
}

inline Rotation Rotation::checked(const Eigen::Matrix3d& m, double tol) {
    if (!m.allFinite()) throw std::invalid_argument("rotation matrix has non-finite entries");
    Rotation r(m);
    const double res = r.orthonormality_residual();
    if (res > tol) throw std::invalid_argument("matrix is not a rotation (residual too large)");
    if (res > kReorthoThreshold) return orthonormalize(m);
    return r;
}

inline Rotation exp_map(const Tangent& w) {
    if (!w.allFinite()) throw std::invalid_argument("exp_map: non-finite rotation vector");
    const double theta2 = w.squaredNorm();
    const double theta = std::sqrt(theta2);
    double a;  // sin(t)/t
    double b;  // (1 - cos(t))/t^2
    if (theta < kSmallAngle) {
        a = 1.0 - theta2 / 6.0;
        b = 0.5 - theta2 / 24.0;
    } else {
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / theta2;
    }
    const Eigen::Matrix3d k = hat(w);
    return Rotation(Eigen::Matrix3d::Identity() + a * k + b * (k * k));
}

namespace detail {

// First nonzero component positive.
inline Tangent canonical_half_turn(Tangent w) {
    for (int i = 0; i < 3; ++i) {
        if (w[i] != 0.0) {
            if (w[i] < 0.0) w = -w;
            break;
        }
    }
    return w;
}

}  // namespace detail

/// Principal logarithm; the result has norm in [0, pi]. Half turns are
/// disambiguated so that the first nonzero component is positive.
inline Tangent log_map(const Rotation& rot) {
    const Eigen::Matrix3d& r = rot.matrix();
    if (!r.allFinite() || rot.orthonormality_residual() > 1e-6)
        throw std::invalid_argument("log_map: input is not a rotation");

    const Tangent v = 0.5 * vee(r - r.transpose());  // sin(theta) * axis
    const double s = v.norm();
    const double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
    const double theta = std::atan2(s, c);

    if (theta < kSmallAngle) return (1.0 + theta * theta / 6.0) * v;

    if (c > -0.5) return (theta / s) * v;

    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part (R + R^T)/2 = c I + (1 - c) u u^T.
    const Eigen::Matrix3d sym = 0.5 * (r + r.transpose());
    const Eigen::Vector3d d = sym.diagonal().array() - c;
    int k = 0;
    d.maxCoeff(&k);
    Tangent axis = (sym.col(k) - c * Eigen::Vector3d::Unit(k)) / (1.0 - c);
    axis.normalize();
    const double side = axis.dot(v);
    if (side < 0.0) {
        axis = -axis;
    } else if (side == 0.0) {
        axis = detail::canonical_half_turn(axis);
    }
    return theta * axis;
}

inline Rotation inverse(const Rotation& r) { return Rotation(r.matrix().transpose()); }

/// Matrix product a*b, projected back onto SO(3) when drift exceeds 1e-9.
inline Rotation compose(const Rotation& a, const Rotation& b) {
    Rotation out(a.matrix() * b.matrix());
    if (out.orthonormality_residual() > kReorthoThreshold) return orthonormalize(out.matrix());
    return out;
}

inline Rotation operator*(const Rotation& a, const Rotation& b) { return compose(a, b); }

/// a^{-1} b as a rotation vector.
inline Tangent relative_log(const Rotation& a, const Rotation& b) {
    return log_map(Rotation(a.matrix().transpose() * b.matrix()));
}

/// Rotation angle of a^{-1} b, in [0, pi].
inline double geodesic_distance(const Rotation& a, const Rotation& b) {
    const Eigen::Matrix3d m = a.matrix().transpose() * b.matrix();
    const double s = 0.5 * vee(m - m.transpose()).norm();
    const double c = std::clamp(0.5 * (m.trace() - 1.0), -1.0, 1.0);
    return std::atan2(s, c);
}

/// Haar-uniform rotation from a uniformly distributed unit quaternion.
inline Rotation random_uniform(Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::Vector4d q;
    do {
        for (int i = 0; i < 4; ++i) q[i] = normal(rng);
    } while (q.norm() < 1e-12);
    return Rotation::from_quaternion(q[0], q[1], q[2], q[3]);
}

/// sigma * eps with eps ~ N(0, I_3).
inline Tangent random_tangent_gaussian(double sigma, Rng& rng) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma))
        throw std::invalid_argument("random_tangent_gaussian: sigma must be finite and >= 0");
    std::normal_distribution<double> normal(0.0, 1.0);
    Tangent eps;
    for (int i = 0; i < 3; ++i) eps[i] = normal(rng);
    return sigma * eps;
}

inline double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

}  // namespace so3picard
