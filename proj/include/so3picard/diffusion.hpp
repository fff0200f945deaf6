#pragma once

#include "so3picard/lie.hpp"

#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace so3picard {

/// Discrete noise levels of a variance-exploding process in denoising order:
/// sigma(0) is the noisiest level (sampling starts there) and sigma(T) the
/// cleanest (the sample is read there).
class NoiseSchedule {
public:
    /// Requires T >= 1, every level finite and > 0, and a nonincreasing
    /// sequence.
    explicit NoiseSchedule(std::vector<double> sigmas) : sigmas_(std::move(sigmas)) {
        if (sigmas_.size() < 2)
            throw std::invalid_argument("noise schedule needs at least two levels (T >= 1)");
        for (std::size_t i = 0; i < sigmas_.size(); ++i) {
            if (!(sigmas_[i] > 0.0) || !std::isfinite(sigmas_[i]))
                throw std::invalid_argument("noise levels must be finite and positive (index " +
                                            std::to_string(i) + ")");
            if (i > 0 && sigmas_[i] > sigmas_[i - 1])
                throw std::invalid_argument("noise levels must be nonincreasing in denoising order");
        }
    }

    std::size_t steps() const { return sigmas_.size() - 1; }
    double sigma(std::size_t i) const { return sigmas_.at(i); }
    double sigma_max() const { return sigmas_.front(); }
    double sigma_min() const { return sigmas_.back(); }
    const std::vector<double>& sigmas() const { return sigmas_; }

    bool operator==(const NoiseSchedule&) const = default;

private:
    std::vector<double> sigmas_;
};

/// sigma_i = sigma_max * (sigma_min / sigma_max)^(i / T), i = 0..T.
inline NoiseSchedule make_geometric_schedule(double sigma_min, double sigma_max, std::size_t steps) {
    if (!(sigma_min > 0.0) || !(sigma_max > sigma_min) || !std::isfinite(sigma_max))
        throw std::invalid_argument("geometric schedule requires 0 < sigma_min < sigma_max");
    if (steps < 1) throw std::invalid_argument("geometric schedule requires T >= 1");
    std::vector<double> s(steps + 1);
    const double ratio = sigma_min / sigma_max;
    for (std::size_t i = 0; i <= steps; ++i)
        s[i] = sigma_max * std::pow(ratio, static_cast<double>(i) / static_cast<double>(steps));
    s.front() = sigma_max;
    s.back() = sigma_min;
    return NoiseSchedule(std::move(s));
}

inline NoiseSchedule default_schedule() {
    return make_geometric_schedule(0.01, std::numbers::pi / 2.0, 100);
}

/// VE coefficients: zero drift, and per-step squared diffusion increments
/// g_sq[i] = sigma_i^2 - sigma_{i+1}^2 (the discrete g(t)^2 dt).
struct DiffusionCoefficients {
    std::vector<double> g_sq;

    static constexpr double drift() { return 0.0; }

    static DiffusionCoefficients from(const NoiseSchedule& schedule) {
        DiffusionCoefficients out;
        out.g_sq.resize(schedule.steps());
        for (std::size_t i = 0; i < schedule.steps(); ++i) {
            const double a = schedule.sigma(i);
            const double b = schedule.sigma(i + 1);
            out.g_sq[i] = (a - b) * (a + b);
        }
        return out;
    }
};

/// -||Log(X^{-1} Y)||^2 / (2 sigma^2). The normalizing constant of the
/// isotropic SO(3) kernel is not included.
inline double kernel_log_density_unnormalized(const Rotation& x, const Rotation& y, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("kernel sigma must be > 0");
    const double d = geodesic_distance(x, y);
    return -d * d / (2.0 * sigma * sigma);
}

/// Isotropic perturbation kernel on SO(3) with covariance sigma^2 I in the
/// tangent at the conditioning rotation.
class PerturbationKernel {
public:
    explicit PerturbationKernel(double sigma) : sigma_(sigma) {
        if (!(sigma > 0.0) || !std::isfinite(sigma))
            throw std::invalid_argument("kernel sigma must be finite and > 0");
    }

    double sigma() const { return sigma_; }

    double log_density_unnormalized(const Rotation& x, const Rotation& y) const {
        return kernel_log_density_unnormalized(x, y, sigma_);
    }

private:
    double sigma_;
};

/// X0 * Exp(sigma * eps), eps ~ N(0, I).
inline Rotation perturb(const Rotation& x0, double sigma, Rng& rng) {
    if (sigma == 0.0) return x0;
    return compose(x0, exp_map(random_tangent_gaussian(sigma, rng)));
}

}  // namespace so3picard
