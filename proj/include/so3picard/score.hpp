#pragma once

#include "so3picard/lie.hpp"

#include <tbb/parallel_for.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace so3picard {

struct ScoreQuery {
    Rotation x;
    double sigma = 0.0;
};

/// Score function s(X, sigma) = grad log p_sigma(X), expressed in the right
/// tangent at X: a small step v moves X to X * Exp(v).
///
/// evaluate() and evaluate_batch() are safe to call concurrently. The
/// evaluation counter counts single evaluations, so a batch of n adds n.
class ScoreModel {
public:
    virtual ~ScoreModel() = default;

    Tangent evaluate(const Rotation& x, double sigma) const {
        counter_.fetch_add(1, std::memory_order_relaxed);
        return compute(x, sigma);
    }

    /// Evaluates every query, possibly concurrently. Result i belongs to
    /// query i, so the output does not depend on scheduling.
    std::vector<Tangent> evaluate_batch(std::span<const ScoreQuery> queries) const {
        std::vector<Tangent> out(queries.size());
        counter_.fetch_add(queries.size(), std::memory_order_relaxed);
        if (queries.size() == 1) {
            out[0] = compute(queries[0].x, queries[0].sigma);
        } else if (!queries.empty()) {
            tbb::parallel_for(
                tbb::blocked_range<std::size_t>(0, queries.size(), 1),
                [&](const tbb::blocked_range<std::size_t>& r) {
                    for (std::size_t i = r.begin(); i != r.end(); ++i)
                        out[i] = compute(queries[i].x, queries[i].sigma);
                },
                tbb::simple_partitioner{});
        }
        return out;
    }

    std::uint64_t eval_count() const { return counter_.load(std::memory_order_relaxed); }
    void reset_eval_count() { counter_.store(0, std::memory_order_relaxed); }

protected:
    virtual Tangent compute(const Rotation& x, double sigma) const = 0;

private:
    mutable std::atomic<std::uint64_t> counter_{0};
};

/// Always returns zero.
class ZeroScore final : public ScoreModel {
protected:
    Tangent compute(const Rotation&, double) const override { return Tangent::Zero(); }
};

/// Gradient of -||Log(mu^{-1} X)||^2 / (2 sigma^2) with respect to a right
/// perturbation of X. This is exact, not just first order: the inverse right
/// Jacobian of Log fixes its own argument.
inline Tangent tangent_gaussian_score(const Rotation& x, const Rotation& mu, double sigma_total) {
    if (!(sigma_total > 0.0)) throw std::invalid_argument("tangent_gaussian_score: sigma must be > 0");
    return -relative_log(mu, x) / (sigma_total * sigma_total);
}

// ---------------------------------------------------------------------------
// Symmetry mixtures

struct SymmetryMixture {
    std::vector<Rotation> modes;
    double kernel_sigma = 0.05;
    std::vector<double> weights;

    void validate() const {
        if (modes.empty()) throw std::invalid_argument("mixture needs at least one mode");
        if (weights.size() != modes.size())
            throw std::invalid_argument("mixture weights and modes differ in length");
        if (!(kernel_sigma >= 0.0) || !std::isfinite(kernel_sigma))
            throw std::invalid_argument("kernel_sigma must be finite and >= 0");
        double total = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw std::invalid_argument("mixture weights must be nonnegative");
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("mixture weights must sum to 1");
    }

    static SymmetryMixture uniform(std::vector<Rotation> modes, double kernel_sigma) {
        SymmetryMixture m;
        const auto n = modes.size();
        m.modes = std::move(modes);
        m.kernel_sigma = kernel_sigma;
        m.weights.assign(n, n == 0 ? 0.0 : 1.0 / static_cast<double>(n));
        m.validate();
        return m;
    }
};

namespace detail {

inline double mixture_width_sq(const SymmetryMixture& mix, double sigma_t) {
    if (!(sigma_t >= 0.0)) throw std::invalid_argument("noise level must be >= 0");
    const double w2 = mix.kernel_sigma * mix.kernel_sigma + sigma_t * sigma_t;
    if (!(w2 > 0.0)) throw std::invalid_argument("mixture width is zero (kernel_sigma = sigma_t = 0)");
    return w2;
}

// Per-mode log(w_m) - d_m^2 / (2 s^2) and the relative logs Log(mu_m^{-1} X).
inline void mixture_terms(const Rotation& x, const SymmetryMixture& mix, double width_sq,
                          std::vector<double>& log_terms, std::vector<Tangent>& rel) {
    const std::size_t n = mix.modes.size();
    log_terms.resize(n);
    rel.resize(n);
    for (std::size_t m = 0; m < n; ++m) {
        rel[m] = relative_log(mix.modes[m], x);
        log_terms[m] = (mix.weights[m] > 0.0 ? std::log(mix.weights[m])
                                             : -std::numeric_limits<double>::infinity()) -
                       rel[m].squaredNorm() / (2.0 * width_sq);
    }
}

}  // namespace detail

/// Posterior responsibilities of each mode at X under the noised mixture,
/// computed with max-subtraction in log space.
inline std::vector<double> mixture_responsibilities(const Rotation& x, const SymmetryMixture& mix,
                                                    double sigma_t) {
    const double w2 = detail::mixture_width_sq(mix, sigma_t);
    std::vector<double> lt;
    std::vector<Tangent> rel;
    detail::mixture_terms(x, mix, w2, lt, rel);
    const double top = *std::max_element(lt.begin(), lt.end());
    double z = 0.0;
    for (double& v : lt) {
        v = std::exp(v - top);
        z += v;
    }
    for (double& v : lt) v /= z;
    return lt;
}

/// Unnormalized log-density of the mixture convolved with noise sigma_t:
/// log sum_m w_m exp(-d_m^2 / (2 (kernel_sigma^2 + sigma_t^2))).
inline double mixture_log_density_unnormalized(const Rotation& x, const SymmetryMixture& mix,
                                               double sigma_t) {
    const double w2 = detail::mixture_width_sq(mix, sigma_t);
    std::vector<double> lt;
    std::vector<Tangent> rel;
    detail::mixture_terms(x, mix, w2, lt, rel);
    const double top = *std::max_element(lt.begin(), lt.end());
    double z = 0.0;
    for (double v : lt) z += std::exp(v - top);
    return top + std::log(z);
}

inline Tangent mixture_score(const Rotation& x, const SymmetryMixture& mix, double sigma_t) {
    const double w2 = detail::mixture_width_sq(mix, sigma_t);
    std::vector<double> lt;
    std::vector<Tangent> rel;
    detail::mixture_terms(x, mix, w2, lt, rel);
    const double top = *std::max_element(lt.begin(), lt.end());
    double z = 0.0;
    Tangent acc = Tangent::Zero();
    for (std::size_t m = 0; m < lt.size(); ++m) {
        const double r = std::exp(lt[m] - top);
        z += r;
        acc += r * rel[m];
    }
    return -acc / (z * w2);
}

class MixtureScore final : public ScoreModel {
public:
    explicit MixtureScore(SymmetryMixture mix) : mix_(std::move(mix)) { mix_.validate(); }

    const SymmetryMixture& mixture() const { return mix_; }

protected:
    Tangent compute(const Rotation& x, double sigma) const override { return mixture_score(x, mix_, sigma); }

private:
    SymmetryMixture mix_;
};

// ---------------------------------------------------------------------------
// Rotation groups

struct SymmetryGroup {
    enum class Kind { cyclic, tetrahedral, octahedral, icosahedral };
    Kind kind = Kind::cyclic;
    int order_n = 1;  // only for cyclic

    static SymmetryGroup cyclic(int n) {
        if (n < 1) throw std::invalid_argument("cyclic group order must be >= 1");
        return {Kind::cyclic, n};
    }
    static SymmetryGroup tetrahedral() { return {Kind::tetrahedral, 0}; }
    static SymmetryGroup octahedral() { return {Kind::octahedral, 0}; }
    static SymmetryGroup icosahedral() { return {Kind::icosahedral, 0}; }

    /// Parses "cyclic:N", "tet", "oct" or "ico".
    static SymmetryGroup parse(const std::string& s) {
        if (s == "tet") return tetrahedral();
        if (s == "oct") return octahedral();
        if (s == "ico") return icosahedral();
        const std::string prefix = "cyclic:";
        if (s.rfind(prefix, 0) == 0) {
            std::size_t used = 0;
            int n = 0;
            try {
                n = std::stoi(s.substr(prefix.size()), &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != s.size() - prefix.size())
                throw std::invalid_argument("bad cyclic order in '" + s + "'");
            return cyclic(n);
        }
        throw std::invalid_argument("unknown symmetry group '" + s + "' (expected cyclic:N|tet|oct|ico)");
    }

    std::string name() const {
        switch (kind) {
            case Kind::cyclic: return "cyclic:" + std::to_string(order_n);
            case Kind::tetrahedral: return "tet";
            case Kind::octahedral: return "oct";
            case Kind::icosahedral: return "ico";
        }
        return "?";
    }

    std::size_t order() const {
        switch (kind) {
            case Kind::cyclic: return static_cast<std::size_t>(order_n);
            case Kind::tetrahedral: return 12;
            case Kind::octahedral: return 24;
            case Kind::icosahedral: return 60;
        }
        return 0;
    }
};

namespace detail {

inline Rotation axis_angle(Eigen::Vector3d axis, double angle) {
    return exp_map(angle * axis.normalized());
}

// Closure of a generator set under multiplication.
inline std::vector<Rotation> close_group(const std::vector<Rotation>& generators, std::size_t expected) {
    std::vector<Rotation> elems{Rotation::identity()};
    for (std::size_t head = 0; head < elems.size(); ++head) {
        for (const auto& g : generators) {
            const Rotation cand = compose(elems[head], g);
            const bool seen = std::any_of(elems.begin(), elems.end(), [&](const Rotation& e) {
                return (e.matrix() - cand.matrix()).cwiseAbs().maxCoeff() < 1e-9;
            });
            if (!seen) {
                elems.push_back(cand);
                if (elems.size() > expected) throw std::logic_error("group closure exceeded its order");
            }
        }
    }
    if (elems.size() != expected) throw std::logic_error("group closure produced the wrong order");
    return elems;
}

}  // namespace detail

/// All elements of the group, identity first.
inline std::vector<Rotation> group_elements(const SymmetryGroup& group) {
    constexpr double pi = std::numbers::pi;
    const Eigen::Vector3d z = Eigen::Vector3d::UnitZ();
    const Eigen::Vector3d diag(1.0, 1.0, 1.0);
    switch (group.kind) {
        case SymmetryGroup::Kind::cyclic: {
            std::vector<Rotation> out;
            for (int k = 0; k < group.order_n; ++k) out.push_back(detail::axis_angle(z, 2.0 * pi * k / group.order_n));
            return out;
        }
        case SymmetryGroup::Kind::tetrahedral:
            return detail::close_group({detail::axis_angle(z, pi), detail::axis_angle(diag, 2.0 * pi / 3.0)}, 12);
        case SymmetryGroup::Kind::octahedral:
            return detail::close_group({detail::axis_angle(z, pi / 2.0), detail::axis_angle(diag, 2.0 * pi / 3.0)}, 24);
        case SymmetryGroup::Kind::icosahedral: {
            // Icosahedron with vertices at cyclic permutations of (0, +-1, +-phi).
            const double phi = std::numbers::phi;
            return detail::close_group(
                {detail::axis_angle(Eigen::Vector3d(0.0, 1.0, phi), 2.0 * pi / 5.0),
                 detail::axis_angle(diag, 2.0 * pi / 3.0)},
                60);
        }
    }
    throw std::invalid_argument("unknown symmetry group");
}

/// Uniform mixture over {canonical * S : S in group}.
inline SymmetryMixture make_symmetry_orbit(const SymmetryGroup& group, const Rotation& canonical,
                                           double kernel_sigma = 0.05) {
    std::vector<Rotation> modes;
    for (const auto& s : group_elements(group)) modes.push_back(compose(canonical, s));
    return SymmetryMixture::uniform(std::move(modes), kernel_sigma);
}

// ---------------------------------------------------------------------------
// Calibrated cost

enum class CostMode {
    busy_wait,  // burns a core for the whole duration
    sleep,      // yields the core; useful when workers outnumber cores
};

/// Forwards to `inner` and then spends `per_eval_cost` per element. Batches
/// pay the cost once per element, but elements run concurrently.
class CalibratedCostModel final : public ScoreModel {
public:
    CalibratedCostModel(std::shared_ptr<const ScoreModel> inner, std::chrono::nanoseconds per_eval_cost,
                        CostMode mode = CostMode::busy_wait)
        : inner_(std::move(inner)), cost_(per_eval_cost), mode_(mode) {
        if (!inner_) throw std::invalid_argument("calibrated cost model needs an inner model");
        if (cost_.count() < 0) throw std::invalid_argument("per-eval cost must be >= 0");
    }

    const ScoreModel& inner() const { return *inner_; }
    std::chrono::nanoseconds per_eval_cost() const { return cost_; }

protected:
    Tangent compute(const Rotation& x, double sigma) const override {
        const auto start = std::chrono::steady_clock::now();
        Tangent out = inner_->evaluate(x, sigma);
        if (cost_.count() > 0) {
            const auto until = start + cost_;
            if (mode_ == CostMode::sleep) {
                std::this_thread::sleep_until(until);
            } else {
                while (std::chrono::steady_clock::now() < until) {
                }
            }
        }
        return out;
    }

private:
    std::shared_ptr<const ScoreModel> inner_;
    std::chrono::nanoseconds cost_;
    CostMode mode_;
};

inline std::shared_ptr<ScoreModel> make_calibrated_cost_model(std::shared_ptr<const ScoreModel> inner,
                                                              std::chrono::nanoseconds per_eval_cost,
                                                              CostMode mode = CostMode::busy_wait) {
    return std::make_shared<CalibratedCostModel>(std::move(inner), per_eval_cost, mode);
}

}  // namespace so3picard
