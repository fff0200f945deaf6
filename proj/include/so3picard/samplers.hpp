#pragma once

#include "so3picard/diffusion.hpp"
#include "so3picard/lie.hpp"
#include "so3picard/score.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace so3picard {

/// How a Picard sweep measures the change of a window state.
enum class ErrorNorm {
    geodesic,   // ||Log(X_old^{-1} X_new)||^2
    frobenius,  // ||X_new - X_old||_F^2 / 2, equal to the above to second order
};

struct PicardConfig {
    NoiseSchedule schedule = default_schedule();
    std::size_t window = 12;
    double tolerance = 1e-3;
    /// 0 selects 4 T.
    std::size_t max_sweeps = 0;
    ErrorNorm error_norm = ErrorNorm::geodesic;
    /// Scale of the initial draw Exp(scale * eps). Unset uses sigma_max; 1.0
    /// gives a literal eps ~ N(0, I) start.
    std::optional<double> init_sigma;
    /// Multiplies the injected noise of the reverse SDE sampler.
    double sde_noise_scale = 1.0;

    std::size_t steps() const { return schedule.steps(); }
    std::size_t sweep_cap() const { return max_sweeps ? max_sweeps : 4 * steps(); }
    double prior_sigma() const { return init_sigma.value_or(schedule.sigma_max()); }

    void validate() const {
        if (window < 1 || window > steps())
            throw std::invalid_argument("window size must satisfy 1 <= p <= T");
        if (!(tolerance >= 0.0) || !std::isfinite(tolerance))
            throw std::invalid_argument("tolerance must be finite and >= 0");
        if (init_sigma && (!(*init_sigma >= 0.0) || !std::isfinite(*init_sigma)))
            throw std::invalid_argument("initial sigma must be finite and >= 0");
        if (!(sde_noise_scale >= 0.0)) throw std::invalid_argument("sde noise scale must be >= 0");
    }
};

struct SamplerStats {
    std::size_t steps = 0;
    std::size_t sweeps = 0;
    std::uint64_t total_evaluations = 0;
    std::vector<std::size_t> strides;
    std::chrono::duration<double> wall_clock{0.0};
    double algorithm_inefficiency = 0.0;
};

/// Denoising-order states X_0 (noisiest) .. X_T (sample).
struct Trajectory {
    std::vector<Rotation> states;
};

struct SampleResult {
    Rotation sample;
    Trajectory trajectory;
    SamplerStats stats;
};

enum class SamplerKind { sequential_ode, sequential_sde, picard };

inline std::string to_string(SamplerKind k) {
    switch (k) {
        case SamplerKind::sequential_ode: return "seq-ode";
        case SamplerKind::sequential_sde: return "seq-sde";
        case SamplerKind::picard: return "picard";
    }
    return "?";
}

inline SamplerKind parse_sampler_kind(const std::string& s) {
    if (s == "seq-ode") return SamplerKind::sequential_ode;
    if (s == "seq-sde") return SamplerKind::sequential_sde;
    if (s == "picard") return SamplerKind::picard;
    throw std::invalid_argument("unknown sampler '" + s + "' (expected seq-ode|seq-sde|picard)");
}

/// c_i = (sigma_i^2 - sigma_{i+1}^2) / 2, the probability-flow multiplier of
/// the score at denoising step i.
inline double step_coefficient(std::size_t i, const NoiseSchedule& schedule) {
    if (i >= schedule.steps()) throw std::out_of_range("step index out of range");
    const double a = schedule.sigma(i);
    const double b = schedule.sigma(i + 1);
    return 0.5 * (a - b) * (a + b);
}

inline std::vector<double> step_coefficients(const NoiseSchedule& schedule) {
    std::vector<double> c(schedule.steps());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = step_coefficient(i, schedule);
    return c;
}

/// Seed of sample i in a batch started from `base`.
inline std::uint64_t sample_seed(std::uint64_t base, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    std::array<std::uint32_t, 2> words{};
    seq.generate(words.begin(), words.end());
    return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

// ---------------------------------------------------------------------------
// Steppers: a sampler split into "which scores do you need" and "here they
// are", so several samples can share one batched model call.

class Stepper {
public:
    explicit Stepper(Rng rng) : rng_(std::move(rng)) {}
    virtual ~Stepper() = default;
    virtual bool done() const = 0;
    /// Appends this round's score queries.
    virtual void queries(std::vector<ScoreQuery>& out) const = 0;
    /// Consumes scores for the queries of the last queries() call, in order.
    virtual void advance(std::span<const Tangent> scores) = 0;
    virtual SampleResult result() const = 0;

    /// Random state after the draws made so far.
    const Rng& rng() const { return rng_; }

protected:
    Rng rng_;
};

/// X_{t+1} = X_t Exp(c_t s(X_t, sigma_t)), or for the reverse SDE
/// X_{t+1} = X_t Exp(2 c_t s + sqrt(2 c_t) eps_t).
class SequentialStepper final : public Stepper {
public:
    SequentialStepper(const PicardConfig& cfg, bool stochastic, Rng rng)
        : Stepper(std::move(rng)), schedule_(cfg.schedule), coeff_(step_coefficients(cfg.schedule)),
          stochastic_(stochastic), noise_scale_(cfg.sde_noise_scale) {
        cfg.validate();
        states_.reserve(steps() + 1);
        states_.push_back(exp_map(random_tangent_gaussian(cfg.prior_sigma(), rng_)));
    }

    std::size_t steps() const { return schedule_.steps(); }
    bool done() const override { return states_.size() > steps(); }

    void queries(std::vector<ScoreQuery>& out) const override {
        const std::size_t t = states_.size() - 1;
        out.push_back({states_.back(), schedule_.sigma(t)});
    }

    void advance(std::span<const Tangent> scores) override {
        const std::size_t t = states_.size() - 1;
        Tangent step = coeff_[t] * scores[0];
        if (stochastic_) {
            step *= 2.0;
            const Tangent noise = random_tangent_gaussian(std::sqrt(2.0 * coeff_[t]), rng_);
            step += noise_scale_ * noise;
        }
        states_.push_back(compose(states_.back(), exp_map(step)));
    }

    SampleResult result() const override {
        SampleResult r{states_.back(), Trajectory{states_}, {}};
        r.stats.steps = steps();
        r.stats.sweeps = states_.size() - 1;
        r.stats.total_evaluations = states_.size() - 1;
        r.stats.strides.assign(states_.size() - 1, 1);
        return r;
    }

private:
    NoiseSchedule schedule_;
    std::vector<double> coeff_;
    bool stochastic_;
    double noise_scale_;
    std::vector<Rotation> states_;
};

/// Sliding-window Picard iteration on SO(3).
///
/// The window covers states [t, t + p]. A sweep evaluates the score at
/// window positions t..t+p-1 (independent, batched), rebuilds positions
/// t+1..t+p as prefix products X_t Exp(c_t y_t) Exp(c_{t+1} y_{t+1}) ...,
/// and slides the window by the first position j >= 1 whose squared change
/// exceeds tol^2 sigma_{t+j}^2 * 3 (or by p if none does). Position t is
/// always final, so every sweep advances by at least one step.
class PicardStepper final : public Stepper {
public:
    static constexpr double kTangentDim = 3.0;

    PicardStepper(const PicardConfig& cfg, Rng rng)
        : Stepper(std::move(rng)), cfg_(cfg), coeff_(step_coefficients(cfg.schedule)) {
        cfg_.validate();
        const Rotation x0 = exp_map(random_tangent_gaussian(cfg_.prior_sigma(), rng_));
        states_.assign(steps() + 1, x0);
        window_ = std::min(cfg_.window, steps());
    }

    /// Starts from a given guess of the whole trajectory (length T + 1).
    PicardStepper(const PicardConfig& cfg, std::vector<Rotation> initial)
        : Stepper(Rng{}), cfg_(cfg), coeff_(step_coefficients(cfg.schedule)), states_(std::move(initial)) {
        cfg_.validate();
        if (states_.size() != steps() + 1) throw std::invalid_argument("initial trajectory must have T + 1 states");
        window_ = std::min(cfg_.window, steps());
    }

    std::size_t steps() const { return cfg_.steps(); }
    std::size_t position() const { return t_; }
    std::size_t window() const { return window_; }
    const std::vector<Rotation>& states() const { return states_; }
    const std::vector<double>& last_errors() const { return errors_; }

    bool done() const override { return t_ >= steps(); }

    void queries(std::vector<ScoreQuery>& out) const override {
        for (std::size_t j = 0; j < window_; ++j) out.push_back({states_[t_ + j], cfg_.schedule.sigma(t_ + j)});
    }

    void advance(std::span<const Tangent> scores) override {
        if (sweeps_ >= cfg_.sweep_cap())
            throw std::logic_error("Picard sampler exceeded its sweep cap; the stride rule is broken");
        const std::size_t p = window_;

        // Prefix products over the window.
        fresh_.resize(p + 1);
        fresh_[0] = states_[t_];
        for (std::size_t j = 0; j < p; ++j)
            fresh_[j + 1] = compose(fresh_[j], exp_map(coeff_[t_ + j] * scores[j]));

        errors_.assign(p, 0.0);
        std::size_t stride = p;
        for (std::size_t j = 1; j < p; ++j) {
            errors_[j] = change(states_[t_ + j], fresh_[j]);
            const double sigma = cfg_.schedule.sigma(t_ + j);
            const double bound = cfg_.tolerance * cfg_.tolerance * sigma * sigma * kTangentDim;
            if (errors_[j] > bound) {
                stride = j;
                break;
            }
        }
        for (std::size_t j = stride + 1; j < p; ++j) errors_[j] = change(states_[t_ + j], fresh_[j]);

        for (std::size_t j = 1; j <= p; ++j) states_[t_ + j] = fresh_[j];

        const std::size_t next_t = t_ + stride;
        const std::size_t next_window = std::min(window_, steps() - next_t);
        // Slots entering the window for the first time start from the last
        // computed state.
        for (std::size_t i = t_ + p + 1; i <= next_t + next_window; ++i) states_[i] = fresh_[p];

        evaluations_ += p;
        strides_.push_back(stride);
        ++sweeps_;
        t_ = next_t;
        window_ = next_window;
    }

    SampleResult result() const override {
        SampleResult r{states_.back(), Trajectory{states_}, {}};
        r.stats.steps = steps();
        r.stats.sweeps = sweeps_;
        r.stats.total_evaluations = evaluations_;
        r.stats.strides = strides_;
        return r;
    }

private:
    double change(const Rotation& old_state, const Rotation& new_state) const {
        if (cfg_.error_norm == ErrorNorm::frobenius)
            return 0.5 * (new_state.matrix() - old_state.matrix()).squaredNorm();
        const double d = geodesic_distance(old_state, new_state);
        return d * d;
    }

    PicardConfig cfg_;
    std::vector<double> coeff_;
    std::vector<Rotation> states_;
    std::vector<Rotation> fresh_;
    std::vector<double> errors_;
    std::vector<std::size_t> strides_;
    std::size_t t_ = 0;
    std::size_t window_ = 1;
    std::size_t sweeps_ = 0;
    std::uint64_t evaluations_ = 0;
};

inline std::unique_ptr<Stepper> make_stepper(SamplerKind kind, const PicardConfig& cfg, Rng rng) {
    switch (kind) {
        case SamplerKind::sequential_ode: return std::make_unique<SequentialStepper>(cfg, false, std::move(rng));
        case SamplerKind::sequential_sde: return std::make_unique<SequentialStepper>(cfg, true, std::move(rng));
        case SamplerKind::picard: return std::make_unique<PicardStepper>(cfg, std::move(rng));
    }
    throw std::invalid_argument("unknown sampler kind");
}

namespace detail {

inline void finish_stats(SamplerStats& s, std::chrono::duration<double> wall) {
    s.wall_clock = wall;
    s.algorithm_inefficiency =
        s.steps ? static_cast<double>(s.total_evaluations) / static_cast<double>(s.steps) : 0.0;
}

}  // namespace detail

struct BatchResult {
    std::vector<SampleResult> samples;
    /// steps = T, sweeps = number of batched model calls, evaluations summed
    /// over samples, AI = evaluations / (n T).
    SamplerStats aggregate;
};

/// Runs the steppers in lockstep: each round gathers the pending queries of
/// every unfinished stepper into one evaluate_batch call.
inline BatchResult run_steppers(const ScoreModel& model, std::vector<std::unique_ptr<Stepper>>& steppers) {
    BatchResult out;
    std::vector<ScoreQuery> batch;
    std::vector<std::size_t> offsets;
    std::size_t rounds = 0;
    const auto start = std::chrono::steady_clock::now();
    for (;;) {
        batch.clear();
        offsets.clear();
        for (const auto& s : steppers) {
            offsets.push_back(batch.size());
            if (!s->done()) s->queries(batch);
        }
        if (batch.empty()) break;
        offsets.push_back(batch.size());
        const std::vector<Tangent> scores = model.evaluate_batch(batch);
        for (std::size_t i = 0; i < steppers.size(); ++i) {
            const std::size_t b = offsets[i];
            const std::size_t e = offsets[i + 1];
            if (e > b) steppers[i]->advance(std::span<const Tangent>(scores).subspan(b, e - b));
        }
        ++rounds;
    }
    const std::chrono::duration<double> wall = std::chrono::steady_clock::now() - start;

    out.aggregate.sweeps = rounds;
    for (const auto& s : steppers) {
        out.samples.push_back(s->result());
        auto& st = out.samples.back().stats;
        detail::finish_stats(st, wall);
        out.aggregate.steps = st.steps;
        out.aggregate.total_evaluations += st.total_evaluations;
    }
    out.aggregate.wall_clock = wall;
    if (!steppers.empty() && out.aggregate.steps)
        out.aggregate.algorithm_inefficiency = static_cast<double>(out.aggregate.total_evaluations) /
                                               static_cast<double>(out.aggregate.steps * steppers.size());
    return out;
}

inline SampleResult sample_with(SamplerKind kind, const ScoreModel& model, const PicardConfig& cfg, Rng& rng) {
    std::vector<std::unique_ptr<Stepper>> one;
    one.push_back(make_stepper(kind, cfg, rng));
    SampleResult out = std::move(run_steppers(model, one).samples.front());
    rng = one.front()->rng();
    return out;
}

/// Euler discretization of the probability-flow ODE; the reference solution
/// the Picard sampler converges to. Exactly T model evaluations.
inline SampleResult sample_sequential_ode(const ScoreModel& model, const PicardConfig& cfg, Rng& rng) {
    return sample_with(SamplerKind::sequential_ode, model, cfg, rng);
}

/// Euler-Maruyama discretization of the reverse SDE (geodesic random walk).
inline SampleResult sample_sequential_sde(const ScoreModel& model, const PicardConfig& cfg, Rng& rng) {
    return sample_with(SamplerKind::sequential_sde, model, cfg, rng);
}

inline SampleResult sample_picard(const ScoreModel& model, const PicardConfig& cfg, Rng& rng) {
    return sample_with(SamplerKind::picard, model, cfg, rng);
}

/// n independent samples; sample i is seeded with sample_seed(seed, i), so
/// its result does not depend on n or on how evaluations are batched.
inline BatchResult run_batch(SamplerKind kind, const ScoreModel& model, const PicardConfig& cfg,
                             std::size_t n_samples, std::uint64_t seed) {
    if (n_samples < 1) throw std::invalid_argument("run_batch needs at least one sample");
    std::vector<std::unique_ptr<Stepper>> steppers;
    steppers.reserve(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) steppers.push_back(make_stepper(kind, cfg, Rng(sample_seed(seed, i))));
    return run_steppers(model, steppers);
}

}  // namespace so3picard
