#pragma once

#include "so3picard/lie.hpp"
#include "so3picard/samplers.hpp"
#include "so3picard/text_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace so3picard {

/// Index of the nearest mode and its distance in degrees.
struct NearestMode {
    std::size_t index = 0;
    double degrees = 0.0;
};

inline NearestMode nearest_mode(const Rotation& x, std::span<const Rotation> modes) {
    if (modes.empty()) throw std::invalid_argument("min_angular_distance: empty mode list");
    NearestMode best{0, std::numeric_limits<double>::infinity()};
    for (std::size_t m = 0; m < modes.size(); ++m) {
        const double d = rad_to_deg(geodesic_distance(x, modes[m]));
        if (d < best.degrees) best = {m, d};
    }
    return best;
}

/// Smallest angular distance from `x` to any mode, in degrees.
inline double min_angular_distance(const Rotation& x, std::span<const Rotation> modes) {
    return nearest_mode(x, modes).degrees;
}

/// Model evaluations relative to the T evaluations of a sequential sampler.
inline double algorithm_inefficiency(const SamplerStats& stats) {
    if (stats.steps == 0) throw std::invalid_argument("stats have no steps");
    return static_cast<double>(stats.total_evaluations) / static_cast<double>(stats.steps);
}

struct QualityMetrics {
    double mean_deg = 0.0;
    double median_deg = 0.0;
    double max_deg = 0.0;
    double threshold_deg = 5.0;
    std::size_t within_threshold = 0;
    /// Samples within the threshold of each mode, indexed like the modes.
    std::vector<std::size_t> mode_counts;

    std::size_t modes_covered() const {
        return static_cast<std::size_t>(std::count_if(mode_counts.begin(), mode_counts.end(),
                                                      [](std::size_t c) { return c > 0; }));
    }
};

inline QualityMetrics quality_metrics(std::span<const Rotation> samples, std::span<const Rotation> modes,
                                      double threshold_deg = 5.0) {
    QualityMetrics q;
    q.threshold_deg = threshold_deg;
    q.mode_counts.assign(modes.size(), 0);
    if (samples.empty()) return q;
    std::vector<double> d;
    d.reserve(samples.size());
    for (const auto& x : samples) {
        const auto nm = nearest_mode(x, modes);
        d.push_back(nm.degrees);
        if (nm.degrees <= threshold_deg) {
            ++q.within_threshold;
            ++q.mode_counts[nm.index];
        }
    }
    double sum = 0.0;
    for (double v : d) sum += v;
    q.mean_deg = sum / static_cast<double>(d.size());
    q.max_deg = *std::max_element(d.begin(), d.end());
    std::sort(d.begin(), d.end());
    const std::size_t n = d.size();
    q.median_deg = n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
    return q;
}

struct RunReport {
    std::string sampler;
    std::string oracle;
    double kernel_sigma = 0.0;
    std::size_t steps = 0;
    std::size_t window = 0;
    double tolerance = 0.0;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;
    double eval_cost_ms = 0.0;

    /// Per-sample sweep counts K.
    std::vector<std::size_t> sweeps;
    std::uint64_t total_evaluations = 0;
    std::size_t batched_calls = 0;
    double algorithm_inefficiency = 0.0;
    double wall_clock_s = 0.0;

    QualityMetrics quality;

    std::optional<std::string> baseline_sampler;
    std::optional<double> speedup;

    double mean_sweeps() const {
        if (sweeps.empty()) return 0.0;
        double s = 0.0;
        for (auto k : sweeps) s += static_cast<double>(k);
        return s / static_cast<double>(sweeps.size());
    }
    std::size_t max_sweeps() const { return sweeps.empty() ? 0 : *std::max_element(sweeps.begin(), sweeps.end()); }
};

/// base.wall_clock / test.wall_clock. Reports must share T and the oracle.
inline double speedup_report(const RunReport& base, const RunReport& test) {
    if (base.steps != test.steps) throw std::invalid_argument("invalid comparison: step counts differ");
    if (base.oracle != test.oracle || base.kernel_sigma != test.kernel_sigma)
        throw std::invalid_argument("invalid comparison: oracles differ");
    if (!(test.wall_clock_s > 0.0)) throw std::invalid_argument("invalid comparison: test wall clock is zero");
    return base.wall_clock_s / test.wall_clock_s;
}

/// Writes the `key: value` report. Keys are stable; tables follow the scalar
/// section.
inline void write_report(std::ostream& os, const RunReport& r) {
    using textio::format_double;
    os << "so3-report v1\n";
    os << "sampler: " << r.sampler << '\n';
    os << "oracle: " << r.oracle << '\n';
    os << "kernel_sigma: " << format_double(r.kernel_sigma) << '\n';
    os << "steps: " << r.steps << '\n';
    os << "window: " << r.window << '\n';
    os << "tolerance: " << format_double(r.tolerance) << '\n';
    os << "samples: " << r.n_samples << '\n';
    os << "seed: " << r.seed << '\n';
    os << "eval_cost_ms: " << format_double(r.eval_cost_ms) << '\n';
    os << "mean_sweeps: " << format_double(r.mean_sweeps()) << '\n';
    os << "max_sweeps: " << r.max_sweeps() << '\n';
    os << "total_evaluations: " << r.total_evaluations << '\n';
    os << "batched_calls: " << r.batched_calls << '\n';
    os << "algorithm_inefficiency: " << format_double(r.algorithm_inefficiency) << '\n';
    os << "wall_clock_s: " << format_double(r.wall_clock_s) << '\n';
    os << "mean_min_angular_distance_deg: " << format_double(r.quality.mean_deg) << '\n';
    os << "median_min_angular_distance_deg: " << format_double(r.quality.median_deg) << '\n';
    os << "max_min_angular_distance_deg: " << format_double(r.quality.max_deg) << '\n';
    os << "coverage_threshold_deg: " << format_double(r.quality.threshold_deg) << '\n';
    os << "within_threshold: " << r.quality.within_threshold << '\n';
    os << "modes: " << r.quality.mode_counts.size() << '\n';
    os << "modes_covered: " << r.quality.modes_covered() << '\n';
    if (r.baseline_sampler) os << "baseline_sampler: " << *r.baseline_sampler << '\n';
    if (r.speedup) os << "speedup: " << format_double(*r.speedup) << '\n';
    os << "\n[mode_coverage]\n# mode count\n";
    for (std::size_t m = 0; m < r.quality.mode_counts.size(); ++m) os << m << ' ' << r.quality.mode_counts[m] << '\n';
}

}  // namespace so3picard
