#pragma once

#include "so3picard/diffusion.hpp"
#include "so3picard/metrics.hpp"
#include "so3picard/samplers.hpp"
#include "so3picard/score.hpp"
#include "so3picard/score_table.hpp"
#include "so3picard/text_io.hpp"

#include <tbb/global_control.h>
#include <tbb/task_arena.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace so3picard {

inline constexpr const char* kSamplesHeader = "so3-samples v1";

// ---------------------------------------------------------------------------
// Sample files: header line, then one `qw qx qy qz` row per sample (w >= 0).

inline void write_samples(std::ostream& os, const std::vector<Rotation>& samples) {
    using textio::format_double;
    os << kSamplesHeader << '\n';
    for (const auto& r : samples) {
        const Eigen::Vector4d q = r.quaternion();
        os << format_double(q[0]) << ' ' << format_double(q[1]) << ' ' << format_double(q[2]) << ' '
           << format_double(q[3]) << '\n';
    }
}

inline void export_samples(const std::vector<Rotation>& samples, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_samples(os, samples);
    if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

/// Quaternions exactly as stored in the file.
inline std::vector<Eigen::Vector4d> read_samples(std::istream& is) {
    std::vector<Eigen::Vector4d> out;
    std::string line;
    std::size_t line_no = 0;
    bool header = false;
    while (std::getline(is, line)) {
        ++line_no;
        const auto body = textio::strip(line);
        if (body.empty()) continue;
        if (!header) {
            if (body != kSamplesHeader) throw ParseError(line_no, std::string("expected header '") + kSamplesHeader + "'");
            header = true;
            continue;
        }
        const auto f = textio::parse_fields<4>(body, line_no);
        out.emplace_back(f[0], f[1], f[2], f[3]);
    }
    if (!header) throw ParseError(line_no, "missing header (empty file?)");
    return out;
}

inline std::vector<Eigen::Vector4d> load_samples(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    return read_samples(is);
}

// ---------------------------------------------------------------------------

struct ExperimentConfig {
    std::string oracle = "ico";
    double kernel_sigma = 0.05;
    Rotation canonical = Rotation::identity();
    /// When set, scores come from this table; the oracle still defines the
    /// modes used for quality metrics.
    std::optional<std::string> score_table;

    SamplerKind sampler = SamplerKind::picard;
    std::size_t steps = 100;
    std::size_t window = 12;
    double tolerance = 1e-3;
    double sigma_min = 0.01;
    double sigma_max = std::numbers::pi / 2.0;
    std::vector<double> sigmas;  // explicit schedule; overrides the geometric triple
    std::optional<double> init_sigma;
    ErrorNorm error_norm = ErrorNorm::geodesic;
    std::size_t max_sweeps = 0;

    std::size_t n_samples = 1;
    std::uint64_t seed = 0;
    double eval_cost_ms = 0.0;
    CostMode cost_mode = CostMode::busy_wait;
    std::size_t threads = 0;  // 0 = library default

    std::optional<std::string> out_path;
    std::optional<std::string> report_path;

    NoiseSchedule schedule() const {
        if (!sigmas.empty()) return NoiseSchedule(sigmas);
        return make_geometric_schedule(sigma_min, sigma_max, steps);
    }

    PicardConfig picard() const {
        PicardConfig pc;
        pc.schedule = schedule();
        pc.window = std::min(window, pc.schedule.steps());
        pc.tolerance = tolerance;
        pc.max_sweeps = max_sweeps;
        pc.error_norm = error_norm;
        pc.init_sigma = init_sigma;
        pc.validate();
        return pc;
    }

    SymmetryMixture mixture() const {
        return make_symmetry_orbit(SymmetryGroup::parse(oracle), canonical, kernel_sigma);
    }

    void validate() const {
        (void)picard();
        (void)SymmetryGroup::parse(oracle);
        if (n_samples < 1) throw std::invalid_argument("samples must be >= 1");
        if (!(eval_cost_ms >= 0.0)) throw std::invalid_argument("eval cost must be >= 0");
    }
};

/// The score model an experiment samples from, including the optional
/// calibrated cost wrapper.
inline std::shared_ptr<const ScoreModel> make_model(const ExperimentConfig& cfg) {
    std::shared_ptr<const ScoreModel> model;
    if (cfg.score_table)
        model = load_tabulated_score(*cfg.score_table);
    else
        model = std::make_shared<MixtureScore>(cfg.mixture());
    if (cfg.eval_cost_ms > 0.0) {
        const auto cost = std::chrono::duration_cast<std::chrono::nanoseconds>(
            std::chrono::duration<double, std::milli>(cfg.eval_cost_ms));
        model = make_calibrated_cost_model(model, cost, cfg.cost_mode);
    }
    return model;
}

/// Runs `fn` with at most `threads` workers (0 = default).
template <class Fn>
auto with_threads(std::size_t threads, Fn&& fn) {
    if (threads == 0) return fn();
    tbb::global_control limit(tbb::global_control::max_allowed_parallelism, threads);
    tbb::task_arena arena(static_cast<int>(threads));
    return arena.execute(std::forward<Fn>(fn));
}

struct ExperimentResult {
    RunReport report;
    std::vector<Rotation> samples;
};

namespace detail {

inline ExperimentResult run_once(const ExperimentConfig& cfg, SamplerKind kind, const ScoreModel& model,
                                 const std::vector<Rotation>& modes) {
    const PicardConfig pc = cfg.picard();
    const BatchResult batch =
        with_threads(cfg.threads, [&] { return run_batch(kind, model, pc, cfg.n_samples, cfg.seed); });

    ExperimentResult out;
    RunReport& r = out.report;
    r.sampler = to_string(kind);
    r.oracle = cfg.oracle;
    r.kernel_sigma = cfg.kernel_sigma;
    r.steps = pc.steps();
    r.window = kind == SamplerKind::picard ? pc.window : 1;
    r.tolerance = cfg.tolerance;
    r.n_samples = cfg.n_samples;
    r.seed = cfg.seed;
    r.eval_cost_ms = cfg.eval_cost_ms;
    r.total_evaluations = batch.aggregate.total_evaluations;
    r.batched_calls = batch.aggregate.sweeps;
    r.algorithm_inefficiency = batch.aggregate.algorithm_inefficiency;
    r.wall_clock_s = batch.aggregate.wall_clock.count();
    for (const auto& s : batch.samples) {
        out.samples.push_back(s.sample);
        r.sweeps.push_back(s.stats.sweeps);
    }
    r.quality = quality_metrics(out.samples, modes);
    return out;
}

inline void write_outputs(const ExperimentConfig& cfg, const ExperimentResult& res) {
    if (cfg.out_path) export_samples(res.samples, *cfg.out_path);
    if (cfg.report_path) {
        std::ofstream os(*cfg.report_path);
        if (!os) throw std::runtime_error("cannot open '" + *cfg.report_path + "' for writing");
        write_report(os, res.report);
    }
}

}  // namespace detail

/// Draws cfg.n_samples samples with cfg.sampler, scores them against the
/// oracle's modes, and writes the sample file and report if paths are set.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto model = make_model(cfg);
    const auto modes = cfg.mixture().modes;
    ExperimentResult res = detail::run_once(cfg, cfg.sampler, *model, modes);
    detail::write_outputs(cfg, res);
    return res;
}

struct Comparison {
    ExperimentResult baseline;
    ExperimentResult test;
};

/// Paired run: `baseline` and cfg.sampler on the same seeds. The test report
/// carries the speedup over the baseline.
inline Comparison run_comparison(const ExperimentConfig& cfg, SamplerKind baseline = SamplerKind::sequential_ode) {
    cfg.validate();
    const auto model = make_model(cfg);
    const auto modes = cfg.mixture().modes;
    Comparison c;
    c.baseline = detail::run_once(cfg, baseline, *model, modes);
    c.test = detail::run_once(cfg, cfg.sampler, *model, modes);
    c.test.report.baseline_sampler = c.baseline.report.sampler;
    c.test.report.speedup = speedup_report(c.baseline.report, c.test.report);
    detail::write_outputs(cfg, c.test);
    return c;
}

struct WindowPoint {
    std::size_t window = 0;
    double mean_sweeps = 0.0;
    double algorithm_inefficiency = 0.0;
    double wall_clock_s = 0.0;     // summed single-sample latency
    double relative_speed = 0.0;   // sequential wall clock / this wall clock
};

struct WindowSweep {
    double sequential_wall_clock_s = 0.0;
    std::vector<WindowPoint> points;
};

/// Picard over each window size on seeds sample_seed(cfg.seed, i), one sample
/// at a time so wall clock measures per-sample latency.
inline WindowSweep sweep_window(const ExperimentConfig& cfg, const std::vector<std::size_t>& windows) {
    cfg.validate();
    const auto model = make_model(cfg);
    const PicardConfig base = cfg.picard();

    auto timed = [&](SamplerKind kind, const PicardConfig& pc, std::uint64_t& evals, std::size_t& sweeps) {
        double wall = 0.0;
        for (std::size_t i = 0; i < cfg.n_samples; ++i) {
            Rng rng(sample_seed(cfg.seed, i));
            const auto res = with_threads(cfg.threads, [&] { return sample_with(kind, *model, pc, rng); });
            wall += res.stats.wall_clock.count();
            evals += res.stats.total_evaluations;
            sweeps += res.stats.sweeps;
        }
        return wall;
    };

    WindowSweep out;
    std::uint64_t seq_evals = 0;
    std::size_t seq_sweeps = 0;
    out.sequential_wall_clock_s = timed(SamplerKind::sequential_ode, base, seq_evals, seq_sweeps);
    for (std::size_t p : windows) {
        PicardConfig pc = base;
        pc.window = p;
        pc.validate();
        std::uint64_t evals = 0;
        std::size_t sweeps = 0;
        WindowPoint pt;
        pt.window = p;
        pt.wall_clock_s = timed(SamplerKind::picard, pc, evals, sweeps);
        const double n = static_cast<double>(cfg.n_samples);
        pt.mean_sweeps = static_cast<double>(sweeps) / n;
        pt.algorithm_inefficiency = static_cast<double>(evals) / (n * static_cast<double>(pc.steps()));
        pt.relative_speed = pt.wall_clock_s > 0.0 ? out.sequential_wall_clock_s / pt.wall_clock_s : 0.0;
        out.points.push_back(pt);
    }
    return out;
}

inline void write_window_sweep(std::ostream& os, const ExperimentConfig& cfg, const WindowSweep& sweep) {
    using textio::format_double;
    os << "so3-window-sweep v1\n";
    os << "oracle: " << cfg.oracle << '\n';
    os << "kernel_sigma: " << format_double(cfg.kernel_sigma) << '\n';
    os << "steps: " << cfg.picard().steps() << '\n';
    os << "tolerance: " << format_double(cfg.tolerance) << '\n';
    os << "samples: " << cfg.n_samples << '\n';
    os << "seed: " << cfg.seed << '\n';
    os << "eval_cost_ms: " << format_double(cfg.eval_cost_ms) << '\n';
    os << "sequential_wall_clock_s: " << format_double(sweep.sequential_wall_clock_s) << '\n';
    os << "\n[windows]\n# window mean_sweeps algorithm_inefficiency wall_clock_s relative_speed\n";
    for (const auto& p : sweep.points)
        os << p.window << ' ' << format_double(p.mean_sweeps) << ' ' << format_double(p.algorithm_inefficiency) << ' '
           << format_double(p.wall_clock_s) << ' ' << format_double(p.relative_speed) << '\n';
}

}  // namespace so3picard
