// Command-line front end: sampling experiments, paired comparisons, window
// ablations and score-table export.

#include "so3picard/so3picard.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace so3picard;

struct Flags {
    ExperimentConfig cfg;
    std::string sampler = "picard";
    std::string error_norm = "geodesic";
    std::string cost_mode = "busy";
    std::vector<double> canonical;
    std::optional<double> init_sigma;
    std::string score_table;
    std::string out;
    std::string report;
};

void add_experiment_flags(CLI::App& app, Flags& f) {
    auto& c = f.cfg;
    app.add_option("--steps", c.steps, "Denoising steps T")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("--window", c.window, "Picard batch window p (clamped to T)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    app.add_option("--tolerance", c.tolerance, "Picard tolerance tau")->capture_default_str()->check(CLI::NonNegativeNumber);
    app.add_option("--sigma-min", c.sigma_min, "Lowest noise level (rad)")->capture_default_str();
    app.add_option("--sigma-max", c.sigma_max, "Highest noise level (rad)")->capture_default_str();
    app.add_option("--sigmas", c.sigmas, "Explicit noise levels in denoising order; overrides steps/sigma-min/sigma-max")
        ->delimiter(',');
    app.add_option("--oracle", c.oracle, "Symmetry oracle: cyclic:N | tet | oct | ico")->capture_default_str();
    app.add_option("--kernel-sigma", c.kernel_sigma, "Mode width of the oracle (rad)")->capture_default_str();
    app.add_option("--canonical", f.canonical, "Canonical pose quaternion qw,qx,qy,qz (default identity)")
        ->delimiter(',')
        ->expected(4);
    app.add_option("--score-table", f.score_table, "Sample from a tabulated score file instead of the oracle");
    app.add_option("--samples", c.n_samples, "Number of samples")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("--seed", c.seed, "Base random seed")->capture_default_str();
    app.add_option("--sampler", f.sampler, "seq-ode | seq-sde | picard")
        ->capture_default_str()
        ->check(CLI::IsMember({"seq-ode", "seq-sde", "picard"}));
    app.add_option("--eval-cost-ms", c.eval_cost_ms, "Calibrated cost added to every score evaluation (ms)")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    app.add_option("--cost-mode", f.cost_mode, "How the calibrated cost is spent: busy | sleep")
        ->capture_default_str()
        ->check(CLI::IsMember({"busy", "sleep"}));
    app.add_option("--threads", c.threads, "Worker threads for score batches (0 = all cores)")->capture_default_str();
    app.add_option("--init-sigma", f.init_sigma, "Scale of the initial draw Exp(s * eps) (default sigma-max)");
    app.add_option("--error-norm", f.error_norm, "Picard change measure: geodesic | frobenius")
        ->capture_default_str()
        ->check(CLI::IsMember({"geodesic", "frobenius"}));
    app.add_option("--max-sweeps", c.max_sweeps, "Picard sweep cap (0 = 4T)")->capture_default_str();
    app.add_option("--out", f.out, "Sample file to write");
    app.add_option("--report", f.report, "Report file to write (also printed to stdout)");
}

void finalize(Flags& f) {
    auto& c = f.cfg;
    c.sampler = parse_sampler_kind(f.sampler);
    c.error_norm = f.error_norm == "frobenius" ? ErrorNorm::frobenius : ErrorNorm::geodesic;
    c.cost_mode = f.cost_mode == "sleep" ? CostMode::sleep : CostMode::busy_wait;
    if (!f.canonical.empty())
        c.canonical = Rotation::from_quaternion(f.canonical[0], f.canonical[1], f.canonical[2], f.canonical[3]);
    c.init_sigma = f.init_sigma;
    if (!f.score_table.empty()) c.score_table = f.score_table;
    if (!f.out.empty()) c.out_path = f.out;
    if (!f.report.empty()) c.report_path = f.report;
}

void write_to(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os << text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Parallel-in-time (Picard) diffusion sampling on SO(3)"};
    app.set_config("--config", "", "Read flags from a TOML/INI file; unknown keys are rejected");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1);

    Flags sample_flags;
    auto* sample = app.add_subcommand("sample", "Draw samples and report quality and efficiency");
    add_experiment_flags(*sample, sample_flags);

    Flags compare_flags;
    std::string baseline = "seq-ode";
    auto* compare = app.add_subcommand("compare", "Paired run of a baseline and --sampler on the same seeds");
    add_experiment_flags(*compare, compare_flags);
    compare->add_option("--baseline", baseline, "Baseline sampler")
        ->capture_default_str()
        ->check(CLI::IsMember({"seq-ode", "seq-sde", "picard"}));

    Flags sweep_flags;
    std::vector<std::size_t> windows{1, 2, 4, 8, 12};
    auto* sweep = app.add_subcommand("sweep-window", "Algorithm inefficiency and speed over window sizes");
    add_experiment_flags(*sweep, sweep_flags);
    sweep->add_option("--windows", windows, "Window sizes to try")->delimiter(',')->capture_default_str();

    Flags table_flags;
    std::size_t grid = 512;
    auto* table = app.add_subcommand("export-table", "Tabulate the oracle score for external use");
    add_experiment_flags(*table, table_flags);
    table->add_option("--grid", grid, "Number of uniformly drawn rotations per noise level")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*sample) {
            finalize(sample_flags);
            const auto res = run_experiment(sample_flags.cfg);
            write_report(std::cout, res.report);
        } else if (*compare) {
            finalize(compare_flags);
            const auto cmp = run_comparison(compare_flags.cfg, parse_sampler_kind(baseline));
            write_report(std::cout, cmp.test.report);
        } else if (*sweep) {
            finalize(sweep_flags);
            const auto& cfg = sweep_flags.cfg;
            const auto result = sweep_window(cfg, windows);
            std::ostringstream text;
            write_window_sweep(text, cfg, result);
            std::cout << text.str();
            if (cfg.report_path) write_to(*cfg.report_path, text.str());
        } else if (*table) {
            finalize(table_flags);
            const auto& cfg = table_flags.cfg;
            if (!cfg.out_path) throw std::invalid_argument("export-table needs --out");
            cfg.validate();
            MixtureScore model(cfg.mixture());
            Rng rng(cfg.seed);
            std::vector<Rotation> rots;
            for (std::size_t i = 0; i < grid; ++i) rots.push_back(random_uniform(rng));
            const auto entries = tabulate_score(model, rots, cfg.schedule().sigmas());
            save_score_table(*cfg.out_path, entries);
            std::cout << "wrote " << entries.size() << " entries to " << *cfg.out_path << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return EXIT_FAILURE;
    }
    return EXIT_SUCCESS;
}
