// Command-line front end: config-driven experiment runs, the memory/parity
// benchmark, the amplification-network gradient probe, and report
// regeneration from per-trial CSVs.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "magnonrc/magnonrc.hpp"

namespace fs = std::filesystem;
using namespace magnonrc;

namespace {

struct GlobalOpts {
    std::string out_dir = ".";
    std::string cache_dir;
    int threads = 0;
    int64_t seed = -1;
};

void apply_globals(ExperimentConfig& cfg, const GlobalOpts& g) {
    if (g.seed >= 0) cfg.seed = static_cast<uint64_t>(g.seed);
    if (g.threads > 0) cfg.threads = g.threads;
}

int cmd_run(const std::string& config_path, const GlobalOpts& g) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    apply_globals(cfg, g);
    fs::create_directories(g.out_dir);
    const std::string stem = fs::path(config_path).stem().string();

    const FeatureTable table = compute_features(cfg, g.cache_dir);
    TrialReport report;
    const std::string enc = cfg.encoding == Encoding::kAmplitude ? "amplitude" : "phase";
    for (double split : cfg.splits)
        for (int trial = 0; trial < cfg.n_trials; ++trial)
            report.rows.push_back({to_string(cfg.readout), enc, cfg.ann_enabled, split, trial,
                                   run_single_trial(cfg, table, split, trial)});
    compute_aggregates(report);

    const std::string trials_path = (fs::path(g.out_dir) / (stem + "_trials.csv")).string();
    const std::string agg_path = (fs::path(g.out_dir) / (stem + "_aggregates.csv")).string();
    save_trials_csv(report, trials_path);
    save_aggregates_csv(report, agg_path);
    if (!table.interval_inputs.empty())
        save_overlay_csv(table, (fs::path(g.out_dir) / (stem + "_overlay.csv")).string());

    for (const Aggregate& a : report.aggregates)
        if (a.split < 0.0)
            std::cout << a.method << " pooled over " << a.n << " trials: max " << a.max
                      << " mean " << a.mean << " std " << a.stddev << "\n";
    std::cout << "wrote " << trials_path << " and " << agg_path << "\n";
    return 0;
}

int cmd_bench_memory(const std::string& config_path, int n_intervals, int j_max,
                     const GlobalOpts& g) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    apply_globals(cfg, g);
    fs::create_directories(g.out_dir);
    const auto rows = memory_benchmark(cfg.aor, n_intervals, j_max, cfg.seed);
    const std::string path = (fs::path(g.out_dir) / "memory_benchmark.csv").string();
    save_memory_bench_csv(rows, path);
    for (const MemoryBenchRow& r : rows)
        std::cout << r.task << " j=" << r.delay << ": " << r.accuracy << "% (n=" << r.n_test
                  << ", p=" << r.p_value << ")\n";
    std::cout << "wrote " << path << "\n";
    return 0;
}

int cmd_gradient_probe(const std::string& config_path, int n_intervals, double delta,
                       const GlobalOpts& g) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    apply_globals(cfg, g);
    fs::create_directories(g.out_dir);
    const GradientProbeResult r = ann_gradient_probe(cfg.aor, n_intervals, cfg.seed, delta);
    const std::string path = (fs::path(g.out_dir) / "gradient_probe.csv").string();
    save_gradient_probe_csv(r, path);
    std::cout << "base loss " << r.base_loss << ", max |grad| " << r.max_abs << " over "
              << r.estimates.size() << " parameters\n";
    std::cout << "wrote " << path << "\n";
    return 0;
}

int cmd_report(const std::string& trials_path, const GlobalOpts& g) {
    const TrialReport report = load_trials_csv(trials_path);
    fs::create_directories(g.out_dir);
    const std::string stem = fs::path(trials_path).stem().string();
    const std::string agg_path = (fs::path(g.out_dir) / (stem + "_aggregates.csv")).string();
    save_aggregates_csv(report, agg_path);
    for (const Aggregate& a : report.aggregates)
        if (a.split < 0.0)
            std::cout << a.method << " pooled over " << a.n << " trials: max " << a.max
                      << " mean " << a.mean << " std " << a.stddev << "\n";
    std::cout << "wrote " << agg_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spin-wave reservoir computing simulator"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--out-dir", g.out_dir, "directory for result files");
    app.add_option("--cache-dir", g.cache_dir, "feature cache directory");
    app.add_option("--threads", g.threads, "worker threads for independent simulations");
    app.add_option("--seed", g.seed, "override the config seed");

    std::string config_path, trials_path;
    int n_intervals = 400;
    int j_max = 4;
    int probe_intervals = 10;
    double delta = 1.0e-3;

    CLI::App* run = app.add_subcommand("run", "run a config-driven experiment");
    run->add_option("config", config_path, "experiment config JSON")->required();

    CLI::App* bench = app.add_subcommand("bench-memory", "input/parity memory benchmark");
    bench->add_option("config", config_path, "experiment config JSON")->required();
    bench->add_option("--intervals", n_intervals, "random binary intervals to drive");
    bench->add_option("--j-max", j_max, "largest delay to test");

    CLI::App* probe =
        app.add_subcommand("gradient-probe", "parameter-shift gradient of the ANN");
    probe->add_option("config", config_path, "experiment config JSON")->required();
    probe->add_option("--intervals", probe_intervals, "pipeline length in intervals");
    probe->add_option("--delta", delta, "forward-difference step");

    CLI::App* report = app.add_subcommand("report", "recompute aggregates from a trials CSV");
    report->add_option("trials", trials_path, "per-trial CSV")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, g);
        if (bench->parsed()) return cmd_bench_memory(config_path, n_intervals, j_max, g);
        if (probe->parsed()) return cmd_gradient_probe(config_path, probe_intervals, delta, g);
        if (report->parsed()) return cmd_report(trials_path, g);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
