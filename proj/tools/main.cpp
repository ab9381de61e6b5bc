// usersim command-line driver. Every subcommand takes --config and writes
// under the configured (or --out) run directory.
//
// Exit codes: 0 success, 1 when any item failed, 2 on a command error.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <iostream>

#include "usersim/config.hpp"
#include "usersim/errors.hpp"
#include "usersim/pipeline.hpp"

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> jobs;
    bool allow_unreviewed = false;
    bool verbose = false;
    bool quiet = false;
};

void add_globals(CLI::App& sub, Globals& g) {
    sub.add_option("--config", g.config, "Run configuration file (JSON)")->required()->check(CLI::ExistingFile);
    sub.add_option("--seed", g.seed, "Override the config seed");
    sub.add_option("--out", g.out, "Override the output (run) directory");
    sub.add_option("--jobs", g.jobs, "Parallel workers")->check(CLI::PositiveNumber);
    sub.add_flag("--allow-unreviewed", g.allow_unreviewed, "Probe trap samples that were not reviewed");
    sub.add_flag("-v,--verbose", g.verbose, "Debug logging");
    sub.add_flag("-q,--quiet", g.quiet, "Only print errors");
}

usersim::RunConfig load(const Globals& g) {
    usersim::CommandOverrides o;
    o.seed = g.seed;
    o.out = g.out;
    o.jobs = g.jobs;
    o.allow_unreviewed = g.allow_unreviewed;
    return usersim::apply_overrides(usersim::load_config(g.config), o);
}

int report(const usersim::CommandResult& r, const Globals& g) {
    if (!g.quiet) std::cout << r.report;
    for (const auto& f : r.failures) spdlog::error("{}: {}", f.item, f.error);
    if (!r.failures.empty()) spdlog::warn("{}: {} item(s) failed", r.command, r.failures.size());
    spdlog::info("{} finished; outputs: {}", r.command, r.outputs.size());
    return r.exit_code();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"usersim: user simulation, reward scoring and evaluation pipelines"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(usersim::version()));
    Globals g;

    std::string review_file;
    std::string run_a;
    std::string run_b;
    std::string level = "session";
    std::string dedup_output;
    bool include_reviewed = false;

    auto* pair = app.add_subcommand("pair-tasks", "Pair profiles with SOPs into tasks");
    auto* simulate = app.add_subcommand("simulate", "Simulate one dialogue per task");
    auto* build_traps = app.add_subcommand("build-traps", "Build the adversarial trap dataset");
    auto* queue = app.add_subcommand("review-queue", "Write the trap review file");
    queue->add_flag("--all", include_reviewed, "Include already reviewed samples");
    auto* apply = app.add_subcommand("apply-review", "Apply an edited review file");
    apply->add_option("--file", review_file, "Review file")->required()->check(CLI::ExistingFile);
    auto* score = app.add_subcommand("score", "Compute rewards for simulated turns");
    auto* evaluate = app.add_subcommand("evaluate", "Judge sessions and trap probes");
    auto* compare = app.add_subcommand("compare", "Blind pairwise comparison of two runs");
    compare->add_option("--a", run_a, "First run directory")->required()->check(CLI::ExistingDirectory);
    compare->add_option("--b", run_b, "Second run directory")->required()->check(CLI::ExistingDirectory);
    compare->add_option("--level", level, "session or turn")->check(CLI::IsMember({"session", "turn"}));
    auto* export_sft = app.add_subcommand("export-sft", "Export supervised fine-tuning records");
    auto* export_rl = app.add_subcommand("export-rl", "Export grouped RL batches with advantages");
    auto* gen_profiles = app.add_subcommand("gen-profiles", "Generate static profiles from seed records");
    auto* dedup = app.add_subcommand("dedup-pool", "Remove duplicate seed records");
    dedup->add_option("--output", dedup_output, "Output file (default: datasets/ in the run directory)");
    auto* stats = app.add_subcommand("pool-stats", "Distribution statistics of a profile pool");
    auto* check = app.add_subcommand("config", "Validate a config and print it with defaults filled in");

    for (auto* sub : {pair, simulate, build_traps, queue, apply, score, evaluate, compare, export_sft, export_rl,
                      gen_profiles, dedup, stats, check}) {
        add_globals(*sub, g);
    }

    CLI11_PARSE(app, argc, argv);

    auto logger = spdlog::stderr_color_mt("usersim");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(g.verbose ? spdlog::level::debug : g.quiet ? spdlog::level::err : spdlog::level::info);

    try {
        const auto config = load(g);
        spdlog::debug("config {} resolved, run directory {}", g.config, config.out_dir().string());
        if (check->parsed()) {
            std::cout << usersim::render_config(config);
            return 0;
        }
        if (pair->parsed()) return report(usersim::cmd_pair_tasks(config), g);
        if (simulate->parsed()) return report(usersim::cmd_simulate(config), g);
        if (build_traps->parsed()) return report(usersim::cmd_build_traps(config), g);
        if (queue->parsed()) return report(usersim::cmd_review_queue(config, include_reviewed), g);
        if (apply->parsed()) return report(usersim::cmd_apply_review(config, review_file), g);
        if (score->parsed()) return report(usersim::cmd_score(config), g);
        if (evaluate->parsed()) return report(usersim::cmd_evaluate(config), g);
        if (compare->parsed()) return report(usersim::cmd_compare(config, run_a, run_b, level), g);
        if (export_sft->parsed()) return report(usersim::cmd_export_sft(config), g);
        if (export_rl->parsed()) return report(usersim::cmd_export_rl(config), g);
        if (gen_profiles->parsed()) return report(usersim::cmd_gen_profiles(config), g);
        if (dedup->parsed()) return report(usersim::cmd_dedup_pool(config, dedup_output), g);
        if (stats->parsed()) return report(usersim::cmd_pool_stats(config), g);
    } catch (const usersim::ReviewConflict& e) {
        spdlog::error("{}; export a fresh queue with review-queue and redo the review", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 2;
    }
    return 2;
}
