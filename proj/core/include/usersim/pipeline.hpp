#pragma once
// Command drivers over the library modules. Every command writes under the
// run directory and records a manifest entry:
//
//   <out>/manifest.json      one entry per command: resolved config, hashes,
//                            counts, failures, timestamps
//   <out>/transcripts/       one JSONL transcript per task
//   <out>/rewards/           reward records
//   <out>/scorecards/        judge scorecards, trap responses, reports
//   <out>/datasets/          tasks, trap samples, review queue, exports
//   <out>/replay/            replay stores written in record mode
//
// A run directory is owned by one command at a time (<out>/.lock).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "usersim/config.hpp"

namespace usersim {

// ---------------------------------------------------------------------------
// Task pairing

struct TaskPair {
    std::string task_id;
    std::string profile_id;
    std::string sop_id;

    bool operator==(const TaskPair&) const = default;
};

struct TaskPairing {
    std::vector<TaskPair> pairs;
};

/// n distinct (profile index, SOP index) pairs out of pool_size x sop_count.
/// Uniform-random draws from the "pairing" substream; round-robin walks
/// profiles first and rotates SOPs so early pairs cover both sides.
/// n == 0 selects the full product. CapacityError when n exceeds it.
std::vector<std::pair<std::size_t, std::size_t>> pair_indices(std::size_t pool_size, std::size_t sop_count,
                                                              std::size_t n, PairingStrategy strategy,
                                                              std::uint64_t seed);

TaskPairing pair_tasks(std::span<const StaticProfile> pool, std::span<const AgentTask> sops, std::size_t n,
                       PairingStrategy strategy, std::uint64_t seed);

void write_pairing(const std::filesystem::path& path, const TaskPairing& pairing);
TaskPairing read_pairing(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Run directory

/// Exclusive ownership of a run directory via an O_EXCL lock file.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& out_dir);  ///< LockError when held elsewhere
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path path_;
};

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Exceptions are
/// captured per item; the returned vector holds one message per failure
/// (empty string on success).
std::vector<std::string> parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

struct Failure {
    std::string item;
    std::string error;
};

struct CommandResult {
    std::string command;
    json counts = json::object();
    std::vector<Failure> failures;
    std::vector<std::string> outputs;  ///< paths relative to the run directory
    std::string report;                ///< human-readable summary for stdout

    int exit_code() const { return failures.empty() ? 0 : 1; }
};

/// Overrides applied by the command line on top of the config file.
struct CommandOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> jobs;
    bool allow_unreviewed = false;
};

RunConfig apply_overrides(RunConfig config, const CommandOverrides& o);

// ---------------------------------------------------------------------------
// Commands

CommandResult cmd_pair_tasks(const RunConfig& config);
CommandResult cmd_simulate(const RunConfig& config);
CommandResult cmd_build_traps(const RunConfig& config);
CommandResult cmd_review_queue(const RunConfig& config, bool include_reviewed = false);
CommandResult cmd_apply_review(const RunConfig& config, const std::filesystem::path& review_file);
CommandResult cmd_score(const RunConfig& config);
CommandResult cmd_evaluate(const RunConfig& config);
CommandResult cmd_compare(const RunConfig& config, const std::filesystem::path& run_a,
                          const std::filesystem::path& run_b, const std::string& level = "session");
CommandResult cmd_export_sft(const RunConfig& config);
CommandResult cmd_export_rl(const RunConfig& config);
CommandResult cmd_gen_profiles(const RunConfig& config);
CommandResult cmd_dedup_pool(const RunConfig& config, const std::filesystem::path& output);
CommandResult cmd_pool_stats(const RunConfig& config);

/// Files of the run directory that must be identical across re-runs: every
/// regular file except manifest.json and the lock, as relative path -> SHA-256.
std::map<std::string, std::string> run_directory_digest(const std::filesystem::path& out_dir);

}  // namespace usersim
