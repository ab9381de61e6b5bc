#pragma once
// Run configuration: one JSON document naming backends, inputs, knobs and
// the output directory. Relative paths resolve against the directory of the
// config file.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "usersim/backend.hpp"
#include "usersim/dialogue.hpp"
#include "usersim/eval.hpp"
#include "usersim/reward.hpp"

namespace usersim {

enum class PairingStrategy { uniform_random, round_robin };

std::string_view to_string(PairingStrategy s);
PairingStrategy pairing_strategy_from_string(std::string_view text);

struct PairingSpec {
    std::size_t n = 0;  ///< 0 pairs every profile with every SOP
    PairingStrategy strategy = PairingStrategy::uniform_random;

    bool operator==(const PairingSpec&) const = default;
};

struct TrapSettings {
    std::size_t per_type = 20;
    int max_history_turns = 6;
    std::vector<std::string> types;  ///< empty selects all eleven

    bool operator==(const TrapSettings&) const = default;
};

struct RunConfig {
    std::string run_id = "run";
    std::uint64_t seed = 0;
    int jobs = 1;

    BackendSpec agent;
    BackendSpec user;
    BackendSpec judge;
    BackendSpec generator;
    std::vector<BackendSpec> raters;  ///< pairwise raters; empty uses the judge

    std::string profile_pool;        ///< static profiles, JSONL
    std::string sops;                ///< agent tasks, JSONL
    std::string preference_records;  ///< seed records for gen-profiles, JSONL
    std::string data_dir;            ///< templates/, option_lists.json, trap_catalog.json; empty = built-in
    std::string output_dir = "out";

    PairingSpec pairing;
    DialogueLimits limits;
    ScoringConfig scoring;
    AggregationConfig aggregation;
    int judge_retries = 2;
    TrapSettings traps;
    bool allow_unreviewed = false;
    bool record = false;  ///< wrap every backend in record mode, stores under <out>/replay/

    /// Directory relative paths resolve against. Not serialized.
    std::filesystem::path base_dir;

    std::filesystem::path resolve(const std::string& path) const;
    std::filesystem::path data_path() const;
    std::filesystem::path templates_dir() const { return data_path() / "templates"; }
    std::filesystem::path option_lists_path() const { return data_path() / "option_lists.json"; }
    std::filesystem::path trap_catalog_path() const { return data_path() / "trap_catalog.json"; }
    std::filesystem::path out_dir() const { return resolve(output_dir); }

    /// ConfigError on inconsistent settings.
    void validate() const;

    bool operator==(const RunConfig& other) const;
};

void to_json(json& j, const RunConfig& c);
void from_json(const json& j, RunConfig& c);

/// Stable, human-readable JSON text; parse_config(render_config(c)) == c.
std::string render_config(const RunConfig& c);
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// SHA-256 of the canonical config bytes with every path resolved.
std::string config_hash(const RunConfig& c);
/// Config as recorded in manifests: paths made absolute.
json resolved_config_json(const RunConfig& c);

}  // namespace usersim
