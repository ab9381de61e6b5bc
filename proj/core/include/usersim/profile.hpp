#pragma once
// User profiles: schema, validation, backend-driven generation,
// deduplication, keyword selection, and pool statistics.
//
// The static profile is task-independent (background, personality,
// expression style, life scenarios). The dynamic profile is built per
// (profile, SOP) pair and evolves turn by turn.

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "usersim/backend.hpp"
#include "usersim/state.hpp"
#include "usersim/target_list.hpp"
#include "usersim/templates.hpp"
#include "usersim/util.hpp"

namespace usersim {

struct Background {
    std::string name;
    int age = 0;
    std::string gender;
    std::string location;
    std::string occupation;
    std::string income_tier;
    std::string education;
    std::string health;
    std::string marriage;
    std::vector<std::string> hobbies;
    std::string contact;

    bool operator==(const Background&) const = default;
};

struct Personality {
    std::string description;
    std::string mbti;

    bool operator==(const Personality&) const = default;
};

struct ExpressionStyle {
    std::string speech_rate;
    std::string verbosity;
    std::string emotion_intensity;
    std::string politeness;
    std::string logic_orientation;
    std::string patience;
    std::string interruption_tendency;
    std::string tone;
    std::vector<std::string> typical_phrases;

    bool operator==(const ExpressionStyle&) const = default;
};

struct LifeScenarios {
    std::string weekday;
    std::string weekend;

    bool operator==(const LifeScenarios&) const = default;
};

struct StaticProfile {
    std::string profile_id;
    Background background;
    Personality personality;
    ExpressionStyle expression_style;
    LifeScenarios life_scenarios;

    bool operator==(const StaticProfile&) const = default;
};

void to_json(json& j, const StaticProfile& p);
void from_json(const json& j, StaticProfile& p);
/// Stable field order for prompts and files.
ordered_json static_profile_to_ordered_json(const StaticProfile& p);

struct DecisionPolicy {
    std::vector<std::string> touched_concerns;
    std::vector<std::string> core_issues;
    std::string topic_management;
    std::string current_response;
    std::string planning;
    bool end_session = false;

    bool operator==(const DecisionPolicy&) const = default;
};

struct DynamicProfile {
    std::string scenario_memory;
    TargetList target_list;
    DecisionPolicy decision_policy;
    StateValues state;

    bool operator==(const DynamicProfile&) const = default;
};

void to_json(json& j, const DynamicProfile& p);
void from_json(const json& j, DynamicProfile& p);
ordered_json dynamic_profile_to_ordered_json(const DynamicProfile& p);

inline constexpr std::size_t kPreferenceDimensions = 90;

/// Background attributes known for a seed user; any subset may be present.
struct PartialBackground {
    std::optional<std::string> name;
    std::optional<int> age;
    std::optional<std::string> gender;
    std::optional<std::string> location;
    std::optional<std::string> occupation;
    std::optional<std::string> income_tier;
    std::optional<std::string> education;
    std::optional<std::string> health;
    std::optional<std::string> marriage;
    std::optional<std::vector<std::string>> hobbies;
    std::optional<std::string> contact;

    bool operator==(const PartialBackground&) const = default;
};

struct PreferenceRecord {
    std::string user_id;
    std::vector<double> preference_vector;
    PartialBackground demographics;
    std::optional<std::string> narrative;

    bool operator==(const PreferenceRecord&) const = default;
};

void to_json(json& j, const PreferenceRecord& r);
void from_json(const json& j, PreferenceRecord& r);
std::vector<std::string> preference_record_violations(const PreferenceRecord& r);

/// An agent's business workflow. `sop_text` carries placeholders such as
/// {name} or {contact} instead of concrete user attributes.
struct AgentTask {
    std::string sop_id;
    std::string sop_text;
    std::string scenario_label;
    std::string system_message;

    bool operator==(const AgentTask&) const = default;
};

void to_json(json& j, const AgentTask& t);
void from_json(const json& j, AgentTask& t);

/// Empty SOP text, missing id, or concrete PII (emails, long digit runs).
std::vector<std::string> agent_task_violations(const AgentTask& task);

/// Fills SOP placeholders from the profile to produce the agent's system message.
AgentTask bind_task(const AgentTask& task, const StaticProfile& profile);

// ---------------------------------------------------------------------------
// Option lists

/// Field paths whose values must come from a closed option list.
const std::vector<std::string>& categorical_fields();

/// Closed value lists per categorical field path, loaded from a versioned file:
///   {"version": "...", "fields": {"expression_style.verbosity": ["concise", ...], ...}}
struct OptionLists {
    std::string version;
    std::map<std::string, std::vector<std::string>> fields;

    static OptionLists load(const std::filesystem::path& path);
    static OptionLists from_json(const json& j);

    const std::vector<std::string>* find(std::string_view field_path) const;
    bool allows(std::string_view field_path, std::string_view value) const;
    /// Throws ConfigError unless every categorical field has a non-empty list.
    void require_complete() const;
};

bool is_valid_mbti(std::string_view code);

// ---------------------------------------------------------------------------
// Validation

struct Violation {
    std::string field_path;
    std::string violation;

    bool operator==(const Violation&) const = default;
};

using ValidationReport = std::vector<Violation>;

/// Every invariant violation in the profile, in schema order. Never throws.
ValidationReport validate_static_profile(const StaticProfile& profile, const OptionLists& options);

// ---------------------------------------------------------------------------
// Generation

inline constexpr std::array<std::string_view, 4> kProfileDimensions = {"background", "personality",
                                                                       "expression_style", "life_scenarios"};

struct GenerationOptions {
    int max_retries = 3;  ///< per dimension, on top of the first attempt
    ChatParams params;
};

/// One backend call per dimension, each with its own template
/// (`profile/<dimension>`). Output is parsed, overlaid with the seed's
/// demographics, and checked against the option lists; invalid output is
/// retried. Throws SchemaError or BackendError naming the dimension.
StaticProfile generate_static_profile(const PreferenceRecord& seed, ChatBackend& backend, const OptionLists& options,
                                      const TemplateStore& templates, const GenerationOptions& gen = {});

/// Generates the scenario memory for one (profile, task) pair. The target
/// list stays empty until the first simulated turn; state starts neutral.
DynamicProfile init_dynamic_profile(const StaticProfile& profile, const AgentTask& task, ChatBackend& backend,
                                    const TemplateStore& templates, const GenerationOptions& gen = {});

/// True when the memory shares at least one content word (or CJK bigram)
/// with the SOP's scenario label or text.
bool references_sop(std::string_view memory, const AgentTask& task);

// ---------------------------------------------------------------------------
// Pool operations

/// Canonical form used for duplicate detection: key-sorted compact JSON with
/// string values trimmed and whitespace runs collapsed.
std::string canonical_preference_key(const PreferenceRecord& r);

/// Removes duplicates, keeping first occurrences in order.
std::vector<PreferenceRecord> dedup_pool(std::span<const PreferenceRecord> records);

struct RankedProfile {
    std::size_t pool_index = 0;
    int score = 0;
    StaticProfile profile;
};

/// Concatenated text fields used for keyword matching.
std::string profile_search_text(const StaticProfile& profile);

/// Distinct-keyword hit count (case-insensitive substring).
int keyword_score(std::string_view search_text, std::span<const std::string> keywords);

/// Top min(k, |pool|) profiles by keyword score, ties in pool order.
/// Throws EmptyPool on an empty pool.
std::vector<RankedProfile> select_profiles_by_keywords(std::span<const StaticProfile> pool,
                                                       std::span<const std::string> keywords, std::size_t k);

struct DistributionReport {
    std::size_t pool_size = 0;
    /// field path -> value -> count. Ages are bucketed by decade ("30-39").
    std::map<std::string, std::map<std::string, std::size_t>> histograms;
    /// (education, occupation, income_tier) -> count
    std::map<std::tuple<std::string, std::string, std::string>, std::size_t> cross_table;
};

DistributionReport pool_statistics(std::span<const StaticProfile> pool);
json to_json(const DistributionReport& report);
std::string render_text(const DistributionReport& report);

// ---------------------------------------------------------------------------
// Files

std::vector<StaticProfile> read_profile_pool(const std::filesystem::path& path);
void write_profile_pool(const std::filesystem::path& path, std::span<const StaticProfile> pool);
std::vector<AgentTask> read_tasks(const std::filesystem::path& path);
std::vector<PreferenceRecord> read_preference_records(const std::filesystem::path& path);

}  // namespace usersim
