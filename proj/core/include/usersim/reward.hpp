#pragma once
// Per-turn rewards for RL post-training.
//
//   rule     format and field checks on the raw simulator output, in [0,1]
//   rubric   mean of judge-scored rubrics over (rationale, reply), in [0,1]
//   composite  weighted mean of the two, forced to 0 when rule is 0
//
// Group-relative advantages normalize composite rewards across rollouts
// that share a prompt; the RL batch file carries those groups for an
// external trainer.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "usersim/backend.hpp"
#include "usersim/dialogue.hpp"
#include "usersim/envelope.hpp"
#include "usersim/templates.hpp"

namespace usersim {

struct RuleRewardConfig {
    int min_think_chars = 200;
    double length_penalty_slope = 1.0;  ///< fraction lost when the think span is empty
    std::vector<std::string> required_fields = envelope_fields();  ///< dotted paths into the answer object
    double per_missing_field_deduction = 0.1;

    void validate() const;  ///< ConfigError on negative values
    bool operator==(const RuleRewardConfig&) const = default;
};

void to_json(json& j, const RuleRewardConfig& c);
void from_json(const json& j, RuleRewardConfig& c);

/// Think length in code points after trimming surrounding whitespace.
std::size_t think_length(std::string_view rationale);

/// Required fields absent (or invalid, for envelope keys) in a parse result.
std::size_t missing_required_fields(const TurnParse& parsed, const RuleRewardConfig& cfg);

/// 0 on any tag-level defect; otherwise 1 minus the length penalty and the
/// per-field deductions, clipped to [0,1].
double rule_reward(const TurnParse& parsed, const RuleRewardConfig& cfg);

// ---------------------------------------------------------------------------
// Rubrics

/// Judge verdict range. Verdicts are mapped to [0,1] by (x - lo) / (hi - lo).
struct RubricScale {
    double lo = 1.0;
    double hi = 5.0;
    bool integral = true;

    double normalize(double verdict) const;
    bool accepts(double verdict) const;
    bool operator==(const RubricScale&) const = default;
};

struct RubricSpec {
    std::string name;
    std::string template_name;  ///< e.g. "rubric/reasoning_quality"
    RubricScale scale;

    bool operator==(const RubricSpec&) const = default;
};

struct RubricSet {
    std::vector<RubricSpec> rubrics;

    /// response_consistency, reasoning_quality, alignment, strategic_capability
    static RubricSet defaults();
    void validate() const;  ///< ConfigError if empty, unnamed, duplicated, or hi <= lo
    bool operator==(const RubricSet&) const = default;
};

void to_json(json& j, const RubricSet& s);
void from_json(const json& j, RubricSet& s);

/// Extracts the number from a final line `SCORE: <n>`. Anything after that
/// line, or a missing line, yields nullopt.
std::optional<double> parse_score_line(std::string_view verdict);

/// Mean that does not depend on the order of `scores` (summed in sorted order).
double rubric_mean(std::span<const double> scores);

struct RubricCall {
    std::string rubric;
    std::string prompt_hash;
    std::vector<std::string> raw_verdicts;  ///< one per attempt
    std::optional<double> verdict;
    double score = 0.0;
    bool flagged = false;
};

struct RubricResult {
    double r_rubric = 0.0;
    std::map<std::string, double> scores;
    std::vector<std::string> flagged;
    std::vector<RubricCall> calls;
};

struct RubricInputs {
    std::string rationale;
    std::string reply;
    std::string profile;
    std::string context;
};

struct RubricOptions {
    int max_retries = 2;  ///< extra attempts when a verdict is unparseable
    ChatParams params{0.0, 256, std::nullopt};
};

/// One judge call per rubric (plus retries). An unparseable verdict scores
/// that rubric 0 and flags it. BackendError propagates.
RubricResult rubric_reward(const RubricInputs& inputs, const RubricSet& rubrics, ChatBackend& judge,
                           const TemplateStore& templates, const RubricOptions& options = {});

// ---------------------------------------------------------------------------
// Composite and advantages

struct RewardWeights {
    double w_rule = 0.5;
    double w_rubric = 0.5;

    void validate() const;  ///< WeightError unless both >= 0 and they sum to 1
    bool operator==(const RewardWeights&) const = default;
};

double composite_reward(double r_rule, double r_rubric, const RewardWeights& weights);

inline constexpr double kAdvantageEps = 1e-8;

/// (r_i - mean) / (population std + eps), in input order. GroupTooSmall for
/// fewer than two rewards.
std::vector<double> grpo_advantages(std::span<const double> group_rewards, double eps = kAdvantageEps);

// ---------------------------------------------------------------------------
// Records and scoring

struct RewardRecord {
    std::string dialogue_id;
    int turn = 0;
    int rollout = 0;
    std::string group_key;    ///< rollouts sharing a prompt share a key
    std::string prompt_hash;  ///< hash of the PromptPayload
    std::string output;       ///< raw simulator output being scored
    double r_rule = 0.0;
    std::map<std::string, double> rubric_scores;
    std::vector<std::string> flagged_rubrics;
    bool rubric_skipped = false;  ///< judge not consulted because r_rule was 0
    double r_rubric = 0.0;
    double composite = 0.0;
    std::optional<double> advantage;
    json audit = json::array();  ///< judge prompt hashes and raw verdicts
};

void to_json(json& j, const RewardRecord& r);
void from_json(const json& j, RewardRecord& r);

std::string default_group_key(std::string_view dialogue_id, int turn);

struct ScoringConfig {
    RuleRewardConfig rule;
    RubricSet rubrics = RubricSet::defaults();
    RewardWeights weights;
    int judge_retries = 2;
    int context_turns = 2;  ///< prior turns shown to rubric judges
    ChatParams judge_params{0.0, 256, std::nullopt};

    bool operator==(const ScoringConfig&) const = default;
};

void to_json(json& j, const ScoringConfig& c);
void from_json(const json& j, ScoringConfig& c);

/// Judge context for a turn: the last `prior_turns` exchanges plus the
/// agent line being answered.
std::string rubric_context(const Dialogue& dialogue, std::size_t turn_position, int prior_turns);

/// One record per turn and rollout, in (turn, rollout) order.
std::vector<RewardRecord> score_dialogue(const Dialogue& dialogue, const ScoringConfig& config, ChatBackend& judge,
                                         const TemplateStore& templates, const EnvelopeOptions& envelope = {});

/// Groups records by group_key and fills `advantage` on every member.
/// MixedPromptGroup if a group mixes prompt hashes; GroupTooSmall for singletons.
void assign_advantages(std::vector<RewardRecord>& records, double eps = kAdvantageEps);

/// One batch record per group, sorted by key; members sorted by
/// (dialogue_id, turn, rollout).
std::vector<json> build_rl_batch(std::span<const RewardRecord> records, double eps = kAdvantageEps);
void export_rl_batch(const std::filesystem::path& path, std::span<const RewardRecord> records,
                     double eps = kAdvantageEps);

}  // namespace usersim
