#pragma once
// Judge-based evaluation of simulators.
//
// Session level: Role authenticity, Interaction performance, Goal progress.
// Turn level (trap probes): Robotic tone (lower is better), CoT
// effectiveness, Game-theoretic strategy, Persona fidelity, Thought-response
// consistency. One judge call per metric; each verdict must end with the
// line `SCORE: <integer 0-100>`.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "usersim/adversarial.hpp"
#include "usersim/backend.hpp"
#include "usersim/dialogue.hpp"
#include "usersim/templates.hpp"

namespace usersim {

inline constexpr std::array<std::string_view, 3> kSessionMetrics = {"role", "interaction", "goal"};
inline constexpr std::array<std::string_view, 5> kTurnMetrics = {"robotic", "cot", "strategy", "persona",
                                                                 "consistency"};

/// Metric weights for Total. Robotic enters Total as (100 - robotic) when
/// given a positive weight.
struct AggregationConfig {
    std::map<std::string, double> session_weights = {{"role", 1.0}, {"interaction", 1.0}, {"goal", 1.0}};
    std::map<std::string, double> turn_weights = {{"cot", 1.0}, {"strategy", 1.0}, {"persona", 1.0},
                                                  {"consistency", 1.0}};

    void validate() const;  ///< ConfigError on unknown metrics, negative or all-zero weights
    /// One-line description of both Total formulas, printed on every report.
    std::string caveat() const;
    bool operator==(const AggregationConfig&) const = default;
};

void to_json(json& j, const AggregationConfig& c);
void from_json(const json& j, AggregationConfig& c);

struct JudgeOptions {
    int max_retries = 2;
    ChatParams params{0.0, 512, std::nullopt};
    AggregationConfig aggregation;
};

/// Integer 0..100 from a final `SCORE:` line, else nullopt.
std::optional<double> parse_metric_score(std::string_view verdict);

struct MetricVerdict {
    std::string metric;
    std::string prompt_hash;
    std::vector<std::string> raw;  ///< every judge reply, in attempt order
    double value = 0.0;
};

struct SessionScorecard {
    std::string run_id;
    std::string item_id;
    double role = 0.0;
    double interaction = 0.0;
    double goal = 0.0;
    double total = 0.0;
    std::vector<MetricVerdict> verdicts;

    std::optional<double> metric(std::string_view name) const;
};

struct TurnScorecard {
    std::string run_id;
    std::string item_id;
    std::string trap_type;
    std::optional<double> robotic;
    std::optional<double> cot;
    std::optional<double> strategy;
    std::optional<double> persona;
    std::optional<double> consistency;
    std::optional<double> total;  ///< absent when a weighted metric is absent
    std::vector<MetricVerdict> verdicts;

    std::optional<double> metric(std::string_view name) const;
};

void to_json(json& j, const SessionScorecard& c);
void from_json(const json& j, SessionScorecard& c);
void to_json(json& j, const TurnScorecard& c);
void from_json(const json& j, TurnScorecard& c);

double session_total(const SessionScorecard& c, const AggregationConfig& cfg);
std::optional<double> turn_total(const TurnScorecard& c, const AggregationConfig& cfg);

/// "AGENT: ..." / "USER: ..." lines.
std::string render_dialogue_text(const Dialogue& d);

/// Three judge calls (role, interaction, goal). Throws JudgeFormatError
/// naming the metric when a verdict stays unparseable.
SessionScorecard judge_session(const Dialogue& d, ChatBackend& judge, const TemplateStore& templates,
                               const JudgeOptions& options = {}, std::string run_id = {});

/// Up to five judge calls. CoT and consistency need a rationale; without
/// one they are absent and no call is made for them.
TurnScorecard judge_turn(const TrapResponse& response, ChatBackend& judge, const TemplateStore& templates,
                         const JudgeOptions& options = {}, std::string run_id = {});

/// Recomputes totals from stored verdicts (raw replies) alone.
SessionScorecard rescore_session(const SessionScorecard& c, const AggregationConfig& cfg);
TurnScorecard rescore_turn(const TurnScorecard& c, const AggregationConfig& cfg);

// ---------------------------------------------------------------------------
// Aggregation

struct AggregateRow {
    std::string group;
    std::size_t count = 0;
    std::map<std::string, std::optional<double>> means;  ///< absent when no card has the metric
    std::map<std::string, std::size_t> present;
};

struct AggregateTable {
    std::string level;  ///< "session" or "turn"
    std::vector<std::string> metrics;
    std::vector<AggregateRow> rows;
    std::string caveat;
};

/// group_by: "none" or "run" for sessions; additionally "trap_type" for turns.
/// Means skip absent values. Throws std::invalid_argument on empty input.
AggregateTable aggregate(std::span<const SessionScorecard> cards, std::string_view group_by,
                         const AggregationConfig& cfg = {});
AggregateTable aggregate(std::span<const TurnScorecard> cards, std::string_view group_by,
                         const AggregationConfig& cfg = {});

std::string render_table(const AggregateTable& table);
json to_json(const AggregateTable& table);

// ---------------------------------------------------------------------------
// Pairwise comparison

enum class Outcome { win, tie, loss };  ///< from system A's point of view

std::string_view to_string(Outcome o);

struct RunItems {
    std::string run_id;
    std::map<std::string, std::string> items;  ///< item id -> rendered output
};

struct PairwiseOptions {
    std::uint64_t seed = 0;
    bool randomize_positions = true;
    int max_retries = 2;
    ChatParams params{0.0, 256, std::nullopt};
    std::map<std::string, std::string> context;  ///< optional per-item context shown to raters
};

struct ComparisonReport {
    std::string run_a;
    std::string run_b;
    std::vector<std::string> item_ids;
    std::vector<std::vector<Outcome>> rater_outcomes;  ///< [rater][item]
    std::vector<Outcome> outcomes;                     ///< per-item majority
    std::vector<bool> a_first;                         ///< position of A per item
    std::size_t wins = 0;
    std::size_t ties = 0;
    std::size_t losses = 0;
    std::optional<double> kappa;
    std::string kappa_kind;  ///< "cohen" or "fleiss"

    /// "W/T/L" counts, e.g. "86/22/12".
    std::string wtl() const;
};

/// `VERDICT: A`, `VERDICT: B` or `VERDICT: TIE` on the final line.
std::optional<std::string> parse_pairwise_verdict(std::string_view text);

/// Per-item majority; a split without a strict majority is a tie.
Outcome majority_outcome(std::span<const Outcome> votes);

/// Cohen's kappa for two raters over labels. 1.0 when agreement is perfect.
double cohen_kappa(std::span<const Outcome> a, std::span<const Outcome> b);
/// Fleiss' kappa over [rater][item] labels. 1.0 when agreement is perfect.
double fleiss_kappa(const std::vector<std::vector<Outcome>>& ratings);

/// Blind A/B judging with one backend per rater. Item sets must match
/// (ItemMismatch). Positions are drawn from the "judge-position" substream.
ComparisonReport compare_pairwise(const RunItems& a, const RunItems& b, std::span<ChatBackend* const> raters,
                                  const TemplateStore& templates, const PairwiseOptions& options = {});

std::string render_comparison(const ComparisonReport& report);
json to_json(const ComparisonReport& report);

}  // namespace usersim
