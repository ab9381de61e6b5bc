#pragma once
// The user-simulator turn grammar.
//
//   raw := ws "<think>" TEXT "</think>" ws "<answer>" JSON-OBJECT "</answer>" ws
//
// The answer object carries exactly these keys:
//   utterance         string (may be empty only when end_session is true)
//   state             {"trust","emotion","patience","participation"}: 0..4 or label
//   touched_concerns  array of strings
//   core_issues       array of strings
//   topic_management  string
//   planning          string
//   target_list       {"primary":[...], "minor":[...]}, primary non-empty
//   end_session       boolean
//
// Structural defects (tags) and field defects are reported separately: the
// reward engine zeroes a turn on the former and deducts per field on the latter.

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "usersim/state.hpp"
#include "usersim/target_list.hpp"
#include "usersim/util.hpp"

namespace usersim {

inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kAnswerOpen = "<answer>";
inline constexpr std::string_view kAnswerClose = "</answer>";

/// Envelope keys in grammar order.
const std::vector<std::string>& envelope_fields();

struct AnswerEnvelope {
    std::string utterance;
    StateValues state;
    std::vector<std::string> touched_concerns;
    std::vector<std::string> core_issues;
    std::string topic_management;
    std::string planning;
    TargetList target_list;
    bool end_session = false;

    bool operator==(const AnswerEnvelope&) const = default;
};

ordered_json envelope_to_json(const AnswerEnvelope& e);
AnswerEnvelope envelope_from_json(const json& j);

/// Renders a well-formed raw turn (used by scripted backends and fixtures).
std::string render_turn_output(std::string_view rationale, const AnswerEnvelope& envelope);

enum class DefectKind {
    missing_think,
    unclosed_think,
    unopened_think,
    duplicate_think,
    missing_answer,
    unclosed_answer,
    unopened_answer,
    duplicate_answer,
    misordered_tags,
    leading_garbage,
    garbage_between,
    trailing_garbage,
    invalid_json,
    missing_field,
    invalid_field,
};

std::string_view to_string(DefectKind kind);
DefectKind defect_kind_from_string(std::string_view text);

struct Diagnostic {
    DefectKind kind;
    std::string detail;

    /// Tag-level defect (as opposed to a missing or invalid envelope field).
    bool structural() const;
    bool operator==(const Diagnostic&) const = default;
};

struct ParseDiagnostics {
    std::vector<Diagnostic> defects;
    std::optional<std::string> rationale;    ///< when the think span itself is well formed
    std::optional<std::string> answer_body;  ///< when the answer span itself is well formed
    std::optional<json> answer_json;         ///< when the answer body is a JSON object
    std::vector<std::string> missing_fields; ///< missing or invalid envelope keys

    bool has_structural_defect() const;
};

struct ParsedTurn {
    std::string rationale;
    std::string answer_body;
    json answer_json;
    AnswerEnvelope envelope;
    std::string leading_ws;
    std::string between_ws;
    std::string trailing_ws;

    /// Reassembles the raw output from its spans.
    std::string reconstruct() const;
};

using TurnParse = std::variant<ParsedTurn, ParseDiagnostics>;

struct EnvelopeOptions {
    /// Legacy end-of-session marker recognized inside the utterance in
    /// addition to end_session=true. Empty disables it.
    std::string legacy_end_marker = "[END_SESSION]";
};

TurnParse parse_turn_output(std::string_view raw, const EnvelopeOptions& options = {});

inline bool parsed_ok(const TurnParse& p) { return std::holds_alternative<ParsedTurn>(p); }

/// Think span if one could be recovered.
std::optional<std::string> rationale_of(const TurnParse& p);

/// Spoken reply: the envelope utterance when parsed, otherwise a best-effort
/// recovery (answer JSON utterance, or the raw text with tags stripped).
std::string reply_of(const TurnParse& p, std::string_view raw);

json diagnostics_to_json(const ParseDiagnostics& d);

}  // namespace usersim
