#include "usersim/envelope.hpp"

#include <algorithm>
#include <array>

#include "usersim/errors.hpp"

namespace usersim {

const std::vector<std::string>& envelope_fields() {
    static const std::vector<std::string> fields = {"utterance",        "state",    "touched_concerns",
                                                    "core_issues",      "topic_management", "planning",
                                                    "target_list",      "end_session"};
    return fields;
}

ordered_json envelope_to_json(const AnswerEnvelope& e) {
    ordered_json j;
    j["utterance"] = e.utterance;
    j["state"] = state_to_json(e.state);
    j["touched_concerns"] = e.touched_concerns;
    j["core_issues"] = e.core_issues;
    j["topic_management"] = e.topic_management;
    j["planning"] = e.planning;
    j["target_list"] = {{"primary", e.target_list.primary_concerns}, {"minor", e.target_list.minor_concerns}};
    j["end_session"] = e.end_session;
    return j;
}

AnswerEnvelope envelope_from_json(const json& j) {
    AnswerEnvelope e;
    e.utterance = j.at("utterance").get<std::string>();
    e.state = parse_state_json(j.at("state"));
    e.touched_concerns = j.at("touched_concerns").get<std::vector<std::string>>();
    e.core_issues = j.at("core_issues").get<std::vector<std::string>>();
    e.topic_management = j.at("topic_management").get<std::string>();
    e.planning = j.at("planning").get<std::string>();
    e.target_list = j.at("target_list").get<TargetList>();
    e.end_session = j.at("end_session").get<bool>();
    return e;
}

std::string render_turn_output(std::string_view rationale, const AnswerEnvelope& envelope) {
    std::string out;
    out += kThinkOpen;
    out += rationale;
    out += kThinkClose;
    out += kAnswerOpen;
    out += envelope_to_json(envelope).dump();
    out += kAnswerClose;
    return out;
}

namespace {

constexpr std::array<std::pair<DefectKind, std::string_view>, 15> kDefectNames = {{
    {DefectKind::missing_think, "MissingThink"},
    {DefectKind::unclosed_think, "UnclosedThink"},
    {DefectKind::unopened_think, "UnopenedThink"},
    {DefectKind::duplicate_think, "DuplicateThink"},
    {DefectKind::missing_answer, "MissingAnswer"},
    {DefectKind::unclosed_answer, "UnclosedAnswer"},
    {DefectKind::unopened_answer, "UnopenedAnswer"},
    {DefectKind::duplicate_answer, "DuplicateAnswer"},
    {DefectKind::misordered_tags, "MisorderedTags"},
    {DefectKind::leading_garbage, "LeadingGarbage"},
    {DefectKind::garbage_between, "GarbageBetween"},
    {DefectKind::trailing_garbage, "TrailingGarbage"},
    {DefectKind::invalid_json, "InvalidJson"},
    {DefectKind::missing_field, "MissingField"},
    {DefectKind::invalid_field, "InvalidField"},
}};

std::size_t count_of(std::string_view haystack, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + 1)) ++n;
    return n;
}

bool all_space(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

/// Adds at most one diagnostic for a tag pair based on its open/close counts.
void check_pair(std::size_t opens, std::size_t closes, DefectKind missing, DefectKind unclosed, DefectKind unopened,
                DefectKind duplicate, const char* name, std::vector<Diagnostic>& out) {
    if (opens > 1 || closes > 1) {
        out.push_back({duplicate, std::string("more than one ") + name + " block"});
    } else if (opens == 0 && closes == 0) {
        out.push_back({missing, std::string("no ") + name + " block"});
    } else if (opens == 1 && closes == 0) {
        out.push_back({unclosed, std::string(name) + " block is never closed"});
    } else if (opens == 0 && closes == 1) {
        out.push_back({unopened, std::string(name) + " block is closed but never opened"});
    }
}

bool is_string_array(const json& v) {
    return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); });
}

/// Validates one envelope key; returns an error description or empty.
std::string check_field(const std::string& key, const json& v) {
    if (key == "utterance" || key == "topic_management" || key == "planning") {
        return v.is_string() ? "" : "expected a string";
    }
    if (key == "touched_concerns" || key == "core_issues") {
        return is_string_array(v) ? "" : "expected an array of strings";
    }
    if (key == "end_session") return v.is_boolean() ? "" : "expected a boolean";
    if (key == "state") {
        try {
            parse_state_json(v);
        } catch (const ParseError& e) {
            return e.what();
        }
        return "";
    }
    if (key == "target_list") {
        if (!v.is_object() || !v.contains("primary") || !v.contains("minor") || !is_string_array(v.at("primary")) ||
            !is_string_array(v.at("minor"))) {
            return "expected {\"primary\":[...],\"minor\":[...]}";
        }
        const auto problems = target_list_violations(v.get<TargetList>());
        return problems.empty() ? "" : problems.front();
    }
    return "";
}

}  // namespace

std::string_view to_string(DefectKind kind) {
    for (const auto& [k, name] : kDefectNames) {
        if (k == kind) return name;
    }
    return "Unknown";
}

DefectKind defect_kind_from_string(std::string_view text) {
    for (const auto& [k, name] : kDefectNames) {
        if (name == text) return k;
    }
    throw Error("unknown defect kind '" + std::string(text) + "'");
}

bool Diagnostic::structural() const { return kind != DefectKind::missing_field && kind != DefectKind::invalid_field; }

bool ParseDiagnostics::has_structural_defect() const {
    return std::any_of(defects.begin(), defects.end(), [](const Diagnostic& d) { return d.structural(); });
}

std::string ParsedTurn::reconstruct() const {
    std::string out = leading_ws;
    out += kThinkOpen;
    out += rationale;
    out += kThinkClose;
    out += between_ws;
    out += kAnswerOpen;
    out += answer_body;
    out += kAnswerClose;
    out += trailing_ws;
    return out;
}

TurnParse parse_turn_output(std::string_view raw, const EnvelopeOptions& options) {
    ParseDiagnostics diag;
    const auto think_opens = count_of(raw, kThinkOpen);
    const auto think_closes = count_of(raw, kThinkClose);
    const auto answer_opens = count_of(raw, kAnswerOpen);
    const auto answer_closes = count_of(raw, kAnswerClose);

    check_pair(think_opens, think_closes, DefectKind::missing_think, DefectKind::unclosed_think,
               DefectKind::unopened_think, DefectKind::duplicate_think, "<think>", diag.defects);
    check_pair(answer_opens, answer_closes, DefectKind::missing_answer, DefectKind::unclosed_answer,
               DefectKind::unopened_answer, DefectKind::duplicate_answer, "<answer>", diag.defects);

    const bool think_pair = think_opens == 1 && think_closes == 1;
    const bool answer_pair = answer_opens == 1 && answer_closes == 1;
    const auto to = raw.find(kThinkOpen);
    const auto tc = raw.find(kThinkClose);
    const auto ao = raw.find(kAnswerOpen);
    const auto ac = raw.find(kAnswerClose);

    if (think_pair && to < tc) diag.rationale = std::string(raw.substr(to + kThinkOpen.size(), tc - to - kThinkOpen.size()));
    if (answer_pair && ao < ac) {
        diag.answer_body = std::string(raw.substr(ao + kAnswerOpen.size(), ac - ao - kAnswerOpen.size()));
    }

    ParsedTurn parsed;
    if (think_pair && answer_pair) {
        if (!(to < tc && tc < ao && ao < ac)) {
            diag.defects.push_back({DefectKind::misordered_tags, "expected <think>...</think> then <answer>...</answer>"});
        } else {
            parsed.leading_ws = std::string(raw.substr(0, to));
            parsed.between_ws = std::string(raw.substr(tc + kThinkClose.size(), ao - tc - kThinkClose.size()));
            parsed.trailing_ws = std::string(raw.substr(ac + kAnswerClose.size()));
            if (!all_space(parsed.leading_ws)) diag.defects.push_back({DefectKind::leading_garbage, "text before <think>"});
            if (!all_space(parsed.between_ws)) {
                diag.defects.push_back({DefectKind::garbage_between, "text between </think> and <answer>"});
            }
            if (!all_space(parsed.trailing_ws)) {
                diag.defects.push_back({DefectKind::trailing_garbage, "text after </answer>"});
            }
        }
    }

    if (diag.answer_body) {
        json body;
        bool ok = true;
        try {
            body = json::parse(*diag.answer_body);
        } catch (const json::parse_error&) {
            ok = false;
        }
        if (!ok || !body.is_object()) {
            diag.defects.push_back({DefectKind::invalid_json, "answer body is not a JSON object"});
            diag.missing_fields = envelope_fields();
        } else {
            if (!options.legacy_end_marker.empty() && body.contains("utterance") && body["utterance"].is_string()) {
                auto utterance = body["utterance"].get<std::string>();
                if (const auto pos = utterance.find(options.legacy_end_marker); pos != std::string::npos) {
                    utterance.erase(pos, options.legacy_end_marker.size());
                    body["utterance"] = trim(utterance);
                    body["end_session"] = true;
                }
            }
            for (const auto& key : envelope_fields()) {
                auto it = body.find(key);
                if (it == body.end()) {
                    diag.defects.push_back({DefectKind::missing_field, key});
                    diag.missing_fields.push_back(key);
                } else if (auto problem = check_field(key, *it); !problem.empty()) {
                    diag.defects.push_back({DefectKind::invalid_field, key + ": " + problem});
                    diag.missing_fields.push_back(key);
                }
            }
            const bool utterance_ok = std::find(diag.missing_fields.begin(), diag.missing_fields.end(), "utterance") ==
                                      diag.missing_fields.end();
            const bool end_ok = std::find(diag.missing_fields.begin(), diag.missing_fields.end(), "end_session") ==
                                diag.missing_fields.end();
            if (utterance_ok && end_ok && trim(body["utterance"].get<std::string>()).empty() &&
                !body["end_session"].get<bool>()) {
                diag.defects.push_back({DefectKind::invalid_field, "utterance: empty while end_session is false"});
                diag.missing_fields.push_back("utterance");
            }
            diag.answer_json = body;
        }
    }

    if (!diag.defects.empty()) return diag;

    parsed.rationale = std::move(*diag.rationale);
    parsed.answer_body = std::move(*diag.answer_body);
    parsed.answer_json = std::move(*diag.answer_json);
    parsed.envelope = envelope_from_json(parsed.answer_json);
    return parsed;
}

std::optional<std::string> rationale_of(const TurnParse& p) {
    if (const auto* ok = std::get_if<ParsedTurn>(&p)) return ok->rationale;
    return std::get<ParseDiagnostics>(p).rationale;
}

std::string reply_of(const TurnParse& p, std::string_view raw) {
    if (const auto* ok = std::get_if<ParsedTurn>(&p)) return ok->envelope.utterance;
    const auto& d = std::get<ParseDiagnostics>(p);
    if (d.answer_json && d.answer_json->contains("utterance") && (*d.answer_json)["utterance"].is_string()) {
        return (*d.answer_json)["utterance"].get<std::string>();
    }
    std::string text(raw);
    if (d.rationale) {
        const auto full = std::string(kThinkOpen) + *d.rationale + std::string(kThinkClose);
        if (auto pos = text.find(full); pos != std::string::npos) text.erase(pos, full.size());
    }
    for (auto tag : {kThinkOpen, kThinkClose, kAnswerOpen, kAnswerClose}) {
        for (auto pos = text.find(tag); pos != std::string::npos; pos = text.find(tag)) text.erase(pos, tag.size());
    }
    return trim(text);
}

json diagnostics_to_json(const ParseDiagnostics& d) {
    json out = json::array();
    for (const auto& defect : d.defects) out.push_back({{"kind", to_string(defect.kind)}, {"detail", defect.detail}});
    return out;
}

}  // namespace usersim
