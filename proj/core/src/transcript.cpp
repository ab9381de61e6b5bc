#include <sstream>

#include "usersim/dialogue.hpp"
#include "usersim/errors.hpp"

namespace usersim {

namespace {

ordered_json task_json(const AgentTask& t) {
    ordered_json j;
    j["sop_id"] = t.sop_id;
    j["scenario_label"] = t.scenario_label;
    j["sop_text"] = t.sop_text;
    j["system_message"] = t.system_message;
    return j;
}

ordered_json turn_json(const Turn& t, const DynamicProfile& snapshot) {
    ordered_json j;
    j["record"] = "turn";
    j["index"] = t.index;
    j["agent_utterance"] = t.agent_utterance;
    j["raw_user_output"] = t.raw_user_output;
    j["rationale"] = t.rationale;
    j["reply"] = t.reply;
    j["envelope"] = t.envelope ? envelope_to_json(*t.envelope) : ordered_json(nullptr);
    ordered_json diags = ordered_json::array();
    for (const auto& d : t.diagnostics) diags.push_back({{"kind", to_string(d.kind)}, {"detail", d.detail}});
    j["diagnostics"] = diags;
    j["parse_attempts"] = t.parse_attempts;
    j["user_seed"] = t.user_seed;
    j["prompt_hash"] = t.prompt_hash;
    j["snapshot"] = dynamic_profile_to_ordered_json(snapshot);
    j["payload"] = t.payload.to_json();
    ordered_json rollouts = ordered_json::array();
    for (const auto& r : t.rollouts) rollouts.push_back({{"index", r.index}, {"seed", r.seed}, {"raw_output", r.raw_output}});
    j["rollouts"] = rollouts;
    j["notes"] = t.notes;
    return j;
}

}  // namespace

std::vector<ordered_json> transcript_records(const Dialogue& d) {
    std::vector<ordered_json> out;
    ordered_json header;
    header["record"] = "header";
    header["dialogue_id"] = d.dialogue_id;
    header["terminated_by"] = to_string(d.terminated_by);
    header["error"] = d.error;
    header["turns"] = d.turns.size();
    header["limits"] = {{"max_turns", d.limits.max_turns},
                        {"max_parse_retries", d.limits.max_parse_retries},
                        {"rollouts_per_turn", d.limits.rollouts_per_turn}};
    header["backends"] = {{"agent", d.agent_backend}, {"user", d.user_backend}};
    header["task"] = task_json(d.task);
    header["static_profile"] = static_profile_to_ordered_json(d.static_profile);
    header["initial_dynamic_profile"] = dynamic_profile_to_ordered_json(d.initial_dynamic);
    out.push_back(std::move(header));
    for (std::size_t k = 0; k < d.turns.size(); ++k) out.push_back(turn_json(d.turns[k], d.snapshots.at(k)));
    return out;
}

std::string render_transcript(const Dialogue& d) {
    std::string out;
    for (const auto& record : transcript_records(d)) {
        out += record.dump();
        out.push_back('\n');
    }
    return out;
}

void write_transcript(const std::filesystem::path& path, const Dialogue& d) { write_file(path, render_transcript(d)); }

Dialogue dialogue_from_records(const std::vector<json>& records) {
    if (records.empty() || records.front().value("record", "") != "header") {
        throw Error("transcript does not start with a header record");
    }
    const auto& h = records.front();
    Dialogue d;
    d.dialogue_id = h.at("dialogue_id").get<std::string>();
    d.terminated_by = termination_from_string(h.at("terminated_by").get<std::string>());
    d.error = h.value("error", "");
    d.limits = h.at("limits").get<DialogueLimits>();
    d.agent_backend = h.at("backends").at("agent").get<std::string>();
    d.user_backend = h.at("backends").at("user").get<std::string>();
    d.task = h.at("task").get<AgentTask>();
    d.static_profile = h.at("static_profile").get<StaticProfile>();
    d.initial_dynamic = h.at("initial_dynamic_profile").get<DynamicProfile>();

    for (std::size_t i = 1; i < records.size(); ++i) {
        const auto& r = records[i];
        if (r.value("record", "") != "turn") throw Error("transcript record " + std::to_string(i + 1) + " is not a turn");
        Turn t;
        t.index = r.at("index").get<int>();
        t.agent_utterance = r.at("agent_utterance").get<std::string>();
        t.raw_user_output = r.at("raw_user_output").get<std::string>();
        t.rationale = r.at("rationale").get<std::string>();
        t.reply = r.at("reply").get<std::string>();
        if (!r.at("envelope").is_null()) t.envelope = envelope_from_json(r.at("envelope"));
        for (const auto& diag : r.at("diagnostics")) {
            t.diagnostics.push_back(
                {defect_kind_from_string(diag.at("kind").get<std::string>()), diag.at("detail").get<std::string>()});
        }
        t.parse_attempts = r.at("parse_attempts").get<int>();
        t.user_seed = r.at("user_seed").get<std::uint64_t>();
        t.prompt_hash = r.at("prompt_hash").get<std::string>();
        t.payload = PromptPayload::from_json(r.at("payload"));
        for (const auto& ro : r.at("rollouts")) {
            t.rollouts.push_back(
                {ro.at("index").get<int>(), ro.at("seed").get<std::uint64_t>(), ro.at("raw_output").get<std::string>()});
        }
        t.notes = r.at("notes").get<std::vector<std::string>>();
        d.snapshots.push_back(r.at("snapshot").get<DynamicProfile>());
        d.turns.push_back(std::move(t));
    }
    return d;
}

Dialogue read_transcript(const std::filesystem::path& path) {
    try {
        return dialogue_from_records(read_jsonl(path));
    } catch (const json::exception& e) {
        throw Error(path.string() + ": malformed transcript: " + e.what());
    }
}

}  // namespace usersim
