#include "usersim/dialogue.hpp"

#include <algorithm>
#include <stdexcept>

#include "usersim/errors.hpp"
#include "usersim/rng.hpp"

namespace usersim {

std::string_view to_string(Speaker s) { return s == Speaker::agent ? "agent" : "user"; }

Speaker speaker_from_string(std::string_view text) {
    if (text == "agent") return Speaker::agent;
    if (text == "user") return Speaker::user;
    throw Error("unknown speaker '" + std::string(text) + "'");
}

ordered_json PromptPayload::to_json() const {
    ordered_json ctx = ordered_json::array();
    for (const auto& u : context) ctx.push_back({{"speaker", usersim::to_string(u.speaker)}, {"text", u.text}});
    ordered_json j;
    j["instruction"] = instruction;
    j["static_profile"] = static_profile;
    j["dynamic_profile"] = dynamic_profile;
    j["context"] = ctx;
    return j;
}

PromptPayload PromptPayload::from_json(const json& j) {
    PromptPayload p;
    p.instruction = j.at("instruction").get<std::string>();
    p.static_profile = j.at("static_profile").get<std::string>();
    p.dynamic_profile = j.at("dynamic_profile").get<std::string>();
    for (const auto& u : j.at("context")) {
        p.context.push_back({speaker_from_string(u.at("speaker").get<std::string>()), u.at("text").get<std::string>()});
    }
    return p;
}

std::string PromptPayload::canonical_bytes() const { return canonical_dump(json::parse(to_json().dump())); }

std::string PromptPayload::hash() const { return sha256_hex(canonical_bytes()); }

std::vector<Message> PromptPayload::to_messages() const {
    std::vector<Message> out;
    out.push_back({Role::system, instruction + "\n\n# Static profile\n" + static_profile +
                                     "\n\n# Dynamic profile (current)\n" + dynamic_profile});
    for (const auto& u : context) out.push_back({u.speaker == Speaker::agent ? Role::user : Role::assistant, u.text});
    return out;
}

void validate_context(std::span<const Utterance> context) {
    if (context.empty()) throw ContextOrderError("context is empty; the agent must speak first");
    for (std::size_t i = 0; i < context.size(); ++i) {
        const auto expected = i % 2 == 0 ? Speaker::agent : Speaker::user;
        if (context[i].speaker != expected) {
            throw ContextOrderError("context position " + std::to_string(i) + " is " +
                                    std::string(to_string(context[i].speaker)) + ", expected " +
                                    std::string(to_string(expected)));
        }
    }
    if (context.back().speaker != Speaker::agent) throw ContextOrderError("context must end with an agent line");
}

PromptPayload build_user_prompt(std::string_view instruction, const StaticProfile& sp, const DynamicProfile& dp,
                                std::span<const Utterance> context) {
    validate_context(context);
    PromptPayload p;
    p.instruction = std::string(instruction);
    p.static_profile = static_profile_to_ordered_json(sp).dump(2);
    p.dynamic_profile = dynamic_profile_to_ordered_json(dp).dump(2);
    p.context.assign(context.begin(), context.end());
    return p;
}

DynamicProfile next_snapshot(const DynamicProfile& previous, const AnswerEnvelope& envelope,
                             std::vector<std::string>* notes) {
    DynamicProfile next = previous;
    const auto wanted = delta_between(previous.state, envelope.state);
    const auto allowed = clamp_delta(wanted);
    if (notes != nullptr) {
        for (auto axis : kAxes) {
            if (wanted[axis] != allowed[axis]) {
                notes->push_back(std::string(axis_name(axis)) + " moved by " + std::to_string(wanted[axis]) +
                                 ", clamped to " + std::to_string(allowed[axis]));
            }
        }
    }
    next.state = apply_state_update(previous.state, allowed);
    if (previous.target_list.empty()) next.target_list = envelope.target_list;
    next.decision_policy.touched_concerns = envelope.touched_concerns;
    next.decision_policy.core_issues = envelope.core_issues;
    next.decision_policy.topic_management = envelope.topic_management;
    next.decision_policy.current_response = envelope.utterance;
    next.decision_policy.planning = envelope.planning;
    next.decision_policy.end_session = envelope.end_session;
    return next;
}

std::string_view to_string(Termination t) {
    switch (t) {
        case Termination::end_token: return "end_token";
        case Termination::turn_limit: return "turn_limit";
        case Termination::error: return "error";
    }
    return "error";
}

Termination termination_from_string(std::string_view text) {
    if (text == "end_token") return Termination::end_token;
    if (text == "turn_limit") return Termination::turn_limit;
    if (text == "error") return Termination::error;
    throw Error("unknown termination '" + std::string(text) + "'");
}

void to_json(json& j, const DialogueLimits& l) {
    j = json{{"max_turns", l.max_turns},
             {"max_parse_retries", l.max_parse_retries},
             {"rollouts_per_turn", l.rollouts_per_turn}};
}

void from_json(const json& j, DialogueLimits& l) {
    l = DialogueLimits{};
    l.max_turns = j.value("max_turns", l.max_turns);
    l.max_parse_retries = j.value("max_parse_retries", l.max_parse_retries);
    l.rollouts_per_turn = j.value("rollouts_per_turn", l.rollouts_per_turn);
    if (l.max_turns < 1) throw ConfigError("limits.max_turns must be at least 1");
    if (l.max_parse_retries < 0) throw ConfigError("limits.max_parse_retries must be non-negative");
    if (l.rollouts_per_turn < 1) throw ConfigError("limits.rollouts_per_turn must be at least 1");
}

std::vector<Message> agent_messages(const AgentTask& task, std::span<const Turn> prior_turns) {
    std::vector<Message> out;
    out.push_back({Role::system, task.system_message.empty() ? task.sop_text : task.system_message});
    for (const auto& t : prior_turns) {
        out.push_back({Role::assistant, t.agent_utterance});
        out.push_back({Role::user, t.reply});
    }
    return out;
}

std::vector<Utterance> user_context(std::span<const Turn> prior_turns, std::string_view agent_line) {
    std::vector<Utterance> out;
    for (const auto& t : prior_turns) {
        out.push_back({Speaker::agent, t.agent_utterance});
        out.push_back({Speaker::user, t.reply});
    }
    out.push_back({Speaker::agent, std::string(agent_line)});
    return out;
}

namespace {

std::uint64_t user_seed(std::uint64_t seed, const std::string& dialogue_id, int turn, int rollout, int attempt) {
    const auto index = (static_cast<std::uint64_t>(turn) << 20) | (static_cast<std::uint64_t>(rollout) << 8) |
                       static_cast<std::uint64_t>(attempt);
    return substream_seed(seed, "user/" + dialogue_id, index);
}

}  // namespace

Dialogue run_dialogue(ChatBackend& agent, ChatBackend& user, const AgentTask& task, const StaticProfile& sp,
                      const DynamicProfile& dp0, std::string dialogue_id, const DialogueOptions& options) {
    const auto& limits = options.limits;
    if (limits.max_turns < 1) throw std::invalid_argument("run_dialogue: max_turns must be at least 1");

    Dialogue d;
    d.dialogue_id = std::move(dialogue_id);
    d.task = task;
    d.static_profile = sp;
    d.initial_dynamic = dp0;
    d.limits = limits;
    d.agent_backend = agent.identifier();
    d.user_backend = user.identifier();
    d.terminated_by = Termination::turn_limit;

    DynamicProfile current = dp0;
    for (int j = 1; j <= limits.max_turns; ++j) {
        Turn turn;
        turn.index = j;
        try {
            turn.agent_utterance = agent.chat(agent_messages(task, d.turns), options.agent_params).text;

            const auto context = user_context(d.turns, turn.agent_utterance);
            turn.payload = build_user_prompt(options.instruction, sp, current, context);
            turn.prompt_hash = turn.payload.hash();
            const auto messages = turn.payload.to_messages();

            std::optional<TurnParse> parse;
            for (int attempt = 0; attempt <= limits.max_parse_retries; ++attempt) {
                auto params = options.user_params;
                params.seed = user_seed(options.seed, d.dialogue_id, j, 0, attempt);
                turn.user_seed = *params.seed;
                turn.raw_user_output = user.chat(messages, params).text;
                turn.parse_attempts = attempt + 1;
                parse = parse_turn_output(turn.raw_user_output, options.envelope);
                if (parsed_ok(*parse)) break;
            }
            for (int r = 1; r < limits.rollouts_per_turn; ++r) {
                auto params = options.user_params;
                params.seed = user_seed(options.seed, d.dialogue_id, j, r, 0);
                turn.rollouts.push_back(Rollout{r, *params.seed, user.chat(messages, params).text});
            }

            turn.rationale = rationale_of(*parse).value_or("");
            turn.reply = reply_of(*parse, turn.raw_user_output);
            turn.timestamp = std::chrono::system_clock::now();
            d.snapshots.push_back(current);
            if (const auto* ok = std::get_if<ParsedTurn>(&*parse)) {
                turn.envelope = ok->envelope;
                current = next_snapshot(current, ok->envelope, &turn.notes);
            } else {
                turn.diagnostics = std::get<ParseDiagnostics>(*parse).defects;
            }
        } catch (const BackendError& e) {
            d.terminated_by = Termination::error;
            d.error = "turn " + std::to_string(j) + ": " + e.what();
            return d;
        }

        const bool ended = turn.envelope && turn.envelope->end_session;
        d.turns.push_back(std::move(turn));
        if (ended) {
            d.terminated_by = Termination::end_token;
            break;
        }
    }
    return d;
}

ConsistencyReport check_target_list_consistency(const Dialogue& dialogue) {
    std::vector<TargetListObservation> observations;
    for (const auto& t : dialogue.turns) {
        TargetListObservation o;
        o.turn_index = t.index;
        if (t.envelope) o.target_list = t.envelope->target_list;
        observations.push_back(std::move(o));
    }
    return check_target_list_consistency(observations);
}

SftExport export_sft_records(std::span<const Dialogue> dialogues) {
    std::vector<const Dialogue*> ordered;
    for (const auto& d : dialogues) ordered.push_back(&d);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const Dialogue* a, const Dialogue* b) { return a->dialogue_id < b->dialogue_id; });

    SftExport out;
    for (const auto* d : ordered) {
        for (std::size_t k = 0; k < d->turns.size(); ++k) {
            const auto& t = d->turns[k];
            if (!t.parsed()) {
                ++out.skipped;
                continue;
            }
            ordered_json rec;
            rec["dialogue_id"] = d->dialogue_id;
            rec["turn"] = t.index;
            rec["prompt_hash"] = t.prompt_hash;
            ordered_json inputs;
            inputs["instruction"] = t.payload.instruction;
            inputs["static_profile"] = static_profile_to_ordered_json(d->static_profile);
            inputs["dynamic_profile"] = dynamic_profile_to_ordered_json(d->snapshots.at(k));
            inputs["context"] = t.payload.to_json()["context"];
            rec["inputs"] = inputs;
            rec["targets"] = {{"rationale", t.rationale},
                              {"reply", t.reply},
                              {"answer", envelope_to_json(*t.envelope)},
                              {"output", t.raw_user_output}};
            out.records.push_back(json::parse(rec.dump()));
        }
    }
    return out;
}

}  // namespace usersim
