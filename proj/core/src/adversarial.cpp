#include "usersim/adversarial.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "usersim/errors.hpp"

namespace usersim {

namespace {

constexpr std::array<std::string_view, 11> kTrapNames = {
    "vague_assurance",    "artificial_time_pressure",   "obfuscated_costs", "induced_upselling",
    "forced_bundling",    "conditional_consent",        "intentional_misinformation",
    "attitude_contrast",  "appeal_to_authority",        "rhythm_disruption", "stalling_tactics",
};

std::size_t trap_slot(TrapType t) { return static_cast<std::size_t>(t); }

}  // namespace

std::string_view to_string(TrapType t) { return kTrapNames.at(trap_slot(t)); }

TrapType trap_type_from_string(std::string_view text) {
    for (std::size_t i = 0; i < kTrapNames.size(); ++i) {
        if (kTrapNames[i] == text) return kTrapTypes[i];
    }
    throw Error("unknown trap type '" + std::string(text) + "'");
}

TrapCatalog TrapCatalog::load(const std::filesystem::path& path) {
    try {
        return from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

TrapCatalog TrapCatalog::from_json(const json& j) {
    TrapCatalog c;
    c.version_ = j.value("version", std::string("unversioned"));
    std::array<bool, 11> seen{};
    for (const auto& t : j.at("traps")) {
        TrapInfo info;
        const auto name = t.at("type").get<std::string>();
        try {
            info.type = trap_type_from_string(name);
        } catch (const Error& e) {
            throw ConfigError(std::string("trap catalog: ") + e.what());
        }
        info.title = t.value("title", name);
        info.description = t.at("description").get<std::string>();
        info.target_vulnerability = t.value("target_vulnerability", std::string());
        info.keywords = t.at("keywords").get<std::vector<std::string>>();
        info.compatible_scenarios = t.value("compatible_scenarios", std::vector<std::string>{});
        if (info.keywords.empty()) throw ConfigError("trap catalog: '" + name + "' has no keywords");
        if (seen[trap_slot(info.type)]) throw ConfigError("trap catalog: '" + name + "' listed twice");
        seen[trap_slot(info.type)] = true;
        c.traps_[trap_slot(info.type)] = std::move(info);
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
        if (!seen[i]) throw ConfigError("trap catalog: missing '" + std::string(kTrapNames[i]) + "'");
    }
    return c;
}

const TrapInfo& TrapCatalog::at(TrapType t) const { return traps_.at(trap_slot(t)); }

// ---------------------------------------------------------------------------

namespace {

ordered_json task_to_ordered(const AgentTask& t) {
    ordered_json j;
    j["sop_id"] = t.sop_id;
    j["scenario_label"] = t.scenario_label;
    j["sop_text"] = t.sop_text;
    j["system_message"] = t.system_message;
    return j;
}

ordered_json scenario_to_ordered(const TrapScenario& s) {
    ordered_json j;
    j["scenario_id"] = s.scenario_id;
    j["trap_type"] = to_string(s.trap_type);
    j["planned_trap_description"] = s.planned_trap_description;
    j["selection"] = {{"keywords", s.keywords},
                      {"pool_index", s.pool_index},
                      {"keyword_score", s.keyword_score},
                      {"rank", s.rank}};
    j["profile"] = static_profile_to_ordered_json(s.profile);
    j["task"] = task_to_ordered(s.task);
    return j;
}

std::string padded(int n) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02d", n);
    return buf;
}

}  // namespace

void to_json(json& j, const TrapScenario& s) { j = json::parse(scenario_to_ordered(s).dump()); }

void from_json(const json& j, TrapScenario& s) {
    s = TrapScenario{};
    s.scenario_id = j.at("scenario_id").get<std::string>();
    s.trap_type = trap_type_from_string(j.at("trap_type").get<std::string>());
    s.planned_trap_description = j.value("planned_trap_description", std::string());
    const auto& sel = j.at("selection");
    s.keywords = sel.at("keywords").get<std::vector<std::string>>();
    s.pool_index = sel.at("pool_index").get<std::size_t>();
    s.keyword_score = sel.at("keyword_score").get<int>();
    s.rank = sel.at("rank").get<int>();
    s.profile = j.at("profile").get<StaticProfile>();
    s.task = j.at("task").get<AgentTask>();
}

std::vector<TrapScenario> instantiate_trap(TrapType t, const TrapCatalog& catalog, std::span<const StaticProfile> pool,
                                           std::span<const AgentTask> sops, std::size_t k) {
    if (pool.empty()) throw EmptyPool("profile pool is empty");
    if (sops.empty()) throw EmptyPool("SOP set is empty");
    const auto& info = catalog.at(t);

    // SOPs grouped by compatible label, labels in order of first appearance.
    std::vector<std::string> labels;
    std::map<std::string, std::vector<const AgentTask*>> by_label;
    for (const auto& sop : sops) {
        const auto label = to_lower(sop.scenario_label);
        const bool compatible = std::any_of(info.compatible_scenarios.begin(), info.compatible_scenarios.end(),
                                            [&](const std::string& c) { return to_lower(c) == label; });
        if (!compatible) continue;
        if (by_label[label].empty()) labels.push_back(label);
        by_label[label].push_back(&sop);
    }
    if (labels.empty()) {
        for (const auto& sop : sops) {
            const auto label = to_lower(sop.scenario_label);
            if (by_label[label].empty()) labels.push_back(label);
            by_label[label].push_back(&sop);
        }
    }

    const auto ranked = select_profiles_by_keywords(pool, info.keywords, k);
    std::vector<TrapScenario> out;
    out.reserve(ranked.size());
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        const auto& label = labels[i % labels.size()];
        const auto& bucket = by_label[label];
        const auto* sop = bucket[(i / labels.size()) % bucket.size()];

        TrapScenario s;
        s.trap_type = t;
        s.rank = static_cast<int>(i);
        s.scenario_id = std::string(to_string(t)) + "-" + padded(s.rank);
        s.profile = ranked[i].profile;
        s.task = bind_task(*sop, s.profile);
        s.keywords = info.keywords;
        s.pool_index = ranked[i].pool_index;
        s.keyword_score = ranked[i].score;

        std::string matched;
        const auto text = profile_search_text(s.profile);
        for (const auto& kw : info.keywords) {
            const std::vector<std::string> one = {kw};
            if (keyword_score(text, one) == 0) continue;
            if (!matched.empty()) matched += ", ";
            matched += kw;
        }
        s.planned_trap_description = info.title + ": " + info.description + " Target: " + info.target_vulnerability +
                                     ". Profile cues: " + (matched.empty() ? "none" : matched) + ".";
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(ReviewStatus s) {
    switch (s) {
        case ReviewStatus::unreviewed: return "unreviewed";
        case ReviewStatus::approved: return "approved";
        case ReviewStatus::rejected: return "rejected";
        case ReviewStatus::edited: return "edited";
    }
    return "unreviewed";
}

ReviewStatus review_status_from_string(std::string_view text) {
    const auto t = to_lower(trim(text));
    if (t == "unreviewed") return ReviewStatus::unreviewed;
    if (t == "approved") return ReviewStatus::approved;
    if (t == "rejected") return ReviewStatus::rejected;
    if (t == "edited") return ReviewStatus::edited;
    throw Error("unknown review status '" + std::string(text) + "'");
}

namespace {

ordered_json sample_to_ordered(const AdversarialSample& s) {
    ordered_json history = ordered_json::array();
    for (const auto& u : s.history) history.push_back({{"speaker", to_string(u.speaker)}, {"text", u.text}});
    ordered_json j;
    j["sample_id"] = s.sample_id;
    j["trap_type"] = to_string(s.scenario.trap_type);
    j["review_status"] = to_string(s.review_status);
    j["trap_turn_index"] = s.trap_turn_index();
    j["trap_turn"] = s.trap_turn;
    j["history"] = history;
    j["scenario_memory"] = s.scenario_memory;
    j["generator"] = s.generator;
    j["scenario"] = scenario_to_ordered(s.scenario);
    return j;
}

}  // namespace

void to_json(json& j, const AdversarialSample& s) { j = json::parse(sample_to_ordered(s).dump()); }

void from_json(const json& j, AdversarialSample& s) {
    s = AdversarialSample{};
    s.sample_id = j.at("sample_id").get<std::string>();
    s.scenario = j.at("scenario").get<TrapScenario>();
    if (j.at("trap_type").get<std::string>() != to_string(s.scenario.trap_type)) {
        throw Error("sample " + s.sample_id + ": trap_type disagrees with its scenario");
    }
    s.review_status = review_status_from_string(j.at("review_status").get<std::string>());
    s.trap_turn = j.at("trap_turn").get<std::string>();
    for (const auto& u : j.at("history")) {
        s.history.push_back({speaker_from_string(u.at("speaker").get<std::string>()), u.at("text").get<std::string>()});
    }
    s.scenario_memory = j.value("scenario_memory", std::string());
    s.generator = j.value("generator", std::string());
}

std::string sample_fingerprint(const AdversarialSample& s) {
    return sha256_hex(canonical_dump(json::parse(sample_to_ordered(s).dump())));
}

// ---------------------------------------------------------------------------

namespace {

bool starts_with_tag(std::string_view line, std::string_view tag, std::string& rest) {
    if (!line.starts_with(tag)) return false;
    rest = trim(line.substr(tag.size()));
    return true;
}

std::size_t count_of(std::string_view haystack, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + 1)) ++n;
    return n;
}

void check_alternation(const std::vector<Utterance>& history) {
    if (history.empty()) throw TrapFormatError("the trap turn needs at least one agent/user exchange before it");
    for (std::size_t i = 0; i < history.size(); ++i) {
        const auto expected = i % 2 == 0 ? Speaker::agent : Speaker::user;
        if (history[i].speaker != expected) {
            throw TrapFormatError("history line " + std::to_string(i + 1) + " should be " +
                                  std::string(to_string(expected)) + " (agent first, alternating)");
        }
    }
    if (history.back().speaker != Speaker::user) throw TrapFormatError("history must end with a user line");
}

}  // namespace

GeneratedDialogue parse_generator_output(std::string_view text) {
    const auto opens = count_of(text, kTrapOpen);
    const auto closes = count_of(text, kTrapClose);
    if (opens == 0 && closes == 0) throw TrapFormatError("no trap-turn marker");
    if (opens > 1 || closes > 1) throw TrapFormatError("multiple trap-turn markers");
    if (opens != closes) throw TrapFormatError("unbalanced trap-turn marker");

    GeneratedDialogue out;
    std::vector<Utterance> lines;
    bool first = true;
    const auto raw_lines = split_lines(text);
    for (std::size_t n = 0; n < raw_lines.size(); ++n) {
        const auto& raw = raw_lines[n];
        const auto line = trim(raw);
        if (line.empty() || line.starts_with("```")) continue;
        std::string rest;
        if (first && starts_with_tag(line, "MEMORY:", rest)) {
            out.scenario_memory = rest;
        } else if (starts_with_tag(line, "AGENT:", rest)) {
            lines.push_back({Speaker::agent, rest});
        } else if (starts_with_tag(line, "USER:", rest)) {
            lines.push_back({Speaker::user, rest});
        } else if (!lines.empty() && !raw.empty() && (raw[0] == ' ' || raw[0] == '\t')) {
            lines.back().text += "\n" + line;
        } else {
            throw TrapFormatError("line " + std::to_string(n + 1) + " is neither AGENT:, USER: nor a continuation");
        }
        first = false;
    }
    if (lines.empty()) throw TrapFormatError("generator output has no dialogue lines");

    auto last = lines.back();
    lines.pop_back();
    const auto body = trim(last.text);
    if (last.speaker != Speaker::agent || !body.starts_with(kTrapOpen) || !body.ends_with(kTrapClose)) {
        throw TrapFormatError("the marked trap turn must be the final agent line");
    }
    out.trap_turn = trim(std::string_view(body).substr(kTrapOpen.size(), body.size() - kTrapOpen.size() - kTrapClose.size()));
    if (out.trap_turn.empty()) throw TrapFormatError("trap turn is empty");
    check_alternation(lines);
    out.history = std::move(lines);
    return out;
}

void validate_sample(const AdversarialSample& s) {
    check_alternation(s.history);
    if (trim(s.trap_turn).empty()) throw TrapFormatError(s.sample_id + ": trap turn is empty");
    if (s.trap_turn.find(kTrapOpen) != std::string::npos || s.trap_turn.find(kTrapClose) != std::string::npos) {
        throw TrapFormatError(s.sample_id + ": trap turn still contains a marker");
    }
    for (const auto& u : s.history) {
        if (u.text.find(kTrapOpen) != std::string::npos || u.text.find(kTrapClose) != std::string::npos) {
            throw TrapFormatError(s.sample_id + ": marker inside the history");
        }
    }
}

AdversarialSample build_adversarial_dialogue(const TrapScenario& scenario, const TrapCatalog& catalog,
                                             ChatBackend& generator, const TemplateStore& templates,
                                             const TrapBuildOptions& options) {
    const auto& info = catalog.at(scenario.trap_type);
    const auto prompt =
        fill_placeholders(templates.body("traps/generator"),
                          {{"trap_type", std::string(to_string(scenario.trap_type))},
                           {"trap_title", info.title},
                           {"trap_description", info.description},
                           {"vulnerability", info.target_vulnerability},
                           {"plan", scenario.planned_trap_description},
                           {"profile", static_profile_to_ordered_json(scenario.profile).dump(2)},
                           {"scenario_label", scenario.task.scenario_label},
                           {"sop", scenario.task.sop_text},
                           {"max_turns", std::to_string(options.max_history_turns)},
                           {"sample_seed", std::to_string(options.sample_seed)}});
    const std::vector<Message> messages = {{Role::user, prompt}};
    auto params = options.params;
    params.seed = options.sample_seed;

    std::string text;
    try {
        text = generator.chat(messages, params).text;
    } catch (const BackendError& e) {
        throw e.with_context("generating " + scenario.scenario_id);
    }
    GeneratedDialogue g;
    try {
        g = parse_generator_output(text);
    } catch (const TrapFormatError& e) {
        throw TrapFormatError(scenario.scenario_id + ": " + e.what());
    }

    AdversarialSample s;
    s.sample_id = scenario.scenario_id;
    s.scenario = scenario;
    s.scenario_memory = g.scenario_memory;
    s.history = std::move(g.history);
    s.trap_turn = std::move(g.trap_turn);
    s.review_status = ReviewStatus::unreviewed;
    s.generator = generator.identifier();
    return s;
}

// ---------------------------------------------------------------------------

void to_json(json& j, const TrapResponse& r) {
    json diags = json::array();
    for (const auto& d : r.diagnostics) diags.push_back({{"kind", to_string(d.kind)}, {"detail", d.detail}});
    j = json{{"sample_id", r.sample_id},
             {"trap_type", to_string(r.trap_type)},
             {"prompt_hash", r.prompt_hash},
             {"payload", json::parse(r.payload.to_json().dump())},
             {"raw_output", r.raw_output},
             {"rationale", r.rationale},
             {"reply", r.reply},
             {"envelope", r.envelope ? json::parse(envelope_to_json(*r.envelope).dump()) : json(nullptr)},
             {"diagnostics", diags},
             {"user_backend", r.user_backend}};
}

void from_json(const json& j, TrapResponse& r) {
    r = TrapResponse{};
    r.sample_id = j.at("sample_id").get<std::string>();
    r.trap_type = trap_type_from_string(j.at("trap_type").get<std::string>());
    r.prompt_hash = j.at("prompt_hash").get<std::string>();
    r.payload = PromptPayload::from_json(j.at("payload"));
    r.raw_output = j.at("raw_output").get<std::string>();
    r.rationale = j.at("rationale").get<std::string>();
    r.reply = j.at("reply").get<std::string>();
    if (!j.at("envelope").is_null()) r.envelope = envelope_from_json(j.at("envelope"));
    for (const auto& d : j.at("diagnostics")) {
        r.diagnostics.push_back({defect_kind_from_string(d.at("kind").get<std::string>()), d.at("detail").get<std::string>()});
    }
    r.user_backend = j.value("user_backend", std::string());
}

TrapResponse run_trap_turn(const AdversarialSample& sample, ChatBackend& user, const TrapRunOptions& options) {
    const auto status = sample.review_status;
    const bool reviewed = status == ReviewStatus::approved || status == ReviewStatus::edited;
    if (!reviewed && !(options.allow_unreviewed && status == ReviewStatus::unreviewed)) {
        throw NotReviewed("sample " + sample.sample_id + " is " + std::string(to_string(status)));
    }

    DynamicProfile dp;
    dp.scenario_memory = sample.scenario_memory;
    auto context = sample.history;
    context.push_back({Speaker::agent, sample.trap_turn});

    TrapResponse r;
    r.sample_id = sample.sample_id;
    r.trap_type = sample.scenario.trap_type;
    r.payload = build_user_prompt(options.instruction, sample.scenario.profile, dp, context);
    r.prompt_hash = r.payload.hash();
    r.user_backend = user.identifier();
    r.raw_output = user.chat(r.payload.to_messages(), options.params).text;

    const auto parsed = parse_turn_output(r.raw_output, options.envelope);
    r.rationale = rationale_of(parsed).value_or("");
    r.reply = reply_of(parsed, r.raw_output);
    if (const auto* ok = std::get_if<ParsedTurn>(&parsed)) {
        r.envelope = ok->envelope;
    } else {
        r.diagnostics = std::get<ParseDiagnostics>(parsed).defects;
    }
    return r;
}

}  // namespace usersim
