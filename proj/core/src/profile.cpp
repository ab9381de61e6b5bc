#include "usersim/profile.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include "usersim/errors.hpp"

namespace usersim {

// ---------------------------------------------------------------------------
// JSON

ordered_json static_profile_to_ordered_json(const StaticProfile& p) {
    const auto& b = p.background;
    const auto& e = p.expression_style;
    ordered_json j;
    j["profile_id"] = p.profile_id;
    j["background"] = {{"name", b.name},         {"age", b.age},
                       {"gender", b.gender},     {"location", b.location},
                       {"occupation", b.occupation}, {"income_tier", b.income_tier},
                       {"education", b.education},   {"health", b.health},
                       {"marriage", b.marriage},     {"hobbies", b.hobbies},
                       {"contact", b.contact}};
    j["personality"] = {{"description", p.personality.description}, {"mbti", p.personality.mbti}};
    j["expression_style"] = {{"speech_rate", e.speech_rate},
                             {"verbosity", e.verbosity},
                             {"emotion_intensity", e.emotion_intensity},
                             {"politeness", e.politeness},
                             {"logic_orientation", e.logic_orientation},
                             {"patience", e.patience},
                             {"interruption_tendency", e.interruption_tendency},
                             {"tone", e.tone},
                             {"typical_phrases", e.typical_phrases}};
    j["life_scenarios"] = {{"weekday", p.life_scenarios.weekday}, {"weekend", p.life_scenarios.weekend}};
    return j;
}

void to_json(json& j, const StaticProfile& p) { j = json::parse(static_profile_to_ordered_json(p).dump()); }

namespace {

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
    if (auto it = obj.find(key); it != obj.end() && !it->is_null()) out = it->get<T>();
}

}  // namespace

void from_json(const json& j, StaticProfile& p) {
    p = StaticProfile{};
    read_field(j, "profile_id", p.profile_id);
    const auto& b = j.at("background");
    read_field(b, "name", p.background.name);
    read_field(b, "age", p.background.age);
    read_field(b, "gender", p.background.gender);
    read_field(b, "location", p.background.location);
    read_field(b, "occupation", p.background.occupation);
    read_field(b, "income_tier", p.background.income_tier);
    read_field(b, "education", p.background.education);
    read_field(b, "health", p.background.health);
    read_field(b, "marriage", p.background.marriage);
    read_field(b, "hobbies", p.background.hobbies);
    read_field(b, "contact", p.background.contact);
    const auto& per = j.at("personality");
    read_field(per, "description", p.personality.description);
    read_field(per, "mbti", p.personality.mbti);
    const auto& e = j.at("expression_style");
    read_field(e, "speech_rate", p.expression_style.speech_rate);
    read_field(e, "verbosity", p.expression_style.verbosity);
    read_field(e, "emotion_intensity", p.expression_style.emotion_intensity);
    read_field(e, "politeness", p.expression_style.politeness);
    read_field(e, "logic_orientation", p.expression_style.logic_orientation);
    read_field(e, "patience", p.expression_style.patience);
    read_field(e, "interruption_tendency", p.expression_style.interruption_tendency);
    read_field(e, "tone", p.expression_style.tone);
    read_field(e, "typical_phrases", p.expression_style.typical_phrases);
    const auto& l = j.at("life_scenarios");
    read_field(l, "weekday", p.life_scenarios.weekday);
    read_field(l, "weekend", p.life_scenarios.weekend);
}

ordered_json dynamic_profile_to_ordered_json(const DynamicProfile& p) {
    ordered_json j;
    j["scenario_memory"] = p.scenario_memory;
    j["target_list"] = {{"primary", p.target_list.primary_concerns}, {"minor", p.target_list.minor_concerns}};
    const auto& d = p.decision_policy;
    j["decision_policy"] = {{"touched_concerns", d.touched_concerns}, {"core_issues", d.core_issues},
                            {"topic_management", d.topic_management}, {"current_response", d.current_response},
                            {"planning", d.planning},                 {"end_session", d.end_session}};
    j["state"] = state_to_json(p.state);
    return j;
}

void to_json(json& j, const DynamicProfile& p) { j = json::parse(dynamic_profile_to_ordered_json(p).dump()); }

void from_json(const json& j, DynamicProfile& p) {
    p = DynamicProfile{};
    p.scenario_memory = j.at("scenario_memory").get<std::string>();
    p.target_list = j.at("target_list").get<TargetList>();
    const auto& d = j.at("decision_policy");
    p.decision_policy.touched_concerns = d.at("touched_concerns").get<std::vector<std::string>>();
    p.decision_policy.core_issues = d.at("core_issues").get<std::vector<std::string>>();
    p.decision_policy.topic_management = d.at("topic_management").get<std::string>();
    p.decision_policy.current_response = d.at("current_response").get<std::string>();
    p.decision_policy.planning = d.at("planning").get<std::string>();
    p.decision_policy.end_session = d.at("end_session").get<bool>();
    p.state = parse_state_json(j.at("state"));
}

void to_json(json& j, const PreferenceRecord& r) {
    j = json{{"user_id", r.user_id}, {"preference_vector", r.preference_vector}};
    json demo = json::object();
    const auto& d = r.demographics;
    auto put = [&](const char* key, const auto& opt) {
        if (opt) demo[key] = *opt;
    };
    put("name", d.name);
    put("age", d.age);
    put("gender", d.gender);
    put("location", d.location);
    put("occupation", d.occupation);
    put("income_tier", d.income_tier);
    put("education", d.education);
    put("health", d.health);
    put("marriage", d.marriage);
    put("hobbies", d.hobbies);
    put("contact", d.contact);
    j["demographics"] = demo;
    if (r.narrative) j["narrative"] = *r.narrative;
}

void from_json(const json& j, PreferenceRecord& r) {
    r = PreferenceRecord{};
    r.user_id = j.at("user_id").get<std::string>();
    r.preference_vector = j.at("preference_vector").get<std::vector<double>>();
    if (auto it = j.find("narrative"); it != j.end() && !it->is_null()) r.narrative = it->get<std::string>();
    const auto demo = j.value("demographics", json::object());
    auto get = [&](const char* key, auto& opt) {
        if (auto it = demo.find(key); it != demo.end() && !it->is_null()) {
            opt = it->get<typename std::decay_t<decltype(opt)>::value_type>();
        }
    };
    auto& d = r.demographics;
    get("name", d.name);
    get("age", d.age);
    get("gender", d.gender);
    get("location", d.location);
    get("occupation", d.occupation);
    get("income_tier", d.income_tier);
    get("education", d.education);
    get("health", d.health);
    get("marriage", d.marriage);
    get("hobbies", d.hobbies);
    get("contact", d.contact);
}

std::vector<std::string> preference_record_violations(const PreferenceRecord& r) {
    std::vector<std::string> out;
    if (r.user_id.empty()) out.emplace_back("user_id is empty");
    if (r.preference_vector.size() != kPreferenceDimensions) {
        out.push_back("preference_vector has " + std::to_string(r.preference_vector.size()) + " entries, expected " +
                      std::to_string(kPreferenceDimensions));
    }
    for (std::size_t i = 0; i < r.preference_vector.size(); ++i) {
        if (!std::isfinite(r.preference_vector[i])) {
            out.push_back("preference_vector[" + std::to_string(i) + "] is not finite");
        }
    }
    return out;
}

void to_json(json& j, const AgentTask& t) {
    j = json{{"sop_id", t.sop_id},
             {"sop_text", t.sop_text},
             {"scenario_label", t.scenario_label},
             {"system_message", t.system_message}};
}

void from_json(const json& j, AgentTask& t) {
    t = AgentTask{};
    t.sop_id = j.at("sop_id").get<std::string>();
    t.sop_text = j.value("sop_text", std::string());
    t.scenario_label = j.value("scenario_label", std::string());
    t.system_message = j.value("system_message", std::string());
}

std::vector<std::string> agent_task_violations(const AgentTask& task) {
    std::vector<std::string> out;
    if (task.sop_id.empty()) out.emplace_back("sop_id is empty");
    if (trim(task.sop_text).empty()) out.emplace_back("sop_text is empty");
    static const std::regex email(R"([A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,})");
    static const std::regex phone(R"(\d(?:[\s-]?\d){6,})");
    if (std::regex_search(task.sop_text, email)) out.emplace_back("sop_text contains an email address");
    if (std::regex_search(task.sop_text, phone)) out.emplace_back("sop_text contains a phone-like digit run");
    return out;
}

AgentTask bind_task(const AgentTask& task, const StaticProfile& profile) {
    const auto& b = profile.background;
    const std::vector<std::pair<std::string, std::string>> values = {
        {"name", b.name},         {"age", std::to_string(b.age)}, {"gender", b.gender},
        {"location", b.location}, {"occupation", b.occupation},   {"contact", b.contact},
        {"phone", b.contact},
    };
    AgentTask bound = task;
    const auto& source = task.system_message.empty() ? task.sop_text : task.system_message;
    bound.system_message = fill_placeholders(source, values);
    return bound;
}

// ---------------------------------------------------------------------------
// Option lists

const std::vector<std::string>& categorical_fields() {
    static const std::vector<std::string> fields = {
        "background.gender",
        "background.income_tier",
        "background.education",
        "background.health",
        "background.marriage",
        "expression_style.speech_rate",
        "expression_style.verbosity",
        "expression_style.emotion_intensity",
        "expression_style.politeness",
        "expression_style.logic_orientation",
        "expression_style.patience",
        "expression_style.interruption_tendency",
        "expression_style.tone",
    };
    return fields;
}

OptionLists OptionLists::from_json(const json& j) {
    OptionLists lists;
    lists.version = j.at("version").get<std::string>();
    for (const auto& [path, values] : j.at("fields").items()) {
        lists.fields[path] = values.get<std::vector<std::string>>();
    }
    return lists;
}

OptionLists OptionLists::load(const std::filesystem::path& path) {
    try {
        return from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
        throw ConfigError("option lists " + path.string() + ": " + e.what());
    }
}

const std::vector<std::string>* OptionLists::find(std::string_view field_path) const {
    auto it = fields.find(std::string(field_path));
    return it == fields.end() ? nullptr : &it->second;
}

bool OptionLists::allows(std::string_view field_path, std::string_view value) const {
    const auto* list = find(field_path);
    return list != nullptr && std::find(list->begin(), list->end(), value) != list->end();
}

void OptionLists::require_complete() const {
    std::string missing;
    for (const auto& field : categorical_fields()) {
        const auto* list = find(field);
        if (list == nullptr || list->empty()) missing += (missing.empty() ? "" : ", ") + field;
    }
    if (!missing.empty()) throw ConfigError("option lists " + version + " lack values for: " + missing);
}

bool is_valid_mbti(std::string_view code) {
    return code.size() == 4 && (code[0] == 'E' || code[0] == 'I') && (code[1] == 'S' || code[1] == 'N') &&
           (code[2] == 'T' || code[2] == 'F') && (code[3] == 'J' || code[3] == 'P');
}

// ---------------------------------------------------------------------------
// Validation

namespace {

class Validator {
public:
    explicit Validator(const OptionLists& options) : options_(options) {}

    void text(const std::string& path, const std::string& value) {
        if (trim(value).empty()) add(path, "must not be empty");
    }

    void list(const std::string& path, const std::vector<std::string>& values) {
        if (values.empty()) {
            add(path, "must not be empty");
            return;
        }
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (trim(values[i]).empty()) add(path + "[" + std::to_string(i) + "]", "must not be empty");
        }
    }

    void categorical(const std::string& path, const std::string& value) {
        if (trim(value).empty()) {
            add(path, "must not be empty");
        } else if (options_.find(path) == nullptr) {
            add(path, "no option list configured");
        } else if (!options_.allows(path, value)) {
            add(path, "value '" + value + "' is not in the option list");
        }
    }

    void add(std::string path, std::string violation) { report.push_back({std::move(path), std::move(violation)}); }

    ValidationReport report;

private:
    const OptionLists& options_;
};

void validate_background(Validator& v, const Background& b) {
    v.text("background.name", b.name);
    if (b.age < 0) v.add("background.age", "must be a non-negative integer");
    v.categorical("background.gender", b.gender);
    v.text("background.location", b.location);
    v.text("background.occupation", b.occupation);
    v.categorical("background.income_tier", b.income_tier);
    v.categorical("background.education", b.education);
    v.categorical("background.health", b.health);
    v.categorical("background.marriage", b.marriage);
    v.list("background.hobbies", b.hobbies);
    v.text("background.contact", b.contact);
}

void validate_personality(Validator& v, const Personality& p) {
    v.text("personality.description", p.description);
    if (!is_valid_mbti(p.mbti)) v.add("personality.mbti", "not a valid MBTI code");
}

void validate_expression(Validator& v, const ExpressionStyle& e) {
    v.categorical("expression_style.speech_rate", e.speech_rate);
    v.categorical("expression_style.verbosity", e.verbosity);
    v.categorical("expression_style.emotion_intensity", e.emotion_intensity);
    v.categorical("expression_style.politeness", e.politeness);
    v.categorical("expression_style.logic_orientation", e.logic_orientation);
    v.categorical("expression_style.patience", e.patience);
    v.categorical("expression_style.interruption_tendency", e.interruption_tendency);
    v.categorical("expression_style.tone", e.tone);
    v.list("expression_style.typical_phrases", e.typical_phrases);
}

void validate_life(Validator& v, const LifeScenarios& l) {
    v.text("life_scenarios.weekday", l.weekday);
    v.text("life_scenarios.weekend", l.weekend);
}

}  // namespace

ValidationReport validate_static_profile(const StaticProfile& profile, const OptionLists& options) {
    Validator v(options);
    validate_background(v, profile.background);
    validate_personality(v, profile.personality);
    validate_expression(v, profile.expression_style);
    validate_life(v, profile.life_scenarios);
    return std::move(v.report);
}

}  // namespace usersim
