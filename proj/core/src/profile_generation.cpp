#include <algorithm>
#include <cctype>

#include "usersim/errors.hpp"
#include "usersim/profile.hpp"

namespace usersim {

namespace {

std::string as_text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_null()) return {};
    return v.dump();
}

std::vector<std::string> as_list(const json& v) {
    std::vector<std::string> out;
    if (v.is_array()) {
        for (const auto& e : v) out.push_back(trim(as_text(e)));
    } else if (v.is_string()) {
        std::string item;
        for (char c : v.get<std::string>()) {
            if (c == ',' || c == ';') {
                if (!trim(item).empty()) out.push_back(trim(item));
                item.clear();
            } else {
                item.push_back(c);
            }
        }
        if (!trim(item).empty()) out.push_back(trim(item));
    }
    return out;
}

int as_age(const json& v) {
    if (v.is_number_integer()) return v.get<int>();
    if (v.is_string()) {
        const auto s = trim(v.get<std::string>());
        if (!s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c) || c == '-'; })) {
            return std::stoi(s);
        }
    }
    throw json::type_error::create(302, "age is not an integer", nullptr);
}

std::string field(const json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() ? std::string() : trim(as_text(*it));
}

void apply_dimension(std::string_view dimension, const json& obj, StaticProfile& p) {
    if (dimension == "background") {
        auto& b = p.background;
        b.name = field(obj, "name");
        if (auto it = obj.find("age"); it != obj.end()) b.age = as_age(*it);
        b.gender = field(obj, "gender");
        b.location = field(obj, "location");
        b.occupation = field(obj, "occupation");
        b.income_tier = field(obj, "income_tier");
        b.education = field(obj, "education");
        b.health = field(obj, "health");
        b.marriage = field(obj, "marriage");
        if (auto it = obj.find("hobbies"); it != obj.end()) b.hobbies = as_list(*it);
        b.contact = field(obj, "contact");
    } else if (dimension == "personality") {
        p.personality.description = field(obj, "description");
        auto mbti = field(obj, "mbti");
        std::transform(mbti.begin(), mbti.end(), mbti.begin(), [](unsigned char c) { return std::toupper(c); });
        p.personality.mbti = mbti;
    } else if (dimension == "expression_style") {
        auto& e = p.expression_style;
        e.speech_rate = field(obj, "speech_rate");
        e.verbosity = field(obj, "verbosity");
        e.emotion_intensity = field(obj, "emotion_intensity");
        e.politeness = field(obj, "politeness");
        e.logic_orientation = field(obj, "logic_orientation");
        e.patience = field(obj, "patience");
        e.interruption_tendency = field(obj, "interruption_tendency");
        e.tone = field(obj, "tone");
        if (auto it = obj.find("typical_phrases"); it != obj.end()) e.typical_phrases = as_list(*it);
    } else if (dimension == "life_scenarios") {
        p.life_scenarios.weekday = field(obj, "weekday");
        p.life_scenarios.weekend = field(obj, "weekend");
    }
}

/// Known seed demographics override backend output. Categorical values pass
/// through only when the option lists allow them.
void overlay_demographics(const PartialBackground& d, const OptionLists& options, Background& b) {
    auto text = [](const std::optional<std::string>& src, std::string& dst) {
        if (src && !trim(*src).empty()) dst = trim(*src);
    };
    auto categorical = [&](const char* path, const std::optional<std::string>& src, std::string& dst) {
        if (src && options.allows(path, *src)) dst = *src;
    };
    text(d.name, b.name);
    if (d.age && *d.age >= 0) b.age = *d.age;
    categorical("background.gender", d.gender, b.gender);
    text(d.location, b.location);
    text(d.occupation, b.occupation);
    categorical("background.income_tier", d.income_tier, b.income_tier);
    categorical("background.education", d.education, b.education);
    categorical("background.health", d.health, b.health);
    categorical("background.marriage", d.marriage, b.marriage);
    if (d.hobbies && !d.hobbies->empty()) b.hobbies = *d.hobbies;
    text(d.contact, b.contact);
}

json dimension_options(std::string_view dimension, const OptionLists& options) {
    json out = json::object();
    const std::string prefix = std::string(dimension) + ".";
    for (const auto& path : categorical_fields()) {
        if (!path.starts_with(prefix)) continue;
        if (const auto* list = options.find(path)) out[path.substr(prefix.size())] = *list;
    }
    if (dimension == "personality") {
        json codes = json::array();
        for (const char* a : {"E", "I"})
            for (const char* b : {"S", "N"})
                for (const char* c : {"T", "F"})
                    for (const char* d : {"J", "P"}) codes.push_back(std::string(a) + b + c + d);
        out["mbti"] = codes;
    }
    return out;
}

json known_demographics(const PartialBackground& d) {
    PreferenceRecord tmp;
    tmp.demographics = d;
    json j = tmp;
    return j.at("demographics");
}

std::string dimension_feedback(std::string_view dimension, const ValidationReport& report) {
    std::string out;
    const std::string prefix = std::string(dimension) + ".";
    for (const auto& v : report) {
        if (!v.field_path.starts_with(prefix)) continue;
        if (!out.empty()) out += "; ";
        out += v.field_path + " " + v.violation;
    }
    return out;
}

std::string feedback_block(const std::string& feedback) {
    if (feedback.empty()) return {};
    return "Your previous answer was rejected: " + feedback + ". Answer again with a corrected JSON object.";
}

}  // namespace

StaticProfile generate_static_profile(const PreferenceRecord& seed, ChatBackend& backend, const OptionLists& options,
                                      const TemplateStore& templates, const GenerationOptions& gen) {
    options.require_complete();
    StaticProfile profile;
    profile.profile_id = seed.user_id;

    for (auto dimension : kProfileDimensions) {
        const std::string dim(dimension);
        const auto& tmpl = templates.body("profile/" + dim);
        const auto opts = dimension_options(dimension, options).dump(2);
        std::string feedback;
        bool accepted = false;

        for (int attempt = 0; attempt <= gen.max_retries && !accepted; ++attempt) {
            const auto prompt = fill_placeholders(
                tmpl, {{"user_id", seed.user_id},
                       {"narrative", seed.narrative.value_or("(no narrative provided)")},
                       {"demographics", known_demographics(seed.demographics).dump(2)},
                       {"options", opts},
                       {"profile_so_far", static_profile_to_ordered_json(profile).dump(2)},
                       {"feedback", feedback_block(feedback)}});
            const std::vector<Message> messages = {{Role::user, prompt}};

            std::string text;
            try {
                text = backend.chat(messages, gen.params).text;
            } catch (const BackendError& e) {
                throw e.with_context("generating " + dim);
            }

            const auto object_text = extract_json_object(text);
            if (object_text.empty()) {
                feedback = "output did not contain a JSON object";
                continue;
            }
            StaticProfile candidate = profile;
            try {
                apply_dimension(dimension, json::parse(object_text), candidate);
            } catch (const json::exception& e) {
                feedback = std::string("malformed fields: ") + e.what();
                continue;
            }
            if (dimension == "background") overlay_demographics(seed.demographics, options, candidate.background);

            feedback = dimension_feedback(dimension, validate_static_profile(candidate, options));
            if (feedback.empty()) {
                profile = std::move(candidate);
                accepted = true;
            }
        }
        if (!accepted) {
            throw SchemaError(dim, "no valid output after " + std::to_string(gen.max_retries + 1) +
                                       " attempts (last problem: " + feedback + ")");
        }
    }
    return profile;
}

// ---------------------------------------------------------------------------

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

const std::vector<std::string>& stopwords() {
    static const std::vector<std::string> words = {
        "about", "after", "again", "agent", "also", "been", "before", "being", "call", "customer", "does", "each",
        "from", "have", "into", "just", "more", "must", "only", "other", "over", "please", "should", "some", "such",
        "than", "that", "their", "them", "then", "there", "these", "they", "this", "user", "very", "what", "when",
        "which", "will", "with", "would", "your"};
    return words;
}

std::vector<std::string> tokens(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    for (char ch : text) {
        if (is_word_byte(static_cast<unsigned char>(ch))) {
            current.push_back(ch);
        } else if (!current.empty()) {
            out.push_back(to_lower(current));
            current.clear();
        }
    }
    if (!current.empty()) out.push_back(to_lower(current));
    return out;
}

std::vector<std::string> utf8_chars(std::string_view s) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < s.size();) {
        std::size_t w = 1;
        const auto c = static_cast<unsigned char>(s[i]);
        if (c >= 0xf0) w = 4;
        else if (c >= 0xe0) w = 3;
        else if (c >= 0xc0) w = 2;
        w = std::min(w, s.size() - i);
        out.emplace_back(s.substr(i, w));
        i += w;
    }
    return out;
}

}  // namespace

bool references_sop(std::string_view memory, const AgentTask& task) {
    const auto lowered = to_lower(memory);
    const auto memory_tokens = tokens(memory);
    const auto& stop = stopwords();
    for (const auto& token : tokens(task.scenario_label + " " + task.sop_text)) {
        const bool ascii = std::all_of(token.begin(), token.end(), [](unsigned char c) { return c < 0x80; });
        if (ascii) {
            if (token.size() < 4 || std::find(stop.begin(), stop.end(), token) != stop.end()) continue;
            if (std::all_of(token.begin(), token.end(), [](unsigned char c) { return std::isdigit(c); })) continue;
            if (std::find(memory_tokens.begin(), memory_tokens.end(), token) != memory_tokens.end()) return true;
        } else {
            const auto chars = utf8_chars(token);
            for (std::size_t i = 0; i + 1 < chars.size(); ++i) {
                if (lowered.find(chars[i] + chars[i + 1]) != std::string::npos) return true;
            }
        }
    }
    return false;
}

DynamicProfile init_dynamic_profile(const StaticProfile& profile, const AgentTask& task, ChatBackend& backend,
                                    const TemplateStore& templates, const GenerationOptions& gen) {
    if (trim(task.sop_text).empty()) throw SchemaError("sop_text", "task " + task.sop_id + " has an empty SOP");

    const auto& tmpl = templates.body("profile/scenario_memory");
    std::string feedback;
    for (int attempt = 0; attempt <= gen.max_retries; ++attempt) {
        const auto prompt =
            fill_placeholders(tmpl, {{"profile", static_profile_to_ordered_json(profile).dump(2)},
                                     {"scenario_label", task.scenario_label},
                                     {"sop", task.sop_text},
                                     {"feedback", feedback_block(feedback)}});
        const std::vector<Message> messages = {{Role::user, prompt}};
        std::string text;
        try {
            text = backend.chat(messages, gen.params).text;
        } catch (const BackendError& e) {
            throw e.with_context("generating scenario_memory");
        }

        std::string memory;
        if (const auto object_text = extract_json_object(text); !object_text.empty()) {
            const auto obj = json::parse(object_text);
            if (auto it = obj.find("scenario_memory"); it != obj.end() && it->is_string()) memory = it->get<std::string>();
        } else {
            memory = text;
        }
        memory = trim(memory);
        if (memory.empty()) {
            feedback = "scenario_memory was empty";
            continue;
        }
        if (!references_sop(memory, task)) {
            feedback = "scenario_memory does not mention anything from the SOP scenario";
            continue;
        }
        DynamicProfile dp;
        dp.scenario_memory = std::move(memory);
        return dp;
    }
    throw SchemaError("scenario_memory", "no valid output after " + std::to_string(gen.max_retries + 1) +
                                             " attempts (last problem: " + feedback + ")");
}

}  // namespace usersim
