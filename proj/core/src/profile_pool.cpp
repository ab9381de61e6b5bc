#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "usersim/errors.hpp"
#include "usersim/profile.hpp"

namespace usersim {

namespace {

json normalize_strings(const json& value) {
    if (value.is_string()) return collapse_whitespace(value.get<std::string>());
    if (value.is_array()) {
        json out = json::array();
        for (const auto& v : value) out.push_back(normalize_strings(v));
        return out;
    }
    if (value.is_object()) {
        json out = json::object();
        for (const auto& [k, v] : value.items()) out[k] = normalize_strings(v);
        return out;
    }
    return value;
}

}  // namespace

std::string canonical_preference_key(const PreferenceRecord& r) {
    json j = r;
    return canonical_dump(normalize_strings(j));
}

std::vector<PreferenceRecord> dedup_pool(std::span<const PreferenceRecord> records) {
    std::unordered_set<std::string> seen;
    std::vector<PreferenceRecord> out;
    for (const auto& r : records) {
        if (seen.insert(canonical_preference_key(r)).second) out.push_back(r);
    }
    return out;
}

std::string profile_search_text(const StaticProfile& p) {
    const auto& b = p.background;
    const auto& e = p.expression_style;
    std::string text;
    auto add = [&](const std::string& s) {
        text += s;
        text.push_back('\n');
    };
    for (const auto* s : {&b.name, &b.gender, &b.location, &b.occupation, &b.income_tier, &b.education, &b.health,
                          &b.marriage, &b.contact, &p.personality.description, &p.personality.mbti, &e.speech_rate,
                          &e.verbosity, &e.emotion_intensity, &e.politeness, &e.logic_orientation, &e.patience,
                          &e.interruption_tendency, &e.tone, &p.life_scenarios.weekday, &p.life_scenarios.weekend}) {
        add(*s);
    }
    for (const auto& h : b.hobbies) add(h);
    for (const auto& phrase : e.typical_phrases) add(phrase);
    return text;
}

int keyword_score(std::string_view search_text, std::span<const std::string> keywords) {
    const auto haystack = to_lower(search_text);
    std::unordered_set<std::string> distinct;
    for (const auto& k : keywords) {
        const auto needle = to_lower(k);
        if (!needle.empty()) distinct.insert(needle);
    }
    int score = 0;
    for (const auto& needle : distinct) {
        if (haystack.find(needle) != std::string::npos) ++score;
    }
    return score;
}

std::vector<RankedProfile> select_profiles_by_keywords(std::span<const StaticProfile> pool,
                                                       std::span<const std::string> keywords, std::size_t k) {
    if (k == 0) throw std::invalid_argument("select_profiles_by_keywords: k must be at least 1");
    if (keywords.empty()) throw std::invalid_argument("select_profiles_by_keywords: keywords are empty");
    if (pool.empty()) throw EmptyPool("profile pool is empty");

    std::vector<int> scores(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) scores[i] = keyword_score(profile_search_text(pool[i]), keywords);

    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(std::min(k, pool.size()));

    std::vector<RankedProfile> out;
    out.reserve(order.size());
    for (auto idx : order) out.push_back(RankedProfile{idx, scores[idx], pool[idx]});
    return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string age_bucket(int age) {
    if (age < 0) return "invalid";
    const int lo = (age / 10) * 10;
    return std::to_string(lo) + "-" + std::to_string(lo + 9);
}

}  // namespace

DistributionReport pool_statistics(std::span<const StaticProfile> pool) {
    DistributionReport report;
    report.pool_size = pool.size();
    const std::vector<std::string> fields = {
        "background.age_bucket",   "background.gender",       "background.location",
        "background.occupation",   "background.income_tier",  "background.education",
        "background.health",       "background.marriage",     "personality.mbti",
        "expression_style.speech_rate", "expression_style.verbosity", "expression_style.emotion_intensity",
        "expression_style.politeness",  "expression_style.logic_orientation", "expression_style.patience",
        "expression_style.interruption_tendency", "expression_style.tone"};
    for (const auto& f : fields) report.histograms[f];

    for (const auto& p : pool) {
        const auto& b = p.background;
        const auto& e = p.expression_style;
        ++report.histograms["background.age_bucket"][age_bucket(b.age)];
        ++report.histograms["background.gender"][b.gender];
        ++report.histograms["background.location"][b.location];
        ++report.histograms["background.occupation"][b.occupation];
        ++report.histograms["background.income_tier"][b.income_tier];
        ++report.histograms["background.education"][b.education];
        ++report.histograms["background.health"][b.health];
        ++report.histograms["background.marriage"][b.marriage];
        ++report.histograms["personality.mbti"][p.personality.mbti];
        ++report.histograms["expression_style.speech_rate"][e.speech_rate];
        ++report.histograms["expression_style.verbosity"][e.verbosity];
        ++report.histograms["expression_style.emotion_intensity"][e.emotion_intensity];
        ++report.histograms["expression_style.politeness"][e.politeness];
        ++report.histograms["expression_style.logic_orientation"][e.logic_orientation];
        ++report.histograms["expression_style.patience"][e.patience];
        ++report.histograms["expression_style.interruption_tendency"][e.interruption_tendency];
        ++report.histograms["expression_style.tone"][e.tone];
        ++report.cross_table[{b.education, b.occupation, b.income_tier}];
    }
    return report;
}

json to_json(const DistributionReport& report) {
    json out;
    out["pool_size"] = report.pool_size;
    out["histograms"] = report.histograms;
    json cells = json::array();
    for (const auto& [key, count] : report.cross_table) {
        const auto& [edu, occ, inc] = key;
        cells.push_back({{"education", edu}, {"occupation", occ}, {"income_tier", inc}, {"count", count}});
    }
    out["education_occupation_income"] = cells;
    return out;
}

std::string render_text(const DistributionReport& report) {
    std::ostringstream out;
    out << "profiles: " << report.pool_size << "\n";
    for (const auto& [field, hist] : report.histograms) {
        out << "\n" << field << "\n";
        std::size_t width = 8;
        for (const auto& [value, _] : hist) width = std::max(width, value.size() + 2);
        for (const auto& [value, count] : hist) {
            const double share = report.pool_size == 0 ? 0.0 : 100.0 * static_cast<double>(count) / report.pool_size;
            out << "  " << std::left << std::setw(static_cast<int>(width)) << value << std::right << std::setw(8)
                << count << std::setw(8) << std::fixed << std::setprecision(1) << share << "%\n";
        }
    }
    out << "\neducation x occupation x income_tier\n";
    for (const auto& [key, count] : report.cross_table) {
        const auto& [edu, occ, inc] = key;
        out << "  " << edu << " | " << occ << " | " << inc << " : " << count << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------

std::vector<StaticProfile> read_profile_pool(const std::filesystem::path& path) {
    std::vector<StaticProfile> pool;
    for (const auto& record : read_jsonl(path)) pool.push_back(record.get<StaticProfile>());
    return pool;
}

void write_profile_pool(const std::filesystem::path& path, std::span<const StaticProfile> pool) {
    std::vector<json> records;
    records.reserve(pool.size());
    for (const auto& p : pool) records.emplace_back(p);
    write_jsonl(path, records);
}

std::vector<AgentTask> read_tasks(const std::filesystem::path& path) {
    std::vector<AgentTask> tasks;
    for (const auto& record : read_jsonl(path)) tasks.push_back(record.get<AgentTask>());
    return tasks;
}

std::vector<PreferenceRecord> read_preference_records(const std::filesystem::path& path) {
    std::vector<PreferenceRecord> out;
    for (const auto& record : read_jsonl(path)) out.push_back(record.get<PreferenceRecord>());
    return out;
}

}  // namespace usersim
