#include "usersim/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "usersim/errors.hpp"
#include "usersim/reward.hpp"

namespace usersim {

namespace {

bool known_metric(const std::string& name, std::span<const std::string_view> metrics) {
    return std::find(metrics.begin(), metrics.end(), name) != metrics.end();
}

void check_weights(const std::map<std::string, double>& weights, std::span<const std::string_view> metrics,
                   const char* what) {
    double sum = 0.0;
    for (const auto& [name, w] : weights) {
        if (!known_metric(name, metrics)) throw ConfigError(std::string(what) + ": unknown metric '" + name + "'");
        if (!(w >= 0) || !std::isfinite(w)) throw ConfigError(std::string(what) + ": weight of '" + name + "' is invalid");
        sum += w;
    }
    if (!(sum > 0)) throw ConfigError(std::string(what) + ": weights sum to zero");
}

std::string describe(const std::map<std::string, double>& weights) {
    std::string names;
    std::set<double> distinct;
    for (const auto& [name, w] : weights) {
        if (w <= 0) continue;
        if (!names.empty()) names += ", ";
        names += name == "robotic" ? "100-robotic" : name;
        distinct.insert(w);
    }
    return (distinct.size() <= 1 ? "unweighted mean of " : "weighted mean of ") + names;
}

}  // namespace

void AggregationConfig::validate() const {
    check_weights(session_weights, kSessionMetrics, "session_weights");
    check_weights(turn_weights, kTurnMetrics, "turn_weights");
}

std::string AggregationConfig::caveat() const {
    return "note: session Total = " + describe(session_weights) + "; turn Total = " + describe(turn_weights) +
           (turn_weights.count("robotic") && turn_weights.at("robotic") > 0 ? "" : " (robotic excluded)") +
           ". These are configurable defaults, not an established definition.";
}

void to_json(json& j, const AggregationConfig& c) {
    j = json{{"session_weights", c.session_weights}, {"turn_weights", c.turn_weights}};
}

void from_json(const json& j, AggregationConfig& c) {
    c = AggregationConfig{};
    if (j.contains("session_weights")) c.session_weights = j.at("session_weights").get<std::map<std::string, double>>();
    if (j.contains("turn_weights")) c.turn_weights = j.at("turn_weights").get<std::map<std::string, double>>();
    c.validate();
}

std::optional<double> parse_metric_score(std::string_view verdict) {
    const auto v = parse_score_line(verdict);
    if (!v || *v < 0 || *v > 100 || std::floor(*v) != *v) return std::nullopt;
    return v;
}

// ---------------------------------------------------------------------------

std::optional<double> SessionScorecard::metric(std::string_view name) const {
    if (name == "role") return role;
    if (name == "interaction") return interaction;
    if (name == "goal") return goal;
    if (name == "total") return total;
    return std::nullopt;
}

std::optional<double> TurnScorecard::metric(std::string_view name) const {
    if (name == "robotic") return robotic;
    if (name == "cot") return cot;
    if (name == "strategy") return strategy;
    if (name == "persona") return persona;
    if (name == "consistency") return consistency;
    if (name == "total") return total;
    return std::nullopt;
}

namespace {

json verdicts_json(const std::vector<MetricVerdict>& vs) {
    json out = json::array();
    for (const auto& v : vs) {
        out.push_back({{"metric", v.metric}, {"prompt_hash", v.prompt_hash}, {"raw", v.raw}, {"value", v.value}});
    }
    return out;
}

std::vector<MetricVerdict> verdicts_from_json(const json& j) {
    std::vector<MetricVerdict> out;
    for (const auto& v : j) {
        out.push_back({v.at("metric").get<std::string>(), v.value("prompt_hash", std::string()),
                       v.at("raw").get<std::vector<std::string>>(), v.at("value").get<double>()});
    }
    return out;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

}  // namespace

void to_json(json& j, const SessionScorecard& c) {
    j = json{{"run_id", c.run_id},   {"item_id", c.item_id},         {"role", c.role},
             {"interaction", c.interaction}, {"goal", c.goal},       {"total", c.total},
             {"verdicts", verdicts_json(c.verdicts)}};
}

void from_json(const json& j, SessionScorecard& c) {
    c = SessionScorecard{};
    c.run_id = j.value("run_id", std::string());
    c.item_id = j.at("item_id").get<std::string>();
    c.role = j.at("role").get<double>();
    c.interaction = j.at("interaction").get<double>();
    c.goal = j.at("goal").get<double>();
    c.total = j.at("total").get<double>();
    c.verdicts = verdicts_from_json(j.value("verdicts", json::array()));
}

void to_json(json& j, const TurnScorecard& c) {
    j = json{{"run_id", c.run_id},
             {"item_id", c.item_id},
             {"trap_type", c.trap_type},
             {"robotic", opt(c.robotic)},
             {"cot", opt(c.cot)},
             {"strategy", opt(c.strategy)},
             {"persona", opt(c.persona)},
             {"consistency", opt(c.consistency)},
             {"total", opt(c.total)},
             {"verdicts", verdicts_json(c.verdicts)}};
}

void from_json(const json& j, TurnScorecard& c) {
    c = TurnScorecard{};
    c.run_id = j.value("run_id", std::string());
    c.item_id = j.at("item_id").get<std::string>();
    c.trap_type = j.value("trap_type", std::string());
    c.robotic = opt_from(j, "robotic");
    c.cot = opt_from(j, "cot");
    c.strategy = opt_from(j, "strategy");
    c.persona = opt_from(j, "persona");
    c.consistency = opt_from(j, "consistency");
    c.total = opt_from(j, "total");
    c.verdicts = verdicts_from_json(j.value("verdicts", json::array()));
}

double session_total(const SessionScorecard& c, const AggregationConfig& cfg) {
    double num = 0.0;
    double den = 0.0;
    for (const auto& [name, w] : cfg.session_weights) {
        if (w <= 0) continue;
        num += w * *c.metric(name);
        den += w;
    }
    return num / den;
}

std::optional<double> turn_total(const TurnScorecard& c, const AggregationConfig& cfg) {
    double num = 0.0;
    double den = 0.0;
    for (const auto& [name, w] : cfg.turn_weights) {
        if (w <= 0) continue;
        const auto v = c.metric(name);
        if (!v) return std::nullopt;
        num += w * (name == "robotic" ? 100.0 - *v : *v);
        den += w;
    }
    return num / den;
}

std::string render_dialogue_text(const Dialogue& d) {
    std::string out;
    for (const auto& t : d.turns) {
        out += "AGENT: " + t.agent_utterance + "\n";
        out += "USER: " + t.reply + "\n";
    }
    return out;
}

namespace {

MetricVerdict judge_metric(const std::string& metric, const std::vector<std::pair<std::string, std::string>>& values,
                           ChatBackend& judge, const TemplateStore& templates, const JudgeOptions& options) {
    const auto prompt = fill_placeholders(templates.body("judge/" + metric), values);
    const std::vector<Message> messages = {{Role::user, prompt}};
    MetricVerdict v;
    v.metric = metric;
    for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
        auto params = options.params;
        params.seed = params.seed.value_or(0) + static_cast<std::uint64_t>(attempt);
        if (attempt == 0) v.prompt_hash = prompt_hash(messages, params);
        v.raw.push_back(judge.chat(messages, params).text);
        if (const auto score = parse_metric_score(v.raw.back())) {
            v.value = *score;
            return v;
        }
    }
    throw JudgeFormatError(metric, "no `SCORE: <0-100>` line after " + std::to_string(options.max_retries + 1) +
                                       " attempts");
}

std::string dialogue_profile(const StaticProfile& sp, const std::string& memory) {
    auto out = static_profile_to_ordered_json(sp).dump(2);
    if (!memory.empty()) out += "\n\nScenario memory:\n" + memory;
    return out;
}

}  // namespace

SessionScorecard judge_session(const Dialogue& d, ChatBackend& judge, const TemplateStore& templates,
                               const JudgeOptions& options, std::string run_id) {
    options.aggregation.validate();
    const std::vector<std::pair<std::string, std::string>> values = {
        {"profile", dialogue_profile(d.static_profile, d.initial_dynamic.scenario_memory)},
        {"scenario", d.task.scenario_label},
        {"transcript", render_dialogue_text(d)}};
    SessionScorecard c;
    c.run_id = std::move(run_id);
    c.item_id = d.dialogue_id;
    for (auto metric : kSessionMetrics) c.verdicts.push_back(judge_metric(std::string(metric), values, judge, templates, options));
    c.role = c.verdicts[0].value;
    c.interaction = c.verdicts[1].value;
    c.goal = c.verdicts[2].value;
    c.total = session_total(c, options.aggregation);
    return c;
}

TurnScorecard judge_turn(const TrapResponse& response, ChatBackend& judge, const TemplateStore& templates,
                         const JudgeOptions& options, std::string run_id) {
    options.aggregation.validate();
    std::string history;
    const auto& ctx = response.payload.context;
    for (std::size_t i = 0; i + 1 < ctx.size(); ++i) {
        history += std::string(ctx[i].speaker == Speaker::agent ? "AGENT: " : "USER: ") + ctx[i].text + "\n";
    }
    const std::vector<std::pair<std::string, std::string>> values = {
        {"profile", response.payload.static_profile},
        {"transcript", history},
        {"trap_turn", ctx.empty() ? std::string() : ctx.back().text},
        {"rationale", response.rationale},
        {"reply", response.reply}};

    TurnScorecard c;
    c.run_id = std::move(run_id);
    c.item_id = response.sample_id;
    c.trap_type = std::string(to_string(response.trap_type));
    const bool has_rationale = !trim(response.rationale).empty();
    for (auto m : kTurnMetrics) {
        const std::string metric(m);
        if (!has_rationale && (metric == "cot" || metric == "consistency")) continue;
        auto v = judge_metric(metric, values, judge, templates, options);
        const double value = v.value;
        c.verdicts.push_back(std::move(v));
        if (metric == "robotic") c.robotic = value;
        else if (metric == "cot") c.cot = value;
        else if (metric == "strategy") c.strategy = value;
        else if (metric == "persona") c.persona = value;
        else c.consistency = value;
    }
    c.total = turn_total(c, options.aggregation);
    return c;
}

namespace {

double reparse(const MetricVerdict& v) {
    if (v.raw.empty()) throw JudgeFormatError(v.metric, "no stored verdict");
    const auto score = parse_metric_score(v.raw.back());
    if (!score) throw JudgeFormatError(v.metric, "stored verdict has no SCORE line");
    return *score;
}

}  // namespace

SessionScorecard rescore_session(const SessionScorecard& c, const AggregationConfig& cfg) {
    SessionScorecard out = c;
    for (auto& v : out.verdicts) {
        v.value = reparse(v);
        if (v.metric == "role") out.role = v.value;
        else if (v.metric == "interaction") out.interaction = v.value;
        else if (v.metric == "goal") out.goal = v.value;
    }
    out.total = session_total(out, cfg);
    return out;
}

TurnScorecard rescore_turn(const TurnScorecard& c, const AggregationConfig& cfg) {
    TurnScorecard out = c;
    out.robotic = out.cot = out.strategy = out.persona = out.consistency = std::nullopt;
    for (auto& v : out.verdicts) {
        v.value = reparse(v);
        if (v.metric == "robotic") out.robotic = v.value;
        else if (v.metric == "cot") out.cot = v.value;
        else if (v.metric == "strategy") out.strategy = v.value;
        else if (v.metric == "persona") out.persona = v.value;
        else if (v.metric == "consistency") out.consistency = v.value;
    }
    out.total = turn_total(out, cfg);
    return out;
}

// ---------------------------------------------------------------------------

namespace {

template <typename Card, typename GroupOf>
AggregateTable aggregate_cards(std::span<const Card> cards, std::vector<std::string> metrics, GroupOf group_of,
                               std::string level, const AggregationConfig& cfg) {
    if (cards.empty()) throw std::invalid_argument("aggregate: no scorecards");
    std::map<std::string, std::vector<const Card*>> groups;
    for (const auto& c : cards) groups[group_of(c)].push_back(&c);

    AggregateTable table;
    table.level = std::move(level);
    table.metrics = metrics;
    table.caveat = cfg.caveat();
    for (const auto& [group, members] : groups) {
        AggregateRow row;
        row.group = group;
        row.count = members.size();
        for (const auto& m : metrics) {
            double sum = 0.0;
            std::size_t n = 0;
            for (const auto* c : members) {
                if (const auto v = c->metric(m)) {
                    sum += *v;
                    ++n;
                }
            }
            row.present[m] = n;
            row.means[m] = n == 0 ? std::nullopt : std::optional<double>(sum / static_cast<double>(n));
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace

AggregateTable aggregate(std::span<const SessionScorecard> cards, std::string_view group_by,
                         const AggregationConfig& cfg) {
    std::vector<std::string> metrics = {"role", "interaction", "goal", "total"};
    if (group_by == "none") {
        return aggregate_cards(cards, metrics, [](const SessionScorecard&) { return std::string("all"); }, "session", cfg);
    }
    if (group_by == "run") {
        return aggregate_cards(cards, metrics, [](const SessionScorecard& c) { return c.run_id; }, "session", cfg);
    }
    throw std::invalid_argument("aggregate: cannot group session scorecards by '" + std::string(group_by) + "'");
}

AggregateTable aggregate(std::span<const TurnScorecard> cards, std::string_view group_by,
                         const AggregationConfig& cfg) {
    std::vector<std::string> metrics = {"robotic", "cot", "strategy", "persona", "consistency", "total"};
    if (group_by == "none") {
        return aggregate_cards(cards, metrics, [](const TurnScorecard&) { return std::string("all"); }, "turn", cfg);
    }
    if (group_by == "run") {
        return aggregate_cards(cards, metrics, [](const TurnScorecard& c) { return c.run_id; }, "turn", cfg);
    }
    if (group_by == "trap_type") {
        return aggregate_cards(cards, metrics, [](const TurnScorecard& c) { return c.trap_type; }, "turn", cfg);
    }
    throw std::invalid_argument("aggregate: cannot group turn scorecards by '" + std::string(group_by) + "'");
}

std::string render_table(const AggregateTable& table) {
    std::size_t group_width = 5;
    for (const auto& r : table.rows) group_width = std::max(group_width, r.group.size());
    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(group_width + 2)) << "group" << std::right << std::setw(6) << "n";
    for (const auto& m : table.metrics) out << std::setw(13) << m;
    out << "\n";
    for (const auto& r : table.rows) {
        out << std::left << std::setw(static_cast<int>(group_width + 2)) << r.group << std::right << std::setw(6)
            << r.count;
        for (const auto& m : table.metrics) {
            const auto& v = r.means.at(m);
            if (v) {
                out << std::setw(13) << std::fixed << std::setprecision(2) << *v;
            } else {
                out << std::setw(13) << "-";
            }
        }
        out << "\n";
    }
    out << table.caveat << "\n";
    return out.str();
}

json to_json(const AggregateTable& table) {
    json rows = json::array();
    for (const auto& r : table.rows) {
        json means = json::object();
        for (const auto& [m, v] : r.means) means[m] = v ? json(*v) : json(nullptr);
        rows.push_back({{"group", r.group}, {"count", r.count}, {"means", means}, {"present", r.present}});
    }
    return json{{"level", table.level}, {"metrics", table.metrics}, {"rows", rows}, {"caveat", table.caveat}};
}

}  // namespace usersim
