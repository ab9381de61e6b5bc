#include "usersim/reward.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <regex>
#include <set>
#include <stdexcept>

#include "usersim/errors.hpp"

namespace usersim {

void RuleRewardConfig::validate() const {
    if (min_think_chars < 0) throw ConfigError("rule.min_think_chars must be non-negative");
    if (!(length_penalty_slope >= 0)) throw ConfigError("rule.length_penalty_slope must be non-negative");
    if (!(per_missing_field_deduction >= 0)) throw ConfigError("rule.per_missing_field_deduction must be non-negative");
}

void to_json(json& j, const RuleRewardConfig& c) {
    j = json{{"min_think_chars", c.min_think_chars},
             {"length_penalty_slope", c.length_penalty_slope},
             {"required_fields", c.required_fields},
             {"per_missing_field_deduction", c.per_missing_field_deduction}};
}

void from_json(const json& j, RuleRewardConfig& c) {
    c = RuleRewardConfig{};
    c.min_think_chars = j.value("min_think_chars", c.min_think_chars);
    c.length_penalty_slope = j.value("length_penalty_slope", c.length_penalty_slope);
    c.required_fields = j.value("required_fields", c.required_fields);
    c.per_missing_field_deduction = j.value("per_missing_field_deduction", c.per_missing_field_deduction);
    c.validate();
}

std::size_t think_length(std::string_view rationale) { return utf8_length(trim(rationale)); }

namespace {

bool is_envelope_key(const std::string& path) {
    const auto& keys = envelope_fields();
    return std::find(keys.begin(), keys.end(), path) != keys.end();
}

bool has_path(const json& root, const std::string& dotted) {
    const json* node = &root;
    std::size_t start = 0;
    while (true) {
        const auto dot = dotted.find('.', start);
        const auto key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object()) return false;
        auto it = node->find(key);
        if (it == node->end() || it->is_null()) return false;
        node = &*it;
        if (dot == std::string::npos) return true;
        start = dot + 1;
    }
}

}  // namespace

std::size_t missing_required_fields(const TurnParse& parsed, const RuleRewardConfig& cfg) {
    const std::vector<std::string> none;
    const json* answer = nullptr;
    const std::vector<std::string>* missing = &none;
    if (const auto* ok = std::get_if<ParsedTurn>(&parsed)) {
        answer = &ok->answer_json;
    } else {
        const auto& d = std::get<ParseDiagnostics>(parsed);
        if (d.answer_json) answer = &*d.answer_json;
        missing = &d.missing_fields;
    }
    std::size_t count = 0;
    for (const auto& path : cfg.required_fields) {
        if (is_envelope_key(path)) {
            if (answer == nullptr || std::find(missing->begin(), missing->end(), path) != missing->end()) ++count;
        } else if (answer == nullptr || !has_path(*answer, path)) {
            ++count;
        }
    }
    return count;
}

double rule_reward(const TurnParse& parsed, const RuleRewardConfig& cfg) {
    if (const auto* d = std::get_if<ParseDiagnostics>(&parsed); d != nullptr && d->has_structural_defect()) return 0.0;

    const auto rationale = rationale_of(parsed).value_or("");
    double score = 1.0;
    const auto length = static_cast<double>(think_length(rationale));
    const auto minimum = static_cast<double>(cfg.min_think_chars);
    if (cfg.min_think_chars > 0 && length < minimum) {
        score -= cfg.length_penalty_slope * (minimum - length) / minimum;
    }
    score -= cfg.per_missing_field_deduction * static_cast<double>(missing_required_fields(parsed, cfg));
    return std::clamp(score, 0.0, 1.0);
}

// ---------------------------------------------------------------------------

double RubricScale::normalize(double verdict) const { return std::clamp((verdict - lo) / (hi - lo), 0.0, 1.0); }

bool RubricScale::accepts(double verdict) const {
    if (!std::isfinite(verdict) || verdict < lo || verdict > hi) return false;
    return !integral || std::floor(verdict) == verdict;
}

RubricSet RubricSet::defaults() {
    RubricSet s;
    for (const char* name : {"response_consistency", "reasoning_quality", "alignment", "strategic_capability"}) {
        s.rubrics.push_back(RubricSpec{name, std::string("rubric/") + name, RubricScale{}});
    }
    return s;
}

void RubricSet::validate() const {
    if (rubrics.empty()) throw ConfigError("rubric set is empty");
    std::set<std::string> names;
    for (const auto& r : rubrics) {
        if (r.name.empty()) throw ConfigError("rubric without a name");
        if (!names.insert(r.name).second) throw ConfigError("duplicate rubric '" + r.name + "'");
        if (!(r.scale.hi > r.scale.lo)) throw ConfigError("rubric '" + r.name + "' has an empty scale");
    }
}

void to_json(json& j, const RubricSet& s) {
    j = json::array();
    for (const auto& r : s.rubrics) {
        j.push_back({{"name", r.name},
                     {"template", r.template_name},
                     {"scale", {{"lo", r.scale.lo}, {"hi", r.scale.hi}, {"integral", r.scale.integral}}}});
    }
}

void from_json(const json& j, RubricSet& s) {
    s = RubricSet{};
    for (const auto& r : j) {
        RubricSpec spec;
        spec.name = r.at("name").get<std::string>();
        spec.template_name = r.value("template", "rubric/" + spec.name);
        if (auto it = r.find("scale"); it != r.end()) {
            spec.scale.lo = it->value("lo", spec.scale.lo);
            spec.scale.hi = it->value("hi", spec.scale.hi);
            spec.scale.integral = it->value("integral", spec.scale.integral);
        }
        s.rubrics.push_back(std::move(spec));
    }
    s.validate();
}

std::optional<double> parse_score_line(std::string_view verdict) {
    static const std::regex line_re(R"(^SCORE:[ \t]*([-+]?[0-9]+(?:\.[0-9]+)?)[ \t]*$)");
    auto lines = split_lines(verdict);
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    if (lines.empty()) return std::nullopt;
    const auto last = trim(lines.back());
    std::smatch m;
    if (!std::regex_match(last, m, line_re)) return std::nullopt;
    return std::stod(m[1].str());
}

double rubric_mean(std::span<const double> scores) {
    if (scores.empty()) return 0.0;
    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    return std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
}

RubricResult rubric_reward(const RubricInputs& inputs, const RubricSet& rubrics, ChatBackend& judge,
                           const TemplateStore& templates, const RubricOptions& options) {
    rubrics.validate();
    RubricResult result;
    std::vector<double> values;
    for (const auto& spec : rubrics.rubrics) {
        const auto prompt = fill_placeholders(templates.body(spec.template_name), {{"rationale", inputs.rationale},
                                                                                   {"reply", inputs.reply},
                                                                                   {"profile", inputs.profile},
                                                                                   {"context", inputs.context}});
        const std::vector<Message> messages = {{Role::user, prompt}};
        RubricCall call;
        call.rubric = spec.name;
        for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
            auto params = options.params;
            params.seed = params.seed.value_or(0) + static_cast<std::uint64_t>(attempt);
            if (attempt == 0) call.prompt_hash = prompt_hash(messages, params);
            call.raw_verdicts.push_back(judge.chat(messages, params).text);
            const auto v = parse_score_line(call.raw_verdicts.back());
            if (v && spec.scale.accepts(*v)) {
                call.verdict = v;
                break;
            }
        }
        if (call.verdict) {
            call.score = spec.scale.normalize(*call.verdict);
        } else {
            call.flagged = true;
            result.flagged.push_back(spec.name);
        }
        values.push_back(call.score);
        result.scores[spec.name] = call.score;
        result.calls.push_back(std::move(call));
    }
    result.r_rubric = rubric_mean(values);
    return result;
}

// ---------------------------------------------------------------------------

void RewardWeights::validate() const {
    if (!(w_rule >= 0) || !(w_rubric >= 0)) throw WeightError("reward weights must be non-negative");
    if (std::abs(w_rule + w_rubric - 1.0) > 1e-9) {
        throw WeightError("reward weights must sum to 1 (got " + std::to_string(w_rule + w_rubric) + ")");
    }
}

double composite_reward(double r_rule, double r_rubric, const RewardWeights& weights) {
    weights.validate();
    if (r_rule == 0.0) return 0.0;
    return std::clamp(weights.w_rule * r_rule + weights.w_rubric * r_rubric, 0.0, 1.0);
}

std::vector<double> grpo_advantages(std::span<const double> group_rewards, double eps) {
    if (group_rewards.size() < 2) throw GroupTooSmall("advantage groups need at least two rewards");
    if (!(eps > 0) || !std::isfinite(eps)) throw std::invalid_argument("grpo_advantages: eps must be positive");
    const auto n = static_cast<double>(group_rewards.size());
    // Mean taken relative to the first reward so a constant group centres to exact zeros.
    const double base = group_rewards.front();
    double shifted = 0.0;
    for (double r : group_rewards) shifted += r - base;
    const double mean = base + shifted / n;
    double ss = 0.0;
    for (double r : group_rewards) ss += (r - mean) * (r - mean);
    const double denom = std::sqrt(ss / n) + eps;
    std::vector<double> out;
    out.reserve(group_rewards.size());
    for (double r : group_rewards) out.push_back((r - mean) / denom);
    return out;
}

// ---------------------------------------------------------------------------

void to_json(json& j, const RewardRecord& r) {
    j = json{{"dialogue_id", r.dialogue_id},
             {"turn", r.turn},
             {"rollout", r.rollout},
             {"group_key", r.group_key},
             {"prompt_hash", r.prompt_hash},
             {"output", r.output},
             {"r_rule", r.r_rule},
             {"rubric_scores", r.rubric_scores},
             {"flagged_rubrics", r.flagged_rubrics},
             {"rubric_skipped", r.rubric_skipped},
             {"r_rubric", r.r_rubric},
             {"composite", r.composite},
             {"advantage", r.advantage ? json(*r.advantage) : json(nullptr)},
             {"audit", r.audit}};
}

void from_json(const json& j, RewardRecord& r) {
    r = RewardRecord{};
    r.dialogue_id = j.at("dialogue_id").get<std::string>();
    r.turn = j.at("turn").get<int>();
    r.rollout = j.value("rollout", 0);
    r.group_key = j.value("group_key", default_group_key(r.dialogue_id, r.turn));
    r.prompt_hash = j.value("prompt_hash", std::string());
    r.output = j.value("output", std::string());
    r.r_rule = j.at("r_rule").get<double>();
    r.rubric_scores = j.value("rubric_scores", std::map<std::string, double>{});
    r.flagged_rubrics = j.value("flagged_rubrics", std::vector<std::string>{});
    r.rubric_skipped = j.value("rubric_skipped", false);
    r.r_rubric = j.at("r_rubric").get<double>();
    r.composite = j.at("composite").get<double>();
    if (j.contains("advantage") && !j.at("advantage").is_null()) r.advantage = j.at("advantage").get<double>();
    r.audit = j.value("audit", json::array());
}

std::string default_group_key(std::string_view dialogue_id, int turn) {
    return std::string(dialogue_id) + "#" + std::to_string(turn);
}

void to_json(json& j, const ScoringConfig& c) {
    j = json{{"rule", c.rule},
             {"rubrics", c.rubrics},
             {"weights", {{"rule", c.weights.w_rule}, {"rubric", c.weights.w_rubric}}},
             {"judge_retries", c.judge_retries},
             {"context_turns", c.context_turns},
             {"judge_params", c.judge_params}};
}

void from_json(const json& j, ScoringConfig& c) {
    c = ScoringConfig{};
    if (auto it = j.find("rule"); it != j.end()) c.rule = it->get<RuleRewardConfig>();
    if (auto it = j.find("rubrics"); it != j.end()) c.rubrics = it->get<RubricSet>();
    if (auto it = j.find("weights"); it != j.end()) {
        c.weights.w_rule = it->value("rule", c.weights.w_rule);
        c.weights.w_rubric = it->value("rubric", c.weights.w_rubric);
        c.weights.validate();
    }
    c.judge_retries = j.value("judge_retries", c.judge_retries);
    c.context_turns = j.value("context_turns", c.context_turns);
    if (auto it = j.find("judge_params"); it != j.end()) c.judge_params = it->get<ChatParams>();
    if (c.judge_retries < 0) throw ConfigError("scoring.judge_retries must be non-negative");
    if (c.context_turns < 0) throw ConfigError("scoring.context_turns must be non-negative");
}

std::string rubric_context(const Dialogue& dialogue, std::size_t turn_position, int prior_turns) {
    std::string out;
    const auto first = turn_position > static_cast<std::size_t>(prior_turns) ? turn_position - prior_turns : 0;
    for (auto k = first; k < turn_position; ++k) {
        out += "AGENT: " + dialogue.turns[k].agent_utterance + "\n";
        out += "USER: " + dialogue.turns[k].reply + "\n";
    }
    out += "AGENT: " + dialogue.turns.at(turn_position).agent_utterance;
    return out;
}

std::vector<RewardRecord> score_dialogue(const Dialogue& dialogue, const ScoringConfig& config, ChatBackend& judge,
                                         const TemplateStore& templates, const EnvelopeOptions& envelope) {
    config.rule.validate();
    config.rubrics.validate();
    config.weights.validate();
    const auto profile = static_profile_to_ordered_json(dialogue.static_profile).dump(2);
    RubricOptions rubric_options{config.judge_retries, config.judge_params};

    std::vector<RewardRecord> out;
    for (std::size_t k = 0; k < dialogue.turns.size(); ++k) {
        const auto& turn = dialogue.turns[k];
        const auto context = rubric_context(dialogue, k, config.context_turns);
        std::vector<std::pair<int, const std::string*>> outputs = {{0, &turn.raw_user_output}};
        for (const auto& r : turn.rollouts) outputs.emplace_back(r.index, &r.raw_output);

        for (const auto& [rollout, raw] : outputs) {
            RewardRecord rec;
            rec.dialogue_id = dialogue.dialogue_id;
            rec.turn = turn.index;
            rec.rollout = rollout;
            rec.group_key = default_group_key(dialogue.dialogue_id, turn.index);
            rec.prompt_hash = turn.prompt_hash;
            rec.output = *raw;
            const auto parsed = parse_turn_output(*raw, envelope);
            rec.r_rule = rule_reward(parsed, config.rule);
            if (rec.r_rule > 0.0) {
                const RubricInputs inputs{rationale_of(parsed).value_or(""), reply_of(parsed, *raw), profile, context};
                auto result = rubric_reward(inputs, config.rubrics, judge, templates, rubric_options);
                rec.rubric_scores = result.scores;
                rec.flagged_rubrics = result.flagged;
                rec.r_rubric = result.r_rubric;
                for (const auto& call : result.calls) {
                    rec.audit.push_back({{"rubric", call.rubric},
                                         {"prompt_hash", call.prompt_hash},
                                         {"raw_verdicts", call.raw_verdicts},
                                         {"verdict", call.verdict ? json(*call.verdict) : json(nullptr)},
                                         {"flagged", call.flagged}});
                }
            } else {
                rec.rubric_skipped = true;
            }
            rec.composite = composite_reward(rec.r_rule, rec.r_rubric, config.weights);
            out.push_back(std::move(rec));
        }
    }
    return out;
}

namespace {

bool member_less(const RewardRecord& a, const RewardRecord& b) {
    return std::tie(a.dialogue_id, a.turn, a.rollout) < std::tie(b.dialogue_id, b.turn, b.rollout);
}

std::map<std::string, std::vector<std::size_t>> group_indices(std::span<const RewardRecord> records) {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < records.size(); ++i) groups[records[i].group_key].push_back(i);
    for (auto& [key, members] : groups) {
        std::stable_sort(members.begin(), members.end(),
                         [&](std::size_t a, std::size_t b) { return member_less(records[a], records[b]); });
        const auto& hash = records[members.front()].prompt_hash;
        for (auto i : members) {
            if (records[i].prompt_hash != hash) {
                throw MixedPromptGroup(key, "group '" + key + "' mixes prompt hashes " + hash.substr(0, 12) +
                                                " and " + records[i].prompt_hash.substr(0, 12));
            }
        }
        if (members.size() < 2) {
            throw GroupTooSmall("group '" + key + "' has a single member; simulate with rollouts_per_turn >= 2");
        }
    }
    return groups;
}

}  // namespace

void assign_advantages(std::vector<RewardRecord>& records, double eps) {
    for (const auto& [key, members] : group_indices(records)) {
        std::vector<double> rewards;
        for (auto i : members) rewards.push_back(records[i].composite);
        const auto adv = grpo_advantages(rewards, eps);
        for (std::size_t m = 0; m < members.size(); ++m) records[members[m]].advantage = adv[m];
    }
}

std::vector<json> build_rl_batch(std::span<const RewardRecord> records, double eps) {
    std::vector<RewardRecord> copy(records.begin(), records.end());
    assign_advantages(copy, eps);
    std::vector<json> out;
    for (const auto& [key, members] : group_indices(copy)) {
        json list = json::array();
        for (auto i : members) {
            const auto& r = copy[i];
            list.push_back({{"dialogue_id", r.dialogue_id},
                            {"turn", r.turn},
                            {"rollout", r.rollout},
                            {"output", r.output},
                            {"r_rule", r.r_rule},
                            {"r_rubric", r.r_rubric},
                            {"reward", r.composite},
                            {"advantage", *r.advantage}});
        }
        out.push_back({{"group_key", key},
                       {"prompt_hash", copy[members.front()].prompt_hash},
                       {"size", members.size()},
                       {"members", list}});
    }
    return out;
}

void export_rl_batch(const std::filesystem::path& path, std::span<const RewardRecord> records, double eps) {
    write_jsonl(path, build_rl_batch(records, eps));
}

}  // namespace usersim
