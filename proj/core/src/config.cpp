#include "usersim/config.hpp"

#include "usersim/adversarial.hpp"
#include "usersim/errors.hpp"
#include "usersim/templates.hpp"
#include "usersim/util.hpp"

namespace usersim {

std::string_view to_string(PairingStrategy s) {
    return s == PairingStrategy::round_robin ? "round-robin" : "uniform-random";
}

PairingStrategy pairing_strategy_from_string(std::string_view text) {
    if (text == "uniform-random") return PairingStrategy::uniform_random;
    if (text == "round-robin") return PairingStrategy::round_robin;
    throw ConfigError("unknown pairing strategy '" + std::string(text) + "' (expected uniform-random or round-robin)");
}

std::filesystem::path RunConfig::resolve(const std::string& path) const {
    if (path.empty()) return {};
    std::filesystem::path p(path);
    if (p.is_absolute() || base_dir.empty()) return p.lexically_normal();
    return (base_dir / p).lexically_normal();
}

std::filesystem::path RunConfig::data_path() const {
    return data_dir.empty() ? default_data_dir() : resolve(data_dir);
}

void RunConfig::validate() const {
    if (run_id.empty()) throw ConfigError("run_id must not be empty");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    if (judge_retries < 0) throw ConfigError("judge_retries must be >= 0");
    if (limits.max_turns < 1 || limits.max_parse_retries < 0 || limits.rollouts_per_turn < 1) {
        throw ConfigError("limits out of range");
    }
    if (traps.per_type < 1) throw ConfigError("traps.per_type must be >= 1");
    if (traps.max_history_turns < 1) throw ConfigError("traps.max_history_turns must be >= 1");
    for (const auto& t : traps.types) {
        try {
            (void)trap_type_from_string(t);
        } catch (const Error& e) {
            throw ConfigError(std::string("traps.types: ") + e.what());
        }
    }
    scoring.rubrics.validate();
    aggregation.validate();
    (void)composite_reward(1.0, 1.0, scoring.weights);
}

bool RunConfig::operator==(const RunConfig& o) const {
    return run_id == o.run_id && seed == o.seed && jobs == o.jobs && agent == o.agent && user == o.user &&
           judge == o.judge && generator == o.generator && raters == o.raters && profile_pool == o.profile_pool &&
           sops == o.sops && preference_records == o.preference_records && data_dir == o.data_dir &&
           output_dir == o.output_dir && pairing == o.pairing && limits == o.limits && scoring == o.scoring &&
           aggregation == o.aggregation && judge_retries == o.judge_retries && traps == o.traps &&
           allow_unreviewed == o.allow_unreviewed && record == o.record;
}

void to_json(json& j, const RunConfig& c) {
    j = json{{"run_id", c.run_id},
             {"seed", c.seed},
             {"jobs", c.jobs},
             {"backends", {{"agent", c.agent}, {"user", c.user}, {"judge", c.judge}, {"generator", c.generator}}},
             {"raters", c.raters},
             {"profile_pool", c.profile_pool},
             {"sops", c.sops},
             {"preference_records", c.preference_records},
             {"data_dir", c.data_dir},
             {"output_dir", c.output_dir},
             {"pairing", {{"n", c.pairing.n}, {"strategy", to_string(c.pairing.strategy)}}},
             {"limits", c.limits},
             {"scoring", c.scoring},
             {"aggregation", c.aggregation},
             {"judge_retries", c.judge_retries},
             {"traps",
              {{"per_type", c.traps.per_type},
               {"max_history_turns", c.traps.max_history_turns},
               {"types", c.traps.types}}},
             {"allow_unreviewed", c.allow_unreviewed},
             {"record", c.record}};
}

void from_json(const json& j, RunConfig& c) {
    static const std::vector<std::string> known = {
        "run_id",      "seed",        "jobs",   "backends",      "raters",        "profile_pool",
        "sops",        "preference_records",    "data_dir",      "output_dir",    "pairing",
        "limits",      "scoring",     "aggregation", "judge_retries", "traps",    "allow_unreviewed",
        "record"};
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config key '" + key + "'");
    }
    const auto base = c.base_dir;
    c = RunConfig{};
    c.base_dir = base;
    try {
        c.run_id = j.value("run_id", c.run_id);
        c.seed = j.value("seed", c.seed);
        c.jobs = j.value("jobs", c.jobs);
        if (j.contains("backends")) {
            const auto& b = j.at("backends");
            if (b.contains("agent")) c.agent = b.at("agent").get<BackendSpec>();
            if (b.contains("user")) c.user = b.at("user").get<BackendSpec>();
            if (b.contains("judge")) c.judge = b.at("judge").get<BackendSpec>();
            if (b.contains("generator")) c.generator = b.at("generator").get<BackendSpec>();
        }
        if (j.contains("raters")) c.raters = j.at("raters").get<std::vector<BackendSpec>>();
        c.profile_pool = j.value("profile_pool", std::string());
        c.sops = j.value("sops", std::string());
        c.preference_records = j.value("preference_records", std::string());
        c.data_dir = j.value("data_dir", std::string());
        c.output_dir = j.value("output_dir", c.output_dir);
        if (j.contains("pairing")) {
            const auto& p = j.at("pairing");
            c.pairing.n = p.value("n", std::size_t{0});
            c.pairing.strategy = pairing_strategy_from_string(p.value("strategy", std::string("uniform-random")));
        }
        if (j.contains("limits")) c.limits = j.at("limits").get<DialogueLimits>();
        if (j.contains("scoring")) c.scoring = j.at("scoring").get<ScoringConfig>();
        if (j.contains("aggregation")) c.aggregation = j.at("aggregation").get<AggregationConfig>();
        c.judge_retries = j.value("judge_retries", c.judge_retries);
        if (j.contains("traps")) {
            const auto& t = j.at("traps");
            c.traps.per_type = t.value("per_type", c.traps.per_type);
            c.traps.max_history_turns = t.value("max_history_turns", c.traps.max_history_turns);
            c.traps.types = t.value("types", std::vector<std::string>{});
        }
        c.allow_unreviewed = j.value("allow_unreviewed", false);
        c.record = j.value("record", false);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
}

std::string render_config(const RunConfig& c) {
    json j = c;
    return j.dump(2) + "\n";
}

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c;
    c.base_dir = base_dir;
    from_json(j, c);
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
    return parse_config(read_file(path), std::filesystem::absolute(path).parent_path());
}

namespace {

void resolve_backend(json& spec, const RunConfig& c) {
    if (spec.contains("store") && !spec.at("store").get<std::string>().empty()) {
        spec["store"] = c.resolve(spec.at("store").get<std::string>()).string();
    }
    if (spec.contains("record_to")) spec["record_to"] = c.resolve(spec.at("record_to").get<std::string>()).string();
}

}  // namespace

json resolved_config_json(const RunConfig& c) {
    json j = c;
    for (const char* path : {"profile_pool", "sops", "preference_records", "output_dir"}) {
        j[path] = c.resolve(j.at(path).get<std::string>()).string();
    }
    j["data_dir"] = c.data_path().lexically_normal().string();
    for (auto& [_, spec] : j.at("backends").items()) resolve_backend(spec, c);
    for (auto& spec : j.at("raters")) resolve_backend(spec, c);
    return j;
}

std::string config_hash(const RunConfig& c) { return sha256_hex(canonical_dump(resolved_config_json(c))); }

}  // namespace usersim
