#include "fixtures.hpp"

#include <atomic>
#include <random>

#include "usersim/rng.hpp"

namespace usersim::fixture {

namespace fs = std::filesystem;

const OptionLists& option_lists() {
    static const OptionLists lists = OptionLists::load(default_data_dir() / "option_lists.json");
    return lists;
}

const TemplateStore& templates() {
    static const TemplateStore store = TemplateStore::load(default_data_dir() / "templates");
    return store;
}

StaticProfile make_profile(const std::string& id, const std::string& name) {
    StaticProfile p;
    p.profile_id = id;
    p.background = {name, 34, "female", "Hangzhou", "nurse", "middle", "bachelor", "good", "married",
                    {"hiking", "reading"}, "{phone}"};
    p.personality = {"Warm and cautious; trusting once reassured, anxious about hidden fees.", "ISFJ"};
    p.expression_style = {"moderate", "concise",   "calm",     "polite", "balanced",
                          "average",  "sometimes", "friendly", {"Could you say that again?", "Okay, fine."}};
    p.life_scenarios = {"Shifts at the hospital, calls on the bus home.", "Markets with her kids."};
    return p;
}

std::vector<StaticProfile> synthetic_pool(std::size_t n) {
    const auto& o = option_lists();
    const auto pick = [&](const std::string& field, std::size_t i) {
        const auto& values = *o.find(field);
        return values[i % values.size()];
    };
    static const std::vector<std::string> descriptions = {
        "Trusting and agreeable, easily reassured by a warm voice.",
        "Impulsive and enthusiastic, hates missing a deal.",
        "Frugal, watches every cost, often busy and distracted.",
        "Suspicious and sensitive, an introvert who is cautious with strangers.",
        "Respects authority and expert opinion; traditional.",
        "Slow and methodical, gets confused when rushed; elderly.",
        "Impatient and blunt, short-tempered when kept waiting.",
        "Careless and relaxed, a bit forgetful about details.",
        "Eager, cooperative and polite; a people-pleasing type.",
        "Practical and efficient, always in a hurry.",
    };
    static const std::vector<std::string> occupations = {"teacher", "driver", "engineer", "retired clerk",
                                                         "shop owner", "student", "nurse"};
    static const std::vector<std::string> mbti = {"ISFJ", "ENFP", "ISTJ", "INTP", "ESTJ", "INFJ", "ESTP"};
    std::vector<StaticProfile> pool;
    pool.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "p%04zu", i);
        auto p = make_profile(id, "User " + std::to_string(i));
        p.background.age = 18 + static_cast<int>((i * 7) % 62);
        p.background.gender = pick("background.gender", i);
        p.background.income_tier = pick("background.income_tier", i / 2);
        p.background.education = pick("background.education", i / 3);
        p.background.health = pick("background.health", i / 5);
        p.background.marriage = pick("background.marriage", i / 7);
        p.background.occupation = occupations[i % occupations.size()];
        p.personality.description = descriptions[i % descriptions.size()];
        p.personality.mbti = mbti[i % mbti.size()];
        p.expression_style.speech_rate = pick("expression_style.speech_rate", i);
        p.expression_style.verbosity = pick("expression_style.verbosity", i / 3);
        p.expression_style.patience = pick("expression_style.patience", i / 2);
        p.expression_style.tone = pick("expression_style.tone", i);
        pool.push_back(std::move(p));
    }
    return pool;
}

AgentTask make_task(const std::string& id, const std::string& label) {
    AgentTask t;
    t.sop_id = id;
    t.scenario_label = label;
    t.sop_text = "Call {name} about the mobile plan renewal. Confirm identity, explain the renewal offer, "
                 "answer questions about fees, and record the decision.";
    t.system_message = "You are a customer service agent. " + t.sop_text;
    return t;
}

std::vector<AgentTask> synthetic_sops(std::size_t n) {
    static const std::vector<std::string> labels = {"telecom", "insurance", "e_commerce", "financial_services",
                                                    "after_sales", "healthcare"};
    std::vector<AgentTask> sops;
    for (std::size_t i = 0; i < n; ++i) sops.push_back(make_task("sop-" + std::to_string(i), labels[i % labels.size()]));
    return sops;
}

std::string rationale_of_length(std::size_t chars, char fill) { return std::string(chars, fill); }

AnswerEnvelope make_envelope(const std::string& utterance, bool end, StateValues state) {
    AnswerEnvelope e;
    e.utterance = utterance;
    e.state = state;
    e.touched_concerns = {"renewal fee"};
    e.core_issues = {"is the price going up"};
    e.topic_management = "stay on the renewal";
    e.planning = "ask about the monthly fee";
    e.target_list = {{"renewal fee", "contract length"}, {"data allowance"}};
    e.end_session = end;
    return e;
}

std::string valid_turn(const std::string& utterance, bool end, StateValues state) {
    return render_turn_output(
        "I am a careful caller and want to know what this renewal costs before I agree to anything. The agent "
        "sounds friendly but has not mentioned the monthly fee yet, so I should ask directly and keep the call "
        "short because I am on my break.",
        make_envelope(utterance, end, state));
}

std::shared_ptr<ScriptedBackend> simulator(int end_turn, std::string name) {
    auto responder = [end_turn](std::span<const Message> messages, const ChatParams& params) {
        int turn = 0;
        for (const auto& m : messages) turn += m.role == Role::user ? 1 : 0;
        const std::uint64_t seed = params.seed.value_or(0);
        const std::size_t length = 170 + static_cast<std::size_t>(seed % 61);
        const bool end = end_turn > 0 && turn >= end_turn;
        StateValues state;
        state.patience = turn > 2 ? Level::low : Level::neutral;
        return ScriptedReply{render_turn_output(rationale_of_length(length, 'a' + static_cast<char>(turn % 26)),
                                                make_envelope("Reply " + std::to_string(turn), end, state))};
    };
    return std::make_shared<ScriptedBackend>(responder, std::move(name));
}

std::shared_ptr<ScriptedBackend> agent(std::string name) {
    auto responder = [](std::span<const Message> messages, const ChatParams&) {
        int k = 1;
        for (const auto& m : messages) k += m.role == Role::assistant ? 1 : 0;
        return ScriptedReply{"Agent line " + std::to_string(k)};
    };
    return std::make_shared<ScriptedBackend>(responder, std::move(name));
}

std::shared_ptr<ScriptedBackend> constant_judge(const std::string& reply) {
    return ScriptedBackend::of({reply}, ExhaustionPolicy::repeat_last, "judge");
}

TempDir::TempDir() {
    static std::atomic<unsigned> counter{0};
    std::random_device rd;
    for (;;) {
        auto candidate = fs::temp_directory_path() /
                         ("usersim-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        if (fs::create_directory(candidate)) {
            path_ = candidate;
            return;
        }
    }
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

json scripted_backends_json(int end_turn, int rollouts) {
    json user_script = json::array();
    for (int t = 1; t <= std::max(end_turn, 1); ++t) {
        for (int r = 0; r < rollouts; ++r) {
            const auto rationale = rationale_of_length(190 + 10 * static_cast<std::size_t>(r), 'a' + static_cast<char>(t));
            // Trust falls and emotion rises as the call goes on, so snapshots differ per turn.
            StateValues state;
            state.trust = static_cast<Level>(std::max(0, 2 - t / 2));
            state.emotion = static_cast<Level>(std::min(4, 2 + t / 3));
            user_script.push_back(render_turn_output(
                rationale, make_envelope("Reply " + std::to_string(t) + "." + std::to_string(r), t == end_turn, state)));
        }
    }
    json agent_script = json::array();
    for (int t = 1; t <= std::max(end_turn, 1); ++t) agent_script.push_back("Agent line " + std::to_string(t));

    const json memory = {{"scenario_memory", "Her mobile plan renewal is due next week and she worries about fees."}};
    const std::string trap =
        "MEMORY: Plan renewal is due and she is unsure about the fees.\n"
        "AGENT: Hello, this is the service line about your plan renewal.\n"
        "USER: Yes, what is it about?\n"
        "AGENT: <trap>This offer ends today, so you need to sign right now.</trap>";
    return json{
        {"agent", {{"kind", "scripted"}, {"name", "agent"}, {"script", agent_script}, {"on_exhausted", "repeat_last"}}},
        {"user", {{"kind", "scripted"}, {"name", "user"}, {"script", user_script}, {"on_exhausted", "repeat_last"}}},
        {"judge",
         {{"kind", "scripted"},
          {"name", "judge"},
          {"keyed",
           json::array({{{"match", "SCORE: <integer from 1 to 5>"}, {"replies", json::array({"Fine.\nSCORE: 4"})}},
                        {{"match", "VERDICT"}, {"replies", json::array({"VERDICT: TIE"})}},
                        {{"match", "SCORE: <integer from 0 to 100>"},
                         {"replies", json::array({"Reasonable.\nSCORE: 70"})}}})},
          {"on_exhausted", "repeat_last"}}},
        {"generator",
         {{"kind", "scripted"},
          {"name", "generator"},
          {"keyed",
           json::array({{{"match", "<trap>"}, {"replies", json::array({trap})}},
                        {{"match", "scenario"}, {"replies", json::array({memory.dump()})}}})},
          {"on_exhausted", "repeat_last"}}},
    };
}

void write_inputs(const fs::path& dir, std::size_t profiles, std::size_t sops) {
    fs::create_directories(dir);
    write_profile_pool(dir / "profiles.jsonl", synthetic_pool(profiles));
    std::vector<json> records;
    for (const auto& t : synthetic_sops(sops)) {
        json j;
        to_json(j, t);
        records.push_back(j);
    }
    write_jsonl(dir / "sops.jsonl", records);
}

}  // namespace usersim::fixture
