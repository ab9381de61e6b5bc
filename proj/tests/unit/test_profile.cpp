#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "usersim/errors.hpp"
#include "usersim/profile.hpp"

using namespace usersim;
using namespace usersim::fixture;

namespace {

std::string dimension_payload(std::string_view dim, const std::string& verbosity = "concise") {
    if (dim == "background") {
        return R"({"name":"Lin Wei","age":60,"gender":"female","location":"Hangzhou","occupation":"teacher",
                   "income_tier":"middle","education":"bachelor","health":"good","marriage":"married",
                   "hobbies":["tea"],"contact":"{phone}"})";
    }
    if (dim == "personality") return R"({"description":"Patient and careful.","mbti":"ISFJ"})";
    if (dim == "expression_style") {
        return R"({"speech_rate":"slow","verbosity":")" + verbosity +
               R"(","emotion_intensity":"calm","politeness":"polite","logic_orientation":"balanced",
                  "patience":"patient","interruption_tendency":"rarely","tone":"friendly",
                  "typical_phrases":["Let me think."]})";
    }
    return R"({"weekday":"Teaches in the morning.","weekend":"Visits family."})";
}

// Answers each dimension prompt by recognizing its template.
std::shared_ptr<ScriptedBackend> dimension_backend(std::function<std::string(std::string_view, int)> fn) {
    auto counts = std::make_shared<std::map<std::string, int>>();
    return std::make_shared<ScriptedBackend>(
        [fn, counts](std::span<const Message> messages, const ChatParams&) {
            const auto& prompt = messages.back().content;
            std::string_view dim = "life_scenarios";
            if (prompt.find("realistic customer persona") != std::string::npos) dim = "background";
            else if (prompt.find("personality dimension") != std::string::npos) dim = "personality";
            else if (prompt.find("customer-service call") != std::string::npos) dim = "expression_style";
            return ScriptedReply{fn(dim, (*counts)[std::string(dim)]++)};
        },
        "profile-gen");
}

PreferenceRecord seed_record() {
    PreferenceRecord r;
    r.user_id = "u1";
    r.preference_vector.assign(kPreferenceDimensions, 0.5);
    r.demographics.age = 34;
    r.demographics.occupation = "nurse";
    return r;
}

}  // namespace

TEST(ProfileValidation, FullyPopulatedProfileIsValid) {
    EXPECT_TRUE(validate_static_profile(make_profile("p1"), option_lists()).empty());
}

TEST(ProfileValidation, BadMbtiIsReported) {
    auto p = make_profile("p1");
    p.personality.mbti = "ABCD";
    const auto report = validate_static_profile(p, option_lists());
    ASSERT_EQ(report.size(), 1u);
    EXPECT_EQ(report[0].field_path, "personality.mbti");
    EXPECT_EQ(report[0].violation, "not a valid MBTI code");
}

TEST(ProfileValidation, EmptyPhrasesAndNegativeAgeGiveTwoEntries) {
    auto p = make_profile("p1");
    p.expression_style.typical_phrases.clear();
    p.background.age = -3;
    const auto report = validate_static_profile(p, option_lists());
    ASSERT_EQ(report.size(), 2u);
    EXPECT_EQ(report[0].field_path, "background.age");
    EXPECT_EQ(report[1].field_path, "expression_style.typical_phrases");
}

TEST(ProfileValidation, OutOfListValueIsReported) {
    auto p = make_profile("p1");
    p.expression_style.verbosity = "ultra-terse";
    const auto report = validate_static_profile(p, option_lists());
    ASSERT_EQ(report.size(), 1u);
    EXPECT_EQ(report[0].field_path, "expression_style.verbosity");
}

TEST(ProfileValidation, JsonRoundTrip) {
    const auto p = make_profile("p1");
    json j;
    to_json(j, p);
    StaticProfile back;
    from_json(j, back);
    EXPECT_EQ(back, p);
}

TEST(ProfileGeneration, EchoesSeedDemographics) {
    auto backend = dimension_backend([](std::string_view dim, int) { return dimension_payload(dim); });
    const auto p = generate_static_profile(seed_record(), *backend, option_lists(), templates());
    EXPECT_EQ(p.background.age, 34);
    EXPECT_EQ(p.background.occupation, "nurse");
    EXPECT_TRUE(validate_static_profile(p, option_lists()).empty());
    EXPECT_EQ(backend->calls(), 4u);
}

TEST(ProfileGeneration, RetriesOutOfListVerbosity) {
    auto backend = dimension_backend([](std::string_view dim, int n) {
        return dimension_payload(dim, n < 2 ? "ultra-terse" : "concise");
    });
    const auto p = generate_static_profile(seed_record(), *backend, option_lists(), templates());
    EXPECT_EQ(p.expression_style.verbosity, "concise");
    EXPECT_EQ(backend->calls(), 6u);  // 4 dimensions + 2 retries
}

TEST(ProfileGeneration, MalformedDimensionThrowsSchemaError) {
    auto backend = dimension_backend([](std::string_view dim, int) {
        return dim == "expression_style" ? std::string("not json at all") : dimension_payload(dim);
    });
    try {
        generate_static_profile(seed_record(), *backend, option_lists(), templates());
        FAIL() << "expected SchemaError";
    } catch (const SchemaError& e) {
        EXPECT_EQ(e.where(), "expression_style");
    }
}

TEST(DynamicProfile, InitializesFromScriptedMemory) {
    auto backend = ScriptedBackend::of({R"({"scenario_memory":"received an SMS about mobile plan expiry"})"});
    const auto dp = init_dynamic_profile(make_profile("p1"), make_task("sop-1"), *backend, templates());
    EXPECT_EQ(dp.scenario_memory, "received an SMS about mobile plan expiry");
    EXPECT_EQ(dp.state, StateValues{});
    EXPECT_TRUE(dp.target_list.empty());
}

TEST(DynamicProfile, KeyedScriptGivesDistinctMemories) {
    std::vector<KeyedRule> rules = {
        {"Lin Wei", {{R"({"scenario_memory":"Lin got a renewal SMS for the mobile plan"})", std::nullopt}}},
        {"Zhao Min", {{R"({"scenario_memory":"Zhao missed a call about plan renewal fees"})", std::nullopt}}},
    };
    ScriptedBackend backend(rules, {}, ExhaustionPolicy::repeat_last);
    const auto a = init_dynamic_profile(make_profile("p1", "Lin Wei"), make_task("s"), backend, templates());
    const auto b = init_dynamic_profile(make_profile("p2", "Zhao Min"), make_task("s"), backend, templates());
    EXPECT_NE(a.scenario_memory, b.scenario_memory);
}

TEST(DynamicProfile, EmptySopThrows) {
    auto task = make_task("s");
    task.sop_text = "  ";
    auto backend = ScriptedBackend::of({"{}"});
    EXPECT_THROW(init_dynamic_profile(make_profile("p1"), task, *backend, templates()), SchemaError);
}

TEST(Dedup, RemovesExactDuplicates) {
    auto r1 = seed_record();
    auto r2 = seed_record();
    r2.user_id = "u2";
    const std::vector<PreferenceRecord> in = {r1, r1, r2};
    const auto out = dedup_pool(in);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0], r1);
    EXPECT_EQ(out[1], r2);
}

TEST(Dedup, KeyOrderDoesNotMatter) {
    const auto a = json::parse(R"({"user_id":"u1","preference_vector":[],"demographics":{"age":34,"occupation":"nurse"}})");
    const auto b = json::parse(R"({"demographics":{"occupation":"nurse","age":34},"preference_vector":[],"user_id":"u1"})");
    PreferenceRecord ra;
    PreferenceRecord rb;
    from_json(a, ra);
    from_json(b, rb);
    EXPECT_EQ(canonical_preference_key(ra), canonical_preference_key(rb));
    const std::vector<PreferenceRecord> in = {ra, rb};
    EXPECT_EQ(dedup_pool(in).size(), 1u);
}

TEST(Dedup, WhitespaceVariantsCollapse) {
    auto a = seed_record();
    auto b = seed_record();
    a.narrative = "likes  tea ";
    b.narrative = "likes tea";
    const std::vector<PreferenceRecord> in = {a, b};
    EXPECT_EQ(dedup_pool(in).size(), 1u);
}

TEST(Dedup, EmptyInput) { EXPECT_TRUE(dedup_pool(std::vector<PreferenceRecord>{}).empty()); }

TEST(KeywordSelection, BothKeywordsRankFirst) {
    auto pool = synthetic_pool(30);
    for (auto& p : pool) p.personality.description = "Calm person.";
    for (auto& p : pool) p.expression_style.patience = "average";
    pool[17].personality.description = "Impatient shopper who loves a bargain.";
    pool[3].personality.description = "Hunts for a bargain.";
    const std::vector<std::string> kw = {"impatient", "bargain"};
    const auto ranked = select_profiles_by_keywords(pool, kw, 5);
    ASSERT_EQ(ranked.size(), 5u);
    EXPECT_EQ(ranked[0].pool_index, 17u);
    EXPECT_EQ(ranked[0].score, 2);
    EXPECT_EQ(ranked[1].pool_index, 3u);
    EXPECT_EQ(ranked[1].score, 1);
}

TEST(KeywordSelection, TopTwentyOfFiveHundred) {
    const auto pool = synthetic_pool(500);
    const std::vector<std::string> kw = {"impatient"};
    EXPECT_EQ(select_profiles_by_keywords(pool, kw, 20).size(), 20u);
}

TEST(KeywordSelection, NoMatchesKeepPoolOrder) {
    const auto pool = synthetic_pool(10);
    const std::vector<std::string> kw = {"zzzqqq"};
    const auto ranked = select_profiles_by_keywords(pool, kw, 4);
    ASSERT_EQ(ranked.size(), 4u);
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        EXPECT_EQ(ranked[i].pool_index, i);
        EXPECT_EQ(ranked[i].score, 0);
    }
}

TEST(KeywordSelection, EmptyPoolThrows) {
    const std::vector<std::string> kw = {"x"};
    EXPECT_THROW(select_profiles_by_keywords(std::vector<StaticProfile>{}, kw, 3), EmptyPool);
}

TEST(PoolStatistics, MbtiHistogram) {
    std::vector<StaticProfile> pool = {make_profile("a"), make_profile("b"), make_profile("c")};
    pool[2].personality.mbti = "ISTJ";
    const auto report = pool_statistics(pool);
    const auto& mbti = report.histograms.at("personality.mbti");
    EXPECT_EQ(mbti.at("ISFJ"), 2u);
    EXPECT_EQ(mbti.at("ISTJ"), 1u);
    EXPECT_EQ(mbti.size(), 2u);
}

TEST(PoolStatistics, EmptyPool) {
    const auto report = pool_statistics(std::vector<StaticProfile>{});
    EXPECT_EQ(report.pool_size, 0u);
    EXPECT_TRUE(report.cross_table.empty());
    for (const auto& [field, hist] : report.histograms) EXPECT_TRUE(hist.empty()) << field;
}

TEST(PoolStatistics, CrossTableSumsToPoolSize) {
    const auto pool = synthetic_pool(137);
    const auto report = pool_statistics(pool);
    std::size_t total = 0;
    for (const auto& [key, count] : report.cross_table) total += count;
    EXPECT_EQ(total, pool.size());
    // Independent recount of one cell.
    std::size_t direct = 0;
    for (const auto& p : pool) {
        direct += p.background.education == "bachelor" && p.background.occupation == "nurse" &&
                  p.background.income_tier == "middle";
    }
    const auto key = std::make_tuple(std::string("bachelor"), std::string("nurse"), std::string("middle"));
    const auto it = report.cross_table.find(key);
    EXPECT_EQ(it == report.cross_table.end() ? 0u : it->second, direct);
}

TEST(AgentTasks, BindFillsPlaceholders) {
    const auto bound = bind_task(make_task("s"), make_profile("p", "Lin Wei"));
    EXPECT_NE(bound.system_message.find("Call Lin Wei about"), std::string::npos);
}

TEST(AgentTasks, ConcretePiiIsFlagged) {
    auto t = make_task("s");
    t.sop_text = "Email jane@example.com or call 138 0013 8000.";
    EXPECT_EQ(agent_task_violations(t).size(), 2u);
}
