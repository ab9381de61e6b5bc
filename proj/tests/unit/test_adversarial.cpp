#include <gtest/gtest.h>

#include <set>

#include "fixtures.hpp"
#include "usersim/adversarial.hpp"
#include "usersim/errors.hpp"

using namespace usersim;
using namespace usersim::fixture;

namespace {

const TrapCatalog& catalog() {
    static const TrapCatalog c = TrapCatalog::load(default_data_dir() / "trap_catalog.json");
    return c;
}

const std::string kGenerated =
    "MEMORY: Plan renewal is due next week.\n"
    "AGENT: Hello, this is your carrier.\n"
    "USER: Hi, what is this about?\n"
    "AGENT: Your plan renews soon.\n"
    "USER: Okay.\n"
    "AGENT: We have a new package.\n"
    "USER: Tell me more.\n"
    "AGENT: It has more data.\n"
    "USER: How much?\n"
    "AGENT: <trap>Only today, sign now or lose the price forever.</trap>\n";

TrapScenario scenario(TrapType t = TrapType::artificial_time_pressure) {
    const auto pool = synthetic_pool(50);
    const auto sops = synthetic_sops(6);
    return instantiate_trap(t, catalog(), pool, sops, 1).at(0);
}

AdversarialSample sample() {
    auto gen = ScriptedBackend::of({kGenerated});
    return build_adversarial_dialogue(scenario(), catalog(), *gen, templates());
}

}  // namespace

TEST(TrapTaxonomy, ElevenNamedTypes) {
    std::set<std::string> names;
    for (auto t : kTrapTypes) {
        names.insert(std::string(to_string(t)));
        EXPECT_EQ(trap_type_from_string(to_string(t)), t);
        EXPECT_FALSE(catalog().at(t).keywords.empty());
    }
    EXPECT_EQ(names.size(), 11u);
    EXPECT_THROW(trap_type_from_string("flattery"), Error);
}

TEST(TrapCatalog, MissingTypeRejected) {
    auto j = json::parse(read_file(default_data_dir() / "trap_catalog.json"));
    j["traps"].erase(j["traps"].begin());
    EXPECT_THROW(TrapCatalog::from_json(j), ConfigError);
}

TEST(Instantiate, AllTypesTimesTwenty) {
    const auto pool = synthetic_pool(500);
    const auto sops = synthetic_sops(12);
    std::size_t total = 0;
    std::set<std::string> ids;
    for (auto t : kTrapTypes) {
        const auto s = instantiate_trap(t, catalog(), pool, sops, 20);
        EXPECT_EQ(s.size(), 20u);
        for (const auto& x : s) {
            ids.insert(x.scenario_id);
            EXPECT_EQ(x.trap_type, t);
        }
        total += s.size();
    }
    EXPECT_EQ(total, 220u);
    EXPECT_EQ(ids.size(), 220u);
}

TEST(Instantiate, KOneTakesTopProfile) {
    const auto pool = synthetic_pool(100);
    const auto sops = synthetic_sops(6);
    const auto& kw = catalog().at(TrapType::stalling_tactics).keywords;
    const auto ranked = select_profiles_by_keywords(pool, kw, 1);
    const auto s = instantiate_trap(TrapType::stalling_tactics, catalog(), pool, sops, 1);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(s[0].pool_index, ranked[0].pool_index);
    EXPECT_EQ(s[0].keyword_score, ranked[0].score);
}

TEST(Instantiate, SmallPoolIsCapped) {
    const auto pool = synthetic_pool(5);
    const auto sops = synthetic_sops(3);
    EXPECT_EQ(instantiate_trap(TrapType::vague_assurance, catalog(), pool, sops, 20).size(), 5u);
}

TEST(Instantiate, CompatibleSopsPreferred) {
    const auto pool = synthetic_pool(40);
    const auto sops = synthetic_sops(6);
    const auto& compatible = catalog().at(TrapType::rhythm_disruption).compatible_scenarios;
    for (const auto& s : instantiate_trap(TrapType::rhythm_disruption, catalog(), pool, sops, 10)) {
        EXPECT_NE(std::find(compatible.begin(), compatible.end(), s.task.scenario_label), compatible.end());
    }
}

TEST(Instantiate, EmptyInputsThrow) {
    const auto sops = synthetic_sops(2);
    EXPECT_THROW(instantiate_trap(TrapType::vague_assurance, catalog(), std::vector<StaticProfile>{}, sops),
                 EmptyPool);
    const auto pool = synthetic_pool(2);
    EXPECT_THROW(instantiate_trap(TrapType::vague_assurance, catalog(), pool, std::vector<AgentTask>{}), EmptyPool);
}

TEST(BuildSample, HappyPath) {
    const auto s = sample();
    EXPECT_EQ(s.history.size(), 8u);
    EXPECT_EQ(s.trap_turn, "Only today, sign now or lose the price forever.");
    EXPECT_EQ(s.scenario_memory, "Plan renewal is due next week.");
    EXPECT_EQ(s.trap_turn_index(), 5);
    EXPECT_EQ(s.review_status, ReviewStatus::unreviewed);
    EXPECT_NO_THROW(validate_sample(s));
}

TEST(BuildSample, MarkerErrors) {
    const std::vector<std::string> bad = {
        "AGENT: Hello\nUSER: Hi\nAGENT: Sign now.",                                   // no marker
        "AGENT: Hello\nUSER: Hi\nAGENT: <trap>Sign now.",                             // unclosed
        "AGENT: <trap>Hello</trap>\nUSER: Hi\nAGENT: <trap>Sign now.</trap>",         // two markers
        "AGENT: Hello\nUSER: Hi\nAGENT: <trap>Sign now.</trap>\nUSER: ok",            // trap not last
        "AGENT: <trap>Sign now.</trap>",                                              // no exchange
        "USER: Hi\nAGENT: Hello\nUSER: Hi\nAGENT: <trap>Sign now.</trap>",            // user first
        "AGENT: Hello\nAGENT: again\nUSER: Hi\nAGENT: <trap>Sign now.</trap>",        // not alternating
    };
    for (const auto& text : bad) {
        auto gen = ScriptedBackend::of({text});
        EXPECT_THROW(build_adversarial_dialogue(scenario(), catalog(), *gen, templates()), TrapFormatError) << text;
    }
}

TEST(BuildSample, ContinuationLinesJoin) {
    const auto g = parse_generator_output("AGENT: Hello\n  there\nUSER: Hi\n\nAGENT: <trap>Sign\n  now.</trap>");
    EXPECT_EQ(g.history[0].text, "Hello\nthere");
    EXPECT_EQ(g.trap_turn, "Sign\nnow.");
}

TEST(BuildSample, SeedKeyedGeneratorGivesDistinctHistories) {
    ScriptedBackend gen(
        [](std::span<const Message>, const ChatParams& p) {
            const auto k = std::to_string(p.seed.value_or(0));
            return ScriptedReply{"AGENT: Hello " + k + "\nUSER: Hi " + k + "\nAGENT: <trap>Sign today.</trap>"};
        },
        "seeded");
    TrapBuildOptions a;
    a.sample_seed = 1;
    TrapBuildOptions b;
    b.sample_seed = 2;
    const auto sa = build_adversarial_dialogue(scenario(), catalog(), gen, templates(), a);
    const auto sb = build_adversarial_dialogue(scenario(), catalog(), gen, templates(), b);
    EXPECT_NE(sa.history, sb.history);
    EXPECT_EQ(sa.scenario.trap_type, sb.scenario.trap_type);
}

TEST(BuildSample, JsonRoundTrip) {
    const auto s = sample();
    json j = s;
    const auto back = j.get<AdversarialSample>();
    EXPECT_EQ(sample_fingerprint(back), sample_fingerprint(s));
    EXPECT_EQ(back.history, s.history);
}

TEST(TrapTurn, ParsedCounterQuestion) {
    auto s = sample();
    s.review_status = ReviewStatus::approved;
    auto user = ScriptedBackend::of({render_turn_output(
        "This is artificial time pressure; a real offer would not vanish today.",
        make_envelope("Why does it have to be today? Send me the terms in writing."))});
    const auto r = run_trap_turn(s, *user, {});
    ASSERT_TRUE(r.parsed());
    EXPECT_NE(r.rationale.find("time pressure"), std::string::npos);
    EXPECT_EQ(r.payload.context.back().text, s.trap_turn);
}

TEST(TrapTurn, MalformedOutputGivesDiagnostics) {
    auto s = sample();
    s.review_status = ReviewStatus::approved;
    auto user = ScriptedBackend::of({"sure, sign me up"});
    const auto r = run_trap_turn(s, *user, {});
    EXPECT_FALSE(r.parsed());
    EXPECT_FALSE(r.diagnostics.empty());
    EXPECT_EQ(r.reply, "sure, sign me up");
}

TEST(TrapTurn, TwoBackendsSharePayload) {
    auto s = sample();
    s.review_status = ReviewStatus::edited;
    auto u1 = ScriptedBackend::of({valid_turn("No.")}, ExhaustionPolicy::error, "u1");
    auto u2 = ScriptedBackend::of({"whatever"}, ExhaustionPolicy::error, "u2");
    const auto r1 = run_trap_turn(s, *u1, {});
    const auto r2 = run_trap_turn(s, *u2, {});
    EXPECT_EQ(r1.prompt_hash, r2.prompt_hash);
    EXPECT_EQ(r1.payload, r2.payload);
}

TEST(TrapTurn, UnreviewedNeedsPermission) {
    const auto s = sample();
    auto user = ScriptedBackend::of({valid_turn("x")}, ExhaustionPolicy::repeat_last);
    EXPECT_THROW(run_trap_turn(s, *user, {}), NotReviewed);
    TrapRunOptions allow;
    allow.allow_unreviewed = true;
    EXPECT_NO_THROW(run_trap_turn(s, *user, allow));
    auto rejected = s;
    rejected.review_status = ReviewStatus::rejected;
    EXPECT_THROW(run_trap_turn(rejected, *user, allow), NotReviewed);
}

namespace {

std::vector<AdversarialSample> many_samples() {
    const auto pool = synthetic_pool(500);
    const auto sops = synthetic_sops(12);
    auto gen = ScriptedBackend::of({kGenerated}, ExhaustionPolicy::repeat_last);
    std::vector<AdversarialSample> out;
    for (auto t : kTrapTypes) {
        for (const auto& sc : instantiate_trap(t, catalog(), pool, sops, 20)) {
            out.push_back(build_adversarial_dialogue(sc, catalog(), *gen, templates()));
        }
    }
    return out;
}

std::string set_all_status(std::string text, const std::string& status) {
    std::string out;
    for (const auto& line : split_lines(text)) {
        out += line.starts_with("status:") ? "status: " + status : line;
        out += "\n";
    }
    return out;
}

}  // namespace

TEST(Review, ApproveAll) {
    const auto samples = many_samples();
    ASSERT_EQ(samples.size(), 220u);
    const auto queue = review_queue(samples);
    const auto out = apply_review(samples, set_all_status(queue, "approved"));
    EXPECT_EQ(out.approved, 220u);
    for (const auto& s : out.samples) EXPECT_EQ(s.review_status, ReviewStatus::approved);
    // Already reviewed samples drop out of the default queue.
    EXPECT_EQ(review_queue(out.samples).find("=== sample:"), std::string::npos);
    EXPECT_NE(review_queue(out.samples, true).find("=== sample:"), std::string::npos);
}

TEST(Review, EditOneTrapTurn) {
    auto a = sample();
    auto b = a;
    b.sample_id = "other-1";
    const std::vector<AdversarialSample> samples = {a, b};
    auto text = review_queue(samples);
    const auto pos = text.find("trap_turn: " + a.trap_turn);
    text.replace(pos, ("trap_turn: " + a.trap_turn).size(), "trap_turn: Sign in the next hour\\nor it is gone.");
    const auto out = apply_review(samples, text);
    EXPECT_EQ(out.edited, 1u);
    EXPECT_EQ(out.samples[0].review_status, ReviewStatus::edited);
    EXPECT_EQ(out.samples[0].trap_turn, "Sign in the next hour\nor it is gone.");
    EXPECT_EQ(out.samples[1].review_status, ReviewStatus::unreviewed);
    EXPECT_EQ(out.samples[1].trap_turn, b.trap_turn);
}

TEST(Review, EditWithMarkerRejected) {
    const std::vector<AdversarialSample> samples = {sample()};
    auto text = review_queue(samples);
    const auto pos = text.find("trap_turn: ");
    text.replace(pos, text.size() - pos, "trap_turn: <trap>x</trap>\n");
    EXPECT_THROW(apply_review(samples, text), TrapFormatError);
}

TEST(Review, StaleFileConflicts) {
    auto s = sample();
    const std::vector<AdversarialSample> before = {s};
    const auto text = review_queue(before);
    s.trap_turn = "Changed upstream.";
    const std::vector<AdversarialSample> after = {s};
    try {
        apply_review(after, text);
        FAIL() << "expected ReviewConflict";
    } catch (const ReviewConflict& e) {
        ASSERT_EQ(e.stale_ids().size(), 1u);
        EXPECT_EQ(e.stale_ids()[0], s.sample_id);
    }
}

TEST(Review, FileRoundTrip) {
    const std::vector<AdversarialSample> samples = {sample()};
    TempDir dir;
    write_samples(dir / "traps.jsonl", samples);
    const auto back = read_samples(dir / "traps.jsonl");
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(sample_fingerprint(back[0]), sample_fingerprint(samples[0]));
}
