#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "usersim/dialogue.hpp"
#include "usersim/errors.hpp"

using namespace usersim;
using namespace usersim::fixture;

namespace {

DialogueOptions options(int max_turns, int retries = 1) {
    DialogueOptions o;
    o.limits.max_turns = max_turns;
    o.limits.max_parse_retries = retries;
    o.instruction = templates().body("simulator/instruction");
    o.seed = 42;
    return o;
}

Dialogue run(ChatBackend& agent, ChatBackend& user, const DialogueOptions& o, std::string id = "d1") {
    DynamicProfile dp0;
    dp0.scenario_memory = "Renewal SMS arrived yesterday.";
    return run_dialogue(agent, user, make_task("sop-1"), make_profile("p1"), dp0, std::move(id), o);
}

}  // namespace

TEST(Prompt, FirstTurnHoldsOnlyOpener) {
    const std::vector<Utterance> ctx = {{Speaker::agent, "Hello"}};
    const auto p = build_user_prompt("inst", make_profile("p1"), DynamicProfile{}, ctx);
    ASSERT_EQ(p.context.size(), 1u);
    EXPECT_EQ(p.context[0].text, "Hello");
    const auto messages = p.to_messages();
    ASSERT_EQ(messages.size(), 2u);
    EXPECT_EQ(messages[0].role, Role::system);
    EXPECT_EQ(messages[1].role, Role::user);
}

TEST(Prompt, DeterministicBytes) {
    const std::vector<Utterance> ctx = {{Speaker::agent, "Hello"}, {Speaker::user, "Hi"}, {Speaker::agent, "So"}};
    const auto a = build_user_prompt("inst", make_profile("p1"), DynamicProfile{}, ctx);
    const auto b = build_user_prompt("inst", make_profile("p1"), DynamicProfile{}, ctx);
    EXPECT_EQ(a.canonical_bytes(), b.canonical_bytes());
    EXPECT_EQ(a.hash(), b.hash());
    EXPECT_EQ(PromptPayload::from_json(json::parse(a.to_json().dump())), a);
}

TEST(Prompt, ContextMustStartWithAgent) {
    const std::vector<Utterance> ctx = {{Speaker::user, "Hi"}, {Speaker::agent, "Hello"}};
    EXPECT_THROW(build_user_prompt("inst", make_profile("p1"), DynamicProfile{}, ctx), ContextOrderError);
    const std::vector<Utterance> ends_with_user = {{Speaker::agent, "Hello"}, {Speaker::user, "Hi"}};
    EXPECT_THROW(build_user_prompt("inst", make_profile("p1"), DynamicProfile{}, ends_with_user), ContextOrderError);
    EXPECT_THROW(build_user_prompt("inst", make_profile("p1"), DynamicProfile{}, std::vector<Utterance>{}),
                 ContextOrderError);
}

TEST(RunDialogue, EndsOnEndToken) {
    auto agent = ScriptedBackend::of({"Hello, this is your carrier.", "Your plan renews soon.", "Anything else?"});
    auto user = ScriptedBackend::of({valid_turn("Hi."), valid_turn("How much?"), valid_turn("No, bye.", true)});
    const auto d = run(*agent, *user, options(10));
    ASSERT_EQ(d.turns.size(), 3u);
    EXPECT_EQ(d.terminated_by, Termination::end_token);
    EXPECT_EQ(d.turns[2].reply, "No, bye.");
    EXPECT_EQ(d.snapshots.size(), 3u);
}

TEST(RunDialogue, StopsAtTurnLimit) {
    auto agent = fixture::agent();
    auto user = simulator(0);
    const auto d = run(*agent, *user, options(5));
    EXPECT_EQ(d.turns.size(), 5u);
    EXPECT_EQ(d.terminated_by, Termination::turn_limit);
}

TEST(RunDialogue, StateChangeReachesNextPrompt) {
    auto agent = fixture::agent();
    StateValues low_trust;
    low_trust.trust = Level::very_low;
    auto user = ScriptedBackend::of({valid_turn("Hi."), valid_turn("I doubt it.", false, low_trust),
                                     valid_turn("Still no.", true, low_trust)});
    const auto d = run(*agent, *user, options(5));
    ASSERT_EQ(d.turns.size(), 3u);
    const auto rendered = json::parse(d.turns[2].payload.dynamic_profile);
    EXPECT_EQ(rendered["state"]["trust"], 0);
    EXPECT_EQ(json::parse(d.turns[1].payload.dynamic_profile)["state"]["trust"], 2);
}

TEST(RunDialogue, SnapshotCausality) {
    auto agent = fixture::agent();
    auto user = simulator(4);
    const auto d = run(*agent, *user, options(10));
    ASSERT_EQ(d.turns.size(), 4u);
    EXPECT_EQ(d.snapshots[0], d.initial_dynamic);
    for (std::size_t j = 0; j < d.turns.size(); ++j) {
        EXPECT_EQ(d.turns[j].payload.dynamic_profile, dynamic_profile_to_ordered_json(d.snapshots[j]).dump(2));
        if (j > 0) {
            EXPECT_EQ(d.snapshots[j], next_snapshot(d.snapshots[j - 1], *d.turns[j - 1].envelope));
        }
    }
    // The target list is fixed by the first envelope.
    EXPECT_EQ(d.snapshots[1].target_list, d.turns[0].envelope->target_list);
}

TEST(RunDialogue, OversizedStateJumpIsClampedAndNoted) {
    auto agent = fixture::agent();
    StateValues jump;
    jump.trust = Level::very_high;
    jump.emotion = Level::very_low;
    const auto ok = valid_turn("fine");
    auto user = ScriptedBackend::of({ok, valid_turn("wow", false, jump), valid_turn("bye", true)});
    const auto d = run(*agent, *user, options(5));
    ASSERT_EQ(d.turns.size(), 3u);
    EXPECT_EQ(d.snapshots[2].state.trust, Level::very_high);
    EXPECT_EQ(d.snapshots[2].state.emotion, Level::very_low);
    StateValues extreme;
    extreme.trust = Level::very_low;
    auto user2 = ScriptedBackend::of({valid_turn("a", false, StateValues{Level::very_high, Level::neutral,
                                                                          Level::neutral, Level::neutral}),
                                      valid_turn("b", false, extreme), valid_turn("c", true)});
    const auto d2 = run(*agent, *user2, options(5));
    // Turn 2 wants 4 -> 0 on trust; only two levels are allowed per step.
    EXPECT_EQ(d2.snapshots[2].state.trust, Level::neutral);
    EXPECT_FALSE(d2.turns[1].notes.empty());
}

TEST(RunDialogue, RetriesUnparseableOutput) {
    auto agent = fixture::agent();
    auto user = ScriptedBackend::of({"garbage", valid_turn("ok", true)});
    const auto d = run(*agent, *user, options(3, 1));
    ASSERT_EQ(d.turns.size(), 1u);
    EXPECT_EQ(d.turns[0].parse_attempts, 2);
    EXPECT_TRUE(d.turns[0].parsed());
}

TEST(RunDialogue, FailedParseCarriesSnapshotForward) {
    auto agent = fixture::agent();
    auto user = ScriptedBackend::of({valid_turn("a"), "<think>x</think>", valid_turn("c", true)});
    const auto d = run(*agent, *user, options(5, 0));
    ASSERT_EQ(d.turns.size(), 3u);
    EXPECT_FALSE(d.turns[1].parsed());
    EXPECT_FALSE(d.turns[1].diagnostics.empty());
    EXPECT_EQ(d.snapshots[2], d.snapshots[1]);
}

TEST(RunDialogue, BackendErrorEndsSession) {
    auto agent = fixture::agent();
    ScriptedBackend user({ScriptedReply{valid_turn("a")}, ScriptedReply::fail(BackendErrorKind::timeout)});
    const auto d = run(*agent, user, options(5));
    EXPECT_EQ(d.terminated_by, Termination::error);
    EXPECT_EQ(d.turns.size(), 1u);
    EXPECT_NE(d.error.find("turn 2"), std::string::npos);
}

TEST(RunDialogue, RejectsZeroTurns) {
    auto agent = fixture::agent();
    auto user = simulator(1);
    EXPECT_THROW(run(*agent, *user, options(0)), std::invalid_argument);
}

TEST(RunDialogue, RolloutsUseDistinctSeeds) {
    auto agent = fixture::agent();
    auto user = simulator(2);
    auto o = options(5);
    o.limits.rollouts_per_turn = 4;
    const auto d = run(*agent, *user, o);
    ASSERT_EQ(d.turns.size(), 2u);
    ASSERT_EQ(d.turns[0].rollouts.size(), 3u);
    std::set<std::uint64_t> seeds = {d.turns[0].user_seed};
    for (const auto& r : d.turns[0].rollouts) seeds.insert(r.seed);
    EXPECT_EQ(seeds.size(), 4u);
}

TEST(RunDialogue, SameInputsSameTranscript) {
    auto run_once = [] {
        auto agent = fixture::agent();
        auto user = simulator(4);
        return render_transcript(run(*agent, *user, options(10)));
    };
    EXPECT_EQ(run_once(), run_once());
}

TEST(Transcript, RoundTrip) {
    auto agent = fixture::agent();
    auto user = ScriptedBackend::of({valid_turn("a"), "broken", "broken", valid_turn("c", true)});
    const auto d = run(*agent, *user, options(5));
    TempDir dir;
    write_transcript(dir / "t.jsonl", d);
    const auto back = read_transcript(dir / "t.jsonl");
    EXPECT_EQ(render_transcript(back), render_transcript(d));
    EXPECT_EQ(back.snapshots, d.snapshots);
}

TEST(TargetConsistency, FromDialogue) {
    auto agent = fixture::agent();
    auto user = simulator(5);
    const auto d = run(*agent, *user, options(5));
    EXPECT_TRUE(check_target_list_consistency(d).empty());
}

TEST(Sft, CleanDialogueGivesOneRecordPerTurn) {
    auto agent = fixture::agent();
    auto user = simulator(3);
    const std::vector<Dialogue> ds = {run(*agent, *user, options(5))};
    const auto out = export_sft_records(ds);
    EXPECT_EQ(out.records.size(), 3u);
    EXPECT_EQ(out.skipped, 0u);
}

TEST(Sft, UnparseableTurnIsSkipped) {
    auto agent = fixture::agent();
    auto user = ScriptedBackend::of({valid_turn("a"), "nope", valid_turn("c", true)});
    const std::vector<Dialogue> ds = {run(*agent, *user, options(5, 0))};
    const auto out = export_sft_records(ds);
    EXPECT_EQ(out.records.size(), 2u);
    EXPECT_EQ(out.skipped, 1u);
}

TEST(Sft, RecordCarriesTurnSnapshot) {
    auto agent = fixture::agent();
    auto user = simulator(3);
    const std::vector<Dialogue> ds = {run(*agent, *user, options(5))};
    const auto out = export_sft_records(ds);
    for (const auto& rec : out.records) {
        const auto k = rec["turn"].get<std::size_t>() - 1;
        DynamicProfile dp;
        from_json(rec["inputs"]["dynamic_profile"], dp);
        EXPECT_EQ(dp, ds[0].snapshots[k]);
        EXPECT_EQ(rec["targets"]["reply"], ds[0].turns[k].reply);
    }
}
