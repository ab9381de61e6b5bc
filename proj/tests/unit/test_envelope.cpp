#include <gtest/gtest.h>

#include <algorithm>

#include "fixtures.hpp"
#include "usersim/envelope.hpp"

using namespace usersim;
using namespace usersim::fixture;

namespace {

std::vector<DefectKind> kinds(const TurnParse& p) {
    std::vector<DefectKind> out;
    if (const auto* d = std::get_if<ParseDiagnostics>(&p)) {
        for (const auto& x : d->defects) out.push_back(x.kind);
    }
    return out;
}

bool has(const TurnParse& p, DefectKind k) {
    const auto v = kinds(p);
    return std::find(v.begin(), v.end(), k) != v.end();
}

const std::string kAnswer = envelope_to_json(make_envelope("Hello?")).dump();

}  // namespace

TEST(Envelope, WellFormedTurnParses) {
    const auto raw = valid_turn("How much is it?");
    const auto p = parse_turn_output(raw);
    ASSERT_TRUE(parsed_ok(p));
    const auto& t = std::get<ParsedTurn>(p);
    EXPECT_EQ(t.envelope, make_envelope("How much is it?"));
    EXPECT_EQ(t.reconstruct(), raw);
}

TEST(Envelope, SurroundingWhitespaceIsKept) {
    const auto raw = "\n  <think>plan</think>\n<answer>" + kAnswer + "</answer>\n";
    const auto p = parse_turn_output(raw);
    ASSERT_TRUE(parsed_ok(p));
    EXPECT_EQ(std::get<ParsedTurn>(p).reconstruct(), raw);
}

TEST(Envelope, UnclosedThink) {
    const auto p = parse_turn_output("<think>plan<answer>" + kAnswer + "</answer>");
    EXPECT_FALSE(parsed_ok(p));
    EXPECT_TRUE(has(p, DefectKind::unclosed_think));
}

TEST(Envelope, DuplicateAnswer) {
    const auto p =
        parse_turn_output("<think>plan</think><answer>" + kAnswer + "</answer><answer>" + kAnswer + "</answer>");
    EXPECT_TRUE(has(p, DefectKind::duplicate_answer));
}

TEST(Envelope, EachGrammarViolationIsDiagnosed) {
    const std::string a = "<answer>" + kAnswer + "</answer>";
    const std::vector<std::pair<std::string, DefectKind>> cases = {
        {a, DefectKind::missing_think},
        {"plan</think>" + a, DefectKind::unopened_think},
        {"<think>a</think><think>b</think>" + a, DefectKind::duplicate_think},
        {"<think>plan</think>", DefectKind::missing_answer},
        {"<think>plan</think><answer>" + kAnswer, DefectKind::unclosed_answer},
        {"<think>plan</think>" + kAnswer + "</answer>", DefectKind::unopened_answer},
        {a + "<think>plan</think>", DefectKind::misordered_tags},
        {"hi <think>plan</think>" + a, DefectKind::leading_garbage},
        {"<think>plan</think> so " + a, DefectKind::garbage_between},
        {"<think>plan</think>" + a + " bye", DefectKind::trailing_garbage},
        {"<think>plan</think><answer>{not json</answer>", DefectKind::invalid_json},
        {"<think>plan</think><answer>{\"utterance\":\"x\"}</answer>", DefectKind::missing_field},
    };
    for (const auto& [raw, kind] : cases) {
        const auto p = parse_turn_output(raw);
        EXPECT_FALSE(parsed_ok(p)) << raw;
        EXPECT_TRUE(has(p, kind)) << to_string(kind) << " not reported for: " << raw;
    }
}

TEST(Envelope, StructuralVersusFieldDefects) {
    EXPECT_TRUE((Diagnostic{DefectKind::duplicate_think, ""}.structural()));
    EXPECT_FALSE((Diagnostic{DefectKind::missing_field, ""}.structural()));
    const auto p = parse_turn_output("<think>plan</think><answer>{\"utterance\":\"x\"}</answer>");
    const auto& d = std::get<ParseDiagnostics>(p);
    EXPECT_FALSE(d.has_structural_defect());
    EXPECT_EQ(d.missing_fields.size(), envelope_fields().size() - 1);
}

TEST(Envelope, StateLabelsAccepted) {
    auto j = json::parse(kAnswer);
    j["state"] = {{"trust", "very_low"}, {"emotion", "high"}, {"patience", 2}, {"participation", "neutral"}};
    const auto p = parse_turn_output("<think>plan</think><answer>" + j.dump() + "</answer>");
    ASSERT_TRUE(parsed_ok(p));
    EXPECT_EQ(std::get<ParsedTurn>(p).envelope.state.trust, Level::very_low);
}

TEST(Envelope, EmptyPrimaryConcernsIsInvalidField) {
    auto j = json::parse(kAnswer);
    j["target_list"]["primary"] = json::array();
    const auto p = parse_turn_output("<think>plan</think><answer>" + j.dump() + "</answer>");
    EXPECT_TRUE(has(p, DefectKind::invalid_field));
}

TEST(Envelope, EmptyUtteranceOnlyWhenEnding) {
    auto j = json::parse(kAnswer);
    j["utterance"] = "";
    EXPECT_FALSE(parsed_ok(parse_turn_output("<think>p</think><answer>" + j.dump() + "</answer>")));
    j["end_session"] = true;
    EXPECT_TRUE(parsed_ok(parse_turn_output("<think>p</think><answer>" + j.dump() + "</answer>")));
}

TEST(Envelope, LegacyEndMarker) {
    auto e = make_envelope("Thanks, bye [END_SESSION]");
    const auto p = parse_turn_output(render_turn_output("plan", e));
    ASSERT_TRUE(parsed_ok(p));
    EXPECT_TRUE(std::get<ParsedTurn>(p).envelope.end_session);
    EnvelopeOptions off;
    off.legacy_end_marker.clear();
    EXPECT_FALSE(std::get<ParsedTurn>(parse_turn_output(render_turn_output("plan", e), off)).envelope.end_session);
}

TEST(Envelope, RecoveryHelpers) {
    const std::string broken = "<think>plan</think><answer>{\"utterance\":\"Hi there\"}</answer>";
    const auto p = parse_turn_output(broken);
    EXPECT_EQ(rationale_of(p).value_or(""), "plan");
    EXPECT_EQ(reply_of(p, broken), "Hi there");
}

TEST(Envelope, JsonRoundTrip) {
    const auto e = make_envelope("x", true, StateValues{Level::low, Level::high, Level::neutral, Level::very_low});
    EXPECT_EQ(envelope_from_json(json::parse(envelope_to_json(e).dump())), e);
}
