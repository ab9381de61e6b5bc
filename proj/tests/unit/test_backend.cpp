#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>
#include <unordered_set>

#include "fixtures.hpp"
#include "usersim/backend.hpp"
#include "usersim/rng.hpp"

using namespace usersim;
using namespace usersim::fixture;

namespace {

const std::vector<Message> kHello = {{Role::user, "hello"}};

// Local OpenAI-style endpoint answering with a scripted status sequence.
class MockServer {
public:
    explicit MockServer(std::vector<int> statuses) : statuses_(std::move(statuses)) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            const auto n = calls_++;
            last_auth_ = req.get_header_value("Authorization");
            last_body_ = req.body;
            const int status = n < statuses_.size() ? statuses_[n] : 200;
            res.status = status;
            if (status == 200) {
                const json reply = {{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", "pong"}}}}})},
                                    {"usage", {{"prompt_tokens", 3}, {"completion_tokens", 1}}}};
                res.set_content(reply.dump(), "application/json");
            } else {
                res.set_content("{\"error\":\"busy\"}", "application/json");
            }
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~MockServer() {
        server_.stop();
        thread_.join();
    }

    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
    std::size_t calls() const { return calls_; }
    std::string last_auth() const { return last_auth_; }
    std::string last_body() const { return last_body_; }

private:
    httplib::Server server_;
    std::vector<int> statuses_;
    std::atomic<std::size_t> calls_{0};
    std::string last_auth_;
    std::string last_body_;
    int port_ = 0;
    std::thread thread_;
};

RemoteConfig remote(const MockServer& server, int retries = 3) {
    RemoteConfig c;
    c.base_url = server.base_url();
    c.model = "mock-model";
    c.auth_token_env = "USERSIM_TEST_TOKEN";
    c.timeout_ms = 2000;
    c.max_retries = retries;
    c.backoff_base_ms = 5;
    c.backoff_factor = 2.0;
    return c;
}

}  // namespace

TEST(Scripted, ExhaustedScriptErrors) {
    auto b = ScriptedBackend::of({"hi"});
    EXPECT_EQ(b->chat(kHello).text, "hi");
    try {
        b->chat(kHello);
        FAIL() << "expected BackendError";
    } catch (const BackendError& e) {
        EXPECT_EQ(e.kind(), BackendErrorKind::exhausted_script);
    }
}

TEST(Scripted, Policies) {
    auto repeat = ScriptedBackend::of({"a", "b"}, ExhaustionPolicy::repeat_last);
    std::string seen;
    for (int i = 0; i < 4; ++i) seen += repeat->chat(kHello).text;
    EXPECT_EQ(seen, "abbb");
    auto cycle = ScriptedBackend::of({"a", "b"}, ExhaustionPolicy::cycle);
    seen.clear();
    for (int i = 0; i < 5; ++i) seen += cycle->chat(kHello).text;
    EXPECT_EQ(seen, "ababa");
}

TEST(Scripted, InjectedFault) {
    ScriptedBackend b({ScriptedReply::fail(BackendErrorKind::http_status), ScriptedReply{"ok"}});
    EXPECT_THROW(b.chat(kHello), BackendError);
    EXPECT_EQ(b.chat(kHello).text, "ok");
    EXPECT_EQ(b.calls(), 2u);
}

TEST(Scripted, KeyedRulesKeepOwnCursor) {
    ScriptedBackend b({{"apple", {{"A1"}, {"A2"}}}, {"pear", {{"P1"}}}}, {{"F"}}, ExhaustionPolicy::repeat_last);
    const std::vector<Message> apple = {{Role::user, "an apple"}};
    const std::vector<Message> pear = {{Role::user, "a pear"}};
    const std::vector<Message> other = {{Role::user, "a plum"}};
    EXPECT_EQ(b.chat(apple).text, "A1");
    EXPECT_EQ(b.chat(pear).text, "P1");
    EXPECT_EQ(b.chat(apple).text, "A2");
    EXPECT_EQ(b.chat(other).text, "F");
}

TEST(Messages, RolesMustAlternate) {
    auto b = ScriptedBackend::of({"x"}, ExhaustionPolicy::repeat_last);
    const std::vector<Message> empty;
    EXPECT_THROW(b->chat(empty), InvalidRequest);
    const std::vector<Message> twice = {{Role::user, "a"}, {Role::user, "b"}};
    EXPECT_THROW(b->chat(twice), InvalidRequest);
    const std::vector<Message> late_system = {{Role::user, "a"}, {Role::system, "b"}};
    EXPECT_THROW(b->chat(late_system), InvalidRequest);
    const std::vector<Message> ok = {{Role::system, "s"}, {Role::user, "a"}, {Role::assistant, "b"}, {Role::user, "c"}};
    EXPECT_NO_THROW(b->chat(ok));
}

TEST(PromptHash, DependsOnParams) {
    ChatParams p;
    ChatParams q;
    q.seed = 7;
    EXPECT_NE(prompt_hash(kHello, p), prompt_hash(kHello, q));
    EXPECT_EQ(prompt_hash(kHello, q), prompt_hash(kHello, q));
    EXPECT_EQ(prompt_hash(kHello, p).size(), 64u);
}

TEST(PromptHash, NoCollisionsOver100kPrompts) {
    Rng rng(2024);
    std::unordered_set<std::string> seen;
    const std::size_t n = 100000;
    for (std::size_t i = 0; i < n; ++i) {
        std::string text(8 + rng.below(24), ' ');
        for (auto& c : text) c = static_cast<char>('a' + rng.below(26));
        const std::vector<Message> m = {{Role::user, text + std::to_string(i)}};
        seen.insert(prompt_hash(m, {}));
    }
    EXPECT_EQ(seen.size(), n);
}

TEST(Replay, ReturnsRecordedText) {
    auto store = std::make_shared<ReplayStore>();
    auto rec = record_mode(ScriptedBackend::of({"first answer"}), store);
    const auto original = rec->chat(kHello).text;
    ReplayBackend replay(store);
    EXPECT_EQ(replay.chat(kHello).text, original);
    const std::vector<Message> other = {{Role::user, "something else"}};
    try {
        replay.chat(other);
        FAIL() << "expected missing_replay";
    } catch (const BackendError& e) {
        EXPECT_EQ(e.kind(), BackendErrorKind::missing_replay);
    }
}

TEST(Replay, TwoPromptsTwoEntriesAndIdempotence) {
    ReplayStore store;
    EXPECT_TRUE(store.record("h1", "a"));
    EXPECT_TRUE(store.record("h2", "b"));
    EXPECT_FALSE(store.record("h1", "a"));
    EXPECT_EQ(store.size(), 2u);
    EXPECT_THROW(store.record("h1", "different"), StoreError);
}

TEST(Replay, FileStorePersists) {
    TempDir dir;
    {
        ReplayStore store(dir / "s.jsonl");
        store.record("h1", "a");
        store.record("h2", "line\nbreak");
    }
    ReplayStore again(dir / "s.jsonl");
    EXPECT_EQ(again.size(), 2u);
    EXPECT_EQ(again.lookup("h2").value_or(""), "line\nbreak");
}

TEST(Replay, RecordThenReplayDialogueIsByteIdentical) {
    auto store_user = std::make_shared<ReplayStore>();
    auto store_agent = std::make_shared<ReplayStore>();
    auto rec_agent = record_mode(fixture::agent(), store_agent);
    auto rec_user = record_mode(simulator(4), store_user);
    DialogueOptions o;
    o.seed = 5;
    const auto live = run_dialogue(*rec_agent, *rec_user, make_task("s"), make_profile("p"), {}, "d", o);
    ReplayBackend agent(store_agent, "agent");
    ReplayBackend user(store_user, "sim");
    const auto replayed = run_dialogue(agent, user, make_task("s"), make_profile("p"), {}, "d", o);
    EXPECT_EQ(render_transcript(replayed), render_transcript(live));
}

TEST(BackendSpecJson, MakeBackendFromJson) {
    const auto j = json::parse(R"({"kind":"scripted","name":"s","script":["a",{"fault":"timeout"}],
                                   "on_exhausted":"cycle"})");
    const auto spec = j.get<BackendSpec>();
    StoreRegistry stores;
    auto b = make_backend(spec, stores);
    EXPECT_EQ(b->chat(kHello).text, "a");
    EXPECT_THROW(b->chat(kHello), BackendError);
    EXPECT_EQ(b->chat(kHello).text, "a");
    json back = spec;
    EXPECT_EQ(back.get<BackendSpec>(), spec);
}

TEST(BackendSpecJson, RecordToWrapsBackend) {
    TempDir dir;
    BackendSpec spec;
    spec.kind = BackendKind::scripted;
    spec.script = {{"x"}};
    spec.record_to = "rec.jsonl";
    StoreRegistry stores;
    make_backend(spec, stores, dir.path())->chat(kHello);
    EXPECT_EQ(ReplayStore(dir / "rec.jsonl").size(), 1u);
    BackendSpec replay;
    replay.kind = BackendKind::replay;
    replay.store = "rec.jsonl";
    StoreRegistry fresh;
    EXPECT_EQ(make_backend(replay, fresh, dir.path())->chat(kHello).text, "x");
}

TEST(Remote, RetriesServerErrorsThenSucceeds) {
    MockServer server({500, 500, 200});
    RemoteHttpBackend b(remote(server));
    const auto r = b.chat(kHello, ChatParams{0.2, 64, 11});
    EXPECT_EQ(r.text, "pong");
    EXPECT_EQ(r.attempts, 3);
    EXPECT_EQ(r.usage.prompt_tokens, 3);
    EXPECT_EQ(server.calls(), 3u);
    const auto body = json::parse(server.last_body());
    EXPECT_EQ(body["model"], "mock-model");
    EXPECT_EQ(body["seed"], 11);
    EXPECT_EQ(body["max_tokens"], 64);
}

TEST(Remote, GivesUpAfterMaxRetries) {
    MockServer server({503, 503, 503});
    RemoteHttpBackend b(remote(server, 2));
    try {
        b.chat(kHello);
        FAIL() << "expected BackendError";
    } catch (const BackendError& e) {
        EXPECT_EQ(e.kind(), BackendErrorKind::http_status);
        EXPECT_EQ(e.http_status(), 503);
    }
    EXPECT_EQ(server.calls(), 3u);
}

TEST(Remote, ClientErrorsAreNotRetried) {
    MockServer server({400});
    RemoteHttpBackend b(remote(server));
    EXPECT_THROW(b.chat(kHello), BackendError);
    EXPECT_EQ(server.calls(), 1u);
}

TEST(Remote, UnreachableHostIsTransportError) {
    RemoteConfig c;
    c.base_url = "http://127.0.0.1:1/v1";
    c.model = "m";
    c.max_retries = 0;
    c.timeout_ms = 500;
    RemoteHttpBackend b(c);
    try {
        b.chat(kHello);
        FAIL() << "expected BackendError";
    } catch (const BackendError& e) {
        EXPECT_TRUE(e.kind() == BackendErrorKind::transport || e.kind() == BackendErrorKind::timeout);
    }
}

TEST(Remote, TokenSentButNeverPersisted) {
    const std::string secret = "sk-test-5ecr3t-value";
    ::setenv("USERSIM_TEST_TOKEN", secret.c_str(), 1);
    MockServer server({503, 200});
    const auto cfg = remote(server);
    RemoteHttpBackend b(cfg);
    EXPECT_EQ(b.chat(kHello).text, "pong");
    EXPECT_EQ(server.last_auth(), "Bearer " + secret);

    // Nothing that ends up on disk or in logs carries the token.
    BackendSpec spec;
    spec.kind = BackendKind::remote_http;
    spec.remote = cfg;
    json j = spec;
    EXPECT_EQ(j.dump().find(secret), std::string::npos);
    EXPECT_EQ(b.identifier().find(secret), std::string::npos);
    MockServer failing({401});
    RemoteHttpBackend f(remote(failing));
    try {
        f.chat(kHello);
    } catch (const BackendError& e) {
        EXPECT_EQ(std::string(e.what()).find(secret), std::string::npos);
    }
    ::unsetenv("USERSIM_TEST_TOKEN");
}

TEST(Remote, RejectsUrlWithoutScheme) {
    RemoteConfig c;
    c.base_url = "localhost:8080";
    EXPECT_THROW(RemoteHttpBackend{c}, ConfigError);
}
