#pragma once
// Chat-completion backends.
//
// A ChatBackend turns an ordered, role-tagged message list into one text
// completion. Three kinds exist: remote_http (any OpenAI-style
// /chat/completions endpoint), scripted (deterministic canned replies with
// optional fault injection), and replay (responses recorded earlier, looked
// up by prompt hash). RecordingBackend wraps any of them and appends every
// (prompt hash, response) pair to a ReplayStore.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "usersim/errors.hpp"
#include "usersim/util.hpp"

namespace usersim {

enum class Role { system, user, assistant };

std::string_view to_string(Role role);
Role role_from_string(std::string_view text);

struct Message {
    Role role = Role::user;
    std::string content;

    bool operator==(const Message&) const = default;
};

struct ChatParams {
    double temperature = 0.7;
    int max_output_tokens = 1024;
    std::optional<std::uint64_t> seed;

    bool operator==(const ChatParams&) const = default;
};

void to_json(json& j, const ChatParams& p);
void from_json(const json& j, ChatParams& p);

struct Usage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

struct ChatResponse {
    std::string text;
    Usage usage;
    std::chrono::milliseconds latency{0};
    int attempts = 1;
};

enum class BackendErrorKind { transport, timeout, http_status, exhausted_script, missing_replay };

std::string_view to_string(BackendErrorKind kind);
BackendErrorKind backend_error_kind_from_string(std::string_view text);

class BackendError : public Error {
public:
    BackendError(BackendErrorKind kind, const std::string& what, int http_status = 0)
        : Error(what), kind_(kind), http_status_(http_status) {}

    BackendErrorKind kind() const noexcept { return kind_; }
    int http_status() const noexcept { return http_status_; }

    /// Same error with `context` prepended to the message.
    BackendError with_context(const std::string& context) const {
        return BackendError(kind_, context + ": " + what(), http_status_);
    }

private:
    BackendErrorKind kind_;
    int http_status_;
};

/// Throws InvalidRequest unless messages are non-empty and roles alternate
/// user/assistant after an optional leading system message.
void validate_messages(std::span<const Message> messages);

/// Lowercase hex SHA-256 over the canonical bytes of messages plus the
/// sampling parameters.
std::string prompt_hash(std::span<const Message> messages, const ChatParams& params);

json to_json(std::span<const Message> messages);
std::vector<Message> messages_from_json(const json& j);

class ChatBackend {
public:
    virtual ~ChatBackend() = default;

    /// Validates the request, then dispatches to the concrete backend.
    ChatResponse chat(std::span<const Message> messages, const ChatParams& params = {});

    /// Stable, secret-free description recorded in transcript headers.
    virtual std::string identifier() const = 0;

protected:
    virtual ChatResponse do_chat(std::span<const Message> messages, const ChatParams& params) = 0;
};

// ---------------------------------------------------------------------------
// Scripted

/// One canned reply. When `fault` is set the call fails with that error kind
/// instead of returning text.
struct ScriptedReply {
    std::string text;
    std::optional<BackendErrorKind> fault{};

    static ScriptedReply fail(BackendErrorKind kind, std::string message = "injected fault") {
        return ScriptedReply{std::move(message), kind};
    }
    bool operator==(const ScriptedReply&) const = default;
};

enum class ExhaustionPolicy { error, repeat_last, cycle };

std::string_view to_string(ExhaustionPolicy policy);
ExhaustionPolicy exhaustion_policy_from_string(std::string_view text);

/// Replies selected by the first rule whose `match` is a substring of the
/// concatenated request messages. Each rule keeps its own cursor.
struct KeyedRule {
    std::string match;
    std::vector<ScriptedReply> replies;

    bool operator==(const KeyedRule&) const = default;
};

class ScriptedBackend final : public ChatBackend {
public:
    using Responder = std::function<ScriptedReply(std::span<const Message>, const ChatParams&)>;

    explicit ScriptedBackend(std::vector<ScriptedReply> script,
                             ExhaustionPolicy on_exhausted = ExhaustionPolicy::error,
                             std::string name = "scripted");
    ScriptedBackend(std::vector<KeyedRule> rules, std::vector<ScriptedReply> fallback,
                    ExhaustionPolicy on_exhausted = ExhaustionPolicy::error,
                    std::string name = "scripted");
    explicit ScriptedBackend(Responder responder, std::string name = "scripted");

    /// Convenience: an ordered script of plain texts.
    static std::shared_ptr<ScriptedBackend> of(std::vector<std::string> texts,
                                               ExhaustionPolicy on_exhausted = ExhaustionPolicy::error,
                                               std::string name = "scripted");

    std::string identifier() const override { return name_; }
    std::size_t calls() const;

protected:
    ChatResponse do_chat(std::span<const Message> messages, const ChatParams& params) override;

private:
    struct Queue {
        std::vector<ScriptedReply> replies;
        std::size_t cursor = 0;
    };
    std::optional<ScriptedReply> take(Queue& queue);

    std::string name_;
    ExhaustionPolicy on_exhausted_;
    std::vector<std::string> rule_matches_;
    std::vector<Queue> rule_queues_;
    Queue fallback_;
    Responder responder_;
    mutable std::mutex mutex_;
    std::size_t calls_ = 0;
};

// ---------------------------------------------------------------------------
// Replay

/// Append-only (prompt hash -> response) store persisted as JSON lines.
/// Concurrent lookups are lock-shared; appends are serialized.
class ReplayStore {
public:
    /// In-memory store.
    ReplayStore() = default;
    /// File-backed store; existing records are loaded, new ones appended.
    explicit ReplayStore(std::filesystem::path file);

    std::optional<std::string> lookup(const std::string& hash) const;

    /// Returns true when the pair is new. Identical pairs are ignored; a
    /// different response under an existing hash throws StoreError.
    bool record(const std::string& hash, const std::string& response);

    std::size_t size() const;
    const std::optional<std::filesystem::path>& file() const noexcept { return file_; }

private:
    std::optional<std::filesystem::path> file_;
    std::unordered_map<std::string, std::string> entries_;
    mutable std::shared_mutex mutex_;
};

class ReplayBackend final : public ChatBackend {
public:
    ReplayBackend(std::shared_ptr<const ReplayStore> store, std::string name = "replay");
    std::string identifier() const override { return name_; }

protected:
    ChatResponse do_chat(std::span<const Message> messages, const ChatParams& params) override;

private:
    std::shared_ptr<const ReplayStore> store_;
    std::string name_;
};

class RecordingBackend final : public ChatBackend {
public:
    RecordingBackend(std::shared_ptr<ChatBackend> inner, std::shared_ptr<ReplayStore> store);
    std::string identifier() const override { return inner_->identifier(); }

protected:
    ChatResponse do_chat(std::span<const Message> messages, const ChatParams& params) override;

private:
    std::shared_ptr<ChatBackend> inner_;
    std::shared_ptr<ReplayStore> store_;
};

/// Wraps `backend` so every response is appended to `store`.
std::shared_ptr<ChatBackend> record_mode(std::shared_ptr<ChatBackend> backend,
                                         std::shared_ptr<ReplayStore> store);

// ---------------------------------------------------------------------------
// Remote

struct RemoteConfig {
    std::string base_url;                    ///< e.g. http://127.0.0.1:8080/v1
    std::string model;
    std::string auth_token_env = "USERSIM_API_KEY";  ///< read at call time, never stored
    int timeout_ms = 60000;
    int max_retries = 3;
    int backoff_base_ms = 500;
    double backoff_factor = 2.0;

    bool operator==(const RemoteConfig&) const = default;
};

class RemoteHttpBackend final : public ChatBackend {
public:
    explicit RemoteHttpBackend(RemoteConfig config);
    std::string identifier() const override;

protected:
    ChatResponse do_chat(std::span<const Message> messages, const ChatParams& params) override;

private:
    RemoteConfig config_;
    std::string scheme_host_port_;
    std::string path_prefix_;
};

// ---------------------------------------------------------------------------
// Declarative construction

enum class BackendKind { remote_http, scripted, replay };

std::string_view to_string(BackendKind kind);
BackendKind backend_kind_from_string(std::string_view text);

/// Serializable description of a backend, as it appears in run configs.
struct BackendSpec {
    BackendKind kind = BackendKind::scripted;
    std::string name;
    // scripted
    std::vector<ScriptedReply> script;
    std::vector<KeyedRule> keyed;
    ExhaustionPolicy on_exhausted = ExhaustionPolicy::error;
    // replay
    std::string store;
    // remote_http
    RemoteConfig remote;
    // any kind: when set, responses are recorded into this store
    std::string record_to;
    ChatParams params;

    bool operator==(const BackendSpec&) const = default;
};

void to_json(json& j, const BackendSpec& spec);
void from_json(const json& j, BackendSpec& spec);

/// Shares ReplayStore instances between backends that name the same file.
class StoreRegistry {
public:
    std::shared_ptr<ReplayStore> open(const std::filesystem::path& file);

private:
    std::mutex mutex_;
    std::map<std::string, std::shared_ptr<ReplayStore>> stores_;
};

/// Builds a fresh backend instance. Scripted backends get their own cursor
/// per call, which keeps concurrent tasks independent and deterministic.
/// Relative store paths resolve against `base_dir`.
std::shared_ptr<ChatBackend> make_backend(const BackendSpec& spec, StoreRegistry& stores,
                                          const std::filesystem::path& base_dir = {});

}  // namespace usersim
