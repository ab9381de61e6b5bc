#include "usersim/backend.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace usersim {

std::string_view to_string(Role role) {
    switch (role) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

Role role_from_string(std::string_view text) {
    if (text == "system") return Role::system;
    if (text == "user") return Role::user;
    if (text == "assistant") return Role::assistant;
    throw InvalidRequest("unknown role '" + std::string(text) + "'");
}

std::string_view to_string(BackendErrorKind kind) {
    switch (kind) {
        case BackendErrorKind::transport: return "transport";
        case BackendErrorKind::timeout: return "timeout";
        case BackendErrorKind::http_status: return "http_status";
        case BackendErrorKind::exhausted_script: return "exhausted_script";
        case BackendErrorKind::missing_replay: return "missing_replay";
    }
    return "transport";
}

BackendErrorKind backend_error_kind_from_string(std::string_view text) {
    for (auto kind : {BackendErrorKind::transport, BackendErrorKind::timeout, BackendErrorKind::http_status,
                      BackendErrorKind::exhausted_script, BackendErrorKind::missing_replay}) {
        if (to_string(kind) == text) return kind;
    }
    throw ConfigError("unknown backend error kind '" + std::string(text) + "'");
}

std::string_view to_string(ExhaustionPolicy policy) {
    switch (policy) {
        case ExhaustionPolicy::error: return "error";
        case ExhaustionPolicy::repeat_last: return "repeat_last";
        case ExhaustionPolicy::cycle: return "cycle";
    }
    return "error";
}

ExhaustionPolicy exhaustion_policy_from_string(std::string_view text) {
    if (text == "error") return ExhaustionPolicy::error;
    if (text == "repeat_last") return ExhaustionPolicy::repeat_last;
    if (text == "cycle") return ExhaustionPolicy::cycle;
    throw ConfigError("unknown exhaustion policy '" + std::string(text) + "'");
}

void validate_messages(std::span<const Message> messages) {
    if (messages.empty()) throw InvalidRequest("chat request has no messages");
    std::size_t i = 0;
    if (messages[0].role == Role::system) i = 1;
    std::optional<Role> previous;
    for (; i < messages.size(); ++i) {
        const auto role = messages[i].role;
        if (role == Role::system) {
            throw InvalidRequest("system message at position " + std::to_string(i) + " (only allowed first)");
        }
        if (previous && *previous == role) {
            throw InvalidRequest("roles do not alternate at position " + std::to_string(i));
        }
        previous = role;
    }
}

json to_json(std::span<const Message> messages) {
    json out = json::array();
    for (const auto& m : messages) {
        out.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    return out;
}

std::vector<Message> messages_from_json(const json& j) {
    std::vector<Message> out;
    for (const auto& m : j) {
        out.push_back(Message{role_from_string(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
    }
    return out;
}

std::string prompt_hash(std::span<const Message> messages, const ChatParams& params) {
    json doc;
    doc["messages"] = to_json(messages);
    doc["params"] = {
        {"temperature", params.temperature},
        {"max_output_tokens", params.max_output_tokens},
        {"seed", params.seed ? json(*params.seed) : json(nullptr)},
    };
    return sha256_hex(canonical_dump(doc));
}

ChatResponse ChatBackend::chat(std::span<const Message> messages, const ChatParams& params) {
    validate_messages(messages);
    const auto start = std::chrono::steady_clock::now();
    auto response = do_chat(messages, params);
    response.latency =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
    return response;
}

namespace {

int rough_tokens(std::string_view text) {
    int count = 0;
    bool in_word = false;
    for (unsigned char c : text) {
        const bool space = std::isspace(c) != 0;
        if (!space && !in_word) ++count;
        in_word = !space;
    }
    return count;
}

Usage estimate_usage(std::span<const Message> messages, std::string_view reply) {
    Usage usage;
    for (const auto& m : messages) usage.prompt_tokens += rough_tokens(m.content);
    usage.completion_tokens = rough_tokens(reply);
    return usage;
}

}  // namespace

// ---------------------------------------------------------------------------
// ScriptedBackend

ScriptedBackend::ScriptedBackend(std::vector<ScriptedReply> script, ExhaustionPolicy on_exhausted, std::string name)
    : name_(std::move(name)), on_exhausted_(on_exhausted) {
    fallback_.replies = std::move(script);
}

ScriptedBackend::ScriptedBackend(std::vector<KeyedRule> rules, std::vector<ScriptedReply> fallback,
                                 ExhaustionPolicy on_exhausted, std::string name)
    : name_(std::move(name)), on_exhausted_(on_exhausted) {
    for (auto& rule : rules) {
        rule_matches_.push_back(std::move(rule.match));
        rule_queues_.push_back(Queue{std::move(rule.replies), 0});
    }
    fallback_.replies = std::move(fallback);
}

ScriptedBackend::ScriptedBackend(Responder responder, std::string name)
    : name_(std::move(name)), on_exhausted_(ExhaustionPolicy::error), responder_(std::move(responder)) {}

std::shared_ptr<ScriptedBackend> ScriptedBackend::of(std::vector<std::string> texts, ExhaustionPolicy on_exhausted,
                                                     std::string name) {
    std::vector<ScriptedReply> script;
    script.reserve(texts.size());
    for (auto& t : texts) script.push_back(ScriptedReply{std::move(t), std::nullopt});
    return std::make_shared<ScriptedBackend>(std::move(script), on_exhausted, std::move(name));
}

std::size_t ScriptedBackend::calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

std::optional<ScriptedReply> ScriptedBackend::take(Queue& queue) {
    if (queue.replies.empty()) return std::nullopt;
    if (queue.cursor < queue.replies.size()) return queue.replies[queue.cursor++];
    switch (on_exhausted_) {
        case ExhaustionPolicy::error: return std::nullopt;
        case ExhaustionPolicy::repeat_last: return queue.replies.back();
        case ExhaustionPolicy::cycle:
            queue.cursor = 1;
            return queue.replies.front();
    }
    return std::nullopt;
}

ChatResponse ScriptedBackend::do_chat(std::span<const Message> messages, const ChatParams& params) {
    std::optional<ScriptedReply> reply;
    {
        std::lock_guard lock(mutex_);
        ++calls_;
        if (responder_) {
            reply = responder_(messages, params);
        } else {
            Queue* queue = &fallback_;
            if (!rule_matches_.empty()) {
                std::string haystack;
                for (const auto& m : messages) {
                    haystack += m.content;
                    haystack.push_back('\n');
                }
                for (std::size_t i = 0; i < rule_matches_.size(); ++i) {
                    if (haystack.find(rule_matches_[i]) != std::string::npos) {
                        queue = &rule_queues_[i];
                        break;
                    }
                }
            }
            reply = take(*queue);
        }
    }
    if (!reply) {
        throw BackendError(BackendErrorKind::exhausted_script, "scripted backend '" + name_ + "' has no reply left");
    }
    if (reply->fault) throw BackendError(*reply->fault, reply->text);
    ChatResponse response;
    response.usage = estimate_usage(messages, reply->text);
    response.text = std::move(reply->text);
    return response;
}

// ---------------------------------------------------------------------------
// ReplayStore

ReplayStore::ReplayStore(std::filesystem::path file) : file_(std::move(file)) {
    if (!std::filesystem::exists(*file_)) return;
    for (const auto& record : read_jsonl(*file_)) {
        const auto hash = record.at("hash").get<std::string>();
        auto response = record.at("response").get<std::string>();
        auto [it, inserted] = entries_.emplace(hash, response);
        if (!inserted && it->second != response) {
            throw StoreError("replay store " + file_->string() + " holds conflicting responses for " + hash);
        }
    }
}

std::optional<std::string> ReplayStore::lookup(const std::string& hash) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(hash);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

bool ReplayStore::record(const std::string& hash, const std::string& response) {
    std::unique_lock lock(mutex_);
    auto it = entries_.find(hash);
    if (it != entries_.end()) {
        if (it->second == response) return false;
        throw StoreError("conflicting response recorded for prompt hash " + hash);
    }
    if (file_) {
        if (file_->has_parent_path()) std::filesystem::create_directories(file_->parent_path());
        std::ofstream out(*file_, std::ios::binary | std::ios::app);
        if (!out) throw StoreError("cannot append to replay store " + file_->string());
        out << canonical_dump(json{{"hash", hash}, {"response", response}}) << '\n';
        out.flush();
        if (!out) throw StoreError("write to replay store " + file_->string() + " failed");
    }
    entries_.emplace(hash, response);
    return true;
}

std::size_t ReplayStore::size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
}

ReplayBackend::ReplayBackend(std::shared_ptr<const ReplayStore> store, std::string name)
    : store_(std::move(store)), name_(std::move(name)) {}

ChatResponse ReplayBackend::do_chat(std::span<const Message> messages, const ChatParams& params) {
    const auto hash = prompt_hash(messages, params);
    auto text = store_->lookup(hash);
    if (!text) throw BackendError(BackendErrorKind::missing_replay, "no recorded response for prompt " + hash);
    ChatResponse response;
    response.usage = estimate_usage(messages, *text);
    response.text = std::move(*text);
    return response;
}

RecordingBackend::RecordingBackend(std::shared_ptr<ChatBackend> inner, std::shared_ptr<ReplayStore> store)
    : inner_(std::move(inner)), store_(std::move(store)) {}

ChatResponse RecordingBackend::do_chat(std::span<const Message> messages, const ChatParams& params) {
    auto response = inner_->chat(messages, params);
    store_->record(prompt_hash(messages, params), response.text);
    return response;
}

std::shared_ptr<ChatBackend> record_mode(std::shared_ptr<ChatBackend> backend, std::shared_ptr<ReplayStore> store) {
    return std::make_shared<RecordingBackend>(std::move(backend), std::move(store));
}

// ---------------------------------------------------------------------------
// Specs

std::string_view to_string(BackendKind kind) {
    switch (kind) {
        case BackendKind::remote_http: return "remote_http";
        case BackendKind::scripted: return "scripted";
        case BackendKind::replay: return "replay";
    }
    return "scripted";
}

BackendKind backend_kind_from_string(std::string_view text) {
    if (text == "remote_http") return BackendKind::remote_http;
    if (text == "scripted") return BackendKind::scripted;
    if (text == "replay") return BackendKind::replay;
    throw ConfigError("unknown backend kind '" + std::string(text) + "'");
}

namespace {

json reply_to_json(const ScriptedReply& r) {
    if (!r.fault) return r.text;
    return json{{"fault", to_string(*r.fault)}, {"message", r.text}};
}

ScriptedReply reply_from_json(const json& j) {
    if (j.is_string()) return ScriptedReply{j.get<std::string>(), std::nullopt};
    return ScriptedReply{j.value("message", std::string("injected fault")),
                         backend_error_kind_from_string(j.at("fault").get<std::string>())};
}

}  // namespace

void to_json(json& j, const ChatParams& p) {
    j = json{{"temperature", p.temperature},
             {"max_output_tokens", p.max_output_tokens},
             {"seed", p.seed ? json(*p.seed) : json(nullptr)}};
}

void from_json(const json& j, ChatParams& p) {
    p = ChatParams{};
    p.temperature = j.value("temperature", p.temperature);
    p.max_output_tokens = j.value("max_output_tokens", p.max_output_tokens);
    if (j.contains("seed") && !j.at("seed").is_null()) p.seed = j.at("seed").get<std::uint64_t>();
}

void to_json(json& j, const BackendSpec& spec) {
    j = json{{"kind", to_string(spec.kind)}, {"name", spec.name}};
    j["params"] = spec.params;
    if (!spec.record_to.empty()) j["record_to"] = spec.record_to;
    switch (spec.kind) {
        case BackendKind::scripted: {
            json script = json::array();
            for (const auto& r : spec.script) script.push_back(reply_to_json(r));
            json keyed = json::array();
            for (const auto& rule : spec.keyed) {
                json replies = json::array();
                for (const auto& r : rule.replies) replies.push_back(reply_to_json(r));
                keyed.push_back({{"match", rule.match}, {"replies", replies}});
            }
            j["script"] = script;
            j["keyed"] = keyed;
            j["on_exhausted"] = to_string(spec.on_exhausted);
            break;
        }
        case BackendKind::replay:
            j["store"] = spec.store;
            break;
        case BackendKind::remote_http:
            j["base_url"] = spec.remote.base_url;
            j["model"] = spec.remote.model;
            j["auth_token_env"] = spec.remote.auth_token_env;
            j["timeout_ms"] = spec.remote.timeout_ms;
            j["max_retries"] = spec.remote.max_retries;
            j["backoff_base_ms"] = spec.remote.backoff_base_ms;
            j["backoff_factor"] = spec.remote.backoff_factor;
            break;
    }
}

void from_json(const json& j, BackendSpec& spec) {
    spec = BackendSpec{};
    spec.kind = backend_kind_from_string(j.at("kind").get<std::string>());
    spec.name = j.value("name", std::string(to_string(spec.kind)));
    spec.record_to = j.value("record_to", std::string());
    if (auto it = j.find("params"); it != j.end()) spec.params = it->get<ChatParams>();
    switch (spec.kind) {
        case BackendKind::scripted:
            for (const auto& r : j.value("script", json::array())) spec.script.push_back(reply_from_json(r));
            for (const auto& rule : j.value("keyed", json::array())) {
                KeyedRule k{rule.at("match").get<std::string>(), {}};
                for (const auto& r : rule.at("replies")) k.replies.push_back(reply_from_json(r));
                spec.keyed.push_back(std::move(k));
            }
            spec.on_exhausted = exhaustion_policy_from_string(j.value("on_exhausted", std::string("error")));
            break;
        case BackendKind::replay:
            spec.store = j.at("store").get<std::string>();
            break;
        case BackendKind::remote_http:
            spec.remote.base_url = j.at("base_url").get<std::string>();
            spec.remote.model = j.at("model").get<std::string>();
            spec.remote.auth_token_env = j.value("auth_token_env", spec.remote.auth_token_env);
            spec.remote.timeout_ms = j.value("timeout_ms", spec.remote.timeout_ms);
            spec.remote.max_retries = j.value("max_retries", spec.remote.max_retries);
            spec.remote.backoff_base_ms = j.value("backoff_base_ms", spec.remote.backoff_base_ms);
            spec.remote.backoff_factor = j.value("backoff_factor", spec.remote.backoff_factor);
            break;
    }
}

std::shared_ptr<ReplayStore> StoreRegistry::open(const std::filesystem::path& file) {
    const auto key = std::filesystem::absolute(file).lexically_normal().string();
    std::lock_guard lock(mutex_);
    auto& slot = stores_[key];
    if (!slot) slot = std::make_shared<ReplayStore>(std::filesystem::path(key));
    return slot;
}

std::shared_ptr<ChatBackend> make_backend(const BackendSpec& spec, StoreRegistry& stores,
                                          const std::filesystem::path& base_dir) {
    auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    };
    std::shared_ptr<ChatBackend> backend;
    switch (spec.kind) {
        case BackendKind::scripted:
            if (spec.keyed.empty()) {
                backend = std::make_shared<ScriptedBackend>(spec.script, spec.on_exhausted, spec.name);
            } else {
                backend = std::make_shared<ScriptedBackend>(spec.keyed, spec.script, spec.on_exhausted, spec.name);
            }
            break;
        case BackendKind::replay:
            backend = std::make_shared<ReplayBackend>(stores.open(resolve(spec.store)), spec.name);
            break;
        case BackendKind::remote_http:
            backend = std::make_shared<RemoteHttpBackend>(spec.remote);
            break;
    }
    if (!spec.record_to.empty()) backend = record_mode(std::move(backend), stores.open(resolve(spec.record_to)));
    return backend;
}

}  // namespace usersim
