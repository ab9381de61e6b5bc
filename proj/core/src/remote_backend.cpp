// OpenAI-style chat-completion client.
//
// Request:  POST {base_url}/chat/completions
//           {"model", "messages":[{"role","content"}], "temperature", "max_tokens", "seed"?}
// Response: {"choices":[{"message":{"content": "..."}}], "usage":{"prompt_tokens","completion_tokens"}}

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cstdlib>
#include <thread>

#include "usersim/backend.hpp"

namespace usersim {

namespace {

struct ParsedUrl {
    std::string scheme_host_port;
    std::string path_prefix;
};

ParsedUrl parse_base_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("base_url lacks a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    ParsedUrl out;
    if (path_start == std::string::npos) {
        out.scheme_host_port = url;
    } else {
        out.scheme_host_port = url.substr(0, path_start);
        out.path_prefix = url.substr(path_start);
    }
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
    return out;
}

bool retryable_status(int status) { return status >= 500 || status == 429; }

}  // namespace

RemoteHttpBackend::RemoteHttpBackend(RemoteConfig config) : config_(std::move(config)) {
    auto parsed = parse_base_url(config_.base_url);
    scheme_host_port_ = std::move(parsed.scheme_host_port);
    path_prefix_ = std::move(parsed.path_prefix);
}

std::string RemoteHttpBackend::identifier() const { return "remote_http:" + config_.model + "@" + config_.base_url; }

ChatResponse RemoteHttpBackend::do_chat(std::span<const Message> messages, const ChatParams& params) {
    json body{{"model", config_.model},
              {"messages", to_json(messages)},
              {"temperature", params.temperature},
              {"max_tokens", params.max_output_tokens}};
    if (params.seed) body["seed"] = *params.seed;
    const auto payload = body.dump();

    httplib::Headers headers;
    if (const char* token = std::getenv(config_.auth_token_env.c_str()); token != nullptr && *token != '\0') {
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }

    const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
    auto delay = std::chrono::duration<double, std::milli>(config_.backoff_base_ms);
    const int max_attempts = 1 + std::max(0, config_.max_retries);
    std::optional<BackendError> last_error;

    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        if (attempt > 1) {
            std::this_thread::sleep_for(delay);
            delay *= config_.backoff_factor;
        }
        httplib::Client client(scheme_host_port_);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);

        auto result = client.Post(path_prefix_ + "/chat/completions", headers, payload, "application/json");
        if (!result) {
            const auto err = result.error();
            const auto kind = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout
                                  ? BackendErrorKind::timeout
                                  : BackendErrorKind::transport;
            last_error = BackendError(kind, "request to " + config_.base_url + " failed: " + httplib::to_string(err));
            continue;
        }
        if (result->status != 200) {
            BackendError error(BackendErrorKind::http_status,
                               "HTTP " + std::to_string(result->status) + " from " + config_.base_url,
                               result->status);
            if (!retryable_status(result->status)) throw error;
            last_error = error;
            continue;
        }

        json reply;
        try {
            reply = json::parse(result->body);
        } catch (const json::parse_error&) {
            throw BackendError(BackendErrorKind::transport, "malformed JSON body from " + config_.base_url);
        }
        ChatResponse response;
        try {
            response.text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception&) {
            throw BackendError(BackendErrorKind::transport, "response from " + config_.base_url + " has no choices[0].message.content");
        }
        if (auto usage = reply.find("usage"); usage != reply.end() && usage->is_object()) {
            response.usage.prompt_tokens = usage->value("prompt_tokens", 0);
            response.usage.completion_tokens = usage->value("completion_tokens", 0);
        }
        response.attempts = attempt;
        return response;
    }
    throw last_error->with_context("gave up after " + std::to_string(max_attempts) + " attempts");
}

}  // namespace usersim
