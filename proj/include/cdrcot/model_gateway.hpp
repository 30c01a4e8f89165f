#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "cdrcot/prompt_kit.hpp"

namespace cdrcot {

struct ChatRequest {
    std::string model_name;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    std::int64_t seed = 0;
    int max_tokens = 1024;

    /// Throws std::invalid_argument when the invariants do not hold.
    void validate() const;
};

enum class FinishReason { Stop, Length, Error };

std::string_view to_string(FinishReason f);
FinishReason parse_finish_reason(std::string_view s);

struct ChatResponse {
    std::string text;
    FinishReason finish_reason = FinishReason::Stop;
    std::int64_t latency_ms = 0;
    std::string backend_id;
};

/// Canonical serialization of the fields that identify a request.
nlohmann::json canonical_request_json(const ChatRequest& request);
nlohmann::json to_json(const ChatResponse& response);
ChatResponse response_from_json(const nlohmann::json& j);

/// SHA-256 hex of the canonical request serialization.
std::string cache_key(const ChatRequest& request);

enum class BackendKind { Http, Mock };

struct BackendConfig {
    std::string name = "default";
    BackendKind kind = BackendKind::Mock;
    std::string model;
    std::string base_url;
    std::string auth_env_var = "OPENAI_API_KEY";
    int timeout_ms = 60000;
    int max_retries = 3;
    int backoff_base_ms = 500;
    double mock_skill = 1.0;
    double mock_malformed_rate = 0.0;

    void validate() const;
    /// Config snapshot with no secret material (only the env var name).
    nlohmann::json to_json() const;
};

// Errors -------------------------------------------------------------------------

class GatewayError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    /// Short reason used in case failure strings: "transport", "auth", "protocol".
    virtual std::string_view kind() const = 0;
};

class TransportError : public GatewayError {
public:
    using GatewayError::GatewayError;
    std::string_view kind() const override { return "transport"; }
};

class AuthError : public GatewayError {
public:
    using GatewayError::GatewayError;
    std::string_view kind() const override { return "auth"; }
};

class ProtocolError : public GatewayError {
public:
    using GatewayError::GatewayError;
    std::string_view kind() const override { return "protocol"; }
};

/// Thrown by a backend for a failure worth retrying (timeout, 429, 5xx).
class TransientError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Backends -----------------------------------------------------------------------

/// One attempt against a chat-completion endpoint. Implementations throw
/// TransientError, AuthError or ProtocolError.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual ChatResponse send(const ChatRequest& request) = 0;
    virtual std::string id() const = 0;
};

/// POST {base_url}/chat/completions with an OpenAI-compatible body.
class HttpBackend final : public ChatBackend {
public:
    explicit HttpBackend(BackendConfig config);
    ChatResponse send(const ChatRequest& request) override;
    std::string id() const override { return "http:" + config_.name; }

    /// Request body exactly as sent on the wire.
    static nlohmann::json wire_body(const ChatRequest& request);
    /// Reads choices[0].message.content and choices[0].finish_reason.
    static ChatResponse parse_wire_response(const std::string& body);

private:
    BackendConfig config_;
    std::string token_;
    std::string scheme_host_port_;
    std::string path_prefix_;
};

/// Deterministic stand-in model driven by the cue tokens of synthetic notes.
///
/// Stage is recognised from the "# Task:" header of the user prompt:
///  - cot: schema-valid JSON whose cdr_score is the planted label with
///    probability `mock_skill`, else the other pair label; `mock_malformed_rate`
///    of replies are deliberately broken.
///  - zero_shot: "FINAL_CDR: <v>" with the same skill rule.
///  - classify: "FINAL_CDR: <v>" by majority of pair-label cues in the narrative
///    (ties to the lower label); no cue gives a reply with no number.
///  - aggregate/audit: narrative text concatenated from the prompt.
/// All draws come from a hash of (seed, message contents), so identical
/// requests give identical text.
class MockBackend final : public ChatBackend {
public:
    explicit MockBackend(BackendConfig config);
    ChatResponse send(const ChatRequest& request) override;
    std::string id() const override { return "mock:" + config_.name; }

private:
    BackendConfig config_;
};

std::unique_ptr<ChatBackend> make_backend(const BackendConfig& config);

// Cache --------------------------------------------------------------------------

/// Concurrent response cache keyed by cache_key(); optionally mirrored to a
/// directory of <digest>.json files holding {"request", "response"}.
class ResponseCache {
public:
    ResponseCache() = default;
    explicit ResponseCache(std::string directory);

    std::optional<ChatResponse> get(const std::string& key);
    void put(const std::string& key, const ChatRequest& request, const ChatResponse& response);
    std::size_t size() const;

private:
    mutable std::mutex mutex_;
    std::unordered_map<std::string, ChatResponse> entries_;
    std::string directory_;
};

// Gateway ------------------------------------------------------------------------

/// Bound on concurrent in-flight requests, shared by every gateway of a run.
class ConcurrencyLimit {
public:
    explicit ConcurrencyLimit(int max_in_flight = 8) : sem_(max_in_flight < 1 ? 1 : max_in_flight) {}
    void acquire() { sem_.acquire(); }
    void release() { sem_.release(); }

private:
    std::counting_semaphore<1 << 16> sem_;
};

struct GatewayStats {
    std::uint64_t backend_calls = 0;
    std::uint64_t cache_hits = 0;
    std::uint64_t retries = 0;
};

/// Retrying, caching front end to one backend.
class Gateway {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    Gateway(BackendConfig config, std::unique_ptr<ChatBackend> backend, std::shared_ptr<ResponseCache> cache = nullptr,
            std::shared_ptr<ConcurrencyLimit> limit = nullptr, Sleeper sleeper = {});

    /// Cache lookup, then up to 1 + max_retries attempts for transient failures.
    ChatResponse complete(const ChatRequest& request);

    /// Delay before retry number `retry` (1-based): base * 2^(retry-1) plus
    /// jitter in [0, base) drawn from the request seed.
    std::chrono::milliseconds backoff_delay(const ChatRequest& request, int retry) const;

    const BackendConfig& config() const { return config_; }
    GatewayStats stats() const;

private:
    BackendConfig config_;
    std::unique_ptr<ChatBackend> backend_;
    std::shared_ptr<ResponseCache> cache_;
    std::shared_ptr<ConcurrencyLimit> limit_;
    Sleeper sleeper_;
    std::atomic<std::uint64_t> backend_calls_{0};
    std::atomic<std::uint64_t> cache_hits_{0};
    std::atomic<std::uint64_t> retries_{0};
};

/// One-shot convenience: builds a backend for `config` and completes `request`
/// without a cache.
ChatResponse complete(const ChatRequest& request, const BackendConfig& config);

}  // namespace cdrcot
