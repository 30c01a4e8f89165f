#include "cdrcot/model_gateway.hpp"

#include <thread>

#include "cdrcot/digest.hpp"

namespace cdrcot {

using json = nlohmann::json;

void ChatRequest::validate() const {
    if (messages.empty()) throw std::invalid_argument("chat request has no messages");
    if (!(temperature >= 0.0 && temperature <= 2.0)) {
        throw std::invalid_argument("temperature must lie in [0, 2]");
    }
    if (max_tokens <= 0) throw std::invalid_argument("max_tokens must be positive");
}

std::string_view to_string(FinishReason f) {
    switch (f) {
        case FinishReason::Stop: return "stop";
        case FinishReason::Length: return "length";
        case FinishReason::Error: return "error";
    }
    return "error";
}

FinishReason parse_finish_reason(std::string_view s) {
    if (s == "stop") return FinishReason::Stop;
    if (s == "length") return FinishReason::Length;
    return FinishReason::Error;
}

json canonical_request_json(const ChatRequest& request) {
    json messages = json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    return json{{"model", request.model_name},
                {"messages", std::move(messages)},
                {"temperature", request.temperature},
                {"seed", request.seed},
                {"max_tokens", request.max_tokens}};
}

json to_json(const ChatResponse& response) {
    return json{{"text", response.text},
                {"finish_reason", to_string(response.finish_reason)},
                {"latency_ms", response.latency_ms},
                {"backend_id", response.backend_id}};
}

ChatResponse response_from_json(const json& j) {
    ChatResponse r;
    r.text = j.at("text").get<std::string>();
    r.finish_reason = parse_finish_reason(j.at("finish_reason").get<std::string>());
    r.latency_ms = j.at("latency_ms").get<std::int64_t>();
    r.backend_id = j.at("backend_id").get<std::string>();
    return r;
}

std::string cache_key(const ChatRequest& request) {
    return sha256_hex(canonical_request_json(request).dump());
}

void BackendConfig::validate() const {
    if (kind == BackendKind::Http && base_url.empty()) {
        throw std::invalid_argument("backend '" + name + "': http backends need base_url");
    }
    if (kind == BackendKind::Http && auth_env_var.empty()) {
        throw std::invalid_argument("backend '" + name + "': http backends need auth_env_var");
    }
    if (timeout_ms <= 0) throw std::invalid_argument("backend '" + name + "': timeout_ms must be positive");
    if (max_retries < 0) throw std::invalid_argument("backend '" + name + "': max_retries must be >= 0");
    if (backoff_base_ms < 0) throw std::invalid_argument("backend '" + name + "': backoff_base_ms must be >= 0");
    if (!(mock_skill >= 0.0 && mock_skill <= 1.0)) {
        throw std::invalid_argument("backend '" + name + "': mock_skill must lie in [0, 1]");
    }
    if (!(mock_malformed_rate >= 0.0 && mock_malformed_rate <= 1.0)) {
        throw std::invalid_argument("backend '" + name + "': malformed_rate must lie in [0, 1]");
    }
}

json BackendConfig::to_json() const {
    json j{{"kind", kind == BackendKind::Http ? "http" : "mock"}, {"model", model}};
    if (kind == BackendKind::Http) {
        j["base_url"] = base_url;
        j["auth_env_var"] = auth_env_var;
        j["timeout_ms"] = timeout_ms;
        j["max_retries"] = max_retries;
        j["backoff_base_ms"] = backoff_base_ms;
    } else {
        j["mock_skill"] = mock_skill;
        j["malformed_rate"] = mock_malformed_rate;
    }
    return j;
}

std::unique_ptr<ChatBackend> make_backend(const BackendConfig& config) {
    config.validate();
    if (config.kind == BackendKind::Http) return std::make_unique<HttpBackend>(config);
    return std::make_unique<MockBackend>(config);
}

// Gateway ------------------------------------------------------------------------

namespace {

class SlotGuard {
public:
    explicit SlotGuard(ConcurrencyLimit* limit) : limit_(limit) {
        if (limit_) limit_->acquire();
    }
    ~SlotGuard() {
        if (limit_) limit_->release();
    }
    SlotGuard(const SlotGuard&) = delete;
    SlotGuard& operator=(const SlotGuard&) = delete;

private:
    ConcurrencyLimit* limit_;
};

}  // namespace

Gateway::Gateway(BackendConfig config, std::unique_ptr<ChatBackend> backend, std::shared_ptr<ResponseCache> cache,
                 std::shared_ptr<ConcurrencyLimit> limit, Sleeper sleeper)
    : config_(std::move(config)),
      backend_(std::move(backend)),
      cache_(std::move(cache)),
      limit_(std::move(limit)),
      sleeper_(std::move(sleeper)) {
    if (!backend_) throw std::invalid_argument("gateway needs a backend");
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::chrono::milliseconds Gateway::backoff_delay(const ChatRequest& request, int retry) const {
    const std::int64_t base = config_.backoff_base_ms;
    const std::int64_t exp = base << std::min(retry - 1, 20);
    const std::int64_t jitter =
        base > 0 ? static_cast<std::int64_t>(stable_hash(std::to_string(request.seed), retry) % base) : 0;
    return std::chrono::milliseconds(exp + jitter);
}

ChatResponse Gateway::complete(const ChatRequest& request) {
    request.validate();
    const std::string key = cache_ ? cache_key(request) : std::string();
    if (cache_) {
        if (auto hit = cache_->get(key)) {
            ++cache_hits_;
            return *hit;
        }
    }

    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            ++retries_;
            sleeper_(backoff_delay(request, attempt));
        }
        ChatResponse response;
        try {
            SlotGuard slot(limit_.get());
            ++backend_calls_;
            response = backend_->send(request);
        } catch (const TransientError& e) {
            last_error = e.what();
            continue;
        }
        if (response.finish_reason == FinishReason::Stop && response.text.empty()) {
            throw ProtocolError("backend '" + config_.name + "' returned finish_reason=stop with no text");
        }
        if (cache_ && response.finish_reason != FinishReason::Error) {
            cache_->put(key, request, response);
        }
        return response;
    }
    throw TransportError("backend '" + config_.name + "' failed after " + std::to_string(config_.max_retries + 1) +
                         " attempts: " + last_error);
}

GatewayStats Gateway::stats() const {
    return GatewayStats{backend_calls_.load(), cache_hits_.load(), retries_.load()};
}

ChatResponse complete(const ChatRequest& request, const BackendConfig& config) {
    Gateway gateway(config, make_backend(config));
    return gateway.complete(request);
}

}  // namespace cdrcot
