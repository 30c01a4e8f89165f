#include <chrono>
#include <cstdlib>

#include <httplib.h>

#include "cdrcot/model_gateway.hpp"

namespace cdrcot {

using json = nlohmann::json;

HttpBackend::HttpBackend(BackendConfig config) : config_(std::move(config)) {
    config_.validate();
    const char* token = std::getenv(config_.auth_env_var.c_str());
    if (token == nullptr || *token == '\0') {
        throw AuthError("backend '" + config_.name + "': environment variable " + config_.auth_env_var +
                        " holds no bearer token");
    }
    token_ = token;

    const auto scheme_end = config_.base_url.find("://");
    if (scheme_end == std::string::npos) {
        throw std::invalid_argument("backend '" + config_.name + "': base_url needs a scheme: " + config_.base_url);
    }
    const auto path_start = config_.base_url.find('/', scheme_end + 3);
    scheme_host_port_ = config_.base_url.substr(0, path_start);
    path_prefix_ = path_start == std::string::npos ? "" : config_.base_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

json HttpBackend::wire_body(const ChatRequest& request) {
    return canonical_request_json(request);
}

ChatResponse HttpBackend::parse_wire_response(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error& e) {
        throw ProtocolError(std::string("response body is not JSON: ") + e.what());
    }
    try {
        const auto& choice = j.at("choices").at(0);
        const auto& content = choice.at("message").at("content");
        if (!content.is_string()) throw ProtocolError("choices[0].message.content is not a string");
        ChatResponse r;
        r.text = content.get<std::string>();
        const auto finish = choice.find("finish_reason");
        r.finish_reason = (finish == choice.end() || finish->is_null())
                              ? FinishReason::Stop
                              : parse_finish_reason(finish->get<std::string>());
        return r;
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("unexpected response shape: ") + e.what());
    }
}

ChatResponse HttpBackend::send(const ChatRequest& request) {
    httplib::Client client(scheme_host_port_);
    const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    const httplib::Headers headers = {{"Authorization", "Bearer " + token_}};
    const auto started = std::chrono::steady_clock::now();
    auto result = client.Post(path_prefix_ + "/chat/completions", headers, wire_body(request).dump(),
                              "application/json");
    const auto elapsed =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);

    if (!result) {
        throw TransientError("request to " + config_.base_url + " failed: " + httplib::to_string(result.error()));
    }
    const int status = result->status;
    if (status == 401 || status == 403) {
        throw AuthError("backend '" + config_.name + "' rejected credentials (HTTP " + std::to_string(status) + ")");
    }
    if (status == 429 || status >= 500) {
        throw TransientError("HTTP " + std::to_string(status) + " from " + config_.base_url);
    }
    if (status != 200) {
        throw ProtocolError("HTTP " + std::to_string(status) + " from " + config_.base_url + ": " +
                            result->body.substr(0, 200));
    }
    ChatResponse response = parse_wire_response(result->body);
    response.latency_ms = elapsed.count();
    response.backend_id = id();
    return response;
}

}  // namespace cdrcot
