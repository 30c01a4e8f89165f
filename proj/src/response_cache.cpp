#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "cdrcot/model_gateway.hpp"

namespace cdrcot {

namespace fs = std::filesystem;
using json = nlohmann::json;

ResponseCache::ResponseCache(std::string directory) : directory_(std::move(directory)) {
    if (!directory_.empty()) fs::create_directories(directory_);
}

std::optional<ChatResponse> ResponseCache::get(const std::string& key) {
    {
        std::lock_guard lock(mutex_);
        if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    }
    if (directory_.empty()) return std::nullopt;

    const fs::path path = fs::path(directory_) / (key + ".json");
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    try {
        const json entry = json::parse(in);
        ChatResponse response = response_from_json(entry.at("response"));
        std::lock_guard lock(mutex_);
        entries_.insert_or_assign(key, response);
        return response;
    } catch (const json::exception&) {
        // A torn write from an interrupted run; treat as a miss and overwrite later.
        return std::nullopt;
    }
}

void ResponseCache::put(const std::string& key, const ChatRequest& request, const ChatResponse& response) {
    {
        std::lock_guard lock(mutex_);
        entries_.insert_or_assign(key, response);
    }
    if (directory_.empty()) return;

    const json entry{{"request", canonical_request_json(request)}, {"response", to_json(response)}};
    const fs::path final_path = fs::path(directory_) / (key + ".json");
    std::ostringstream tmp_name;
    tmp_name << key << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id());
    const fs::path tmp_path = fs::path(directory_) / tmp_name.str();
    {
        std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
        out << entry.dump(2) << '\n';
    }
    fs::rename(tmp_path, final_path);
}

std::size_t ResponseCache::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

}  // namespace cdrcot
