#include <array>
#include <regex>

#include "cdrcot/digest.hpp"
#include "cdrcot/model_gateway.hpp"

namespace cdrcot {

using json = nlohmann::json;

namespace {

enum class MockStage { Cot, Aggregate, Classify, Audit, ZeroShot, Unknown };

MockStage detect_stage(std::string_view user) {
    struct Marker {
        std::string_view header;
        MockStage stage;
    };
    static constexpr std::array<Marker, 5> kMarkers = {{
        {"# Task: Generate a full clinical analysis", MockStage::Cot},
        {"# Task: Integrate independent clinical analyses", MockStage::Aggregate},
        {"# Task: Assign the final CDR score", MockStage::Classify},
        {"# Task: Audit summary", MockStage::Audit},
        {"# Task: Direct CDR classification", MockStage::ZeroShot},
    }};
    for (const auto& m : kMarkers) {
        if (user.find(m.header) != std::string_view::npos) return m.stage;
    }
    return MockStage::Unknown;
}

std::optional<TaskPair> find_pair(const std::string& user) {
    static const std::regex re(R"(\[choose from ([0-9.]+), ([0-9.]+)\])");
    std::smatch m;
    if (!std::regex_search(user, m, re)) return std::nullopt;
    auto low = CdrLabel::parse(m[1].str());
    auto high = CdrLabel::parse(m[2].str());
    if (!low || !high || !(*low < *high)) return std::nullopt;
    return TaskPair(*low, *high);
}

// Majority of pair-label cues; ties go to the lower label.
std::optional<CdrLabel> cue_majority(std::string_view text, const TaskPair& pair) {
    int low = 0;
    int high = 0;
    for (CdrLabel c : find_cue_tokens(text)) {
        if (c == pair.low()) ++low;
        if (c == pair.high()) ++high;
    }
    if (low == 0 && high == 0) return std::nullopt;
    return high > low ? pair.high() : pair.low();
}

std::string between(std::string_view text, std::string_view from, std::string_view to) {
    auto b = text.find(from);
    if (b == std::string_view::npos) return {};
    b += from.size();
    auto e = text.find(to, b);
    return std::string(text.substr(b, e == std::string_view::npos ? std::string_view::npos : e - b));
}

// Bodies of "### Analysis N" blocks in prompt order.
std::vector<std::string> analysis_blocks(std::string_view text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while ((pos = text.find("### Analysis ", pos)) != std::string_view::npos) {
        auto body = text.find('\n', pos);
        if (body == std::string_view::npos) break;
        ++body;
        auto end = text.find("\n\n", body);
        out.emplace_back(trim(text.substr(body, end == std::string_view::npos ? std::string_view::npos : end - body)));
        pos = body;
    }
    return out;
}

std::string cot_reply(std::uint64_t h, CdrLabel chosen, const TaskPair& pair, double malformed_rate) {
    static constexpr std::array<std::string_view, 3> kOpeners = {
        "Findings across domains are most consistent with CDR ",
        "Taken together the note supports a rating of CDR ",
        "The overall functional picture indicates CDR ",
    };
    const std::string label(chosen.text());
    const std::string other(pair.other(chosen).text());
    json analysis{
        {"reasoning_steps",
         {"Reviewed the note for cognitive and functional findings.",
          "The pattern of deficits resembles a CDR " + label + " presentation.",
          "Weighed the evidence against the alternative rating of CDR " + other + "."}},
        {"domains",
         {{"memory", "Memory findings in keeping with CDR " + label + "."},
          {"orientation", "Orientation described at a CDR " + label + " level."},
          {"judgment_problem_solving", "Judgment and problem solving consistent with CDR " + label + "."},
          {"community_affairs", "Community function consistent with CDR " + label + "."},
          {"home_hobbies", "Home and hobbies consistent with CDR " + label + "."},
          {"personal_care", "Personal care consistent with CDR " + label + "."}}},
        {"assessment", std::string(kOpeners[h % kOpeners.size()]) + label + " " + std::string(cue_token(chosen)) + "."},
        {"cdr_score", chosen.value()},
    };

    if (unit_interval(splitmix64(h ^ 0x6d616c66ULL)) < malformed_rate) {
        switch ((h >> 8) % 5) {
            case 0: {
                const std::string full = analysis.dump();
                return full.substr(0, full.size() / 2);
            }
            case 1:
                analysis["domains"].erase("orientation");
                return analysis.dump(2);
            case 2:
                analysis["reasoning_steps"] = json::array();
                return analysis.dump(2);
            case 3: {
                for (auto g : CdrLabel::kAllGrades) {
                    if (!pair.contains(CdrLabel(g))) {
                        analysis["cdr_score"] = CdrLabel(g).value();
                        break;
                    }
                }
                return analysis.dump(2);
            }
            default:
                return "I am unable to provide a structured analysis for this note.";
        }
    }
    switch ((h >> 16) % 3) {
        case 0: return analysis.dump(2);
        case 1: return "```json\n" + analysis.dump(2) + "\n```";
        default: return "Here is the structured analysis:\n" + analysis.dump() + "\nEnd of analysis.";
    }
}

}  // namespace

MockBackend::MockBackend(BackendConfig config) : config_(std::move(config)) {
    config_.validate();
}

ChatResponse MockBackend::send(const ChatRequest& request) {
    std::string all_content;
    std::string first_user;
    for (const auto& m : request.messages) {
        all_content += to_string(m.role);
        all_content += ':';
        all_content += m.content;
        all_content += '\n';
        if (m.role == Role::User && first_user.empty()) first_user = m.content;
    }
    const std::uint64_t h = stable_hash(all_content, static_cast<std::uint64_t>(request.seed));
    const auto pair = find_pair(first_user);

    std::string text;
    switch (detect_stage(first_user)) {
        case MockStage::Cot:
        case MockStage::ZeroShot: {
            if (!pair) {
                text = "No candidate labels were given.";
                break;
            }
            auto planted = cue_majority(first_user, *pair);
            if (!planted) planted = (h & 1) ? pair->high() : pair->low();
            const bool correct = unit_interval(splitmix64(h ^ 0x736b696cULL)) < config_.mock_skill;
            const CdrLabel chosen = correct ? *planted : pair->other(*planted);
            if (detect_stage(first_user) == MockStage::Cot) {
                text = cot_reply(h, chosen, *pair, config_.mock_malformed_rate);
            } else {
                text = "FINAL_CDR: " + std::string(chosen.text());
            }
            break;
        }
        case MockStage::Classify: {
            const auto narrative = between(first_user, "Integrated diagnostic narrative:", "Candidate labels:");
            const auto label = pair ? cue_majority(narrative, *pair) : std::nullopt;
            if (label) {
                text = "The integrated narrative best matches the candidate label CDR " + std::string(label->text()) +
                       ".\nFINAL_CDR: " + std::string(label->text());
            } else {
                text = "The narrative does not support a confident rating.";
            }
            break;
        }
        case MockStage::Aggregate: {
            const auto blocks = analysis_blocks(first_user);
            text = "Integrated narrative across " + std::to_string(blocks.size()) + " independent analyses.";
            for (const auto& b : blocks) text += " " + b;
            text += " Recurring clues were integrated and contradictions resolved toward the better-supported findings.";
            break;
        }
        case MockStage::Audit: {
            const auto label = trim(between(first_user, "Final classification: CDR", "\n"));
            const auto blocks = analysis_blocks(first_user);
            text = "Audit summary: the final classification of CDR " + std::string(label) + " follows from " +
                   std::to_string(blocks.size()) +
                   " independent analyses and the integrated narrative; each cited finding is traceable to the "
                   "source note.";
            break;
        }
        case MockStage::Unknown:
            text = "Unrecognised task.";
            break;
    }
    return ChatResponse{std::move(text), FinishReason::Stop, 0, id()};
}

}  // namespace cdrcot
