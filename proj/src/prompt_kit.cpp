#include "cdrcot/prompt_kit.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cdrcot/digest.hpp"

namespace cdrcot {

namespace prompt_kit::detail {
const std::vector<std::pair<std::string_view, std::string_view>>& embedded_templates();
}

using json = nlohmann::json;

std::string_view to_string(Role r) {
    switch (r) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    return "user";
}

Role parse_role(std::string_view s) {
    if (s == "system") return Role::System;
    if (s == "user") return Role::User;
    if (s == "assistant") return Role::Assistant;
    throw std::invalid_argument("unknown chat role '" + std::string(s) + "'");
}

std::string_view to_string(Stage s) {
    switch (s) {
        case Stage::Cot: return "cot";
        case Stage::Aggregate: return "aggregate";
        case Stage::Classify: return "classify";
        case Stage::Audit: return "audit";
        case Stage::ZeroShot: return "zero_shot";
    }
    return "cot";
}

Stage parse_stage(std::string_view s) {
    for (Stage st : {Stage::Cot, Stage::Aggregate, Stage::Classify, Stage::Audit, Stage::ZeroShot}) {
        if (to_string(st) == s) return st;
    }
    throw std::invalid_argument("unknown pipeline stage '" + std::string(s) + "'");
}

json to_json(const PromptBundle& b) {
    json messages = json::array();
    for (const auto& m : b.messages) {
        messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    return json{{"stage", to_string(b.stage)},
                {"messages", std::move(messages)},
                {"pair", b.pair ? json(b.pair->key()) : json(nullptr)},
                {"template_version", b.template_version}};
}

PromptBundle bundle_from_json(const json& j) {
    PromptBundle b;
    b.stage = parse_stage(j.at("stage").get<std::string>());
    for (const auto& m : j.at("messages")) {
        b.messages.push_back({parse_role(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
    }
    if (!j.at("pair").is_null()) b.pair = TaskPair::parse(j.at("pair").get<std::string>());
    b.template_version = j.at("template_version").get<std::string>();
    return b;
}

namespace prompt_kit {

namespace {

const std::vector<std::string> kRequired = {
    "aggregate_item", "aggregate_system", "aggregate_user",  "audit_system",          "audit_user",
    "classify_reask", "classify_system",  "classify_user",   "cot_assessment_block",  "cot_system",
    "cot_user",       "zero_shot_system", "zero_shot_user",
};

bool is_name_char(char c) { return (c >= 'a' && c <= 'z') || c == '_'; }

// Visits each "{name}" occurrence with a lower-case identifier inside.
template <typename OnText, typename OnPlaceholder>
void scan(std::string_view text, OnText on_text, OnPlaceholder on_placeholder) {
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto open = text.find('{', pos);
        if (open == std::string_view::npos) break;
        auto close = open + 1;
        while (close < text.size() && is_name_char(text[close])) ++close;
        if (close < text.size() && text[close] == '}' && close > open + 1) {
            on_text(text.substr(pos, open - pos));
            on_placeholder(text.substr(open + 1, close - open - 1));
            pos = close + 1;
        } else {
            on_text(text.substr(pos, open + 1 - pos));
            pos = open + 1;
        }
    }
    on_text(text.substr(pos));
}

std::string rstrip(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) {
        s.pop_back();
    }
    return s;
}

PromptBundle make_bundle(Stage stage, std::string system, std::string user, std::optional<TaskPair> pair,
                         const TemplateSet& templates) {
    PromptBundle b;
    b.stage = stage;
    b.messages = {{Role::System, std::move(system)}, {Role::User, std::move(user)}};
    b.pair = pair;
    b.template_version = templates.version();
    return b;
}

std::string analyses_block(std::span<const CotAnalysis> analyses, const TemplateSet& templates) {
    std::string out;
    for (std::size_t i = 0; i < analyses.size(); ++i) {
        out += templates.render("aggregate_item",
                                {{"index", std::to_string(i + 1)}, {"assessment", analyses[i].assessment}});
        out += "\n\n";
    }
    return out;
}

std::string assessment_block(const PatientRecord& record, bool include_assessment, const TemplateSet& templates) {
    if (!include_assessment) return {};
    return templates.render("cot_assessment_block", {{"assessment", record.assessment}}) + "\n";
}

}  // namespace

std::string candidates_text(const TaskPair& pair) {
    return "[choose from " + std::string(pair.low().text()) + ", " + std::string(pair.high().text()) + "]";
}

std::string candidate_list(const TaskPair& pair) {
    return std::string(pair.low().text()) + " or " + std::string(pair.high().text());
}

const std::vector<std::string>& placeholder_catalog() {
    static const std::vector<std::string> names = {
        "analyses",  "analysis_count", "assessment", "assessment_block", "candidate_list",
        "candidates", "final_label",   "index",      "narrative",        "subjective",
    };
    return names;
}

TemplateSet::TemplateSet(std::map<std::string, std::string> texts) : texts_(std::move(texts)) {
    for (const auto& name : kRequired) {
        if (!texts_.count(name)) throw std::invalid_argument("template set is missing '" + name + "'");
    }
    const auto& catalog = placeholder_catalog();
    std::string digest_input;
    for (const auto& [name, body] : texts_) {
        scan(
            body, [](std::string_view) {},
            [&](std::string_view ph) {
                if (std::find(catalog.begin(), catalog.end(), ph) == catalog.end()) {
                    throw std::invalid_argument("template '" + name + "' uses unknown placeholder {" +
                                                std::string(ph) + "}");
                }
            });
        digest_input += name;
        digest_input += '\0';
        digest_input += body;
        digest_input += '\0';
    }
    version_ = sha256_hex(digest_input).substr(0, 16);
}

const TemplateSet& TemplateSet::builtin() {
    static const TemplateSet set = [] {
        std::map<std::string, std::string> texts;
        for (const auto& [name, body] : detail::embedded_templates()) {
            texts.emplace(std::string(name), std::string(body));
        }
        return TemplateSet(std::move(texts));
    }();
    return set;
}

TemplateSet TemplateSet::load_directory(const std::string& dir) {
    std::map<std::string, std::string> texts;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
        std::ifstream in(entry.path(), std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        texts.emplace(entry.path().stem().string(), ss.str());
    }
    return TemplateSet(std::move(texts));
}

const std::string& TemplateSet::text(const std::string& name) const {
    auto it = texts_.find(name);
    if (it == texts_.end()) throw std::out_of_range("no template named '" + name + "'");
    return it->second;
}

std::string TemplateSet::render(const std::string& name, const std::map<std::string, std::string>& values) const {
    std::string out;
    scan(
        text(name), [&](std::string_view t) { out += t; },
        [&](std::string_view ph) {
            auto it = values.find(std::string(ph));
            if (it == values.end()) {
                throw std::invalid_argument("template '" + name + "' needs a value for {" + std::string(ph) + "}");
            }
            out += it->second;
        });
    return rstrip(std::move(out));
}

PromptBundle render_cot_prompt(const PatientRecord& record, const TaskPair& pair, int /*path_index*/,
                               bool include_assessment, const TemplateSet& templates) {
    auto user = templates.render("cot_user", {{"subjective", record.subjective},
                                              {"assessment_block", assessment_block(record, include_assessment, templates)},
                                              {"candidates", candidates_text(pair)}});
    return make_bundle(Stage::Cot, templates.render("cot_system", {}), std::move(user), pair, templates);
}

PromptBundle render_aggregation_prompt(std::span<const CotAnalysis> analyses, const TemplateSet& templates) {
    if (analyses.empty()) throw std::invalid_argument("aggregation needs at least one analysis");
    auto user = templates.render("aggregate_user", {{"analysis_count", std::to_string(analyses.size())},
                                                    {"analyses", analyses_block(analyses, templates)}});
    return make_bundle(Stage::Aggregate, templates.render("aggregate_system", {}), std::move(user), std::nullopt,
                       templates);
}

PromptBundle render_classification_prompt(const std::string& narrative, const TaskPair& pair,
                                          const TemplateSet& templates) {
    if (trim(narrative).empty()) throw std::invalid_argument("classification needs a non-empty narrative");
    auto user = templates.render("classify_user", {{"narrative", narrative},
                                                   {"candidates", candidates_text(pair)},
                                                   {"candidate_list", candidate_list(pair)}});
    return make_bundle(Stage::Classify, templates.render("classify_system", {}), std::move(user), pair, templates);
}

ChatMessage render_classification_reask(const TaskPair& pair, const TemplateSet& templates) {
    return {Role::User, templates.render("classify_reask", {{"candidate_list", candidate_list(pair)}})};
}

PromptBundle render_audit_prompt(const CaseTrace& trace, const TemplateSet& templates) {
    if (!trace.final) throw std::invalid_argument("audit needs a final classification");
    auto user = templates.render(
        "audit_user", {{"candidate_list", candidate_list(trace.pair)},
                       {"analyses", analyses_block(trace.analyses, templates)},
                       {"narrative", trace.aggregate ? trace.aggregate->narrative : std::string("(none)")},
                       {"final_label", std::string(trace.final->clamped_label.text())}});
    return make_bundle(Stage::Audit, templates.render("audit_system", {}), std::move(user), trace.pair, templates);
}

PromptBundle render_zero_shot_prompt(const PatientRecord& record, const TaskPair& pair, bool include_assessment,
                                     const TemplateSet& templates) {
    auto user = templates.render("zero_shot_user",
                                 {{"subjective", record.subjective},
                                  {"assessment_block", assessment_block(record, include_assessment, templates)},
                                  {"candidates", candidates_text(pair)},
                                  {"candidate_list", candidate_list(pair)}});
    return make_bundle(Stage::ZeroShot, templates.render("zero_shot_system", {}), std::move(user), pair, templates);
}

}  // namespace prompt_kit
}  // namespace cdrcot
