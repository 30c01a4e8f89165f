#include <cmath>

#include "cdrcot/cot_pipeline.hpp"

namespace cdrcot {

using json = nlohmann::json;

namespace {

ValidationError fail(ValidationCategory c, std::string detail = {}, std::optional<double> value = std::nullopt) {
    return ValidationError{c, std::move(detail), value};
}

// Returns [begin, end) of the first balanced {...} starting at or after `from`,
// honouring JSON string literals. end == npos means the object never closes.
std::pair<std::size_t, std::size_t> first_object(std::string_view text, std::size_t from = 0) {
    const auto begin = text.find('{', from);
    if (begin == std::string_view::npos) return {std::string_view::npos, std::string_view::npos};
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = begin; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return {begin, i + 1};
        }
    }
    return {begin, std::string_view::npos};
}

// Content of the first ``` fenced block, or the whole text when unfenced.
std::string_view strip_fence(std::string_view text) {
    const auto open = text.find("```");
    if (open == std::string_view::npos) return text;
    auto body = text.find('\n', open);
    if (body == std::string_view::npos) return text;
    ++body;
    const auto close = text.find("```", body);
    const auto inner = text.substr(body, close == std::string_view::npos ? std::string_view::npos : close - body);
    return inner.find('{') == std::string_view::npos ? text : inner;
}

bool non_empty_string(const json& v) {
    return v.is_string() && !trim(v.get_ref<const std::string&>()).empty();
}

}  // namespace

const std::vector<std::string>& domain_keys() {
    static const std::vector<std::string> keys = {"memory",        "orientation",  "judgment_problem_solving",
                                                  "community_affairs", "home_hobbies", "personal_care"};
    return keys;
}

std::string_view to_string(ValidationCategory c) {
    switch (c) {
        case ValidationCategory::NoJson: return "NoJson";
        case ValidationCategory::SyntaxError: return "SyntaxError";
        case ValidationCategory::MissingKey: return "MissingKey";
        case ValidationCategory::EmptyField: return "EmptyField";
        case ValidationCategory::ScoreOutOfPair: return "ScoreOutOfPair";
        case ValidationCategory::ScoreUnparseable: return "ScoreUnparseable";
    }
    return "NoJson";
}

std::string ValidationError::describe() const {
    std::string out(to_string(category));
    if (value) {
        out += "(" + json(*value).dump() + ")";
    } else if (!detail.empty()) {
        out += "(" + detail + ")";
    }
    return out;
}

json to_model_json(const CotAnalysis& a) {
    const auto& keys = domain_keys();
    const std::array<const std::string*, 6> values = {&a.domains.memory,           &a.domains.orientation,
                                                      &a.domains.judgment_problem_solving, &a.domains.community_affairs,
                                                      &a.domains.home_hobbies,     &a.domains.personal_care};
    json domains = json::object();
    for (std::size_t i = 0; i < keys.size(); ++i) domains[keys[i]] = *values[i];
    return json{{"reasoning_steps", a.reasoning_steps},
                {"domains", std::move(domains)},
                {"assessment", a.assessment},
                {"cdr_score", a.cdr_score.value()}};
}

std::variant<CotAnalysis, ValidationError> validate_cot_json(std::string_view text, const TaskPair& pair) {
    const std::string_view scope = strip_fence(text);
    const auto [begin, end] = first_object(scope);
    if (begin == std::string_view::npos) return fail(ValidationCategory::NoJson, "no JSON object found");
    if (end == std::string_view::npos) return fail(ValidationCategory::SyntaxError, "unbalanced braces");

    json j;
    try {
        j = json::parse(scope.substr(begin, end - begin));
    } catch (const json::parse_error& e) {
        return fail(ValidationCategory::SyntaxError, e.what());
    }

    CotAnalysis a;

    const auto steps = j.find("reasoning_steps");
    if (steps == j.end()) return fail(ValidationCategory::MissingKey, "reasoning_steps");
    if (!steps->is_array() || steps->empty()) return fail(ValidationCategory::EmptyField, "reasoning_steps");
    for (const auto& s : *steps) {
        if (!non_empty_string(s)) return fail(ValidationCategory::EmptyField, "reasoning_steps");
        a.reasoning_steps.push_back(s.get<std::string>());
    }

    const auto domains = j.find("domains");
    if (domains == j.end()) return fail(ValidationCategory::MissingKey, "domains");
    if (!domains->is_object()) return fail(ValidationCategory::EmptyField, "domains");
    const std::array<std::string*, 6> slots = {&a.domains.memory,           &a.domains.orientation,
                                               &a.domains.judgment_problem_solving, &a.domains.community_affairs,
                                               &a.domains.home_hobbies,     &a.domains.personal_care};
    for (std::size_t i = 0; i < domain_keys().size(); ++i) {
        const auto& key = domain_keys()[i];
        const auto it = domains->find(key);
        if (it == domains->end()) return fail(ValidationCategory::MissingKey, key);
        if (!non_empty_string(*it)) return fail(ValidationCategory::EmptyField, key);
        *slots[i] = it->get<std::string>();
    }

    const auto assessment = j.find("assessment");
    if (assessment == j.end()) return fail(ValidationCategory::MissingKey, "assessment");
    if (!non_empty_string(*assessment)) return fail(ValidationCategory::EmptyField, "assessment");
    a.assessment = assessment->get<std::string>();

    const auto score = j.find("cdr_score");
    if (score == j.end()) return fail(ValidationCategory::MissingKey, "cdr_score");
    double value = 0.0;
    if (score->is_number()) {
        value = score->get<double>();
    } else if (score->is_string()) {
        const std::string s(trim(score->get<std::string>()));
        std::size_t used = 0;
        try {
            value = std::stod(s, &used);
        } catch (const std::exception&) {
            return fail(ValidationCategory::ScoreUnparseable, s);
        }
        if (used != s.size()) return fail(ValidationCategory::ScoreUnparseable, s);
    } else {
        return fail(ValidationCategory::ScoreUnparseable, score->dump());
    }
    if (!std::isfinite(value)) return fail(ValidationCategory::ScoreUnparseable, score->dump());
    const auto label = CdrLabel::from_value(value);
    if (!label || !pair.contains(*label)) return fail(ValidationCategory::ScoreOutOfPair, {}, value);
    a.cdr_score = *label;
    return a;
}

}  // namespace cdrcot
