#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cdrcot/corpus.hpp"
#include "cdrcot/trace.hpp"

namespace cdrcot {

enum class Role { System, User, Assistant };

std::string_view to_string(Role r);
Role parse_role(std::string_view s);

struct ChatMessage {
    Role role = Role::User;
    std::string content;

    friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

enum class Stage { Cot, Aggregate, Classify, Audit, ZeroShot };

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

struct PromptBundle {
    Stage stage = Stage::Cot;
    std::vector<ChatMessage> messages;
    /// Absent only for the aggregation stage, which never sees the label set.
    std::optional<TaskPair> pair;
    std::string template_version;

    friend bool operator==(const PromptBundle&, const PromptBundle&) = default;
};

nlohmann::json to_json(const PromptBundle& b);
PromptBundle bundle_from_json(const nlohmann::json& j);

namespace prompt_kit {

/// "[choose from 0.5, 1]"
std::string candidates_text(const TaskPair& pair);
/// "0.5 or 1"
std::string candidate_list(const TaskPair& pair);

/// Placeholders a template may use. Anything else of the form {name} is an error;
/// braces not enclosing a catalogued name are literal text.
const std::vector<std::string>& placeholder_catalog();

/// A named collection of prompt templates with a content digest.
///
/// Required names: cot_system, cot_user, cot_assessment_block, aggregate_system,
/// aggregate_user, aggregate_item, classify_system, classify_user, classify_reask,
/// audit_system, audit_user, zero_shot_system, zero_shot_user.
class TemplateSet {
public:
    /// The templates compiled into the library.
    static const TemplateSet& builtin();
    /// Reads every *.txt file in `dir`; the file stem is the template name.
    static TemplateSet load_directory(const std::string& dir);

    explicit TemplateSet(std::map<std::string, std::string> texts);

    const std::string& text(const std::string& name) const;
    /// First 16 hex digits of SHA-256 over (name, text) pairs in name order.
    const std::string& version() const { return version_; }

    /// Substitutes {name} placeholders; trailing whitespace is trimmed.
    std::string render(const std::string& name, const std::map<std::string, std::string>& values) const;

private:
    std::map<std::string, std::string> texts_;
    std::string version_;
};

PromptBundle render_cot_prompt(const PatientRecord& record, const TaskPair& pair, int path_index,
                               bool include_assessment, const TemplateSet& templates = TemplateSet::builtin());

PromptBundle render_aggregation_prompt(std::span<const CotAnalysis> analyses,
                                       const TemplateSet& templates = TemplateSet::builtin());

PromptBundle render_classification_prompt(const std::string& narrative, const TaskPair& pair,
                                          const TemplateSet& templates = TemplateSet::builtin());

/// Follow-up user message issued when a classification reply carried no score.
ChatMessage render_classification_reask(const TaskPair& pair, const TemplateSet& templates = TemplateSet::builtin());

PromptBundle render_audit_prompt(const CaseTrace& trace, const TemplateSet& templates = TemplateSet::builtin());

PromptBundle render_zero_shot_prompt(const PatientRecord& record, const TaskPair& pair, bool include_assessment,
                                     const TemplateSet& templates = TemplateSet::builtin());

}  // namespace prompt_kit
}  // namespace cdrcot
