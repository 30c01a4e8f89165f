#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdrcot/corpus.hpp"

namespace cdrcot {

/// Free-text findings for the six CDR domains.
struct DomainAssessment {
    std::string memory;
    std::string orientation;
    std::string judgment_problem_solving;
    std::string community_affairs;
    std::string home_hobbies;
    std::string personal_care;

    friend bool operator==(const DomainAssessment&, const DomainAssessment&) = default;
};

/// JSON keys of the domains object, in canonical order.
const std::vector<std::string>& domain_keys();

/// One validated reasoning path.
struct CotAnalysis {
    std::vector<std::string> reasoning_steps;
    DomainAssessment domains;
    std::string assessment;
    CdrLabel cdr_score = CdrLabel::very_mild();
    std::int64_t seed = 0;
    int attempt = 1;

    friend bool operator==(const CotAnalysis&, const CotAnalysis&) = default;
};

/// The object a model is asked to produce (no seed/attempt bookkeeping).
nlohmann::json to_model_json(const CotAnalysis& a);

enum class ValidationCategory { NoJson, SyntaxError, MissingKey, EmptyField, ScoreOutOfPair, ScoreUnparseable };

std::string_view to_string(ValidationCategory c);

struct ValidationError {
    ValidationCategory category = ValidationCategory::NoJson;
    /// Key name for MissingKey/EmptyField, parser message for SyntaxError.
    std::string detail;
    /// Offending value for ScoreOutOfPair.
    std::optional<double> value;

    std::string describe() const;
};

struct AggregatedAssessment {
    std::string narrative;
    std::size_t source_count = 0;
};

struct FinalClassification {
    std::string raw_text;
    std::optional<double> extracted_value;
    CdrLabel clamped_label = CdrLabel::very_mild();
    bool was_clamped = false;
};

struct PathAttempt {
    int attempt = 1;
    std::int64_t seed = 0;
    std::string raw;
    std::optional<ValidationError> error;
};

/// Every attempt for one reasoning path; at most the last one is accepted.
struct PathTrace {
    int index = 0;
    std::optional<PathAttempt> accepted;
    std::vector<PathAttempt> rejections;
};

enum class RunMode { Cot, ZeroShot };

std::string_view to_string(RunMode m);
RunMode parse_mode(std::string_view s);

/// Complete audit record for one case in one mode.
struct CaseTrace {
    std::string run_id;
    std::string patient_id;
    std::string corpus_digest;
    CdrLabel gold = CdrLabel::very_mild();
    TaskPair pair = TaskPair::canonical().front();
    RunMode mode = RunMode::Cot;

    std::vector<PathTrace> paths;
    std::vector<CotAnalysis> analyses;
    std::optional<AggregatedAssessment> aggregate;
    /// Raw completions of the classification (or zero-shot) stage, re-asks included.
    std::vector<std::string> classification_raw;
    std::optional<FinalClassification> final;
    std::optional<std::string> audit;
    std::optional<std::string> audit_warning;

    bool ok = false;
    std::string failure_reason;
    /// Backend-reported latency summed per stage name.
    std::map<std::string, std::int64_t> stage_latency_ms;
    std::map<std::string, std::int64_t> stage_seeds;

    /// (patient_id, pair, mode) identity used for resumption.
    std::string case_key() const;
};

inline constexpr const char* kTraceSchema = "cdrcot.trace/1";

nlohmann::json to_json(const CaseTrace& trace);
CaseTrace trace_from_json(const nlohmann::json& j);

}  // namespace cdrcot
