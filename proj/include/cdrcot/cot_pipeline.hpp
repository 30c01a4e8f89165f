#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cdrcot/corpus.hpp"
#include "cdrcot/model_gateway.hpp"
#include "cdrcot/prompt_kit.hpp"
#include "cdrcot/trace.hpp"

namespace cdrcot {

// Output checking -----------------------------------------------------------------

/// Parses the first JSON object in a completion (code fences and surrounding
/// prose are ignored) into a CotAnalysis whose score lies in `pair`.
/// seed/attempt of the result are left at their defaults.
std::variant<CotAnalysis, ValidationError> validate_cot_json(std::string_view text, const TaskPair& pair);

/// "FINAL_CDR: <number>" if present, else the first standalone token matching
/// [0-3](.[05])?; nullopt when neither occurs.
std::optional<double> extract_score(std::string_view raw_text);

struct ClampResult {
    CdrLabel label;
    bool was_clamped = false;
};

/// Nearest pair label; exact ties and NaN go to pair.low().
ClampResult clamp_score(double value, const TaskPair& pair);

// Configuration --------------------------------------------------------------------

struct StageSettings {
    std::string backend = "mock";
    double temperature = 0.0;
    int max_tokens = 1024;
};

struct PipelineConfig {
    int k = 4;
    std::int64_t base_seed = 42;
    int max_validation_retries = 3;
    bool include_assessment = true;
    bool audit_enabled = true;
    std::map<Stage, StageSettings> stages = default_stages();

    /// Temperature 0.7 for cot and zero_shot, 0.0 elsewhere; all on "mock".
    static std::map<Stage, StageSettings> default_stages();

    const StageSettings& stage(Stage s) const;
    void validate() const;
    nlohmann::json to_json() const;

    /// Seed for attempt `attempt` (1-based) of path `path_index`.
    std::int64_t path_seed(int path_index, int attempt) const {
        return base_seed + path_index + 1000LL * (attempt - 1);
    }
};

/// Named gateways shared by every case of a run.
class GatewayPool {
public:
    void add(const std::string& name, std::shared_ptr<Gateway> gateway);
    Gateway& get(const std::string& name) const;
    bool contains(const std::string& name) const { return gateways_.count(name) != 0; }
    GatewayStats total_stats() const;

private:
    std::map<std::string, std::shared_ptr<Gateway>> gateways_;
};

// Pipeline ------------------------------------------------------------------------

struct PathsOutcome {
    std::vector<PathTrace> paths;
    /// Exactly k entries when `failure` is empty, ordered by path index.
    std::vector<CotAnalysis> analyses;
    std::optional<std::string> failure;
    std::int64_t latency_ms = 0;
};

struct AggregateOutcome {
    AggregatedAssessment aggregate;
    std::int64_t latency_ms = 0;
};

struct ClassifyOutcome {
    std::optional<FinalClassification> final;
    std::vector<std::string> raw_attempts;
    std::int64_t latency_ms = 0;
};

struct AuditOutcome {
    std::optional<std::string> audit;
    std::optional<std::string> warning;
    std::int64_t latency_ms = 0;
};

/// Four-stage diagnostic process plus the zero-shot baseline.
///
/// Stage outputs are assembled in (path index, attempt) order, so results do not
/// depend on how paths are scheduled.
class CotPipeline {
public:
    CotPipeline(PipelineConfig config, const GatewayPool& gateways,
                const prompt_kit::TemplateSet& templates = prompt_kit::TemplateSet::builtin(),
                bool parallel_paths = true);

    const PipelineConfig& config() const { return config_; }

    PathsOutcome generate_paths(const PatientRecord& record, const TaskPair& pair) const;
    /// Throws GatewayError.
    AggregateOutcome aggregate(std::span<const CotAnalysis> analyses) const;
    /// Re-asks once when no score can be extracted; `final` stays empty if the
    /// re-ask also fails. Throws GatewayError.
    ClassifyOutcome classify(const std::string& narrative, const TaskPair& pair) const;
    /// Never throws for gateway failures; they become a warning.
    AuditOutcome summarize_audit(const CaseTrace& trace) const;

    CaseTrace run_case(const PatientRecord& record, const TaskPair& pair, RunMode mode,
                       const std::string& corpus_digest = {}, const std::string& run_id = {}) const;

private:
    ChatResponse call(Stage stage, std::vector<ChatMessage> messages, std::int64_t seed) const;
    PathTrace run_path(const PatientRecord& record, const TaskPair& pair, int index, std::optional<CotAnalysis>& out,
                       std::optional<std::string>& failure, std::int64_t& latency) const;

    PipelineConfig config_;
    const GatewayPool& gateways_;
    const prompt_kit::TemplateSet& templates_;
    bool parallel_paths_;
};

}  // namespace cdrcot
