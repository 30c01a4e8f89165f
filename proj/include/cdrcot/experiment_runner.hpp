#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdrcot/corpus.hpp"
#include "cdrcot/cot_pipeline.hpp"
#include "cdrcot/evaluation.hpp"
#include "cdrcot/model_gateway.hpp"

namespace cdrcot {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ManifestMismatchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Fatal run problems other than configuration: unreadable corpus, empty class,
/// locked run directory.
class RunError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parsed experiment configuration. Sections: corpus, split, pipeline,
/// backends, report. Unknown keys anywhere are errors.
struct ExperimentConfig {
    struct Corpus {
        std::string path;
        std::optional<CorpusFormat> format;
        bool lenient = false;
    } corpus;

    struct Split {
        double ratio = 0.8;
        std::uint64_t seed = 13;
    } split;

    PipelineConfig pipeline;
    std::vector<TaskPair> pairs = TaskPair::canonical();
    std::vector<RunMode> modes = {RunMode::Cot, RunMode::ZeroShot};
    int jobs = 4;
    int max_in_flight = 8;
    bool cache = true;

    /// Defaults to a single mock backend named "mock".
    std::map<std::string, BackendConfig> backends = default_backends();
    static std::map<std::string, BackendConfig> default_backends();

    struct Report {
        std::string title = "CDR binary classification";
    } report;

    /// Throws ConfigError.
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
    void validate() const;
    /// Effective configuration; contains no secrets.
    nlohmann::json to_json() const;
};

/// Frozen description of one run, written to manifest.json.
struct RunManifest {
    std::string run_id;
    std::string created_at;
    std::string corpus_path;
    std::string corpus_digest;
    std::string config_digest;
    std::string template_version;
    nlohmann::json config;  // ExperimentConfig::to_json() after CLI overrides

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
};

struct PreprocessSummary {
    std::size_t raw = 0;
    std::size_t skipped_rows = 0;
    std::size_t after_dedup = 0;
    std::size_t removed_blank_assessment = 0;
    std::size_t after_filter = 0;
    std::map<std::string, std::size_t> class_counts;  // by label text

    struct PairInfo {
        TaskPair pair;
        /// Set when the pair is unusable (a class has no records).
        std::string error;
        std::size_t subset = 0;
        std::size_t low = 0;
        std::size_t high = 0;
        std::size_t train = 0;
        std::size_t test = 0;
    };
    std::vector<PairInfo> pairs;
};

struct PreparedCorpus {
    std::vector<PatientRecord> raw;
    std::vector<PatientRecord> cleaned;
    std::string digest;  // of the parsed (raw) corpus
    std::vector<SubsetSplit> splits;
    PreprocessSummary summary;
};

/// dedup -> drop blank assessments -> per-pair subsets -> stratified splits.
PreparedCorpus prepare_corpus(const std::string& corpus_path, const ExperimentConfig& config);
std::string format_preprocess_summary(const PreprocessSummary& s);

struct ExperimentResult {
    std::string pair;
    RunMode mode = RunMode::Cot;
    std::string model;
    MetricsReport metrics;
};

struct ExperimentReport {
    std::string run_id;
    std::string title;
    std::vector<ExperimentResult> results;  // manifest pairs x modes, in that order
    std::map<std::string, double> f1_deltas;

    nlohmann::json to_json() const;
    static ExperimentReport from_json(const nlohmann::json& j);
};

/// Metrics over ok traces; failed traces are counted in n_failed only.
ExperimentReport compute_report(const std::vector<CaseTrace>& traces, const ExperimentConfig& config,
                                const std::string& run_id);

/// Pipe table in the layout Precision | Recall | F1-score | Accuracy | AUC.
std::string render_report(const ExperimentReport& report);
/// pair,cot_f1,zero_shot_f1,delta
std::string render_f1_delta_csv(const ExperimentReport& report);

struct RunOptions {
    std::optional<int> jobs;
    /// Stop dispatching after this many newly completed cases (interruption testing).
    std::optional<std::size_t> stop_after;
    /// Polled between cases; set from a signal handler to interrupt a run.
    const std::atomic<bool>* cancel = nullptr;
};

struct RunStats {
    std::size_t cases_total = 0;
    std::size_t cases_skipped = 0;  // already present in traces.jsonl
    std::size_t cases_executed = 0;
    std::size_t cases_failed = 0;
    GatewayStats gateway;
    bool interrupted = false;
};

struct RunOutcome {
    std::optional<ExperimentReport> report;  // empty when interrupted
    RunStats stats;
};

/// Starts a run in `out_dir` (manifest, traces.jsonl, metrics.json, report.md,
/// f1_delta.csv, cache/). `config_digest` identifies the config file bytes.
RunOutcome run_experiment(const std::string& corpus_path, const ExperimentConfig& config,
                          const std::string& config_digest, const std::string& out_dir,
                          const RunOptions& options = {});

/// Convenience overload reading the config file.
RunOutcome run_experiment(const std::string& corpus_path, const std::string& config_path, const std::string& out_dir,
                          const RunOptions& options = {});

/// Continues a run. When `config_path` is given its digest must match the
/// manifest, else ManifestMismatchError.
RunOutcome resume(const std::string& out_dir, const std::optional<std::string>& config_path = std::nullopt,
                  const RunOptions& options = {});

/// Re-renders report.md and f1_delta.csv from metrics.json.
ExperimentReport rerender_report(const std::string& out_dir);

std::vector<CaseTrace> read_traces(const std::string& path);

}  // namespace cdrcot
