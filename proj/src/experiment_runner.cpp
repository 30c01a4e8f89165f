#include "cdrcot/experiment_runner.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <condition_variable>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "cdrcot/digest.hpp"

namespace cdrcot {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kManifestSchema = "cdrcot.manifest/1";

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RunError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw RunError("cannot write " + path.string());
        out << content;
    }
    fs::rename(tmp, path);
}

std::string utc_now() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
public:
    explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
        for (int tries = 0; tries < 2; ++tries) {
            const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
            if (fd >= 0) {
                const std::string pid = std::to_string(::getpid()) + "\n";
                [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
                ::close(fd);
                return;
            }
            long holder = 0;
            {
                std::ifstream in(path_);
                in >> holder;
            }
            if (holder > 0 && ::kill(static_cast<pid_t>(holder), 0) == 0) {
                throw RunError("run directory " + dir.string() + " is locked by process " + std::to_string(holder));
            }
            fs::remove(path_);  // stale lock from a dead process
        }
        throw RunError("cannot lock run directory " + dir.string());
    }
    ~RunLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    fs::path path_;
};

// Drops a torn final line left by an interrupted writer, then returns the
// case keys already present.
std::set<std::string> load_completed(const fs::path& traces_path, const std::string& run_id) {
    std::set<std::string> done;
    if (!fs::exists(traces_path)) return done;
    const std::string content = read_file(traces_path);
    if (!content.empty() && content.back() != '\n') {
        const auto last_newline = content.rfind('\n');
        fs::resize_file(traces_path, last_newline == std::string::npos ? 0 : last_newline + 1);
    }
    for (const auto& trace : read_traces(traces_path.string())) {
        if (trace.run_id != run_id) {
            throw ManifestMismatchError("traces.jsonl holds run " + trace.run_id + ", manifest says " + run_id);
        }
        done.insert(trace.case_key());
    }
    return done;
}

struct Case {
    const PatientRecord* record;
    TaskPair pair;
    RunMode mode;
};

std::set<std::string> backends_in_use(const ExperimentConfig& config) {
    std::set<std::string> names;
    for (RunMode mode : config.modes) {
        if (mode == RunMode::ZeroShot) {
            names.insert(config.pipeline.stage(Stage::ZeroShot).backend);
            continue;
        }
        for (Stage s : {Stage::Cot, Stage::Aggregate, Stage::Classify}) names.insert(config.pipeline.stage(s).backend);
        if (config.pipeline.audit_enabled) names.insert(config.pipeline.stage(Stage::Audit).backend);
    }
    return names;
}

RunOutcome execute(const fs::path& out_dir, const RunManifest& manifest, const ExperimentConfig& config,
                   const PreparedCorpus& prepared, const RunOptions& options) {
    std::vector<Case> cases;
    for (const auto& split : prepared.splits) {
        for (RunMode mode : config.modes) {
            for (const auto& record : split.test) cases.push_back({&record, split.pair, mode});
        }
    }

    const fs::path traces_path = out_dir / "traces.jsonl";
    const auto done = load_completed(traces_path, manifest.run_id);
    std::vector<const Case*> remaining;
    for (const auto& c : cases) {
        const std::string key = c.record->patient_id + "|" + c.pair.key() + "|" + std::string(to_string(c.mode));
        if (!done.count(key)) remaining.push_back(&c);
    }

    RunOutcome outcome;
    outcome.stats.cases_total = cases.size();
    outcome.stats.cases_skipped = cases.size() - remaining.size();

    GatewayPool pool;
    {
        auto cache = config.cache ? std::make_shared<ResponseCache>((out_dir / "cache").string()) : nullptr;
        auto limit = std::make_shared<ConcurrencyLimit>(config.max_in_flight);
        try {
            for (const auto& name : backends_in_use(config)) {
                const auto& backend = config.backends.at(name);
                pool.add(name, std::make_shared<Gateway>(backend, make_backend(backend), cache, limit));
            }
        } catch (const GatewayError& e) {
            throw RunError(e.what());
        }
    }
    const CotPipeline pipeline(config.pipeline, pool);

    const int jobs = std::max(1, options.jobs.value_or(config.jobs));
    std::vector<std::optional<std::string>> lines(remaining.size());
    std::vector<bool> failed(remaining.size(), false);
    std::mutex mutex;
    std::condition_variable ready;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    int active = jobs;
    std::exception_ptr error;

    auto worker = [&] {
        try {
            while (!stop) {
                if (options.cancel && options.cancel->load()) {
                    stop = true;
                    break;
                }
                const std::size_t i = next++;
                if (i >= remaining.size()) break;
                const Case& c = *remaining[i];
                const CaseTrace trace = pipeline.run_case(*c.record, c.pair, c.mode, prepared.digest, manifest.run_id);
                std::string line = to_json(trace).dump();
                std::lock_guard lock(mutex);
                lines[i] = std::move(line);
                failed[i] = !trace.ok;
                ready.notify_all();
            }
        } catch (...) {
            std::lock_guard lock(mutex);
            if (!error) error = std::current_exception();
            stop = true;
        }
        std::lock_guard lock(mutex);
        --active;
        ready.notify_all();
    };

    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(jobs));
    for (int i = 0; i < jobs; ++i) workers.emplace_back(worker);

    // Single writer: lines land in case order whatever order workers finish in.
    std::size_t written = 0;
    {
        std::ofstream out(traces_path, std::ios::binary | std::ios::app);
        for (std::size_t pos = 0; pos < remaining.size(); ++pos) {
            std::unique_lock lock(mutex);
            ready.wait(lock, [&] { return lines[pos].has_value() || active == 0; });
            if (!lines[pos]) break;
            const std::string line = std::move(*lines[pos]);
            const bool case_failed = failed[pos];
            lock.unlock();
            out << line << '\n';
            out.flush();
            ++written;
            if (case_failed) ++outcome.stats.cases_failed;
            if (options.stop_after && written >= *options.stop_after) {
                stop = true;
                break;
            }
        }
    }
    for (auto& w : workers) w.join();
    if (error) std::rethrow_exception(error);

    outcome.stats.cases_executed = written;
    outcome.stats.gateway = pool.total_stats();
    outcome.stats.interrupted = written < remaining.size();
    if (outcome.stats.interrupted) return outcome;

    const auto report = compute_report(read_traces(traces_path.string()), config, manifest.run_id);
    write_file(out_dir / "metrics.json", report.to_json().dump(2) + "\n");
    write_file(out_dir / "report.md", render_report(report));
    write_file(out_dir / "f1_delta.csv", render_f1_delta_csv(report));
    outcome.report = report;
    return outcome;
}

}  // namespace

// Manifest -------------------------------------------------------------------------

json RunManifest::to_json() const {
    return json{{"schema", kManifestSchema},
                {"run_id", run_id},
                {"created_at", created_at},
                {"corpus", {{"path", corpus_path}, {"digest", corpus_digest}}},
                {"config_digest", config_digest},
                {"template_version", template_version},
                {"config", config}};
}

RunManifest RunManifest::from_json(const json& j) {
    if (j.at("schema").get<std::string>() != kManifestSchema) {
        throw ManifestMismatchError("unsupported manifest schema " + j.at("schema").dump());
    }
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.created_at = j.at("created_at").get<std::string>();
    m.corpus_path = j.at("corpus").at("path").get<std::string>();
    m.corpus_digest = j.at("corpus").at("digest").get<std::string>();
    m.config_digest = j.at("config_digest").get<std::string>();
    m.template_version = j.at("template_version").get<std::string>();
    m.config = j.at("config");
    return m;
}

// Preprocessing --------------------------------------------------------------------

PreparedCorpus prepare_corpus(const std::string& corpus_path, const ExperimentConfig& config) {
    std::ifstream in(corpus_path, std::ios::binary);
    if (!in) throw RunError("cannot read corpus " + corpus_path);
    CorpusFormat format = CorpusFormat::Jsonl;
    try {
        format = config.corpus.format ? *config.corpus.format : format_from_path(corpus_path);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    ParseResult parsed;
    try {
        parsed = parse_corpus(in, format, config.corpus.lenient);
    } catch (const MalformedRowError& e) {
        throw RunError(corpus_path + ": " + e.what());
    }

    PreparedCorpus p;
    p.raw = std::move(parsed.records);
    p.digest = corpus_digest(p.raw);
    const auto deduped = dedup_longest(p.raw);
    auto filtered = drop_empty_assessment(deduped);
    p.cleaned = std::move(filtered.records);

    auto& s = p.summary;
    s.raw = p.raw.size();
    s.skipped_rows = parsed.skipped.size();
    s.after_dedup = deduped.size();
    s.removed_blank_assessment = filtered.removed;
    s.after_filter = p.cleaned.size();
    for (auto g : CdrLabel::kAllGrades) s.class_counts[std::string(CdrLabel(g).text())] = 0;
    for (const auto& r : p.cleaned) ++s.class_counts[std::string(r.label.text())];

    for (const auto& pair : config.pairs) {
        PreprocessSummary::PairInfo info{pair, {}, 0, 0, 0, 0, 0};
        info.low = s.class_counts[std::string(pair.low().text())];
        info.high = s.class_counts[std::string(pair.high().text())];
        try {
            const auto subset = build_subset(p.cleaned, pair);
            auto split = split_stratified(subset, pair, config.split.ratio, config.split.seed);
            info.subset = subset.size();
            info.train = split.train.size();
            info.test = split.test.size();
            p.splits.push_back(std::move(split));
        } catch (const EmptyClassError& e) {
            info.error = e.what();
        }
        s.pairs.push_back(std::move(info));
    }
    return p;
}

std::string format_preprocess_summary(const PreprocessSummary& s) {
    std::ostringstream out;
    out << "raw records:               " << s.raw << "\n";
    if (s.skipped_rows) out << "skipped malformed rows:    " << s.skipped_rows << "\n";
    out << "after dedup (longest):     " << s.after_dedup << "  (-" << (s.raw - s.after_dedup) << " duplicates)\n";
    out << "blank assessment removed:  " << s.removed_blank_assessment << "\n";
    out << "cleaned records:           " << s.after_filter << "\n";
    out << "class counts:             ";
    for (const auto& [label, n] : s.class_counts) out << " " << label << "=" << n;
    out << "\n";
    for (const auto& p : s.pairs) {
        out << "pair " << p.pair.key() << ": ";
        if (!p.error.empty()) {
            out << "unusable (" << p.error << ")\n";
            continue;
        }
        out << "subset " << p.subset << " (" << p.pair.low().text() << "=" << p.low << ", " << p.pair.high().text()
            << "=" << p.high << "), train " << p.train << ", test " << p.test << "\n";
    }
    return out.str();
}

// Runs -----------------------------------------------------------------------------

std::vector<CaseTrace> read_traces(const std::string& path) {
    std::vector<CaseTrace> traces;
    std::ifstream in(path, std::ios::binary);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            traces.push_back(trace_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw RunError(path + ":" + std::to_string(line_no) + ": unreadable trace: " + e.what());
        }
    }
    return traces;
}

RunOutcome run_experiment(const std::string& corpus_path, const ExperimentConfig& config,
                          const std::string& config_digest, const std::string& out_dir, const RunOptions& options) {
    config.validate();
    const fs::path out(out_dir);
    fs::create_directories(out);
    RunLock lock(out);
    if (fs::exists(out / "manifest.json")) {
        throw RunError(out_dir + " already holds a run; use resume");
    }

    const auto prepared = prepare_corpus(corpus_path, config);
    for (const auto& p : prepared.summary.pairs) {
        if (!p.error.empty()) throw RunError(p.error);
    }

    RunManifest manifest;
    manifest.created_at = utc_now();
    manifest.corpus_path = fs::absolute(corpus_path).string();
    manifest.corpus_digest = prepared.digest;
    manifest.config_digest = config_digest;
    manifest.template_version = prompt_kit::TemplateSet::builtin().version();
    manifest.config = config.to_json();
    manifest.run_id =
        sha256_hex(manifest.config.dump() + "\n" + manifest.corpus_digest + "\n" + manifest.template_version)
            .substr(0, 16);
    write_file(out / "manifest.json", manifest.to_json().dump(2) + "\n");

    fs::create_directories(out / "splits");
    for (const auto& split : prepared.splits) {
        write_file(out / "splits" / (split.pair.key() + ".json"), split_manifest(split, prepared.digest).dump(2) + "\n");
    }
    return execute(out, manifest, config, prepared, options);
}

RunOutcome run_experiment(const std::string& corpus_path, const std::string& config_path, const std::string& out_dir,
                          const RunOptions& options) {
    const auto config = ExperimentConfig::load(config_path);
    return run_experiment(corpus_path, config, sha256_hex(read_file(config_path)), out_dir, options);
}

RunOutcome resume(const std::string& out_dir, const std::optional<std::string>& config_path,
                  const RunOptions& options) {
    const fs::path out(out_dir);
    if (!fs::exists(out / "manifest.json")) throw RunError(out_dir + " holds no manifest.json");
    RunLock lock(out);
    const auto manifest = RunManifest::from_json(json::parse(read_file(out / "manifest.json")));

    if (config_path) {
        const auto digest = sha256_hex(read_file(*config_path));
        if (digest != manifest.config_digest) {
            throw ManifestMismatchError("config " + *config_path + " differs from the one recorded in the manifest");
        }
    }
    const auto config = ExperimentConfig::from_json(manifest.config);
    if (prompt_kit::TemplateSet::builtin().version() != manifest.template_version) {
        throw ManifestMismatchError("prompt templates changed since the run started (" + manifest.template_version +
                                    " -> " + prompt_kit::TemplateSet::builtin().version() + ")");
    }
    const auto prepared = prepare_corpus(manifest.corpus_path, config);
    if (prepared.digest != manifest.corpus_digest) {
        throw ManifestMismatchError("corpus " + manifest.corpus_path + " changed since the run started");
    }
    return execute(out, manifest, config, prepared, options);
}

ExperimentReport rerender_report(const std::string& out_dir) {
    const fs::path out(out_dir);
    const auto report = ExperimentReport::from_json(json::parse(read_file(out / "metrics.json")));
    write_file(out / "report.md", render_report(report));
    write_file(out / "f1_delta.csv", render_f1_delta_csv(report));
    return report;
}

}  // namespace cdrcot
