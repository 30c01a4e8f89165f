// Command-line front end: synth, prep, run, resume, report.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cdrcot/digest.hpp"
#include "cdrcot/experiment_runner.hpp"

namespace fs = std::filesystem;
using namespace cdrcot;

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kRunFailure = 2, kManifestMismatch = 3 };

std::atomic<bool> g_cancel{false};

extern "C" void on_sigint(int) { g_cancel = true; }

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto t = trim(item);
        if (!t.empty()) out.emplace_back(t);
    }
    return out;
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct CommonFlags {
    std::string config_path;
    std::string corpus;
    std::string pairs;
    std::string mode;
    std::string backend;
    std::optional<std::uint64_t> seed;
};

// Loads the config (or defaults) and applies command-line overrides.
ExperimentConfig load_config(const CommonFlags& f, std::string& corpus_path) {
    ExperimentConfig config;
    if (!f.config_path.empty()) config = ExperimentConfig::load(f.config_path);

    if (!f.pairs.empty()) {
        config.pairs.clear();
        try {
            for (const auto& key : split_list(f.pairs)) config.pairs.push_back(TaskPair::parse(key));
        } catch (const std::exception& e) {
            throw ConfigError(std::string("--pairs: ") + e.what());
        }
    }
    if (!f.mode.empty()) {
        if (f.mode == "both") {
            config.modes = {RunMode::Cot, RunMode::ZeroShot};
        } else {
            try {
                config.modes = {parse_mode(f.mode)};
            } catch (const std::exception&) {
                throw ConfigError("--mode must be cot, zero_shot or both");
            }
        }
    }
    if (!f.backend.empty()) {
        if (!config.backends.count(f.backend)) {
            if (f.backend != "mock") throw ConfigError("--backend names unknown backend '" + f.backend + "'");
            config.backends["mock"] = ExperimentConfig::default_backends().at("mock");
        }
        for (auto& [stage, settings] : config.pipeline.stages) settings.backend = f.backend;
    }
    if (f.seed) config.split.seed = *f.seed;
    config.validate();

    if (!f.corpus.empty()) {
        corpus_path = f.corpus;
    } else if (!config.corpus.path.empty()) {
        // Relative corpus paths in a config file are relative to that file.
        fs::path p(config.corpus.path);
        if (p.is_relative() && !f.config_path.empty()) p = fs::path(f.config_path).parent_path() / p;
        corpus_path = p.string();
    } else {
        throw ConfigError("no corpus given: pass --corpus or set corpus.path in the config");
    }
    return config;
}

void print_stats(const RunOutcome& outcome, const std::string& out_dir) {
    const auto& s = outcome.stats;
    std::cerr << "cases: " << s.cases_total << " total, " << s.cases_skipped << " already done, " << s.cases_executed
              << " executed, " << s.cases_failed << " failed\n"
              << "model calls: " << s.gateway.backend_calls << ", cache hits: " << s.gateway.cache_hits
              << ", retries: " << s.gateway.retries << "\n";
    if (outcome.report) {
        std::cout << render_report(*outcome.report);
        std::cerr << "artifacts written to " << out_dir << "\n";
    } else {
        std::cerr << "run interrupted; continue with: cdrcot resume --out " << out_dir << "\n";
    }
}

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const ManifestMismatchError& e) {
        std::cerr << "manifest mismatch: " << e.what() << "\n";
        return kManifestMismatch;
    } catch (const std::exception& e) {
        std::cerr << "run failed: " << e.what() << "\n";
        return kRunFailure;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Chain-of-thought CDR classification experiments"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic labelled corpus");
    SyntheticOptions synth_opts;
    std::string synth_out;
    std::string synth_format;
    synth->add_option("--n", synth_opts.n_per_label, "Records per CDR grade")->capture_default_str();
    synth->add_option("--seed", synth_opts.seed, "Generator seed")->capture_default_str();
    synth->add_option("--noise", synth_opts.noise_rate, "Probability of borrowing a clause from another grade")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 1.0));
    synth->add_option("--out", synth_out, "Output file (.jsonl or .csv)")->required();
    synth->add_option("--format", synth_format, "jsonl or csv (default: from extension)");

    // prep
    auto* prep = app.add_subcommand("prep", "Deduplicate, filter and split a corpus; print counts");
    CommonFlags prep_flags;
    std::string prep_out;
    prep->add_option("--config", prep_flags.config_path, "Experiment config (JSON)");
    prep->add_option("--corpus", prep_flags.corpus, "Corpus file (.jsonl or .csv)");
    prep->add_option("--pairs", prep_flags.pairs, "Comma-separated task pairs, e.g. 0.5v1,1v3");
    prep->add_option("--seed", prep_flags.seed, "Split seed");
    prep->add_option("--out", prep_out, "Directory for per-pair split manifests");

    // run
    auto* run = app.add_subcommand("run", "Run an experiment into a fresh output directory");
    CommonFlags run_flags;
    std::string run_out;
    std::optional<int> run_jobs;
    std::optional<std::size_t> stop_after;
    run->add_option("--config", run_flags.config_path, "Experiment config (JSON)");
    run->add_option("--corpus", run_flags.corpus, "Corpus file (overrides corpus.path)");
    run->add_option("--out", run_out, "Run directory")->required();
    run->add_option("--pairs", run_flags.pairs, "Comma-separated task pairs, e.g. 0.5v1,1v3");
    run->add_option("--mode", run_flags.mode, "cot, zero_shot or both");
    run->add_option("--backend", run_flags.backend, "Backend used for every stage");
    run->add_option("--jobs", run_jobs, "Concurrent cases")->check(CLI::PositiveNumber);
    run->add_option("--seed", run_flags.seed, "Split seed");
    run->add_option("--stop-after", stop_after, "Stop after this many cases")->group("");

    // resume
    auto* res = app.add_subcommand("resume", "Continue an interrupted run");
    std::string res_out;
    std::string res_config;
    std::optional<int> res_jobs;
    res->add_option("--out", res_out, "Run directory")->required();
    res->add_option("--config", res_config, "Config file; must match the one the run started with");
    res->add_option("--jobs", res_jobs, "Concurrent cases")->check(CLI::PositiveNumber);

    // report
    auto* rep = app.add_subcommand("report", "Re-render report.md and f1_delta.csv from metrics.json");
    std::string rep_out;
    rep->add_option("--out", rep_out, "Run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    if (*synth) {
        return run_guarded([&] {
            CorpusFormat format;
            try {
                format = synth_format.empty() ? format_from_path(synth_out) : parse_format(synth_format);
            } catch (const std::exception& e) {
                throw ConfigError(e.what());
            }
            const auto records = generate_synthetic(synth_opts);
            std::ofstream out(synth_out, std::ios::binary);
            if (!out) throw RunError("cannot write " + synth_out);
            write_corpus(out, records, format);
            std::cerr << "wrote " << records.size() << " records to " << synth_out << "\n";
            return kOk;
        });
    }

    if (*prep) {
        return run_guarded([&] {
            std::string corpus_path;
            const auto config = load_config(prep_flags, corpus_path);
            const auto prepared = prepare_corpus(corpus_path, config);
            std::cout << format_preprocess_summary(prepared.summary);
            if (!prep_out.empty()) {
                fs::create_directories(prep_out);
                for (const auto& split : prepared.splits) {
                    std::ofstream out(fs::path(prep_out) / (split.pair.key() + ".json"), std::ios::binary);
                    out << split_manifest(split, prepared.digest).dump(2) << "\n";
                }
            }
            for (const auto& p : prepared.summary.pairs) {
                if (!p.error.empty()) return static_cast<int>(kRunFailure);
            }
            return static_cast<int>(kOk);
        });
    }

    std::signal(SIGINT, on_sigint);
    RunOptions options;
    options.cancel = &g_cancel;

    if (*run) {
        return run_guarded([&] {
            std::string corpus_path;
            const auto config = load_config(run_flags, corpus_path);
            const std::string digest = run_flags.config_path.empty() ? sha256_hex(config.to_json().dump())
                                                                     : sha256_hex(read_bytes(run_flags.config_path));
            options.jobs = run_jobs;
            options.stop_after = stop_after;
            const auto outcome = run_experiment(corpus_path, config, digest, run_out, options);
            print_stats(outcome, run_out);
            return outcome.report ? kOk : kRunFailure;
        });
    }

    if (*res) {
        return run_guarded([&] {
            options.jobs = res_jobs;
            const auto outcome =
                resume(res_out, res_config.empty() ? std::nullopt : std::optional<std::string>(res_config), options);
            print_stats(outcome, res_out);
            return outcome.report ? kOk : kRunFailure;
        });
    }

    return run_guarded([&] {
        std::cout << render_report(rerender_report(rep_out));
        return kOk;
    });
}
