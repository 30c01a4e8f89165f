#include <fstream>
#include <set>
#include <sstream>

#include "cdrcot/experiment_runner.hpp"

namespace cdrcot {

using json = nlohmann::json;

namespace {

// Reads typed members of one JSON object and rejects keys nobody asked for.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
    }

    template <typename T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            throw ConfigError(path_ + "." + key + " has the wrong type: " + it->dump());
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) throw ConfigError("unknown config key " + path_ + "." + key);
        }
    }

    const std::string& path() const { return path_; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

BackendConfig parse_backend(const std::string& name, const json& j) {
    Section s(j, "backends." + name);
    BackendConfig b;
    b.name = name;
    std::string kind = "mock";
    s.read("kind", kind);
    if (kind == "http") {
        b.kind = BackendKind::Http;
    } else if (kind == "mock") {
        b.kind = BackendKind::Mock;
    } else {
        throw ConfigError(s.path() + ".kind must be http or mock");
    }
    s.read("model", b.model);
    s.read("base_url", b.base_url);
    s.read("auth_env_var", b.auth_env_var);
    s.read("timeout_ms", b.timeout_ms);
    s.read("max_retries", b.max_retries);
    s.read("backoff_base_ms", b.backoff_base_ms);
    s.read("mock_skill", b.mock_skill);
    s.read("malformed_rate", b.mock_malformed_rate);
    s.finish();
    if (b.model.empty()) b.model = b.kind == BackendKind::Mock ? "mock:" + name : "";
    if (b.kind == BackendKind::Http && b.model.empty()) throw ConfigError(s.path() + ".model is required for http");
    return b;
}

}  // namespace

std::map<std::string, BackendConfig> ExperimentConfig::default_backends() {
    BackendConfig mock;
    mock.name = "mock";
    mock.kind = BackendKind::Mock;
    mock.model = "mock:mock";
    return {{"mock", mock}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    try {
        Section root(j, "config");

        if (const json* corpus = root.child("corpus")) {
            Section s(*corpus, "corpus");
            s.read("path", c.corpus.path);
            std::string format;
            s.read("format", format);
            if (!format.empty()) c.corpus.format = parse_format(format);
            s.read("lenient", c.corpus.lenient);
            s.finish();
        }

        if (const json* split = root.child("split")) {
            Section s(*split, "split");
            s.read("ratio", c.split.ratio);
            s.read("seed", c.split.seed);
            s.finish();
        }

        if (const json* pipeline = root.child("pipeline")) {
            Section s(*pipeline, "pipeline");
            auto& p = c.pipeline;
            s.read("k", p.k);
            s.read("base_seed", p.base_seed);
            s.read("max_validation_retries", p.max_validation_retries);
            s.read("include_assessment", p.include_assessment);
            s.read("audit_enabled", p.audit_enabled);
            std::vector<std::string> pairs;
            s.read("pairs", pairs);
            if (s.child("pairs")) {
                c.pairs.clear();
                for (const auto& key : pairs) c.pairs.push_back(TaskPair::parse(key));
            }
            std::vector<std::string> modes;
            s.read("modes", modes);
            if (s.child("modes")) {
                c.modes.clear();
                for (const auto& m : modes) c.modes.push_back(parse_mode(m));
            }
            s.read("jobs", c.jobs);
            s.read("max_in_flight", c.max_in_flight);
            s.read("cache", c.cache);
            if (const json* stages = s.child("stages")) {
                if (!stages->is_object()) throw ConfigError("pipeline.stages must be an object");
                for (const auto& [name, body] : stages->items()) {
                    Stage stage;
                    try {
                        stage = parse_stage(name);
                    } catch (const std::invalid_argument&) {
                        throw ConfigError("unknown config key pipeline.stages." + name);
                    }
                    Section st(body, "pipeline.stages." + name);
                    auto& settings = p.stages[stage];
                    st.read("backend", settings.backend);
                    st.read("temperature", settings.temperature);
                    st.read("max_tokens", settings.max_tokens);
                    st.finish();
                }
            }
            s.finish();
        }

        if (const json* backends = root.child("backends")) {
            if (!backends->is_object()) throw ConfigError("backends must be an object");
            if (!backends->empty()) c.backends.clear();
            for (const auto& [name, body] : backends->items()) c.backends[name] = parse_backend(name, body);
        }

        if (const json* report = root.child("report")) {
            Section s(*report, "report");
            s.read("title", c.report.title);
            s.finish();
        }
        root.finish();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

void ExperimentConfig::validate() const {
    try {
        pipeline.validate();
        for (const auto& [name, b] : backends) b.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (!(split.ratio > 0.0 && split.ratio < 1.0)) throw ConfigError("split.ratio must lie in (0, 1)");
    if (pairs.empty()) throw ConfigError("pipeline.pairs must not be empty");
    if (modes.empty()) throw ConfigError("pipeline.modes must not be empty");
    if (jobs < 1) throw ConfigError("pipeline.jobs must be >= 1");
    if (max_in_flight < 1) throw ConfigError("pipeline.max_in_flight must be >= 1");
    std::set<std::string> seen;
    for (const auto& p : pairs) {
        if (!seen.insert(p.key()).second) throw ConfigError("pipeline.pairs lists " + p.key() + " twice");
    }
    for (std::size_t i = 0; i < modes.size(); ++i) {
        for (std::size_t k = 0; k < i; ++k) {
            if (modes[i] == modes[k]) throw ConfigError("pipeline.modes lists a mode twice");
        }
    }
    for (const auto& [stage, settings] : pipeline.stages) {
        if (!backends.count(settings.backend)) {
            throw ConfigError("pipeline.stages." + std::string(to_string(stage)) + " uses unknown backend '" +
                              settings.backend + "'");
        }
    }
}

json ExperimentConfig::to_json() const {
    json pipeline_json = pipeline.to_json();
    json pair_keys = json::array();
    for (const auto& p : pairs) pair_keys.push_back(p.key());
    json mode_names = json::array();
    for (auto m : modes) mode_names.push_back(cdrcot::to_string(m));
    pipeline_json["pairs"] = std::move(pair_keys);
    pipeline_json["modes"] = std::move(mode_names);
    pipeline_json["jobs"] = jobs;
    pipeline_json["max_in_flight"] = max_in_flight;
    pipeline_json["cache"] = cache;

    json corpus_json{{"path", corpus.path}, {"lenient", corpus.lenient}};
    if (corpus.format) corpus_json["format"] = *corpus.format == CorpusFormat::Csv ? "csv" : "jsonl";

    json backends_json = json::object();
    for (const auto& [name, b] : backends) backends_json[name] = b.to_json();

    return json{{"corpus", std::move(corpus_json)},
                {"split", {{"ratio", split.ratio}, {"seed", split.seed}}},
                {"pipeline", std::move(pipeline_json)},
                {"backends", std::move(backends_json)},
                {"report", {{"title", report.title}}}};
}

}  // namespace cdrcot
