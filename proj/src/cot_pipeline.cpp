#include "cdrcot/cot_pipeline.hpp"

#include <future>

namespace cdrcot {

using json = nlohmann::json;

// PipelineConfig -------------------------------------------------------------------

std::map<Stage, StageSettings> PipelineConfig::default_stages() {
    return {
        {Stage::Cot, {"mock", 0.7, 1024}},      {Stage::Aggregate, {"mock", 0.0, 1024}},
        {Stage::Classify, {"mock", 0.0, 256}},  {Stage::Audit, {"mock", 0.0, 1024}},
        {Stage::ZeroShot, {"mock", 0.7, 256}},
    };
}

const StageSettings& PipelineConfig::stage(Stage s) const {
    auto it = stages.find(s);
    if (it == stages.end()) throw std::invalid_argument("no settings for stage " + std::string(to_string(s)));
    return it->second;
}

void PipelineConfig::validate() const {
    if (k < 1) throw std::invalid_argument("pipeline.k must be >= 1");
    if (max_validation_retries < 0) throw std::invalid_argument("pipeline.max_validation_retries must be >= 0");
    for (Stage s : {Stage::Cot, Stage::Aggregate, Stage::Classify, Stage::Audit, Stage::ZeroShot}) {
        const auto& st = stage(s);
        if (st.backend.empty()) {
            throw std::invalid_argument("stage " + std::string(to_string(s)) + " names no backend");
        }
        if (!(st.temperature >= 0.0 && st.temperature <= 2.0)) {
            throw std::invalid_argument("stage " + std::string(to_string(s)) + " temperature must lie in [0, 2]");
        }
        if (st.max_tokens <= 0) {
            throw std::invalid_argument("stage " + std::string(to_string(s)) + " max_tokens must be positive");
        }
    }
}

json PipelineConfig::to_json() const {
    json st = json::object();
    for (const auto& [stage, s] : stages) {
        st[std::string(cdrcot::to_string(stage))] = {
            {"backend", s.backend}, {"temperature", s.temperature}, {"max_tokens", s.max_tokens}};
    }
    return json{{"k", k},
                {"base_seed", base_seed},
                {"max_validation_retries", max_validation_retries},
                {"include_assessment", include_assessment},
                {"audit_enabled", audit_enabled},
                {"stages", std::move(st)}};
}

// GatewayPool ----------------------------------------------------------------------

void GatewayPool::add(const std::string& name, std::shared_ptr<Gateway> gateway) {
    gateways_[name] = std::move(gateway);
}

Gateway& GatewayPool::get(const std::string& name) const {
    auto it = gateways_.find(name);
    if (it == gateways_.end()) throw std::invalid_argument("no backend named '" + name + "'");
    return *it->second;
}

GatewayStats GatewayPool::total_stats() const {
    GatewayStats total;
    for (const auto& [name, g] : gateways_) {
        const auto s = g->stats();
        total.backend_calls += s.backend_calls;
        total.cache_hits += s.cache_hits;
        total.retries += s.retries;
    }
    return total;
}

// CotPipeline ----------------------------------------------------------------------

CotPipeline::CotPipeline(PipelineConfig config, const GatewayPool& gateways,
                         const prompt_kit::TemplateSet& templates, bool parallel_paths)
    : config_(std::move(config)), gateways_(gateways), templates_(templates), parallel_paths_(parallel_paths) {
    config_.validate();
}

ChatResponse CotPipeline::call(Stage stage, std::vector<ChatMessage> messages, std::int64_t seed) const {
    const auto& settings = config_.stage(stage);
    Gateway& gateway = gateways_.get(settings.backend);
    ChatRequest request{gateway.config().model, std::move(messages), settings.temperature, seed,
                        settings.max_tokens};
    return gateway.complete(request);
}

PathTrace CotPipeline::run_path(const PatientRecord& record, const TaskPair& pair, int index,
                                std::optional<CotAnalysis>& out, std::optional<std::string>& failure,
                                std::int64_t& latency) const {
    PathTrace path;
    path.index = index;
    const auto bundle = prompt_kit::render_cot_prompt(record, pair, index, config_.include_assessment, templates_);
    const int attempts = 1 + config_.max_validation_retries;
    for (int attempt = 1; attempt <= attempts; ++attempt) {
        const std::int64_t seed = config_.path_seed(index, attempt);
        ChatResponse response;
        try {
            response = call(Stage::Cot, bundle.messages, seed);
        } catch (const GatewayError& e) {
            failure = std::string(e.kind());
            return path;
        }
        latency += response.latency_ms;
        auto parsed = validate_cot_json(response.text, pair);
        if (auto* analysis = std::get_if<CotAnalysis>(&parsed)) {
            analysis->seed = seed;
            analysis->attempt = attempt;
            out = std::move(*analysis);
            path.accepted = PathAttempt{attempt, seed, std::move(response.text), std::nullopt};
            return path;
        }
        path.rejections.push_back(
            PathAttempt{attempt, seed, std::move(response.text), std::get<ValidationError>(std::move(parsed))});
    }
    failure = "path_exhausted:" + std::to_string(index);
    return path;
}

PathsOutcome CotPipeline::generate_paths(const PatientRecord& record, const TaskPair& pair) const {
    const auto k = static_cast<std::size_t>(config_.k);
    std::vector<std::optional<CotAnalysis>> analyses(k);
    std::vector<std::optional<std::string>> failures(k);
    std::vector<std::int64_t> latencies(k, 0);
    std::vector<PathTrace> paths(k);

    auto work = [&](std::size_t i) {
        paths[i] = run_path(record, pair, static_cast<int>(i), analyses[i], failures[i], latencies[i]);
    };
    if (parallel_paths_ && k > 1) {
        std::vector<std::future<void>> futures;
        futures.reserve(k);
        for (std::size_t i = 0; i < k; ++i) futures.push_back(std::async(std::launch::async, work, i));
        for (auto& f : futures) f.get();
    } else {
        for (std::size_t i = 0; i < k; ++i) work(i);
    }

    PathsOutcome outcome;
    outcome.paths = std::move(paths);
    for (std::size_t i = 0; i < k; ++i) {
        outcome.latency_ms += latencies[i];
        if (failures[i] && !outcome.failure) outcome.failure = failures[i];
        if (analyses[i]) outcome.analyses.push_back(std::move(*analyses[i]));
    }
    return outcome;
}

AggregateOutcome CotPipeline::aggregate(std::span<const CotAnalysis> analyses) const {
    const auto bundle = prompt_kit::render_aggregation_prompt(analyses, templates_);
    auto response = call(Stage::Aggregate, bundle.messages, config_.base_seed);
    if (trim(response.text).empty()) throw ProtocolError("aggregation returned an empty narrative");
    return AggregateOutcome{AggregatedAssessment{std::move(response.text), analyses.size()}, response.latency_ms};
}

ClassifyOutcome CotPipeline::classify(const std::string& narrative, const TaskPair& pair) const {
    ClassifyOutcome outcome;
    auto messages = prompt_kit::render_classification_prompt(narrative, pair, templates_).messages;
    for (int ask = 0; ask < 2; ++ask) {
        if (ask == 1) {
            messages.push_back({Role::Assistant, outcome.raw_attempts.back()});
            messages.push_back(prompt_kit::render_classification_reask(pair, templates_));
        }
        auto response = call(Stage::Classify, messages, config_.base_seed);
        outcome.latency_ms += response.latency_ms;
        outcome.raw_attempts.push_back(response.text);
        if (const auto value = extract_score(response.text)) {
            const auto clamped = clamp_score(*value, pair);
            outcome.final = FinalClassification{response.text, value, clamped.label, clamped.was_clamped};
            return outcome;
        }
    }
    return outcome;
}

AuditOutcome CotPipeline::summarize_audit(const CaseTrace& trace) const {
    AuditOutcome outcome;
    if (!config_.audit_enabled) return outcome;
    try {
        const auto bundle = prompt_kit::render_audit_prompt(trace, templates_);
        auto response = call(Stage::Audit, bundle.messages, config_.base_seed);
        outcome.latency_ms = response.latency_ms;
        outcome.audit = std::move(response.text);
    } catch (const GatewayError& e) {
        outcome.warning = "audit skipped: " + std::string(e.kind()) + ": " + e.what();
    }
    return outcome;
}

CaseTrace CotPipeline::run_case(const PatientRecord& record, const TaskPair& pair, RunMode mode,
                                const std::string& corpus_digest, const std::string& run_id) const {
    CaseTrace trace;
    trace.run_id = run_id;
    trace.patient_id = record.patient_id;
    trace.corpus_digest = corpus_digest;
    trace.gold = record.label;
    trace.pair = pair;
    trace.mode = mode;

    auto fail = [&](std::string reason) {
        trace.ok = false;
        trace.failure_reason = std::move(reason);
        return trace;
    };

    if (mode == RunMode::ZeroShot) {
        trace.stage_seeds["zero_shot"] = config_.base_seed;
        try {
            const auto bundle =
                prompt_kit::render_zero_shot_prompt(record, pair, config_.include_assessment, templates_);
            auto response = call(Stage::ZeroShot, bundle.messages, config_.base_seed);
            trace.stage_latency_ms["zero_shot"] = response.latency_ms;
            trace.classification_raw.push_back(response.text);
            const auto value = extract_score(response.text);
            if (!value) return fail("no_score");
            const auto clamped = clamp_score(*value, pair);
            trace.final = FinalClassification{response.text, value, clamped.label, clamped.was_clamped};
        } catch (const GatewayError& e) {
            return fail(std::string(e.kind()));
        }
        trace.ok = true;
        return trace;
    }

    trace.stage_seeds["cot"] = config_.base_seed;
    auto paths = generate_paths(record, pair);
    trace.paths = std::move(paths.paths);
    trace.analyses = std::move(paths.analyses);
    trace.stage_latency_ms["cot"] = paths.latency_ms;
    if (paths.failure) return fail(*paths.failure);

    try {
        trace.stage_seeds["aggregate"] = config_.base_seed;
        auto agg = aggregate(trace.analyses);
        trace.stage_latency_ms["aggregate"] = agg.latency_ms;
        trace.aggregate = std::move(agg.aggregate);

        trace.stage_seeds["classify"] = config_.base_seed;
        auto cls = classify(trace.aggregate->narrative, pair);
        trace.stage_latency_ms["classify"] = cls.latency_ms;
        trace.classification_raw = std::move(cls.raw_attempts);
        if (!cls.final) return fail("no_score");
        trace.final = std::move(cls.final);
    } catch (const GatewayError& e) {
        return fail(std::string(e.kind()));
    }
    trace.ok = true;

    if (config_.audit_enabled) {
        trace.stage_seeds["audit"] = config_.base_seed;
        auto audit = summarize_audit(trace);
        trace.stage_latency_ms["audit"] = audit.latency_ms;
        trace.audit = std::move(audit.audit);
        trace.audit_warning = std::move(audit.warning);
    }
    return trace;
}

}  // namespace cdrcot
