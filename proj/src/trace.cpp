#include "cdrcot/trace.hpp"

#include "cdrcot/cot_pipeline.hpp"

namespace cdrcot {

using json = nlohmann::json;

namespace {

template <typename T, typename F>
json optional_json(const std::optional<T>& v, F&& f) {
    return v ? f(*v) : json(nullptr);
}

CdrLabel label_from_json(const json& j) {
    auto l = j.is_number() ? CdrLabel::from_value(j.get<double>()) : CdrLabel::parse(j.get<std::string>());
    if (!l) throw std::invalid_argument("trace holds an invalid CDR label: " + j.dump());
    return *l;
}

json attempt_json(const PathAttempt& a) {
    return json{{"attempt", a.attempt},
                {"seed", a.seed},
                {"raw", a.raw},
                {"error", optional_json(a.error, [](const ValidationError& e) {
                     return json{{"category", to_string(e.category)},
                                 {"detail", e.detail},
                                 {"value", e.value ? json(*e.value) : json(nullptr)}};
                 })}};
}

ValidationCategory parse_category(std::string_view s) {
    for (auto c : {ValidationCategory::NoJson, ValidationCategory::SyntaxError, ValidationCategory::MissingKey,
                   ValidationCategory::EmptyField, ValidationCategory::ScoreOutOfPair,
                   ValidationCategory::ScoreUnparseable}) {
        if (to_string(c) == s) return c;
    }
    throw std::invalid_argument("unknown validation category '" + std::string(s) + "'");
}

PathAttempt attempt_from_json(const json& j) {
    PathAttempt a;
    a.attempt = j.at("attempt").get<int>();
    a.seed = j.at("seed").get<std::int64_t>();
    a.raw = j.at("raw").get<std::string>();
    if (const auto& e = j.at("error"); !e.is_null()) {
        ValidationError err;
        err.category = parse_category(e.at("category").get<std::string>());
        err.detail = e.at("detail").get<std::string>();
        if (!e.at("value").is_null()) err.value = e.at("value").get<double>();
        a.error = err;
    }
    return a;
}

}  // namespace

std::string_view to_string(RunMode m) {
    return m == RunMode::Cot ? "cot" : "zero_shot";
}

RunMode parse_mode(std::string_view s) {
    if (s == "cot") return RunMode::Cot;
    if (s == "zero_shot" || s == "zero-shot") return RunMode::ZeroShot;
    throw std::invalid_argument("unknown mode '" + std::string(s) + "' (expected cot or zero_shot)");
}

std::string CaseTrace::case_key() const {
    return patient_id + "|" + pair.key() + "|" + std::string(to_string(mode));
}

json to_json(const CaseTrace& t) {
    json paths = json::array();
    for (const auto& p : t.paths) {
        json rejections = json::array();
        for (const auto& r : p.rejections) rejections.push_back(attempt_json(r));
        paths.push_back({{"index", p.index},
                         {"accepted", optional_json(p.accepted, attempt_json)},
                         {"rejections", std::move(rejections)}});
    }
    json analyses = json::array();
    for (const auto& a : t.analyses) {
        json j = to_model_json(a);
        j["seed"] = a.seed;
        j["attempt"] = a.attempt;
        analyses.push_back(std::move(j));
    }
    return json{
        {"schema", kTraceSchema},
        {"run_id", t.run_id},
        {"patient_id", t.patient_id},
        {"corpus_digest", t.corpus_digest},
        {"gold", t.gold.text()},
        {"pair", t.pair.key()},
        {"mode", to_string(t.mode)},
        {"status", t.ok ? "ok" : "failed"},
        {"failure_reason", t.ok ? json(nullptr) : json(t.failure_reason)},
        {"paths", std::move(paths)},
        {"analyses", std::move(analyses)},
        {"aggregate", optional_json(t.aggregate,
                                    [](const AggregatedAssessment& a) {
                                        return json{{"narrative", a.narrative}, {"source_count", a.source_count}};
                                    })},
        {"classification_raw", t.classification_raw},
        {"final", optional_json(t.final,
                                [](const FinalClassification& f) {
                                    return json{{"raw_text", f.raw_text},
                                                {"extracted_value",
                                                 f.extracted_value ? json(*f.extracted_value) : json(nullptr)},
                                                {"clamped_label", f.clamped_label.text()},
                                                {"was_clamped", f.was_clamped}};
                                })},
        {"audit", t.audit ? json(*t.audit) : json(nullptr)},
        {"audit_warning", t.audit_warning ? json(*t.audit_warning) : json(nullptr)},
        {"stage_latency_ms", t.stage_latency_ms},
        {"stage_seeds", t.stage_seeds},
    };
}

CaseTrace trace_from_json(const json& j) {
    if (j.at("schema").get<std::string>() != kTraceSchema) {
        throw std::invalid_argument("unsupported trace schema " + j.at("schema").dump());
    }
    CaseTrace t;
    t.run_id = j.at("run_id").get<std::string>();
    t.patient_id = j.at("patient_id").get<std::string>();
    t.corpus_digest = j.at("corpus_digest").get<std::string>();
    t.gold = label_from_json(j.at("gold"));
    t.pair = TaskPair::parse(j.at("pair").get<std::string>());
    t.mode = parse_mode(j.at("mode").get<std::string>());
    t.ok = j.at("status").get<std::string>() == "ok";
    if (!t.ok) t.failure_reason = j.at("failure_reason").get<std::string>();
    for (const auto& p : j.at("paths")) {
        PathTrace path;
        path.index = p.at("index").get<int>();
        if (!p.at("accepted").is_null()) path.accepted = attempt_from_json(p.at("accepted"));
        for (const auto& r : p.at("rejections")) path.rejections.push_back(attempt_from_json(r));
        t.paths.push_back(std::move(path));
    }
    for (const auto& a : j.at("analyses")) {
        auto parsed = validate_cot_json(a.dump(), t.pair);
        if (auto* err = std::get_if<ValidationError>(&parsed)) {
            throw std::invalid_argument("trace holds an invalid analysis: " + err->describe());
        }
        auto analysis = std::get<CotAnalysis>(std::move(parsed));
        analysis.seed = a.at("seed").get<std::int64_t>();
        analysis.attempt = a.at("attempt").get<int>();
        t.analyses.push_back(std::move(analysis));
    }
    if (const auto& a = j.at("aggregate"); !a.is_null()) {
        t.aggregate = AggregatedAssessment{a.at("narrative").get<std::string>(), a.at("source_count").get<std::size_t>()};
    }
    t.classification_raw = j.at("classification_raw").get<std::vector<std::string>>();
    if (const auto& f = j.at("final"); !f.is_null()) {
        FinalClassification fc;
        fc.raw_text = f.at("raw_text").get<std::string>();
        if (!f.at("extracted_value").is_null()) fc.extracted_value = f.at("extracted_value").get<double>();
        fc.clamped_label = label_from_json(f.at("clamped_label"));
        fc.was_clamped = f.at("was_clamped").get<bool>();
        t.final = fc;
    }
    if (!j.at("audit").is_null()) t.audit = j.at("audit").get<std::string>();
    if (!j.at("audit_warning").is_null()) t.audit_warning = j.at("audit_warning").get<std::string>();
    t.stage_latency_ms = j.at("stage_latency_ms").get<std::map<std::string, std::int64_t>>();
    t.stage_seeds = j.at("stage_seeds").get<std::map<std::string, std::int64_t>>();
    return t;
}

}  // namespace cdrcot
