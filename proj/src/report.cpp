#include <cmath>
#include <cstdio>
#include <sstream>

#include "cdrcot/experiment_runner.hpp"

namespace cdrcot {

using json = nlohmann::json;

namespace {

std::string fixed(double v, int digits) {
    if (std::isnan(v)) return "NaN";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string group_label(const std::string& pair_key) {
    const TaskPair pair = TaskPair::parse(pair_key);
    return std::string(pair.low().text()) + " vs. " + std::string(pair.high().text());
}

std::string model_label(const ExperimentResult& r) {
    return r.model + (r.mode == RunMode::Cot ? " (CoT)" : " zero shot prompting");
}

json number_or_nan(double v) {
    return std::isnan(v) ? json("NaN") : json(v);
}

double read_number(const json& j) {
    if (j.is_string()) return std::nan("");
    return j.get<double>();
}

}  // namespace

json ExperimentReport::to_json() const {
    json results_json = json::array();
    for (const auto& r : results) {
        results_json.push_back({{"pair", r.pair},
                                {"mode", cdrcot::to_string(r.mode)},
                                {"model", r.model},
                                {"metrics", cdrcot::to_json(r.metrics, TaskPair::parse(r.pair))}});
    }
    json deltas = json::object();
    for (const auto& [pair, d] : f1_deltas) deltas[pair] = number_or_nan(d);
    return json{{"run_id", run_id}, {"title", title}, {"results", std::move(results_json)}, {"f1_delta", deltas}};
}

ExperimentReport ExperimentReport::from_json(const json& j) {
    ExperimentReport r;
    r.run_id = j.at("run_id").get<std::string>();
    r.title = j.at("title").get<std::string>();
    for (const auto& e : j.at("results")) {
        r.results.push_back({e.at("pair").get<std::string>(), parse_mode(e.at("mode").get<std::string>()),
                             e.at("model").get<std::string>(), metrics_from_json(e.at("metrics"))});
    }
    for (const auto& [pair, d] : j.at("f1_delta").items()) r.f1_deltas[pair] = read_number(d);
    return r;
}

ExperimentReport compute_report(const std::vector<CaseTrace>& traces, const ExperimentConfig& config,
                                const std::string& run_id) {
    ExperimentReport report;
    report.run_id = run_id;
    report.title = config.report.title;

    std::map<std::string, MetricsReport> cot;
    std::map<std::string, MetricsReport> zero_shot;
    for (const auto& pair : config.pairs) {
        for (RunMode mode : config.modes) {
            std::vector<CdrLabel> golds;
            std::vector<CdrLabel> preds;
            std::size_t failed = 0;
            for (const auto& t : traces) {
                if (t.mode != mode || !(t.pair == pair)) continue;
                if (t.ok && t.final) {
                    golds.push_back(t.gold);
                    preds.push_back(t.final->clamped_label);
                } else {
                    ++failed;
                }
            }
            MetricsReport m = macro_metrics(confusion(golds, preds, pair));
            m.n_failed = failed;
            const Stage stage = mode == RunMode::Cot ? Stage::Cot : Stage::ZeroShot;
            const auto& backend = config.backends.at(config.pipeline.stage(stage).backend);
            report.results.push_back({pair.key(), mode, backend.model, m});
            (mode == RunMode::Cot ? cot : zero_shot)[pair.key()] = m;
        }
    }
    if (!cot.empty() && !zero_shot.empty()) report.f1_deltas = f1_delta(cot, zero_shot);
    return report;
}

std::string render_report(const ExperimentReport& report) {
    std::ostringstream out;
    out << "# " << report.title << "\n\n";
    out << "Run `" << report.run_id << "`\n\n";
    out << "| CDR Group | Model | Precision | Recall | F1-score | Accuracy | AUC | Scored | Failed |\n";
    out << "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : report.results) {
        const auto& m = r.metrics;
        out << "| " << group_label(r.pair) << " | " << model_label(r) << " | " << fixed(m.precision, 2) << " | "
            << fixed(m.recall, 2) << " | " << fixed(m.f1, 2) << " | " << fixed(m.accuracy, 2) << " | "
            << fixed(m.auc, 2) << " | " << m.n_scored << " | " << m.n_failed << " |\n";
    }
    if (!report.f1_deltas.empty()) {
        out << "\n## F1 change, CoT minus zero-shot\n\n";
        out << "| CDR Group | Delta F1 |\n";
        out << "|---|---|\n";
        for (const auto& r : report.results) {
            if (r.mode != RunMode::Cot) continue;
            auto it = report.f1_deltas.find(r.pair);
            if (it == report.f1_deltas.end()) continue;
            const std::string sign = (!std::isnan(it->second) && it->second > 0) ? "+" : "";
            out << "| " << group_label(r.pair) << " | " << sign << fixed(it->second, 2) << " |\n";
        }
    }
    return out.str();
}

std::string render_f1_delta_csv(const ExperimentReport& report) {
    std::map<std::string, double> cot_f1;
    std::map<std::string, double> zs_f1;
    std::vector<std::string> order;
    for (const auto& r : report.results) {
        if (r.mode == RunMode::Cot) {
            cot_f1[r.pair] = r.metrics.f1;
            order.push_back(r.pair);
        } else {
            zs_f1[r.pair] = r.metrics.f1;
        }
    }
    std::ostringstream out;
    out << "pair,cot_f1,zero_shot_f1,delta\n";
    for (const auto& pair : order) {
        auto d = report.f1_deltas.find(pair);
        if (d == report.f1_deltas.end()) continue;
        out << pair << ',' << fixed(cot_f1[pair], 6) << ',' << fixed(zs_f1[pair], 6) << ',' << fixed(d->second, 6)
            << '\n';
    }
    return out.str();
}

}  // namespace cdrcot
