#include "cdrcot/evaluation.hpp"

#include <cmath>
#include <limits>

namespace cdrcot {

using json = nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t class_index(CdrLabel l, const TaskPair& pair) {
    if (l == pair.low()) return 0;
    if (l == pair.high()) return 1;
    throw LabelOutOfPairError("label " + std::string(l.text()) + " is outside pair " + pair.key());
}

json number_or_nan(double v) {
    return std::isnan(v) ? json("NaN") : json(v);
}

double read_number(const json& j) {
    if (j.is_string() && j.get<std::string>() == "NaN") return kNaN;
    return j.get<double>();
}

}  // namespace

ConfusionMatrix confusion(std::span<const CdrLabel> golds, std::span<const CdrLabel> preds, const TaskPair& pair) {
    if (golds.size() != preds.size()) {
        throw LengthMismatchError("golds has " + std::to_string(golds.size()) + " labels but preds has " +
                                  std::to_string(preds.size()));
    }
    ConfusionMatrix cm{pair, {}};
    for (std::size_t i = 0; i < golds.size(); ++i) {
        ++cm.counts[class_index(golds[i], pair)][class_index(preds[i], pair)];
    }
    return cm;
}

MetricsReport macro_metrics(const ConfusionMatrix& cm) {
    MetricsReport r;
    r.n_scored = cm.total();
    if (r.n_scored == 0) {
        r.precision = r.recall = r.f1 = r.accuracy = r.auc = kNaN;
        for (auto& c : r.per_class) {
            c = ClassMetrics{0.0, 0.0, 0.0, false, false, false};
        }
        return r;
    }

    const auto& n = cm.counts;
    for (std::size_t c = 0; c < 2; ++c) {
        const std::size_t other = 1 - c;
        const double tp = static_cast<double>(n[c][c]);
        const double fp = static_cast<double>(n[other][c]);
        const double fn = static_cast<double>(n[c][other]);
        ClassMetrics& m = r.per_class[c];
        m.precision_defined = (tp + fp) > 0;
        m.recall_defined = (tp + fn) > 0;
        m.precision = m.precision_defined ? tp / (tp + fp) : 0.0;
        m.recall = m.recall_defined ? tp / (tp + fn) : 0.0;
        m.f1_defined = m.precision_defined && m.recall_defined;
        m.f1 = (m.precision > 0.0 && m.recall > 0.0) ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    }
    r.precision = (r.per_class[0].precision + r.per_class[1].precision) / 2.0;
    r.recall = (r.per_class[0].recall + r.per_class[1].recall) / 2.0;
    r.f1 = (r.per_class[0].f1 + r.per_class[1].f1) / 2.0;
    r.accuracy = static_cast<double>(n[0][0] + n[1][1]) / static_cast<double>(r.n_scored);

    const std::size_t gold_low = n[0][0] + n[0][1];
    const std::size_t gold_high = n[1][0] + n[1][1];
    if (gold_low == 0 || gold_high == 0) {
        r.auc = kNaN;
    } else {
        const double tpr = static_cast<double>(n[1][1]) / static_cast<double>(gold_high);
        const double tnr = static_cast<double>(n[0][0]) / static_cast<double>(gold_low);
        r.auc = (tpr + tnr) / 2.0;
    }
    return r;
}

json to_json(const MetricsReport& r, const TaskPair& pair) {
    json per_class = json::object();
    const std::array<CdrLabel, 2> labels = {pair.low(), pair.high()};
    for (std::size_t c = 0; c < 2; ++c) {
        const auto& m = r.per_class[c];
        per_class[std::string(labels[c].text())] = {
            {"precision", m.precision},         {"recall", m.recall},
            {"f1", m.f1},                       {"precision_defined", m.precision_defined},
            {"recall_defined", m.recall_defined}, {"f1_defined", m.f1_defined},
        };
    }
    return json{{"precision", number_or_nan(r.precision)},
                {"recall", number_or_nan(r.recall)},
                {"f1", number_or_nan(r.f1)},
                {"accuracy", number_or_nan(r.accuracy)},
                {"auc", number_or_nan(r.auc)},
                {"n_scored", r.n_scored},
                {"n_failed", r.n_failed},
                {"per_class", std::move(per_class)}};
}

MetricsReport metrics_from_json(const json& j) {
    MetricsReport r;
    r.precision = read_number(j.at("precision"));
    r.recall = read_number(j.at("recall"));
    r.f1 = read_number(j.at("f1"));
    r.accuracy = read_number(j.at("accuracy"));
    r.auc = read_number(j.at("auc"));
    r.n_scored = j.at("n_scored").get<std::size_t>();
    r.n_failed = j.at("n_failed").get<std::size_t>();
    std::size_t c = 0;
    // Keys are canonical label text, which sorts low before high.
    for (const auto& [label, m] : j.at("per_class").items()) {
        if (c >= 2) break;
        r.per_class[c++] = ClassMetrics{m.at("precision").get<double>(),       m.at("recall").get<double>(),
                                        m.at("f1").get<double>(),              m.at("precision_defined").get<bool>(),
                                        m.at("recall_defined").get<bool>(),    m.at("f1_defined").get<bool>()};
    }
    return r;
}

std::map<std::string, double> f1_delta(const std::map<std::string, MetricsReport>& cot,
                                       const std::map<std::string, MetricsReport>& zero_shot) {
    if (cot.size() != zero_shot.size()) throw KeyMismatchError("cot and zero-shot reports cover different pairs");
    std::map<std::string, double> out;
    for (const auto& [key, report] : cot) {
        auto it = zero_shot.find(key);
        if (it == zero_shot.end()) throw KeyMismatchError("zero-shot report lacks pair " + key);
        out[key] = report.f1 - it->second.f1;
    }
    return out;
}

}  // namespace cdrcot
