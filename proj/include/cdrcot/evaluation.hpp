#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "cdrcot/corpus.hpp"

namespace cdrcot {

class LengthMismatchError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class LabelOutOfPairError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class KeyMismatchError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// 2x2 counts indexed [gold][pred] with 0 = pair.low, 1 = pair.high.
struct ConfusionMatrix {
    TaskPair pair;
    std::array<std::array<std::size_t, 2>, 2> counts{};

    std::size_t total() const { return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1]; }
};

ConfusionMatrix confusion(std::span<const CdrLabel> golds, std::span<const CdrLabel> preds, const TaskPair& pair);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool precision_defined = true;
    bool recall_defined = true;
    bool f1_defined = true;
};

/// Macro (unweighted two-class) averages; AUC is balanced accuracy with
/// pair.high as the positive class. Undefined per-class values count as 0 and
/// carry a flag; NaN appears only for AUC with a missing gold class and for
/// empty input.
struct MetricsReport {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double accuracy = 0.0;
    double auc = 0.0;
    std::size_t n_scored = 0;
    std::size_t n_failed = 0;
    /// [0] = pair.low, [1] = pair.high.
    std::array<ClassMetrics, 2> per_class{};
};

MetricsReport macro_metrics(const ConfusionMatrix& cm);

/// JSON with NaN written as the string "NaN".
nlohmann::json to_json(const MetricsReport& report, const TaskPair& pair);
MetricsReport metrics_from_json(const nlohmann::json& j);

/// cot.f1 - zero_shot.f1 per pair key; NaN propagates.
std::map<std::string, double> f1_delta(const std::map<std::string, MetricsReport>& cot,
                                       const std::map<std::string, MetricsReport>& zero_shot);

}  // namespace cdrcot
