#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdrcot/evaluation.hpp"
#include "support.hpp"

using namespace cdrcot;
using namespace cdrcot::testing;

namespace {

const TaskPair k05v1(CdrLabel::very_mild(), CdrLabel::mild());
const TaskPair k1v3(CdrLabel::mild(), CdrLabel::severe());

struct Labels {
    std::vector<CdrLabel> gold;
    std::vector<CdrLabel> pred;
};

/// gold/pred sequences reproducing a [gold][pred] count table.
Labels from_counts(const TaskPair& pair, std::size_t ll, std::size_t lh, std::size_t hl, std::size_t hh) {
    Labels out;
    auto push = [&](CdrLabel g, CdrLabel p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            out.gold.push_back(g);
            out.pred.push_back(p);
        }
    };
    push(pair.low(), pair.low(), ll);
    push(pair.low(), pair.high(), lh);
    push(pair.high(), pair.low(), hl);
    push(pair.high(), pair.high(), hh);
    return out;
}

MetricsReport evaluate(const TaskPair& pair, const Labels& l) { return macro_metrics(confusion(l.gold, l.pred, pair)); }

/// Direct per-sample computation, written without the confusion matrix.
struct Oracle {
    double precision, recall, f1, accuracy, auc;
};

Oracle naive(const TaskPair& pair, const Labels& l) {
    double p_sum = 0, r_sum = 0, f_sum = 0;
    double recall_low = 0, recall_high = 0;
    for (CdrLabel positive : {pair.low(), pair.high()}) {
        double predicted = 0, actual = 0, hit = 0;
        for (std::size_t i = 0; i < l.gold.size(); ++i) {
            if (l.pred[i] == positive) predicted += 1;
            if (l.gold[i] == positive) actual += 1;
            if (l.pred[i] == positive && l.gold[i] == positive) hit += 1;
        }
        const double p = predicted == 0 ? 0 : hit / predicted;
        const double r = actual == 0 ? 0 : hit / actual;
        const double f = p + r == 0 ? 0 : 2 * p * r / (p + r);
        p_sum += p;
        r_sum += r;
        f_sum += f;
        (positive == pair.low() ? recall_low : recall_high) = r;
    }
    double correct = 0;
    bool has_low = false, has_high = false;
    for (std::size_t i = 0; i < l.gold.size(); ++i) {
        correct += l.gold[i] == l.pred[i];
        has_low |= l.gold[i] == pair.low();
        has_high |= l.gold[i] == pair.high();
    }
    const double auc = has_low && has_high ? (recall_low + recall_high) / 2 : std::nan("");
    return {p_sum / 2, r_sum / 2, f_sum / 2, correct / static_cast<double>(l.gold.size()), auc};
}

Labels random_labels(std::mt19937_64& rng, const TaskPair& pair, bool both_classes) {
    for (;;) {
        const std::size_t n = 1 + rng() % 50;
        Labels l;
        for (std::size_t i = 0; i < n; ++i) {
            l.gold.push_back(rng() % 2 ? pair.high() : pair.low());
            l.pred.push_back(rng() % 2 ? pair.high() : pair.low());
        }
        const bool low = std::count(l.gold.begin(), l.gold.end(), pair.low()) > 0;
        const bool high = std::count(l.gold.begin(), l.gold.end(), pair.high()) > 0;
        if (!both_classes || (low && high)) return l;
    }
}

}  // namespace

TEST(Confusion, CountsByGoldAndPrediction) {
    const auto l = from_counts(k05v1, 2, 1, 1, 1);
    const auto cm = confusion(l.gold, l.pred, k05v1);
    EXPECT_EQ(cm.counts[0][0], 2u);
    EXPECT_EQ(cm.counts[0][1], 1u);
    EXPECT_EQ(cm.counts[1][0], 1u);
    EXPECT_EQ(cm.counts[1][1], 1u);
    EXPECT_EQ(cm.total(), 5u);
}

TEST(Confusion, Errors) {
    const std::vector<CdrLabel> two{CdrLabel::very_mild(), CdrLabel::mild()};
    const std::vector<CdrLabel> one{CdrLabel::very_mild()};
    EXPECT_THROW(confusion(two, one, k05v1), LengthMismatchError);
    const std::vector<CdrLabel> stray{CdrLabel::very_mild(), CdrLabel::moderate()};
    EXPECT_THROW(confusion(two, stray, k05v1), LabelOutOfPairError);
    EXPECT_THROW(confusion(stray, two, k05v1), LabelOutOfPairError);
}

TEST(MacroMetrics, WorkedExample) {
    // Low class: P = R = 2/3. High class: P = R = 1/2. Macro = 7/12.
    const auto r = evaluate(k05v1, from_counts(k05v1, 2, 1, 1, 1));
    EXPECT_NEAR(r.precision, 7.0 / 12.0, 1e-12);
    EXPECT_NEAR(r.recall, 7.0 / 12.0, 1e-12);
    EXPECT_NEAR(r.f1, 7.0 / 12.0, 1e-12);
    EXPECT_NEAR(r.accuracy, 0.6, 1e-12);
    EXPECT_NEAR(r.auc, 7.0 / 12.0, 1e-12);
    EXPECT_NEAR(r.per_class[0].precision, 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(r.per_class[1].precision, 0.5, 1e-12);
    EXPECT_EQ(r.n_scored, 5u);
}

TEST(MacroMetrics, PerfectPredictions) {
    const auto r = evaluate(k1v3, from_counts(k1v3, 4, 0, 0, 3));
    EXPECT_EQ(r.precision, 1.0);
    EXPECT_EQ(r.recall, 1.0);
    EXPECT_EQ(r.f1, 1.0);
    EXPECT_EQ(r.accuracy, 1.0);
    EXPECT_EQ(r.auc, 1.0);
}

TEST(MacroMetrics, SingleGoldClassLeavesAucUndefined) {
    const auto r = evaluate(k05v1, from_counts(k05v1, 3, 1, 0, 0));
    EXPECT_TRUE(std::isnan(r.auc));
    EXPECT_FALSE(r.per_class[1].recall_defined);
    EXPECT_EQ(r.per_class[1].recall, 0.0);
    EXPECT_NEAR(r.accuracy, 0.75, 1e-12);
    EXPECT_FALSE(std::isnan(r.f1));
}

TEST(MacroMetrics, NeverPredictedClassCountsAsZero) {
    const auto r = evaluate(k05v1, from_counts(k05v1, 2, 0, 2, 0));
    EXPECT_FALSE(r.per_class[1].precision_defined);
    EXPECT_EQ(r.per_class[1].f1, 0.0);
    EXPECT_NEAR(r.precision, 0.25, 1e-12);
    EXPECT_NEAR(r.recall, 0.5, 1e-12);
    EXPECT_NEAR(r.auc, 0.5, 1e-12);
}

TEST(MacroMetrics, EmptyInputIsAllNaN) {
    const auto r = macro_metrics(ConfusionMatrix{k05v1, {}});
    EXPECT_TRUE(std::isnan(r.precision));
    EXPECT_TRUE(std::isnan(r.recall));
    EXPECT_TRUE(std::isnan(r.f1));
    EXPECT_TRUE(std::isnan(r.accuracy));
    EXPECT_TRUE(std::isnan(r.auc));
    EXPECT_EQ(r.n_scored, 0u);
}

TEST(MacroMetrics, MatchesNaiveOracleProperty) {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 2000; ++trial) {
        const auto& pair = TaskPair::canonical()[rng() % 4];
        const auto l = random_labels(rng, pair, trial % 3 != 0);
        const auto r = evaluate(pair, l);
        const auto o = naive(pair, l);
        EXPECT_NEAR(r.precision, o.precision, 1e-12);
        EXPECT_NEAR(r.recall, o.recall, 1e-12);
        EXPECT_NEAR(r.f1, o.f1, 1e-12);
        EXPECT_NEAR(r.accuracy, o.accuracy, 1e-12);
        if (std::isnan(o.auc)) {
            EXPECT_TRUE(std::isnan(r.auc));
        } else {
            EXPECT_NEAR(r.auc, o.auc, 1e-12);
        }
    }
}

TEST(MacroMetrics, InvarianceProperties) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 500; ++trial) {
        const auto& pair = TaskPair::canonical()[rng() % 4];
        auto l = random_labels(rng, pair, true);
        const auto base = evaluate(pair, l);

        for (double v : {base.precision, base.recall, base.f1, base.accuracy, base.auc}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
        // Balanced accuracy is the macro recall.
        EXPECT_EQ(base.auc, base.recall);

        // Reordering samples changes nothing.
        std::vector<std::size_t> order(l.gold.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        Labels shuffled;
        for (auto i : order) {
            shuffled.gold.push_back(l.gold[i]);
            shuffled.pred.push_back(l.pred[i]);
        }
        const auto s = evaluate(pair, shuffled);
        EXPECT_EQ(s.precision, base.precision);
        EXPECT_EQ(s.f1, base.f1);
        EXPECT_EQ(s.auc, base.auc);

        // Swapping the two class names leaves macro values unchanged.
        Labels swapped;
        for (std::size_t i = 0; i < l.gold.size(); ++i) {
            swapped.gold.push_back(pair.other(l.gold[i]));
            swapped.pred.push_back(pair.other(l.pred[i]));
        }
        const auto w = evaluate(pair, swapped);
        EXPECT_NEAR(w.precision, base.precision, 1e-12);
        EXPECT_NEAR(w.recall, base.recall, 1e-12);
        EXPECT_NEAR(w.f1, base.f1, 1e-12);
        EXPECT_NEAR(w.auc, base.auc, 1e-12);
        EXPECT_EQ(w.accuracy, base.accuracy);
    }
}

TEST(MetricsJson, RoundTripWithNaN) {
    auto r = evaluate(k05v1, from_counts(k05v1, 3, 1, 0, 0));
    r.n_failed = 2;
    const auto j = to_json(r, k05v1);
    EXPECT_EQ(j.at("auc"), "NaN");
    EXPECT_TRUE(j.at("per_class").contains("0.5"));
    EXPECT_TRUE(j.at("per_class").contains("1"));
    const auto back = metrics_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_TRUE(std::isnan(back.auc));
    EXPECT_EQ(back.f1, r.f1);
    EXPECT_EQ(back.n_failed, 2u);
    EXPECT_EQ(back.per_class[1].recall_defined, false);
    EXPECT_EQ(to_json(back, k05v1), j);

    const auto empty = to_json(macro_metrics(ConfusionMatrix{k05v1, {}}), k05v1);
    for (const char* key : {"precision", "recall", "f1", "accuracy", "auc"}) EXPECT_EQ(empty.at(key), "NaN");
}

TEST(F1Delta, Difference) {
    MetricsReport cot, zs;
    cot.f1 = 0.54;
    zs.f1 = 0.39;
    const auto d = f1_delta({{"0.5v1", cot}}, {{"0.5v1", zs}});
    EXPECT_NEAR(d.at("0.5v1"), 0.15, 1e-12);
    EXPECT_EQ(f1_delta({{"1v3", cot}}, {{"1v3", cot}}).at("1v3"), 0.0);
}

TEST(F1Delta, NaNPropagates) {
    MetricsReport cot, zs;
    cot.f1 = std::nan("");
    zs.f1 = 0.5;
    EXPECT_TRUE(std::isnan(f1_delta({{"0.5v2", cot}}, {{"0.5v2", zs}}).at("0.5v2")));
}

TEST(F1Delta, KeysMustMatch) {
    MetricsReport r;
    EXPECT_THROW(f1_delta({{"0.5v1", r}}, {{"1v3", r}}), KeyMismatchError);
    EXPECT_THROW(f1_delta({{"0.5v1", r}, {"1v3", r}}, {{"1v3", r}}), KeyMismatchError);
}
