#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "cdrcot/cot_pipeline.hpp"
#include "support.hpp"
#include "validation_cases.hpp"

using namespace cdrcot;
using namespace cdrcot::testing;

namespace {

const TaskPair k05v1(CdrLabel::very_mild(), CdrLabel::mild());
const TaskPair k05v2(CdrLabel::very_mild(), CdrLabel::moderate());
const TaskPair k05v3(CdrLabel::very_mild(), CdrLabel::severe());
const TaskPair k1v3(CdrLabel::mild(), CdrLabel::severe());

std::string non_empty(std::mt19937_64& rng) {
    std::string s = random_text(rng, 30);
    return trim(s).empty() ? "x" + s : s;
}

}  // namespace

class ValidationCorpus : public ::testing::TestWithParam<ValidationCase> {};

TEST_P(ValidationCorpus, Classified) {
    const auto& c = GetParam();
    const auto result = validate_cot_json(c.text, c.pair);
    if (!c.expected) {
        ASSERT_TRUE(std::holds_alternative<CotAnalysis>(result))
            << std::get<ValidationError>(result).describe() << "\n" << c.text;
        EXPECT_EQ(std::get<CotAnalysis>(result).cdr_score.text(), c.detail);
        return;
    }
    ASSERT_TRUE(std::holds_alternative<ValidationError>(result)) << c.text;
    const auto& err = std::get<ValidationError>(result);
    EXPECT_EQ(err.category, *c.expected) << err.describe();
    if (*c.expected == ValidationCategory::MissingKey || *c.expected == ValidationCategory::EmptyField) {
        EXPECT_EQ(err.detail, c.detail);
    }
    if (*c.expected == ValidationCategory::ScoreOutOfPair) {
        ASSERT_TRUE(err.value.has_value());
        EXPECT_EQ(nlohmann::json(*err.value).dump(), nlohmann::json(std::stod(c.detail)).dump());
    }
}

INSTANTIATE_TEST_SUITE_P(Completions, ValidationCorpus, ::testing::ValuesIn(validation_cases()),
                         [](const auto& info) { return info.param.name; });

TEST(ValidationCorpus, CoversEveryCategoryWithThirtyCases) {
    const auto cases = validation_cases();
    EXPECT_GE(cases.size(), 30u);
    std::set<int> categories;
    for (const auto& c : cases) categories.insert(c.expected ? static_cast<int>(*c.expected) : -1);
    EXPECT_EQ(categories.size(), 7u);
}

TEST(ValidateCotJson, FullObjectWithAllDomains) {
    const std::string text = R"({
  "reasoning_steps": ["Insidious onset with progressive memory loss", "Able to manage home affairs"],
  "domains": {
    "memory": "Forgets conversation details",
    "orientation": "Occasional disorientation",
    "judgment_problem_solving": "Mildly impaired",
    "community_affairs": "Still attends activities",
    "home_hobbies": "Manages home affairs",
    "personal_care": "Independent"
  },
  "assessment": "Very mild dementia",
  "cdr_score": 0.5
})";
    const auto ok = validate_cot_json(text, k05v1);
    ASSERT_TRUE(std::holds_alternative<CotAnalysis>(ok));
    const auto& a = std::get<CotAnalysis>(ok);
    EXPECT_EQ(a.cdr_score, CdrLabel::very_mild());
    EXPECT_EQ(a.reasoning_steps.size(), 2u);
    EXPECT_EQ(a.domains.orientation, "Occasional disorientation");
    EXPECT_EQ(a.seed, 0);
    EXPECT_EQ(a.attempt, 1);

    std::string out_of_pair = text;
    out_of_pair.replace(out_of_pair.find("0.5"), 3, "2.0");
    const auto bad = validate_cot_json(out_of_pair, k05v1);
    ASSERT_TRUE(std::holds_alternative<ValidationError>(bad));
    EXPECT_EQ(std::get<ValidationError>(bad).category, ValidationCategory::ScoreOutOfPair);
    EXPECT_EQ(std::get<ValidationError>(bad).value, 2.0);
    EXPECT_EQ(std::get<ValidationError>(bad).describe(), "ScoreOutOfPair(2.0)");
}

TEST(ValidateCotJson, RoundTripProperty) {
    std::mt19937_64 rng(31337);
    for (int trial = 0; trial < 500; ++trial) {
        const auto& pair = TaskPair::canonical()[rng() % 4];
        CotAnalysis a;
        const std::size_t steps = 1 + rng() % 5;
        for (std::size_t i = 0; i < steps; ++i) a.reasoning_steps.push_back(non_empty(rng));
        a.domains = {non_empty(rng), non_empty(rng), non_empty(rng), non_empty(rng), non_empty(rng), non_empty(rng)};
        a.assessment = non_empty(rng);
        a.cdr_score = rng() % 2 ? pair.low() : pair.high();

        const std::string serialized = rng() % 2 ? to_model_json(a).dump() : to_model_json(a).dump(2);
        const auto back = validate_cot_json(serialized, pair);
        ASSERT_TRUE(std::holds_alternative<CotAnalysis>(back)) << serialized;
        EXPECT_EQ(std::get<CotAnalysis>(back), a);
    }
}

// Extraction ----------------------------------------------------------------------------

TEST(ExtractScore, Anchored) {
    EXPECT_EQ(extract_score("FINAL_CDR: 1"), 1.0);
    EXPECT_EQ(extract_score("Reasoning mentions 3 domains.\nFINAL_CDR: 0.5"), 0.5);
    EXPECT_EQ(extract_score("**FINAL_CDR:** 2"), 2.0);
    EXPECT_EQ(extract_score("FINAL_CDR:7"), 7.0);
    EXPECT_EQ(extract_score("FINAL_CDR: 1.75"), 1.75);
}

TEST(ExtractScore, Fallback) {
    EXPECT_EQ(extract_score("the score is 2.0 given decline"), 2.0);
    EXPECT_EQ(extract_score("likely 0.5 overall"), 0.5);
    EXPECT_EQ(extract_score("I would say 3."), 3.0);
    // 12 and 4 are not standalone grade tokens.
    EXPECT_FALSE(extract_score("seen 12 times over 4 weeks").has_value());
}

TEST(ExtractScore, Absent) {
    EXPECT_FALSE(extract_score("no numeric conclusion").has_value());
    EXPECT_FALSE(extract_score("").has_value());
}

// Clamping -------------------------------------------------------------------------------

TEST(ClampScore, Examples) {
    const auto a = clamp_score(2.0, k05v1);
    EXPECT_EQ(a.label, CdrLabel::mild());
    EXPECT_TRUE(a.was_clamped);

    const auto b = clamp_score(0.5, k05v3);
    EXPECT_EQ(b.label, CdrLabel::very_mild());
    EXPECT_FALSE(b.was_clamped);

    // |1.75 - 0.5| == |1.75 - 3.0|, so the tie goes to the lower label.
    const auto c = clamp_score(1.75, k05v3);
    EXPECT_EQ(c.label, CdrLabel::very_mild());
    EXPECT_TRUE(c.was_clamped);

    EXPECT_EQ(clamp_score(7.0, k05v1).label, CdrLabel::mild());
    EXPECT_EQ(clamp_score(0.0, k05v1).label, CdrLabel::very_mild());
    EXPECT_EQ(clamp_score(1.5, k05v2).label, CdrLabel::moderate());
    EXPECT_EQ(clamp_score(1.25, k05v2).label, CdrLabel::very_mild());
    EXPECT_EQ(clamp_score(2.0, k1v3).label, CdrLabel::mild());
}

TEST(ClampScore, NonFinite) {
    EXPECT_EQ(clamp_score(std::numeric_limits<double>::quiet_NaN(), k1v3).label, CdrLabel::mild());
    EXPECT_EQ(clamp_score(std::numeric_limits<double>::infinity(), k1v3).label, CdrLabel::severe());
    EXPECT_EQ(clamp_score(-std::numeric_limits<double>::infinity(), k1v3).label, CdrLabel::mild());
}

TEST(ClampScore, TotalIdempotentNearestProperty) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> dist(-10.0, 10.0);
    for (int trial = 0; trial < 5000; ++trial) {
        const auto& pair = TaskPair::canonical()[rng() % 4];
        const double v = trial % 5 == 0 ? std::round(dist(rng) * 4.0) / 4.0 : dist(rng);
        const auto r = clamp_score(v, pair);
        ASSERT_TRUE(pair.contains(r.label));
        const auto again = clamp_score(r.label.value(), pair);
        EXPECT_EQ(again.label, r.label);
        EXPECT_FALSE(again.was_clamped);
        EXPECT_EQ(r.was_clamped, v != pair.low().value() && v != pair.high().value());
        const double mine = std::abs(v - r.label.value());
        const double other = std::abs(v - pair.other(r.label).value());
        EXPECT_LE(mine, other);
        if (mine == other) {
            EXPECT_EQ(r.label, pair.low());
        }
    }
}
