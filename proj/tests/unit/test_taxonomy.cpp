// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "dforge/random_instances.hpp"
#include "dforge/taxonomy.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace dforge;

namespace {

ErrorTypes reference_types(const DecisionSummary& s, const std::vector<LabelId>& ranked, const std::vector<LabelId>& gt) {
    const auto v = dforge::oracle::taxonomy(s, ranked, gt);
    ErrorTypes t;
    if (v.type1) t.insert(ErrorType::Type1);
    if (v.type2) t.insert(ErrorType::Type2);
    if (v.type3) t.insert(ErrorType::Type3);
    return t;
}

DecisionSummary recycling() {
    return test::with_extra_labels(test::dpl_summary("heapsortcypher"), {"Candy", "Confectionery", "Lollipop"});
}

ApiOutput ranked(const DecisionSummary& s, std::initializer_list<const char*> names) {
    std::vector<RankedLabel> out;
    double score = 0.95;
    for (const char* n : names) {
        out.push_back({*s.find_label(n), score});
        score -= 0.05;
    }
    return ApiOutput::ranked(out);
}

}  // namespace

TEST(Classify, RecyclingSnackIsTypeOneAndThree) {
    const auto s = recycling();
    const auto rep = classify(s, ranked(s, {"Glass", "Candy", "Snack", "Confectionery", "Lollipop"}),
                              GroundTruth::label_set({*s.find_label("Snack")}));
    EXPECT_TRUE(rep.is_critical);
    EXPECT_EQ(rep.types.list(), (std::vector<ErrorType>{ErrorType::Type1, ErrorType::Type3}));
    EXPECT_EQ(rep.actual_decision.classes, std::vector<std::size_t>{1});
    EXPECT_EQ(rep.correct_decision.classes, std::vector<std::size_t>{2});
}

TEST(Classify, MissingAndSpurious) {
    const auto s = recycling();
    const auto shirt = GroundTruth::label_set({*s.find_label("Shirt")});
    EXPECT_EQ(classify(s, ranked(s, {"Candy"}), shirt).types.list(), std::vector<ErrorType>{ErrorType::Type2});
    EXPECT_EQ(classify(s, ranked(s, {"Tin"}), GroundTruth::label_set({})).types.list(),
              std::vector<ErrorType>{ErrorType::Type3});
    EXPECT_FALSE(classify(s, ranked(s, {"Candy", "Shoe"}), shirt).is_critical);
}

TEST(Classify, ValueRanges) {
    const auto s = from_json(R"({"app_id": "f", "api_kind": "ScalarScore", "decision_type": "MultiChoiceAppOrder",
        "classes": [{"range": {"lower": 0.6, "upper": 1}}, {"range": {"lower": 0.3, "upper": 0.6}},
                    {"range": {"lower": -1, "upper": 0.3}}]})");
    const auto wrong = classify(s, ApiOutput::scalar_score(0.4), GroundTruth::scalar_score(0.8));
    EXPECT_EQ(wrong.types.list(), (std::vector<ErrorType>{ErrorType::Type1, ErrorType::Type3}));
    EXPECT_FALSE(classify(s, ApiOutput::scalar_score(0.7), GroundTruth::scalar_score(0.8)).is_critical);
    const auto outside = classify(s, ApiOutput::scalar_score(1.4), GroundTruth::scalar_score(0.8));
    EXPECT_EQ(outside.types.list(), std::vector<ErrorType>{ErrorType::Type1});
}

TEST(Classify, MatchesBruteForceOracle) {
    std::mt19937_64 rng(21);
    const DecisionType types[] = {DecisionType::TrueFalse, DecisionType::MultiSelect,
                                  DecisionType::MultiChoiceAppOrder, DecisionType::MultiChoiceApiOrder};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t critical = 0;
    for (int i = 0; i < 5000; ++i) {
        const auto s = random::label_summary(rng, types[i % 4], 1 + static_cast<std::size_t>(i % 4), 9);
        std::vector<double> scores(9);
        for (auto& x : scores) x = u(rng);
        const auto out = api_output_from_scores(scores, EngineConfig{});
        GroundTruth gt = i % 7 == 0 ? GroundTruth::label_set({}) : random::label_truth(rng, s);
        std::vector<LabelId> order;
        for (const auto& r : out.labels) order.push_back(r.id);

        const auto rep = classify(s, out, gt);
        ASSERT_EQ(rep.types, reference_types(s, order, gt.labels)) << "instance " << i;
        EXPECT_EQ(rep.is_critical, !is_correct(s, out, gt));
        critical += rep.is_critical;
    }
    EXPECT_GT(critical, 500u);
}

TEST(Classify, CriticalIffIncorrectForRanges) {
    std::mt19937_64 rng(22);
    std::uniform_real_distribution<double> u(-1.2, 1.2);
    for (int i = 0; i < 2000; ++i) {
        const auto s = random::range_summary(rng, 1 + static_cast<std::size_t>(i % 5));
        const double y = u(rng), g = u(rng);
        const auto rep = classify(s, ApiOutput::scalar_score(y), GroundTruth::scalar_score(g));
        EXPECT_EQ(rep.is_critical, !is_correct(s, ApiOutput::scalar_score(y), GroundTruth::scalar_score(g)));
        EXPECT_FALSE(rep.types.has(ErrorType::Type2));
    }
}

TEST(ErrorRateTest, CountsAndEmpty) {
    const auto s = recycling();
    const std::size_t n = s.label_universe.size();
    auto sample = [&](std::initializer_list<const char*> high, std::initializer_list<const char*> truth) {
        ScoredSample x;
        x.scores.assign(n, 0.1);
        for (const char* h : high) x.scores[*s.find_label(h)] = 0.9;
        std::vector<LabelId> ids;
        for (const char* t : truth) ids.push_back(*s.find_label(t));
        x.truth = GroundTruth::label_set(ids);
        return x;
    };
    const std::vector<ScoredSample> data{sample({"Shirt"}, {"Shirt"}), sample({"Tin"}, {}),
                                         sample({}, {"Food"}), sample({"Glass"}, {"Glass"})};
    const auto r = error_rate(s, data, EngineConfig{});
    EXPECT_EQ(r.samples, 4u);
    EXPECT_EQ(r.critical, 2u);
    EXPECT_DOUBLE_EQ(r.incorrect_decision_rate, 0.5);
    EXPECT_EQ(r.count(ErrorType::Type2), 1u);
    EXPECT_EQ(r.count(ErrorType::Type3), 1u);
    EXPECT_EQ(r.count(ErrorType::Type1), 0u);
    try {
        error_rate(s, std::vector<ScoredSample>{}, EngineConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "EMPTY_DATASET");
    }
}
