// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dforge/loss.hpp"
#include "dforge/random_instances.hpp"
#include "loss_checks.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace dforge;
using oracle::S;

namespace {

// One single-label class per score, so class maxima equal the scores.
DecisionSummary singleton_classes(DecisionType t, std::size_t m, std::size_t extra = 0) {
    DecisionSummary s;
    s.app_id = "t";
    s.decision_type = t;
    for (std::size_t i = 0; i < m + extra; ++i) s.label_universe.push_back({i, "l" + std::to_string(i)});
    for (std::size_t i = 0; i < m; ++i) s.classes.push_back({"c" + std::to_string(i + 1), LabelSet{i}});
    return s;
}

DecisionSummary food_delivery() {
    return from_json(R"({"app_id": "f", "api_kind": "ScalarScore", "decision_type": "MultiChoiceAppOrder",
        "classes": [{"range": {"lower": 0.6, "upper": 1}}, {"range": {"lower": 0.3, "upper": 0.6}},
                    {"range": {"lower": -1, "upper": 0.3}}]})");
}

LossParams with_k(double k) {
    LossParams p;
    p.k = k;
    return p;
}

GroundTruth gt(std::initializer_list<LabelId> ids) { return GroundTruth::label_set(ids); }

std::string error_code(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return "";
}

}  // namespace

TEST(Sigmoid, Identities) {
    for (double k : {0.5, 1.0, 10.0, 200.0}) {
        EXPECT_DOUBLE_EQ(sigmoid(0.0, k), 0.5);
        EXPECT_DOUBLE_EQ(sigmoid_derivative(0.0, k), k / 4.0);
    }
    EXPECT_NEAR(sigmoid(0.3, 10.0), 0.95257412682243, 1e-12);
    EXPECT_NEAR(sigmoid(0.3, 10.0), 1.0 / (1.0 + std::exp(-3.0)), 1e-15);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int i = 0; i < 200; ++i) {
        const double x = u(rng);
        EXPECT_NEAR(sigmoid(x, 7.0) + sigmoid(-x, 7.0), 1.0, 1e-15);
        EXPECT_LT(sigmoid(x, 7.0), sigmoid(x + 0.01, 7.0));
    }
    EXPECT_EQ(sigmoid(-1e6, 10.0), 0.0);
    EXPECT_EQ(sigmoid(1e6, 10.0), 1.0);
    EXPECT_FALSE(std::isnan(sigmoid_derivative(1e6, 10.0)));
}

TEST(TrueFalse, StepLimitExamples) {
    const auto s = singleton_classes(DecisionType::TrueFalse, 1, 1);
    const std::vector<double> x{0.9, 0.1};
    EXPECT_LT(loss_true_false(s, x, make_context(s, gt({0})), with_k(50)).value, 0.02);
    EXPECT_GT(loss_true_false(s, x, make_context(s, gt({1})), with_k(50)).value, 0.98);
    const auto r = loss_true_false(s, x, make_context(s, gt({0})), with_k(10));
    EXPECT_DOUBLE_EQ(r.value, S(0.5 - 0.9, 10));
    EXPECT_EQ(r.gradient[1], 0.0);
}

TEST(MultiSelect, StepLimitAndDecomposition) {
    const auto s = singleton_classes(DecisionType::MultiSelect, 3);
    const std::vector<double> good{0.9, 0.1, 0.95};
    const auto truth = gt({0, 2});
    EXPECT_LT(loss_multi_select(s, good, make_context(s, truth), with_k(50)).value, 0.02 * 3);
    const std::vector<double> miss{0.9, 0.1, 0.05};
    const auto r = loss_multi_select(s, miss, make_context(s, truth), with_k(50));
    EXPECT_GT(r.terms[2].value, 0.98);

    // a two-class loss equals the sum of its one-class restrictions
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        auto two = random::label_summary(rng, DecisionType::MultiSelect, 2, 6);
        const auto g = random::label_truth(rng, two);
        std::vector<double> x(6);
        for (auto& v : x) v = u(rng);
        double parts = 0.0;
        for (std::size_t c = 0; c < 2; ++c) {
            auto one = two;
            one.classes = {two.classes[c]};
            parts += loss_multi_select(one, x, make_context(one, g), LossParams{}).value;
        }
        EXPECT_NEAR(loss_multi_select(two, x, make_context(two, g), LossParams{}).value, parts, 1e-12);
    }
}

TEST(AppOrder, HandEvaluatedExample) {
    const auto s = singleton_classes(DecisionType::MultiChoiceAppOrder, 3);
    const std::vector<double> x{0.8, 0.7, 0.4};
    for (double k : {1.0, 10.0, 50.0}) {
        const auto r = loss_app_order(s, x, make_context(s, gt({1})), with_k(k));
        EXPECT_NEAR(r.value, S(0.7 - 0.5, k) + S(0.5 - 0.7, k) + S(0.8 - 0.5, k), 1e-12);
        ASSERT_EQ(r.terms.size(), 3u);
        EXPECT_TRUE(r.terms[0].penalizes.has(ErrorType::Type1));
        EXPECT_TRUE(r.terms[1].penalizes.has(ErrorType::Type2));
        EXPECT_TRUE(r.terms[2].penalizes.has(ErrorType::Type3));
    }
}

TEST(AppOrder, StepLimitExamples) {
    const auto s = singleton_classes(DecisionType::MultiChoiceAppOrder, 3);
    const std::vector<double> x{0.9, 0.1, 0.05};
    EXPECT_LT(loss_app_order(s, x, make_context(s, gt({0})), with_k(50)).value, 0.05);
    const std::vector<double> quiet{0.2, 0.1, 0.05};
    EXPECT_LT(loss_app_order(s, quiet, make_context(s, gt({})), with_k(50)).value, 0.02);
}

TEST(AppOrderPerClass, WorkedExampleIsExact) {
    const auto s = singleton_classes(DecisionType::MultiChoiceAppOrder, 3);
    const std::vector<double> x{0.8, 0.7, 0.4};
    for (double k : {0.1, 1.0, 10.0, 50.0, 200.0}) {
        const auto r = loss_app_order_perclass(s, x, make_context(s, gt({1})), with_k(k));
        ASSERT_EQ(r.terms.size(), 3u);
        EXPECT_EQ(r.terms[0].argument, 0.8 - 0.5);
        EXPECT_EQ(r.terms[1].argument, 0.8 - 0.7);
        EXPECT_EQ(r.terms[2].argument, 0.4 - 0.5);
        EXPECT_NEAR(r.value, S(0.8 - 0.5, k) + S(0.8 - 0.7, k) + S(0.4 - 0.5, k), 1e-12);
    }
}

TEST(AppOrderPerClass, SingleClassReducesToTrueFalse) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        auto s = random::label_summary(rng, DecisionType::MultiChoiceAppOrder, 1, 5);
        auto tf = s;
        tf.decision_type = DecisionType::TrueFalse;
        const auto g = i % 2 ? random::label_truth(rng, s) : gt({});
        std::vector<double> x(5);
        for (auto& v : x) v = u(rng);
        EXPECT_NEAR(loss_app_order_perclass(s, x, make_context(s, g), LossParams{}).value,
                    loss_true_false(tf, x, make_context(tf, g), LossParams{}).value, 1e-15);
    }
}

TEST(AppOrderPerClass, StepLimitAgreesWithCanonical) {
    std::mt19937_64 rng(5);
    const auto p = with_k(200);
    for (int i = 0; i < 500; ++i) {
        const auto s = random::label_summary(rng, DecisionType::MultiChoiceAppOrder, 1 + static_cast<std::size_t>(i % 3), 7);
        const auto g = i % 4 ? random::label_truth(rng, s) : gt({});
        const auto x = checks::margin_scores(rng, 7, p.theta);
        const auto ctx = make_context(s, g);
        const auto a = loss_app_order(s, x, ctx, p);
        const auto b = loss_app_order_perclass(s, x, ctx, p);
        const auto ranked = oracle::filtered_ranking(x, p.theta);
        const bool correct = !oracle::taxonomy(s, ranked, g.labels).any();
        const bool a_low = a.value <= 0.02 * static_cast<double>(a.terms.size());
        const bool b_low = b.value <= 0.02 * static_cast<double>(b.terms.size());
        EXPECT_EQ(a_low, correct);
        // the per-class form also penalizes lower-priority classes that fire
        if (b_low) { EXPECT_TRUE(a_low); }
        const auto fired = oracle::classes_hit(s, {ranked.begin(), ranked.end()});
        const bool lower_quiet = ctx.correct_class == 0 || fired.empty() || *fired.rbegin() <= ctx.correct_class;
        if (correct && lower_quiet) { EXPECT_TRUE(b_low); }
    }
}

TEST(ApiOrder, Examples) {
    // c1 = {l0}, c2 = {l1}; ground truth in c1, so W+ = {l0} and W- = {l1}
    const auto s = singleton_classes(DecisionType::MultiChoiceApiOrder, 2);
    EXPECT_LT(loss_api_order(s, std::vector<double>{0.9, 0.3}, make_context(s, gt({0})), with_k(50)).value, 0.02);
    EXPECT_GT(loss_api_order(s, std::vector<double>{0.6, 0.8}, make_context(s, gt({0})), with_k(50)).value, 0.98);
    const auto r = loss_api_order(s, std::vector<double>{0.7, 0.3}, make_context(s, gt({})), with_k(10));
    EXPECT_NEAR(r.value, S(0.7 - 0.5, 10), 1e-15);
}

TEST(ValueRange, FoodDeliveryTerms) {
    const auto s = food_delivery();
    const auto ctx = make_context(s, GroundTruth::scalar_score(0.8));
    const auto r = loss_value_range(s, 0.8, ctx, with_k(50));
    ASSERT_EQ(r.terms.size(), 6u);
    EXPECT_LT(r.terms[0].value, 0.02);
    EXPECT_LT(r.terms[1].value, 0.02);
    const auto inside_wrong = loss_value_range(s, 0.45, ctx, with_k(50));
    EXPECT_GT(inside_wrong.terms[2].value, 0.98);
    EXPECT_GT(inside_wrong.terms[3].value, 0.98);
    for (const auto& t : r.terms) EXPECT_FALSE(t.penalizes.has(ErrorType::Type2));
}

TEST(Bce, PerfectPredictionAndWeights) {
    const std::vector<double> targets{1, 0, 1, 0};
    const std::vector<double> perfect{1.0, 0.0, 1.0, 0.0};
    EXPECT_LT(loss_bce(perfect, targets).value, 1e-6);
    const std::vector<double> x{0.7, 0.2, 0.4, 0.9};
    const double base = loss_bce(x, targets).value;
    double oracle_bce = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
        oracle_bce -= (targets[i] * std::log(x[i]) + (1 - targets[i]) * std::log(1 - x[i])) / 4.0;
    EXPECT_NEAR(base, oracle_bce, 1e-15);

    const auto s = singleton_classes(DecisionType::MultiSelect, 2, 2);
    LossParams p;
    p.A = 0.5;
    EXPECT_DOUBLE_EQ(loss_weighted_bce(x, targets, make_context(s, gt({0})), p).value, 2.0 * base);
    EXPECT_DOUBLE_EQ(loss_weighted_bce(x, targets, make_context(s, gt({3})), p).value, 0.5 * base);
    p.A = 0.0;  // clamped to 1e-3
    EXPECT_DOUBLE_EQ(loss_weighted_bce(x, targets, make_context(s, gt({0})), p).value, 1000.0 * base);
}

TEST(Losses, WrongDecisionType) {
    const auto s = singleton_classes(DecisionType::MultiSelect, 2);
    const std::vector<double> x{0.5, 0.5};
    const auto ctx = make_context(s, gt({0}));
    EXPECT_EQ(error_code([&] { loss_true_false(s, x, ctx, {}); }), "WRONG_DECISION_TYPE");
    EXPECT_EQ(error_code([&] { loss_app_order(s, x, ctx, {}); }), "WRONG_DECISION_TYPE");
    EXPECT_EQ(error_code([&] { loss_api_order(s, x, ctx, {}); }), "WRONG_DECISION_TYPE");
    EXPECT_EQ(error_code([&] { loss_value_range(s, 0.1, ctx, {}); }), "WRONG_DECISION_TYPE");
    EXPECT_EQ(error_code([&] { loss_multi_select(food_delivery(), x, ctx, {}); }), "WRONG_DECISION_TYPE");
}

TEST(Gradients, MatchCentralDifferences) {
    std::mt19937_64 rng(7);
    for (const auto& op : checks::all_loss_ops()) {
        const auto sweep = checks::gradient_sweep(op, rng, 100, 10.0);
        EXPECT_EQ(sweep.instances, 100u);
        EXPECT_LE(sweep.max_rel_error, 1e-4) << op.name;
    }
}

TEST(Gradients, FlowOnlyToClassLabels) {
    std::mt19937_64 rng(8);
    const DecisionType types[] = {DecisionType::TrueFalse, DecisionType::MultiSelect,
                                  DecisionType::MultiChoiceAppOrder, DecisionType::MultiChoiceApiOrder};
    for (int i = 0; i < 400; ++i) {
        auto s = random::label_summary(rng, types[i % 4], 1 + static_cast<std::size_t>(i % 3), 8);
        const auto g = random::label_truth(rng, s);
        const auto x = random::separated_scores(rng, 8, 0.5);
        const auto r = decision_loss(s, x, make_context(s, g), LossParams{});
        const auto used = s.all_class_labels();
        for (LabelId l = 0; l < 8; ++l)
            if (std::find(used.begin(), used.end(), l) == used.end()) { EXPECT_EQ(r.gradient[l], 0.0); }
        EXPECT_GE(r.value, 0.0);
        EXPECT_LE(r.value, static_cast<double>(r.terms.size()));
    }
}

TEST(Gradients, TiesRouteToLowestId) {
    auto s = singleton_classes(DecisionType::TrueFalse, 1, 2);
    s.classes[0].kind = LabelSet{2, 0};
    const std::vector<double> x{0.4, 0.1, 0.4};
    const auto r = loss_true_false(s, x, make_context(s, gt({0})), LossParams{});
    EXPECT_NE(r.gradient[0], 0.0);
    EXPECT_EQ(r.gradient[2], 0.0);
}

TEST(GradCheck, DetectsTiesAndPassesSmoothPoints) {
    auto s = singleton_classes(DecisionType::TrueFalse, 1, 1);
    s.classes[0].kind = LabelSet{0, 1};
    const auto ctx = make_context(s, gt({0}));
    auto f = [&](std::span<const double> v) { return loss_true_false(s, v, ctx, LossParams{}); };
    EXPECT_EQ(error_code([&] { grad_check(f, {0.4, 0.4}); }), "TIE_DETECTED");
    EXPECT_LE(grad_check(f, {0.4, 0.2}).max_rel_error, 1e-6);
}

TEST(StepLimit, RandomizedPerDecisionType) {
    std::mt19937_64 rng(9);
    const auto p = with_k(200);
    for (auto t : {DecisionType::TrueFalse, DecisionType::MultiSelect, DecisionType::MultiChoiceAppOrder,
                   DecisionType::MultiChoiceApiOrder}) {
        std::size_t correct = 0;
        for (int i = 0; i < 300; ++i) {
            const auto s = random::label_summary(rng, t, 1 + static_cast<std::size_t>(i % 3), 8);
            const auto g = i % 5 == 0 ? gt({}) : random::label_truth(rng, s);
            const auto o = checks::step_limit(s, checks::margin_scores(rng, 8, p.theta), g, p);
            EXPECT_TRUE(o.ok) << to_string(t) << ": " << o.detail;
            correct += o.correct;
        }
        EXPECT_GT(correct, 10u);
        EXPECT_LT(correct, 290u);
    }
}
