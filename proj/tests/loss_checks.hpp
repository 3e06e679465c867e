// SPDX-License-Identifier: Apache-2.0
// Shared drivers for the loss properties: finite-difference sweeps and the
// step-limit check. Expected outcomes come from oracles.hpp.
#pragma once

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dforge/loss.hpp"
#include "dforge/random_instances.hpp"
#include "oracles.hpp"

namespace dforge::checks {

struct LossOp {
    std::string name;
    std::optional<DecisionType> type;  // nullopt: value ranges
    std::function<LossResult(const DecisionSummary&, std::span<const double>, const GroundTruth&, const LossParams&)> fn;
};

inline std::vector<LossOp> all_loss_ops() {
    auto ctx = [](const DecisionSummary& s, const GroundTruth& g) { return make_context(s, g); };
    return {
        {"true_false", DecisionType::TrueFalse,
         [=](auto& s, auto x, auto& g, auto& p) { return loss_true_false(s, x, ctx(s, g), p); }},
        {"multi_select", DecisionType::MultiSelect,
         [=](auto& s, auto x, auto& g, auto& p) { return loss_multi_select(s, x, ctx(s, g), p); }},
        {"app_order", DecisionType::MultiChoiceAppOrder,
         [=](auto& s, auto x, auto& g, auto& p) { return loss_app_order(s, x, ctx(s, g), p); }},
        {"app_order_perclass", DecisionType::MultiChoiceAppOrder,
         [=](auto& s, auto x, auto& g, auto& p) { return loss_app_order_perclass(s, x, ctx(s, g), p); }},
        {"api_order", DecisionType::MultiChoiceApiOrder,
         [=](auto& s, auto x, auto& g, auto& p) { return loss_api_order(s, x, ctx(s, g), p); }},
        {"value_range", std::nullopt,
         [=](auto& s, auto x, auto& g, auto& p) { return loss_value_range(s, x[0], ctx(s, g), p); }},
        {"bce", DecisionType::MultiSelect,
         [](auto& s, auto x, auto& g, auto&) { return loss_bce(x, binary_targets(g, s.label_universe.size())); }},
        {"weighted_bce", DecisionType::MultiSelect,
         [=](auto& s, auto x, auto& g, auto& p) {
             return loss_weighted_bce(x, binary_targets(g, s.label_universe.size()), ctx(s, g), p);
         }},
    };
}

struct GradSweep {
    std::size_t instances = 0;
    double max_rel_error = 0.0;
};

/// Compares analytic gradients with central differences on random instances.
/// Scores are kept 1e-3 apart and 1e-3 from theta, far above the step h, so
/// no max or clamp switches branch inside the stencil.
inline GradSweep gradient_sweep(const LossOp& op, std::mt19937_64& rng, std::size_t n, double k, double h = 1e-5) {
    GradSweep out;
    std::uniform_int_distribution<std::size_t> m_d(1, 3), extra_d(0, 4);
    std::uniform_real_distribution<double> u(-1.0, 1.0), a_d(0.05, 0.95);
    for (; out.instances < n; ++out.instances) {
        DecisionSummary s;
        GroundTruth g;
        std::vector<double> x;
        LossParams p;
        p.k = k;
        p.A = a_d(rng);
        if (op.type) {
            const std::size_t m = m_d(rng);
            s = random::label_summary(rng, *op.type, m, m + extra_d(rng) + 1);
            g = out.instances % 5 == 0 ? GroundTruth::label_set({}) : random::label_truth(rng, s);
            x = random::separated_scores(rng, s.label_universe.size(), p.theta);
        } else {
            s = random::range_summary(rng, m_d(rng));
            g = GroundTruth::scalar_score(u(rng));
            x = {1.2 * u(rng)};
        }
        const auto analytic = op.fn(s, x, g, p).gradient;
        const auto numeric = oracle::numeric_gradient(
            [&](const std::vector<double>& v) { return op.fn(s, v, g, p).value; }, x, h);
        out.max_rel_error = std::max(out.max_rel_error, oracle::max_relative_error(analytic, numeric));
    }
    return out;
}

/// Scores at least 0.2 from theta; the ones above theta are distinct grid
/// points 0.02 apart so score-vs-score comparisons also have a margin.
inline std::vector<double> margin_scores(std::mt19937_64& rng, std::size_t n, double theta) {
    std::vector<double> high;
    for (double v = theta + 0.2; v <= 1.0 + 1e-9; v += 0.02) high.push_back(v);
    std::shuffle(high.begin(), high.end(), rng);
    std::uniform_real_distribution<double> low(0.0, theta - 0.2);
    std::bernoulli_distribution above(0.4);
    std::vector<double> out(n);
    std::size_t next = 0;
    for (auto& v : out) v = above(rng) && next < high.size() ? high[next++] : low(rng);
    return out;
}

struct StepOutcome {
    bool correct = false;
    bool ok = true;
    std::string detail;
};

/// Step-limit semantics on one instance: the loss is near zero exactly when
/// the decision is correct, and every error condition the oracle sees drives
/// the matching term to at least 0.98.
inline StepOutcome step_limit(const DecisionSummary& s, const std::vector<double>& scores, const GroundTruth& gt,
                              const LossParams& p) {
    StepOutcome o;
    const auto ranked = oracle::filtered_ranking(scores, p.theta);
    o.correct = !oracle::taxonomy(s, ranked, gt.labels).any();
    const LossResult L = decision_loss(s, scores, make_context(s, gt), p);
    const double bound = 0.02 * static_cast<double>(L.terms.size());
    if (o.correct != (L.value <= bound)) {
        o.ok = false;
        o.detail = "loss " + std::to_string(L.value) + " vs bound " + std::to_string(bound) +
                   (o.correct ? " on a correct decision" : " on an incorrect decision");
        return o;
    }
    auto require = [&](ErrorType t, std::optional<std::size_t> cls, const char* what) {
        double best = 0.0;
        for (const auto& term : L.terms)
            if (term.penalizes.has(t) && (!cls || term.class_index == *cls)) best = std::max(best, term.value);
        if (best < 0.98) {
            o.ok = false;
            o.detail = std::string(what) + ": strongest matching term " + std::to_string(best);
        }
    };

    const std::set<LabelId> out(ranked.begin(), ranked.end()), g(gt.labels.begin(), gt.labels.end());
    const auto truth = oracle::classes_hit(s, g);
    const auto fired = oracle::classes_hit(s, out);
    const std::size_t m = s.classes.size();
    switch (s.decision_type) {
        case DecisionType::TrueFalse:
        case DecisionType::MultiSelect:
            for (std::size_t c = 1; c <= m; ++c) {
                if (truth.count(c) && !fired.count(c)) require(ErrorType::Type2, c, "selected class missing");
                if (!truth.count(c) && fired.count(c)) require(ErrorType::Type3, c, "unselected class fired");
            }
            break;
        case DecisionType::MultiChoiceAppOrder: {
            if (truth.empty()) {
                if (!fired.empty()) require(ErrorType::Type3, std::nullopt, "class fired on Others");
                break;
            }
            const std::size_t chat = *truth.begin();
            const bool higher_fired = !fired.empty() && *fired.begin() < chat;
            if (fired.count(chat) && higher_fired) require(ErrorType::Type1, chat, "correct class shadowed");
            if (!fired.count(chat)) require(ErrorType::Type2, chat, "correct class missing");
            for (std::size_t c = 1; c < chat; ++c)
                if (fired.count(c)) require(ErrorType::Type3, c, "higher class fired");
            break;
        }
        case DecisionType::MultiChoiceApiOrder: {
            std::size_t got = 0;
            for (LabelId l : ranked) {
                for (std::size_t c = 1; c <= m && !got; ++c)
                    if (oracle::class_hits(s, c, {l})) got = c;
                if (got) break;
            }
            if (got && !truth.count(got)) require(ErrorType::Type3, std::nullopt, "wrong class ranked first");
            if (!got && !truth.empty()) require(ErrorType::Type2, std::nullopt, "no acceptable class fired");
            break;
        }
    }
    return o;
}

}  // namespace dforge::checks
