// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "engine.hpp"
#include "error.hpp"
#include "summary.hpp"
#include "taxonomy.hpp"

namespace dforge {

struct LossParams {
    double theta = 0.5;
    double k = 10.0;
    double A = 0.5;  // fraction of samples whose ground truth hits some class

    double clamped_A() const { return std::clamp(A, 1e-3, 1.0 - 1e-3); }
};

/// S(x) = 1 / (1 + exp(-k x)).
inline double sigmoid(double x, double k) {
    const double z = k * x;
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// dS/dx = k S (1 - S).
inline double sigmoid_derivative(double x, double k) {
    const double s = sigmoid(x, k);
    return k * s * (1.0 - s);
}

/// Per-sample quantities derived from the ground truth.
struct SampleContext {
    bool y = false;                  // ground truth hits some class
    std::size_t correct_class = 0;   // first correct class (1-based), 0 for Others
    std::vector<bool> selected;      // per class: class intersects the ground truth
    std::vector<LabelId> w_plus;     // labels of classes hitting the ground truth
    std::vector<LabelId> w_minus;    // remaining class labels
    double target = 0.0;             // scalar ground truth
};

inline SampleContext make_context(const DecisionSummary& s, const GroundTruth& gt) {
    SampleContext ctx;
    const std::size_t m = s.classes.size();
    ctx.selected.assign(m, false);
    if (s.api_kind == ApiKind::ScalarScore) {
        ctx.target = gt.scalar;
        for (std::size_t c = 0; c < m; ++c) {
            if (s.classes[c].range().contains(gt.scalar)) {
                ctx.selected[c] = true;
                ctx.correct_class = c + 1;
                ctx.y = true;
                break;
            }
        }
        return ctx;
    }
    std::vector<bool> plus(s.label_universe.size(), false);
    for (std::size_t c = 0; c < m; ++c) {
        if (!detail::intersects(s.classes[c].labels(), gt.labels)) continue;
        ctx.selected[c] = true;
        ctx.y = true;
        if (ctx.correct_class == 0) ctx.correct_class = c + 1;
        for (LabelId id : s.classes[c].labels()) plus[id] = true;
    }
    for (LabelId id : s.all_class_labels()) (plus[id] ? ctx.w_plus : ctx.w_minus).push_back(id);
    return ctx;
}

struct LossTerm {
    ErrorTypes penalizes;
    std::size_t class_index = 0;  // 0 when the term spans several classes
    double argument = 0.0;        // sigmoid input before scaling by k
    double value = 0.0;
};

struct LossResult {
    double value = 0.0;
    std::vector<double> gradient;
    std::vector<LossTerm> terms;
    // Which max/min/clamp branches were taken; changes under perturbation mean a tie.
    std::vector<std::int64_t> route;
};

namespace detail {

struct MaxOf {
    bool empty = true;
    double value = 0.0;
    LabelId arg = 0;
};

inline MaxOf max_over(std::span<const double> scores, std::span<const LabelId> ids) {
    MaxOf r;
    for (LabelId id : ids) {
        const double v = scores[id];
        if (r.empty || v > r.value || (v == r.value && id < r.arg)) {
            r.empty = false;
            r.value = v;
            r.arg = id;
        }
    }
    return r;
}

inline std::vector<LabelId> union_of(const DecisionSummary& s, std::size_t first, std::size_t last) {
    std::vector<LabelId> out;
    for (std::size_t c = first; c < last; ++c)
        out.insert(out.end(), s.classes[c].labels().begin(), s.classes[c].labels().end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

class TermBuilder {
public:
    TermBuilder(std::size_t n, double k) : k_(k) { r_.gradient.assign(n, 0.0); }

    struct Grad {
        std::size_t index;
        double coeff;
    };

    void add(ErrorTypes types, std::size_t cls, double arg, std::initializer_list<Grad> grads) {
        const double v = sigmoid(arg, k_);
        const double d = sigmoid_derivative(arg, k_);
        r_.value += v;
        r_.terms.push_back({types, cls, arg, v});
        for (const auto& g : grads) r_.gradient[g.index] += d * g.coeff;
    }
    void route(std::int64_t v) { r_.route.push_back(v); }
    void route(const MaxOf& m) { r_.route.push_back(m.empty ? -1 : static_cast<std::int64_t>(m.arg)); }
    LossResult take() { return std::move(r_); }

private:
    double k_;
    LossResult r_;
};

inline void require_type(const DecisionSummary& s, DecisionType t, ApiKind kind, const char* op) {
    if (s.decision_type != t || s.api_kind != kind)
        throw Error("WRONG_DECISION_TYPE", std::string(op) + " does not apply to a " +
                                               std::string(to_string(s.api_kind)) + "/" +
                                               std::string(to_string(s.decision_type)) + " summary");
}

inline void require_scores(const DecisionSummary& s, std::span<const double> scores) {
    if (scores.size() < s.label_universe.size())
        throw Error("BAD_INPUT_DIM", "expected at least " + std::to_string(s.label_universe.size()) +
                                         " scores, got " + std::to_string(scores.size()));
}

}  // namespace detail

inline LossResult loss_true_false(const DecisionSummary& s, std::span<const double> scores,
                                  const SampleContext& ctx, const LossParams& p) {
    detail::require_type(s, DecisionType::TrueFalse, ApiKind::LabelScores, "loss_true_false");
    detail::require_scores(s, scores);
    if (s.classes.size() != 1) throw Error("WRONG_DECISION_TYPE", "loss_true_false needs exactly one class");
    detail::TermBuilder b(scores.size(), p.k);
    const auto p1 = detail::max_over(scores, s.classes[0].labels());
    b.route(p1);
    if (ctx.y)
        b.add({ErrorType::Type2}, 1, p.theta - p1.value, {{p1.arg, -1.0}});
    else
        b.add({ErrorType::Type3}, 1, p1.value - p.theta, {{p1.arg, 1.0}});
    return b.take();
}

inline LossResult loss_multi_select(const DecisionSummary& s, std::span<const double> scores,
                                    const SampleContext& ctx, const LossParams& p) {
    detail::require_type(s, DecisionType::MultiSelect, ApiKind::LabelScores, "loss_multi_select");
    detail::require_scores(s, scores);
    detail::TermBuilder b(scores.size(), p.k);
    for (std::size_t c = 0; c < s.classes.size(); ++c) {
        const auto pc = detail::max_over(scores, s.classes[c].labels());
        b.route(pc);
        if (pc.empty) continue;
        if (ctx.selected[c])
            b.add({ErrorType::Type2}, c + 1, p.theta - pc.value, {{pc.arg, -1.0}});
        else
            b.add({ErrorType::Type3}, c + 1, pc.value - p.theta, {{pc.arg, 1.0}});
    }
    return b.take();
}

/// Application-order multi-choice loss with one term per error type.
inline LossResult loss_app_order(const DecisionSummary& s, std::span<const double> scores,
                                 const SampleContext& ctx, const LossParams& p) {
    detail::require_type(s, DecisionType::MultiChoiceAppOrder, ApiKind::LabelScores, "loss_app_order");
    detail::require_scores(s, scores);
    detail::TermBuilder b(scores.size(), p.k);
    if (!ctx.y) {
        const auto all = s.all_class_labels();
        const auto pm = detail::max_over(scores, all);
        b.route(pm);
        if (!pm.empty) b.add({ErrorType::Type3}, 0, pm.value - p.theta, {{pm.arg, 1.0}});
        return b.take();
    }
    const std::size_t chat = ctx.correct_class;
    const auto pc = detail::max_over(scores, s.classes[chat - 1].labels());
    b.route(pc);
    const auto higher = detail::union_of(s, 0, chat - 1);
    const auto q = detail::max_over(scores, higher);
    b.route(q);
    if (!q.empty && !pc.empty) {
        const bool q_is_min = q.value <= pc.value;
        b.route(q_is_min ? 1 : 0);
        const auto& mn = q_is_min ? q : pc;
        b.add({ErrorType::Type1}, chat, mn.value - p.theta, {{mn.arg, 1.0}});
    }
    if (!pc.empty) b.add({ErrorType::Type2}, chat, p.theta - pc.value, {{pc.arg, -1.0}});
    for (std::size_t c = 0; c + 1 < chat; ++c) {
        const auto m = detail::max_over(scores, s.classes[c].labels());
        b.route(m);
        if (!m.empty) b.add({ErrorType::Type3}, c + 1, m.value - p.theta, {{m.arg, 1.0}});
    }
    return b.take();
}

/// Per-class application-order loss: the correct class is pushed above
/// max(theta, best higher-priority maximum); every other class is pushed below theta.
inline LossResult loss_app_order_perclass(const DecisionSummary& s, std::span<const double> scores,
                                          const SampleContext& ctx, const LossParams& p) {
    detail::require_type(s, DecisionType::MultiChoiceAppOrder, ApiKind::LabelScores, "loss_app_order_perclass");
    detail::require_scores(s, scores);
    detail::TermBuilder b(scores.size(), p.k);
    const std::size_t chat = ctx.y ? ctx.correct_class : 0;
    std::vector<detail::MaxOf> maxima;
    for (const auto& c : s.classes) {
        maxima.push_back(detail::max_over(scores, c.labels()));
        b.route(maxima.back());
    }
    for (std::size_t j = 1; j <= maxima.size(); ++j) {
        const auto& mj = maxima[j - 1];
        if (mj.empty) continue;
        if (j != chat) {
            b.add({ErrorType::Type3}, j, mj.value - p.theta, {{mj.arg, 1.0}});
            continue;
        }
        const detail::MaxOf* alpha = nullptr;
        for (std::size_t h = 0; h + 1 < j; ++h) {
            const auto& mh = maxima[h];
            if (!mh.empty && mh.value > p.theta && (!alpha || mh.value > alpha->value)) alpha = &mh;
        }
        b.route(alpha ? static_cast<std::int64_t>(alpha->arg) : -2);
        if (alpha)
            b.add({ErrorType::Type1}, j, alpha->value - mj.value, {{alpha->arg, 1.0}, {mj.arg, -1.0}});
        else
            b.add({ErrorType::Type2}, j, p.theta - mj.value, {{mj.arg, -1.0}});
    }
    return b.take();
}

/// API-order multi-choice loss over the acceptable (W+) and remaining (W-) labels.
inline LossResult loss_api_order(const DecisionSummary& s, std::span<const double> scores,
                                 const SampleContext& ctx, const LossParams& p) {
    detail::require_type(s, DecisionType::MultiChoiceApiOrder, ApiKind::LabelScores, "loss_api_order");
    detail::require_scores(s, scores);
    detail::TermBuilder b(scores.size(), p.k);
    const auto pplus = detail::max_over(scores, ctx.w_plus);
    const auto pminus = detail::max_over(scores, ctx.w_minus);
    b.route(pplus);
    b.route(pminus);
    if (ctx.y) {
        if (pplus.empty) return b.take();
        const bool beaten = !pminus.empty && pminus.value > p.theta;
        b.route(beaten ? 1 : 0);
        if (beaten) {
            ErrorTypes types{ErrorType::Type3};
            types.insert(pplus.value >= p.theta ? ErrorType::Type1 : ErrorType::Type2);
            b.add(types, 0, pminus.value - pplus.value, {{pminus.arg, 1.0}, {pplus.arg, -1.0}});
        }
        else
            b.add({ErrorType::Type2}, 0, p.theta - pplus.value, {{pplus.arg, -1.0}});
    } else if (!pminus.empty) {
        b.add({ErrorType::Type3}, 0, pminus.value - p.theta, {{pminus.arg, 1.0}});
    }
    return b.take();
}

/// Value-range loss on a scalar output y. The gradient has one entry, dL/dy.
inline LossResult loss_value_range(const DecisionSummary& s, double y, const SampleContext& ctx,
                                   const LossParams& p) {
    detail::require_type(s, DecisionType::MultiChoiceAppOrder, ApiKind::ScalarScore, "loss_value_range");
    detail::TermBuilder b(1, p.k);
    for (std::size_t c = 1; c <= s.classes.size(); ++c) {
        const Range& r = s.classes[c - 1].range();
        if (c == ctx.correct_class) {
            b.add({ErrorType::Type1}, c, y - r.upper, {{0, 1.0}});
            b.add({ErrorType::Type1}, c, r.lower - y, {{0, -1.0}});
        } else {
            b.add({ErrorType::Type3}, c, r.upper - y, {{0, -1.0}});
            b.add({ErrorType::Type3}, c, y - r.lower, {{0, 1.0}});
        }
    }
    return b.take();
}

inline constexpr double kBceEps = 1e-7;

/// Mean binary cross-entropy over all labels; p is clamped to [1e-7, 1 - 1e-7].
inline LossResult loss_bce(std::span<const double> scores, std::span<const double> targets) {
    if (scores.size() != targets.size())
        throw Error("BAD_INPUT_DIM", "scores and targets differ in length");
    LossResult r;
    r.gradient.assign(scores.size(), 0.0);
    const double n = static_cast<double>(scores.size());
    if (scores.empty()) return r;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double raw = scores[i];
        const double q = std::clamp(raw, kBceEps, 1.0 - kBceEps);
        const bool clamped = q != raw;
        r.route.push_back(clamped ? 1 : 0);
        const double t = targets[i];
        r.value -= (t * std::log(q) + (1.0 - t) * std::log(1.0 - q)) / n;
        if (!clamped) r.gradient[i] = -(t / q - (1.0 - t) / (1.0 - q)) / n;
    }
    return r;
}

/// Multi-hot target vector of length n from a ground-truth label set.
inline std::vector<double> binary_targets(const GroundTruth& gt, std::size_t n) {
    std::vector<double> t(n, 0.0);
    for (LabelId id : gt.labels)
        if (id < n) t[id] = 1.0;
    return t;
}

/// BCE reweighted by 1/A for samples hitting a class and by A otherwise.
inline LossResult loss_weighted_bce(std::span<const double> scores, std::span<const double> targets,
                                    const SampleContext& ctx, const LossParams& p) {
    LossResult r = loss_bce(scores, targets);
    const double a = p.clamped_A();
    const double w = ctx.y ? 1.0 / a : a;
    r.value *= w;
    for (auto& g : r.gradient) g *= w;
    return r;
}

/// The decision-aware loss matching the summary's decision type.
inline LossResult decision_loss(const DecisionSummary& s, std::span<const double> scores,
                                const SampleContext& ctx, const LossParams& p) {
    if (s.api_kind == ApiKind::ScalarScore) {
        if (scores.size() != 1) throw Error("BAD_INPUT_DIM", "value-range loss takes one scalar");
        return loss_value_range(s, scores[0], ctx, p);
    }
    switch (s.decision_type) {
        case DecisionType::TrueFalse: return loss_true_false(s, scores, ctx, p);
        case DecisionType::MultiSelect: return loss_multi_select(s, scores, ctx, p);
        case DecisionType::MultiChoiceAppOrder: return loss_app_order(s, scores, ctx, p);
        case DecisionType::MultiChoiceApiOrder: return loss_api_order(s, scores, ctx, p);
    }
    throw Error("WRONG_DECISION_TYPE", "unknown decision type");
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_coordinate = 0;
};

/// Central-difference check of an analytic gradient. `f` maps a point to a
/// LossResult. Throws TIE_DETECTED when any coordinate moved by 10h changes
/// the branch route, since the loss is not differentiable there.
template <class F>
GradCheckResult grad_check(F&& f, std::vector<double> x, double h = 1e-5) {
    const LossResult base = f(std::span<const double>(x));
    if (base.gradient.size() != x.size())
        throw Error("BAD_INPUT_DIM", "gradient length differs from input length");
    GradCheckResult out;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        for (double step : {10.0 * h, -10.0 * h}) {
            x[i] = xi + step;
            if (f(std::span<const double>(x)).route != base.route)
                throw Error("TIE_DETECTED", "route changes near coordinate " + std::to_string(i));
        }
        x[i] = xi + h;
        const double up = f(std::span<const double>(x)).value;
        x[i] = xi - h;
        const double down = f(std::span<const double>(x)).value;
        x[i] = xi;
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = base.gradient[i];
        const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
        if (rel > out.max_rel_error) {
            out.max_rel_error = rel;
            out.worst_coordinate = i;
        }
    }
    return out;
}

}  // namespace dforge
