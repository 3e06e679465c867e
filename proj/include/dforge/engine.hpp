// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "summary.hpp"

namespace dforge {

struct RankedLabel {
    LabelId id = 0;
    double score = 0.0;
    friend bool operator==(const RankedLabel&, const RankedLabel&) = default;
};

/// Thresholded API output: ranked labels for label APIs, a score in [-1, 1] otherwise.
struct ApiOutput {
    ApiKind kind = ApiKind::LabelScores;
    std::vector<RankedLabel> labels;
    double scalar = 0.0;

    static ApiOutput scalar_score(double y) { return {ApiKind::ScalarScore, {}, y}; }
    static ApiOutput ranked(std::vector<RankedLabel> labels) {
        return {ApiKind::LabelScores, std::move(labels), 0.0};
    }
};

struct GroundTruth {
    ApiKind kind = ApiKind::LabelScores;
    std::vector<LabelId> labels;  // sorted, unique
    double scalar = 0.0;

    static GroundTruth label_set(std::vector<LabelId> ids) {
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        return {ApiKind::LabelScores, std::move(ids), 0.0};
    }
    static GroundTruth scalar_score(double g) { return {ApiKind::ScalarScore, {}, g}; }

    bool contains(LabelId id) const { return std::binary_search(labels.begin(), labels.end(), id); }
};

// Sorted 1-based class indices; empty means the Others branch. With any_of
// set the decision is satisfied by any single listed class (API-order
// ground truth).
struct Decision {
    std::vector<std::size_t> classes;
    bool any_of = false;

    bool is_others() const { return classes.empty(); }
    bool contains(std::size_t c) const { return std::binary_search(classes.begin(), classes.end(), c); }
    friend bool operator==(const Decision&, const Decision&) = default;
};

struct CheckRecord {
    std::size_t class_index = 0;
    bool matched = false;
    std::optional<LabelId> label;  // set for API-order checks
    friend bool operator==(const CheckRecord&, const CheckRecord&) = default;
};

/// Full unbroken check sequence. Positions <= break_position count as
/// before the break, including the breaking check itself.
struct DecisionTrace {
    std::vector<CheckRecord> checks;
    std::optional<std::size_t> break_position;

    bool before_break(std::size_t pos) const { return !break_position || pos <= *break_position; }
};

struct DecisionResult {
    Decision decision;
    DecisionTrace trace;
};

inline ApiOutput api_output_from_scores(std::span<const double> scores, const EngineConfig& cfg) {
    ApiOutput out;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double s = scores[i];
        if (!(s >= 0.0 && s <= 1.0))
            throw Error("SCORE_OUT_OF_RANGE", "score " + std::to_string(s) + " at label " + std::to_string(i));
        if (s >= cfg.theta) out.labels.push_back({i, s});
    }
    std::stable_sort(out.labels.begin(), out.labels.end(),
                     [](const RankedLabel& a, const RankedLabel& b) { return a.score > b.score; });
    return out;
}

namespace detail {

inline bool intersects(const LabelSet& cls, const std::vector<LabelId>& sorted_ids) {
    return std::any_of(cls.begin(), cls.end(), [&](LabelId id) {
        return std::binary_search(sorted_ids.begin(), sorted_ids.end(), id);
    });
}

inline bool in_class(const LabelSet& cls, LabelId id) {
    return std::find(cls.begin(), cls.end(), id) != cls.end();
}

inline void check_kind(const DecisionSummary& s, ApiKind k) {
    if (s.api_kind != k)
        throw Error("KIND_MISMATCH", "summary expects " + std::string(to_string(s.api_kind)) +
                                         " but input is " + std::string(to_string(k)));
}

inline std::vector<LabelId> output_ids(const ApiOutput& o) {
    std::vector<LabelId> ids;
    for (const auto& r : o.labels) ids.push_back(r.id);
    std::sort(ids.begin(), ids.end());
    return ids;
}

}  // namespace detail

inline DecisionResult decide(const DecisionSummary& s, const ApiOutput& out) {
    detail::check_kind(s, out.kind);
    DecisionResult r;
    auto& checks = r.trace.checks;
    const std::size_t m = s.classes.size();

    if (s.api_kind == ApiKind::ScalarScore) {
        for (std::size_t c = 1; c <= m; ++c) {
            const bool hit = s.classes[c - 1].range().contains(out.scalar);
            checks.push_back({c, hit, std::nullopt});
            if (hit && !r.trace.break_position) r.trace.break_position = checks.size() - 1;
        }
        if (r.trace.break_position) r.decision.classes = {checks[*r.trace.break_position].class_index};
        return r;
    }

    const auto ids = detail::output_ids(out);
    switch (s.decision_type) {
        case DecisionType::TrueFalse:
        case DecisionType::MultiSelect:
            for (std::size_t c = 1; c <= m; ++c) {
                const bool hit = detail::intersects(s.classes[c - 1].labels(), ids);
                checks.push_back({c, hit, std::nullopt});
                if (hit) r.decision.classes.push_back(c);
            }
            break;
        case DecisionType::MultiChoiceAppOrder:
            for (std::size_t c = 1; c <= m; ++c) {
                const bool hit = detail::intersects(s.classes[c - 1].labels(), ids);
                checks.push_back({c, hit, std::nullopt});
                if (hit && !r.trace.break_position) r.trace.break_position = checks.size() - 1;
            }
            break;
        case DecisionType::MultiChoiceApiOrder:
            for (const auto& lbl : out.labels) {
                for (std::size_t c = 1; c <= m; ++c) {
                    const bool hit = detail::in_class(s.classes[c - 1].labels(), lbl.id);
                    checks.push_back({c, hit, lbl.id});
                    if (hit && !r.trace.break_position) r.trace.break_position = checks.size() - 1;
                }
            }
            break;
    }
    if (r.trace.break_position) r.decision.classes = {checks[*r.trace.break_position].class_index};
    return r;
}

/// Re-derives the decision from a trace alone.
inline Decision replay(const DecisionSummary& s, const DecisionTrace& t) {
    Decision d;
    if (s.api_kind == ApiKind::LabelScores &&
        (s.decision_type == DecisionType::TrueFalse || s.decision_type == DecisionType::MultiSelect)) {
        for (const auto& c : t.checks)
            if (c.matched) d.classes.push_back(c.class_index);
        std::sort(d.classes.begin(), d.classes.end());
        d.classes.erase(std::unique(d.classes.begin(), d.classes.end()), d.classes.end());
        return d;
    }
    if (t.break_position) d.classes = {t.checks[*t.break_position].class_index};
    return d;
}

inline Decision ground_truth_decision(const DecisionSummary& s, const GroundTruth& gt) {
    detail::check_kind(s, gt.kind);
    Decision d;
    const std::size_t m = s.classes.size();
    if (s.api_kind == ApiKind::ScalarScore) {
        for (std::size_t c = 1; c <= m; ++c) {
            if (s.classes[c - 1].range().contains(gt.scalar)) {
                d.classes = {c};
                break;
            }
        }
        return d;
    }
    for (std::size_t c = 1; c <= m; ++c) {
        if (!detail::intersects(s.classes[c - 1].labels(), gt.labels)) continue;
        d.classes.push_back(c);
        if (s.decision_type == DecisionType::MultiChoiceAppOrder) break;
    }
    d.any_of = s.decision_type == DecisionType::MultiChoiceApiOrder;
    return d;
}

inline bool decision_matches(const Decision& actual, const Decision& truth) {
    if (truth.any_of) {
        if (truth.is_others()) return actual.is_others();
        return actual.classes.size() == 1 && truth.contains(actual.classes.front());
    }
    return actual.classes == truth.classes;
}

inline bool is_correct(const DecisionSummary& s, const ApiOutput& out, const GroundTruth& gt) {
    return decision_matches(decide(s, out).decision, ground_truth_decision(s, gt));
}

}  // namespace dforge
