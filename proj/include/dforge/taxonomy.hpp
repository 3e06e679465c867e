// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "engine.hpp"

namespace dforge {

enum class ErrorType : std::uint8_t { Type1 = 1, Type2 = 2, Type3 = 4 };

inline std::string_view to_string(ErrorType t) {
    switch (t) {
        case ErrorType::Type1: return "Type1";
        case ErrorType::Type2: return "Type2";
        case ErrorType::Type3: return "Type3";
    }
    return "?";
}

/// Small bit set over ErrorType.
class ErrorTypes {
public:
    constexpr ErrorTypes() = default;
    constexpr ErrorTypes(std::initializer_list<ErrorType> ts) {
        for (auto t : ts) insert(t);
    }
    constexpr void insert(ErrorType t) { bits_ |= static_cast<std::uint8_t>(t); }
    constexpr bool has(ErrorType t) const { return bits_ & static_cast<std::uint8_t>(t); }
    constexpr bool empty() const { return bits_ == 0; }
    constexpr std::uint8_t bits() const { return bits_; }
    std::vector<ErrorType> list() const {
        std::vector<ErrorType> out;
        for (auto t : {ErrorType::Type1, ErrorType::Type2, ErrorType::Type3})
            if (has(t)) out.push_back(t);
        return out;
    }
    friend constexpr bool operator==(ErrorTypes, ErrorTypes) = default;

private:
    std::uint8_t bits_ = 0;
};

struct CriticalErrorReport {
    ErrorTypes types;
    bool is_critical = false;
    Decision correct_decision;
    Decision actual_decision;
    DecisionTrace trace;
};

/// Classifies the trace of `out` against the ground-truth decision.
///
/// Exact-decision types: Type1 when a correct class only matches after the
/// break, Type2 when a correct class never matches, Type3 when an incorrect
/// class matches at or before the break.
///
/// API order accepts any class in the acceptable set, so Type1 and Type2 are
/// only reported when no acceptable class matched at or before the break.
///
/// Value ranges: Type1 when y is outside the correct range, Type3 when the
/// selected range is incorrect, never Type2.
inline CriticalErrorReport classify(const DecisionSummary& s, const ApiOutput& out, const GroundTruth& gt) {
    CriticalErrorReport rep;
    auto result = decide(s, out);
    rep.correct_decision = ground_truth_decision(s, gt);
    rep.actual_decision = std::move(result.decision);
    rep.trace = std::move(result.trace);
    const auto& truth = rep.correct_decision;
    const auto& trace = rep.trace;

    if (s.api_kind == ApiKind::ScalarScore) {
        if (!truth.is_others() && !s.classes[truth.classes.front() - 1].range().contains(out.scalar))
            rep.types.insert(ErrorType::Type1);
        if (trace.break_position && !truth.contains(trace.checks[*trace.break_position].class_index))
            rep.types.insert(ErrorType::Type3);
        rep.is_critical = !rep.types.empty();
        return rep;
    }

    const std::size_t m = s.classes.size();
    std::vector<bool> matched_before(m + 1, false), matched_after(m + 1, false);
    for (std::size_t pos = 0; pos < trace.checks.size(); ++pos) {
        const auto& c = trace.checks[pos];
        if (!c.matched) continue;
        (trace.before_break(pos) ? matched_before : matched_after)[c.class_index] = true;
    }

    bool check_missing = true;
    if (truth.any_of)
        for (std::size_t c : truth.classes)
            if (matched_before[c]) check_missing = false;

    for (std::size_t c = 1; c <= m; ++c) {
        if (truth.contains(c)) {
            if (!check_missing || matched_before[c]) continue;
            rep.types.insert(matched_after[c] ? ErrorType::Type1 : ErrorType::Type2);
        } else if (matched_before[c]) {
            rep.types.insert(ErrorType::Type3);
        }
    }
    rep.is_critical = !rep.types.empty();
    return rep;
}

inline CriticalErrorReport classify_scores(const DecisionSummary& s, std::span<const double> scores,
                                           const GroundTruth& gt, const EngineConfig& cfg) {
    return classify(s, api_output_from_scores(scores, cfg), gt);
}

struct ErrorRate {
    double incorrect_decision_rate = 0.0;
    std::size_t samples = 0;
    std::size_t critical = 0;
    std::array<std::size_t, 3> per_type{};  // Type1, Type2, Type3; may overlap

    std::size_t count(ErrorType t) const {
        return per_type[t == ErrorType::Type1 ? 0 : t == ErrorType::Type2 ? 1 : 2];
    }
};

/// One prediction paired with its ground truth. `scores` is ignored for
/// scalar summaries, which read `scalar` instead.
struct ScoredSample {
    std::vector<double> scores;
    double scalar = 0.0;
    GroundTruth truth;
};

inline ApiOutput to_output(const DecisionSummary& s, const ScoredSample& x, const EngineConfig& cfg) {
    if (s.api_kind == ApiKind::ScalarScore) return ApiOutput::scalar_score(x.scalar);
    return api_output_from_scores(x.scores, cfg);
}

inline void accumulate(ErrorRate& r, const CriticalErrorReport& rep) {
    ++r.samples;
    if (rep.is_critical) ++r.critical;
    if (rep.types.has(ErrorType::Type1)) ++r.per_type[0];
    if (rep.types.has(ErrorType::Type2)) ++r.per_type[1];
    if (rep.types.has(ErrorType::Type3)) ++r.per_type[2];
}

inline ErrorRate error_rate(const DecisionSummary& s, std::span<const ScoredSample> data, const EngineConfig& cfg) {
    if (data.empty()) throw Error("EMPTY_DATASET", "error_rate needs at least one sample");
    ErrorRate r;
    for (const auto& x : data) accumulate(r, classify(s, to_output(s, x, cfg), x.truth));
    r.incorrect_decision_rate = static_cast<double>(r.critical) / static_cast<double>(r.samples);
    return r;
}

}  // namespace dforge
