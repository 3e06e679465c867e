// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "error.hpp"

namespace dforge {

using LabelId = std::size_t;

enum class DecisionType { TrueFalse, MultiSelect, MultiChoiceAppOrder, MultiChoiceApiOrder };
enum class ApiKind { LabelScores, ScalarScore };

inline std::string_view to_string(DecisionType t) {
    switch (t) {
        case DecisionType::TrueFalse: return "TrueFalse";
        case DecisionType::MultiSelect: return "MultiSelect";
        case DecisionType::MultiChoiceAppOrder: return "MultiChoiceAppOrder";
        case DecisionType::MultiChoiceApiOrder: return "MultiChoiceApiOrder";
    }
    return "?";
}

inline std::string_view to_string(ApiKind k) {
    return k == ApiKind::LabelScores ? "LabelScores" : "ScalarScore";
}

namespace detail {
inline std::string fold_name(std::string_view s) {
    std::string out;
    for (unsigned char c : s)
        if (std::isalnum(c)) out.push_back(static_cast<char>(std::tolower(c)));
    return out;
}
}  // namespace detail

/// Accepts canonical names plus the older vocabulary (T-or-F, M-to-N-set,
/// Priority-list, Top-label, Multi-Choice-App, Multi-Choice-API). Case,
/// spaces, dashes and underscores are ignored.
inline std::optional<DecisionType> parse_decision_type(std::string_view s) {
    const std::string f = detail::fold_name(s);
    if (f == "truefalse" || f == "torf") return DecisionType::TrueFalse;
    if (f == "multiselect" || f == "mtonset") return DecisionType::MultiSelect;
    if (f == "multichoiceapporder" || f == "prioritylist" || f == "multichoiceapp")
        return DecisionType::MultiChoiceAppOrder;
    if (f == "multichoiceapiorder" || f == "toplabel" || f == "multichoiceapi")
        return DecisionType::MultiChoiceApiOrder;
    return std::nullopt;
}

inline std::optional<ApiKind> parse_api_kind(std::string_view s) {
    const std::string f = detail::fold_name(s);
    if (f == "labelscores") return ApiKind::LabelScores;
    if (f == "scalarscore") return ApiKind::ScalarScore;
    return std::nullopt;
}

struct Label {
    LabelId id = 0;
    std::string name;
    friend bool operator==(const Label&, const Label&) = default;
};

struct Range {
    double lower = 0.0;
    double upper = 0.0;
    bool lower_inclusive = true;
    bool upper_inclusive = false;

    bool contains(double y) const {
        const bool above = lower_inclusive ? y >= lower : y > lower;
        const bool below = upper_inclusive ? y <= upper : y < upper;
        return above && below;
    }
    friend bool operator==(const Range&, const Range&) = default;
};

using LabelSet = std::vector<LabelId>;

/// One guarded branch. Index is the 1-based position in DecisionSummary::classes.
struct TargetClass {
    std::string name;
    std::variant<LabelSet, Range> kind;

    bool is_range() const { return std::holds_alternative<Range>(kind); }
    const LabelSet& labels() const { return std::get<LabelSet>(kind); }
    const Range& range() const { return std::get<Range>(kind); }
    friend bool operator==(const TargetClass&, const TargetClass&) = default;
};

struct DecisionSummary {
    std::string app_id;
    ApiKind api_kind = ApiKind::LabelScores;
    DecisionType decision_type = DecisionType::TrueFalse;
    std::vector<TargetClass> classes;
    std::vector<Label> label_universe;

    std::size_t class_count() const { return classes.size(); }

    std::optional<LabelId> find_label(std::string_view name) const {
        for (const auto& l : label_universe)
            if (l.name == name) return l.id;
        return std::nullopt;
    }

    /// Union of all class label sets, sorted.
    std::vector<LabelId> all_class_labels() const {
        std::set<LabelId> s;
        for (const auto& c : classes)
            if (!c.is_range()) s.insert(c.labels().begin(), c.labels().end());
        return {s.begin(), s.end()};
    }

    friend bool operator==(const DecisionSummary&, const DecisionSummary&) = default;
};

struct EngineConfig {
    double theta = 0.5;
};

struct Violation {
    std::string code;
    std::string message;
};

inline std::vector<Violation> validate(const DecisionSummary& s) {
    std::vector<Violation> out;
    auto add = [&](const char* code, std::string msg) { out.push_back({code, std::move(msg)}); };
    const bool scalar = s.api_kind == ApiKind::ScalarScore;

    if (s.classes.empty()) add("EMPTY_CLASSES", "summary has no target classes");
    if (s.decision_type == DecisionType::TrueFalse && s.classes.size() > 1)
        add("TRUEFALSE_MULTICLASS", "TrueFalse requires exactly one class, found " +
                                        std::to_string(s.classes.size()));
    if (scalar && s.decision_type != DecisionType::MultiChoiceAppOrder)
        add("SCALAR_DECISION_TYPE", "ScalarScore summaries must be MultiChoiceAppOrder");
    if (scalar && !s.label_universe.empty())
        add("UNIVERSE_ON_SCALAR", "ScalarScore summaries carry no label universe");

    std::set<std::string> names;
    for (std::size_t i = 0; i < s.label_universe.size(); ++i) {
        const auto& l = s.label_universe[i];
        if (l.id != i)
            add("NONCANONICAL_LABEL_ID", "label '" + l.name + "' has id " + std::to_string(l.id) +
                                             " at position " + std::to_string(i));
        if (!names.insert(l.name).second)
            add("DUPLICATE_LABEL_NAME", "label name '" + l.name + "' appears twice");
    }

    for (std::size_t i = 0; i < s.classes.size(); ++i) {
        const auto& c = s.classes[i];
        const std::string where = "class " + std::to_string(i + 1);
        if (c.is_range() != scalar) {
            add("KIND_MISMATCH", where + " kind does not match api_kind");
            continue;
        }
        if (scalar) {
            const Range& r = c.range();
            if (!std::isfinite(r.lower) || !std::isfinite(r.upper) || !(r.lower < r.upper))
                add("DEGENERATE_RANGE", where + " requires lower < upper");
            continue;
        }
        const LabelSet& ls = c.labels();
        if (ls.empty()) add("EMPTY_LABEL_SET", where + " has no labels");
        std::set<LabelId> seen;
        for (LabelId id : ls) {
            if (id >= s.label_universe.size())
                add("UNKNOWN_LABEL", where + " references label id " + std::to_string(id));
            if (!seen.insert(id).second)
                add("DUPLICATE_CLASS_LABEL", where + " lists label id " + std::to_string(id) + " twice");
        }
    }

    if (scalar) {
        for (std::size_t i = 0; i < s.classes.size(); ++i) {
            for (std::size_t j = i + 1; j < s.classes.size(); ++j) {
                if (!s.classes[i].is_range() || !s.classes[j].is_range()) continue;
                const Range& a = s.classes[i].range();
                const Range& b = s.classes[j].range();
                if (std::max(a.lower, b.lower) < std::min(a.upper, b.upper))
                    add("OVERLAPPING_RANGES", "classes " + std::to_string(i + 1) + " and " +
                                                  std::to_string(j + 1) + " overlap");
            }
        }
    }
    return out;
}

using ordered_json = nlohmann::ordered_json;

inline ordered_json to_json_value(const DecisionSummary& s) {
    ordered_json j;
    j["app_id"] = s.app_id;
    j["api_kind"] = std::string(to_string(s.api_kind));
    j["decision_type"] = std::string(to_string(s.decision_type));
    ordered_json classes = ordered_json::array();
    for (const auto& c : s.classes) {
        ordered_json cj;
        if (!c.name.empty()) cj["name"] = c.name;
        if (c.is_range()) {
            const Range& r = c.range();
            cj["range"] = {{"lower", r.lower},
                           {"upper", r.upper},
                           {"lower_inclusive", r.lower_inclusive},
                           {"upper_inclusive", r.upper_inclusive}};
        } else {
            ordered_json labels = ordered_json::array();
            for (LabelId id : c.labels())
                labels.push_back(id < s.label_universe.size() ? s.label_universe[id].name
                                                              : std::to_string(id));
            cj["labels"] = std::move(labels);
        }
        classes.push_back(std::move(cj));
    }
    j["classes"] = std::move(classes);
    ordered_json universe = ordered_json::array();
    for (const auto& l : s.label_universe) universe.push_back(l.name);
    j["label_universe"] = std::move(universe);
    return j;
}

/// Canonical serialization: 2-space indent, fixed key order, trailing newline.
inline std::string to_json(const DecisionSummary& s) { return to_json_value(s).dump(2) + "\n"; }

namespace detail {

template <class J>
void reject_unknown_keys(const J& obj, std::initializer_list<std::string_view> allowed,
                         const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw Error("SCHEMA_ERROR", "unknown key '" + where + it.key() + "'");
    }
}

template <class J>
const J& require(const J& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) throw Error("SCHEMA_ERROR", "missing field '" + where + key + "'");
    return *it;
}

template <class J>
std::string require_string(const J& v, const std::string& field) {
    if (!v.is_string()) throw Error("SCHEMA_ERROR", "field '" + field + "' must be a string");
    return v.template get<std::string>();
}

}  // namespace detail

/// Builds a summary from an already parsed JSON value. Missing inclusivity
/// flags default to lower-inclusive, upper-exclusive, with the range holding
/// the largest upper bound made upper-inclusive. A missing label_universe is
/// built from class labels in order of first appearance.
template <class J>
DecisionSummary from_json_value(const J& j) {
    using detail::require;
    using detail::require_string;
    if (!j.is_object()) throw Error("SCHEMA_ERROR", "summary must be a JSON object");
    detail::reject_unknown_keys(j, {"app_id", "api_kind", "decision_type", "classes", "label_universe"}, "");

    DecisionSummary s;
    s.app_id = require_string(require(j, "app_id", ""), "app_id");
    const std::string kind = require_string(require(j, "api_kind", ""), "api_kind");
    auto k = parse_api_kind(kind);
    if (!k) throw Error("SCHEMA_ERROR", "field 'api_kind' has unknown value '" + kind + "'");
    s.api_kind = *k;
    const std::string dt = require_string(require(j, "decision_type", ""), "decision_type");
    auto t = parse_decision_type(dt);
    if (!t) throw Error("SCHEMA_ERROR", "field 'decision_type' has unknown value '" + dt + "'");
    s.decision_type = *t;

    if (auto it = j.find("label_universe"); it != j.end()) {
        if (!it->is_array()) throw Error("SCHEMA_ERROR", "field 'label_universe' must be an array");
        for (const auto& v : *it) {
            std::string name = require_string(v, "label_universe[]");
            s.label_universe.push_back({s.label_universe.size(), std::move(name)});
        }
    }
    const bool derive_universe = j.find("label_universe") == j.end();

    const auto& classes = require(j, "classes", "");
    if (!classes.is_array()) throw Error("SCHEMA_ERROR", "field 'classes' must be an array");
    std::vector<std::pair<bool, bool>> flags_given;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        const auto& cj = classes[i];
        const std::string where = "classes[" + std::to_string(i) + "].";
        if (!cj.is_object()) throw Error("SCHEMA_ERROR", "field 'classes[" + std::to_string(i) + "]' must be an object");
        detail::reject_unknown_keys(cj, {"name", "labels", "range"}, where);
        TargetClass c;
        if (auto n = cj.find("name"); n != cj.end()) c.name = require_string(*n, where + "name");
        const bool has_labels = cj.contains("labels"), has_range = cj.contains("range");
        if (has_labels == has_range)
            throw Error("SCHEMA_ERROR", "field '" + where + "labels' or '" + where + "range' required (exactly one)");
        bool lo_given = true, hi_given = true;
        if (has_labels) {
            const auto& lj = cj.at("labels");
            if (!lj.is_array()) throw Error("SCHEMA_ERROR", "field '" + where + "labels' must be an array");
            LabelSet ids;
            for (const auto& v : lj) {
                std::string name = require_string(v, where + "labels[]");
                auto id = s.find_label(name);
                if (!id) {
                    if (!derive_universe)
                        throw Error("SCHEMA_ERROR", "field '" + where + "labels' names '" + name +
                                                        "' which is not in label_universe");
                    id = s.label_universe.size();
                    s.label_universe.push_back({*id, name});
                }
                ids.push_back(*id);
            }
            c.kind = std::move(ids);
        } else {
            const auto& rj = cj.at("range");
            const std::string rw = where + "range.";
            if (!rj.is_object()) throw Error("SCHEMA_ERROR", "field '" + where + "range' must be an object");
            detail::reject_unknown_keys(rj, {"lower", "upper", "lower_inclusive", "upper_inclusive"}, rw);
            Range r;
            const auto& lo = require(rj, "lower", rw);
            const auto& hi = require(rj, "upper", rw);
            if (!lo.is_number()) throw Error("SCHEMA_ERROR", "field '" + rw + "lower' must be a number");
            if (!hi.is_number()) throw Error("SCHEMA_ERROR", "field '" + rw + "upper' must be a number");
            r.lower = lo.template get<double>();
            r.upper = hi.template get<double>();
            lo_given = rj.contains("lower_inclusive");
            hi_given = rj.contains("upper_inclusive");
            if (lo_given) {
                if (!rj.at("lower_inclusive").is_boolean())
                    throw Error("SCHEMA_ERROR", "field '" + rw + "lower_inclusive' must be a boolean");
                r.lower_inclusive = rj.at("lower_inclusive").template get<bool>();
            }
            if (hi_given) {
                if (!rj.at("upper_inclusive").is_boolean())
                    throw Error("SCHEMA_ERROR", "field '" + rw + "upper_inclusive' must be a boolean");
                r.upper_inclusive = rj.at("upper_inclusive").template get<bool>();
            }
            c.kind = r;
        }
        flags_given.emplace_back(lo_given, hi_given);
        s.classes.push_back(std::move(c));
    }

    // Default upper inclusivity: only the topmost range closes on the right.
    std::optional<std::size_t> top;
    for (std::size_t i = 0; i < s.classes.size(); ++i) {
        if (!s.classes[i].is_range()) continue;
        if (!top || s.classes[i].range().upper > s.classes[*top].range().upper) top = i;
    }
    for (std::size_t i = 0; i < s.classes.size(); ++i) {
        if (!s.classes[i].is_range() || flags_given[i].second) continue;
        std::get<Range>(s.classes[i].kind).upper_inclusive = top && *top == i;
    }
    return s;
}

inline DecisionSummary from_json(std::string_view text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("PARSE_ERROR", "at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    return from_json_value(j);
}

}  // namespace dforge
