// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "summary.hpp"

#ifndef DFORGE_DEFAULT_CORPUS
#define DFORGE_DEFAULT_CORPUS "corpus/apps.json"
#endif

namespace dforge {

/// FNV-1a 64 of the bundled corpus/apps.json. Update together with the file.
inline constexpr std::uint64_t kCorpusChecksum = 0x8785ce5ff0072e62ULL;
inline constexpr std::size_t kCorpusSize = 77;

enum class ApiFamily { ImageClassification, ObjectDetection, Sentiment, EntityDetection, TopicClassification };

inline constexpr std::array<ApiFamily, 5> kApiFamilies = {
    ApiFamily::ImageClassification, ApiFamily::ObjectDetection, ApiFamily::Sentiment, ApiFamily::EntityDetection,
    ApiFamily::TopicClassification};

inline std::string_view to_string(ApiFamily a) {
    switch (a) {
        case ApiFamily::ImageClassification: return "ImageClassification";
        case ApiFamily::ObjectDetection: return "ObjectDetection";
        case ApiFamily::Sentiment: return "Sentiment";
        case ApiFamily::EntityDetection: return "EntityDetection";
        case ApiFamily::TopicClassification: return "TopicClassification";
    }
    return "?";
}

inline std::optional<ApiFamily> parse_api_family(std::string_view s) {
    for (auto a : kApiFamilies)
        if (to_string(a) == s) return a;
    return std::nullopt;
}

struct CorpusClass {
    std::variant<std::vector<std::string>, std::pair<double, double>> content;
    bool truncated = false;  // label list is a prefix of the real one

    bool is_range() const { return std::holds_alternative<std::pair<double, double>>(content); }
};

struct CorpusEntry {
    std::string name;
    ApiFamily api = ApiFamily::ImageClassification;
    std::string decision_type;  // as printed in the source table
    std::size_t class_count = 0;
    std::vector<std::size_t> class_sizes;
    std::vector<CorpusClass> classes;
    std::string note;

    bool truncated() const {
        for (const auto& c : classes)
            if (c.truncated) return true;
        return false;
    }
};

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace detail {

[[noreturn]] inline void corrupt(const std::string& msg) { throw Error("CORPUS_CORRUPT", msg); }

inline CorpusEntry entry_from_json(const nlohmann::json& j) {
    CorpusEntry e;
    try {
        e.name = j.at("name").get<std::string>();
        auto api = parse_api_family(j.at("api").get<std::string>());
        if (!api) corrupt("entry '" + e.name + "': unknown api");
        e.api = *api;
        e.decision_type = j.at("decision_type").get<std::string>();
        e.class_count = j.at("class_count").get<std::size_t>();
        e.class_sizes = j.at("class_sizes").get<std::vector<std::size_t>>();
        if (j.contains("note")) e.note = j.at("note").get<std::string>();
        for (const auto& c : j.at("classes")) {
            CorpusClass cc;
            if (c.contains("range")) {
                const auto r = c.at("range").get<std::vector<double>>();
                if (r.size() != 2) corrupt("entry '" + e.name + "': range needs two bounds");
                cc.content = std::pair{r[0], r[1]};
            } else {
                cc.content = c.at("labels").get<std::vector<std::string>>();
                cc.truncated = c.at("truncated").get<bool>();
            }
            e.classes.push_back(std::move(cc));
        }
    } catch (const nlohmann::json::exception& ex) {
        corrupt("entry '" + e.name + "': " + ex.what());
    }
    if (e.class_sizes.size() != e.class_count || e.classes.size() != e.class_count)
        corrupt("entry '" + e.name + "': class_count disagrees with class lists");
    return e;
}

}  // namespace detail

/// Parses corpus text. With `verify` set, the bytes must hash to kCorpusChecksum.
inline std::vector<CorpusEntry> parse_corpus(std::string_view text, bool verify = true) {
    if (verify && fnv1a64(text) != kCorpusChecksum) detail::corrupt("checksum mismatch");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& ex) {
        detail::corrupt(ex.what());
    }
    if (!doc.is_object() || doc.value("format", "") != "decisionforge-corpus" || !doc.contains("entries") ||
        !doc["entries"].is_array())
        detail::corrupt("not a decisionforge corpus file");
    std::vector<CorpusEntry> out;
    for (const auto& j : doc["entries"]) out.push_back(detail::entry_from_json(j));
    return out;
}

inline std::vector<CorpusEntry> load_corpus(const std::string& path = DFORGE_DEFAULT_CORPUS) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("IO_ERROR", "cannot open corpus file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_corpus(ss.str());
}

/// Decision type used when the entry becomes a summary. Score ranges are
/// checked in order, so they always map to app order.
inline DecisionType summary_decision_type(const CorpusEntry& e) {
    if (!e.classes.empty() && e.classes.front().is_range()) return DecisionType::MultiChoiceAppOrder;
    auto t = parse_decision_type(e.decision_type);
    if (!t) throw Error("CORPUS_CORRUPT", "entry '" + e.name + "': unknown decision type " + e.decision_type);
    return *t;
}

/// Label classes are named W1..Wm and range classes R1..Rm. The range with
/// the largest upper bound is closed above, every other range is half-open.
inline DecisionSummary to_summary(const CorpusEntry& e) {
    DecisionSummary s;
    s.app_id = e.name;
    s.decision_type = summary_decision_type(e);
    const bool ranges = !e.classes.empty() && e.classes.front().is_range();
    s.api_kind = ranges ? ApiKind::ScalarScore : ApiKind::LabelScores;
    double top = -std::numeric_limits<double>::infinity();
    for (const auto& c : e.classes)
        if (c.is_range()) top = std::max(top, std::get<std::pair<double, double>>(c.content).second);
    for (std::size_t i = 0; i < e.classes.size(); ++i) {
        const auto& c = e.classes[i];
        TargetClass tc;
        if (c.is_range()) {
            const auto [lo, hi] = std::get<std::pair<double, double>>(c.content);
            tc.name = "R" + std::to_string(i + 1);
            tc.kind = Range{lo, hi, true, hi == top};
        } else {
            tc.name = "W" + std::to_string(i + 1);
            LabelSet ids;
            for (const auto& n : std::get<std::vector<std::string>>(c.content)) {
                auto id = s.find_label(n);
                if (!id) {
                    id = s.label_universe.size();
                    s.label_universe.push_back({*id, n});
                }
                ids.push_back(*id);
            }
            tc.kind = std::move(ids);
        }
        s.classes.push_back(std::move(tc));
    }
    return s;
}

struct CorpusStats {
    std::size_t total = 0;
    std::map<ApiFamily, std::size_t> per_api;
    std::vector<std::pair<std::string, std::size_t>> table_types;  // as printed, in first-seen order
    std::map<DecisionType, std::size_t> summary_types;
    std::map<std::size_t, std::size_t> class_count_histogram;
    double single_class_fraction = 0.0;
    std::size_t truncated_entries = 0;
    std::size_t range_entries = 0;
};

inline CorpusStats corpus_stats(const std::vector<CorpusEntry>& entries) {
    CorpusStats st;
    st.total = entries.size();
    for (auto a : kApiFamilies) st.per_api[a] = 0;
    std::size_t single = 0;
    for (const auto& e : entries) {
        ++st.per_api[e.api];
        auto it = std::find_if(st.table_types.begin(), st.table_types.end(),
                               [&](const auto& p) { return p.first == e.decision_type; });
        if (it == st.table_types.end()) st.table_types.emplace_back(e.decision_type, 1);
        else ++it->second;
        ++st.summary_types[summary_decision_type(e)];
        ++st.class_count_histogram[e.class_count];
        if (e.class_count == 1) ++single;
        if (e.truncated()) ++st.truncated_entries;
        if (!e.classes.empty() && e.classes.front().is_range()) ++st.range_entries;
    }
    st.single_class_fraction = st.total ? static_cast<double>(single) / static_cast<double>(st.total) : 0.0;
    return st;
}

inline nlohmann::ordered_json stats_to_json(const CorpusStats& st) {
    nlohmann::ordered_json j;
    j["total"] = st.total;
    auto& api = j["per_api"] = nlohmann::ordered_json::object();
    for (const auto& [a, n] : st.per_api) api[std::string(to_string(a))] = n;
    auto& tt = j["table_decision_types"] = nlohmann::ordered_json::object();
    for (const auto& [t, n] : st.table_types) tt[t] = n;
    auto& sd = j["summary_decision_types"] = nlohmann::ordered_json::object();
    for (const auto& [t, n] : st.summary_types) sd[std::string(to_string(t))] = n;
    auto& ch = j["class_count_histogram"] = nlohmann::ordered_json::object();
    for (const auto& [m, n] : st.class_count_histogram) ch[std::to_string(m)] = n;
    j["single_class_fraction"] = st.single_class_fraction;
    j["truncated_entries"] = st.truncated_entries;
    j["range_entries"] = st.range_entries;
    return j;
}

inline std::string stats_to_table(const CorpusStats& st) {
    std::ostringstream os;
    auto row = [&](std::string_view k, const std::string& v) {
        os << "  " << k;
        for (std::size_t i = k.size(); i < 24; ++i) os << ' ';
        os << v << '\n';
    };
    os << "applications: " << st.total << "\n\nper API\n";
    for (const auto& [a, n] : st.per_api) row(to_string(a), std::to_string(n));
    os << "\ndecision type (table)\n";
    for (const auto& [t, n] : st.table_types) row(t, std::to_string(n));
    os << "\ndecision type (summary)\n";
    for (const auto& [t, n] : st.summary_types) row(to_string(t), std::to_string(n));
    os << "\nclass count\n";
    for (const auto& [m, n] : st.class_count_histogram) row(std::to_string(m), std::to_string(n));
    char frac[32];
    std::snprintf(frac, sizeof frac, "%.4f", st.single_class_fraction);
    os << "\nsingle-class fraction: " << frac << "\ntruncated entries: " << st.truncated_entries
       << "\nrange entries: " << st.range_entries << '\n';
    return os.str();
}

}  // namespace dforge
