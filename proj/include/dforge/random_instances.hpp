// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "engine.hpp"
#include "summary.hpp"

namespace dforge::random {

/// Label-set summary with `m` pairwise disjoint classes drawn from a universe
/// of `universe` labels. Labels left over stay outside every class.
inline DecisionSummary label_summary(std::mt19937_64& rng, DecisionType type, std::size_t m, std::size_t universe) {
    if (type == DecisionType::TrueFalse) m = 1;
    universe = std::max(universe, m);
    DecisionSummary s;
    s.app_id = "random";
    s.decision_type = type;
    for (std::size_t i = 0; i < universe; ++i) s.label_universe.push_back({i, "l" + std::to_string(i)});

    std::vector<LabelId> ids(universe);
    std::iota(ids.begin(), ids.end(), LabelId{0});
    std::shuffle(ids.begin(), ids.end(), rng);
    std::uniform_int_distribution<std::size_t> used_d(m, universe);
    const std::size_t used = used_d(rng);
    // cut `used` shuffled labels into m non-empty runs
    std::vector<std::size_t> cuts;
    std::vector<std::size_t> pos(used - 1);
    std::iota(pos.begin(), pos.end(), std::size_t{1});
    std::shuffle(pos.begin(), pos.end(), rng);
    cuts.assign(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(m - 1));
    std::sort(cuts.begin(), cuts.end());
    cuts.insert(cuts.begin(), 0);
    cuts.push_back(used);
    for (std::size_t c = 0; c < m; ++c) {
        LabelSet set(ids.begin() + static_cast<std::ptrdiff_t>(cuts[c]), ids.begin() + static_cast<std::ptrdiff_t>(cuts[c + 1]));
        s.classes.push_back({"c" + std::to_string(c + 1), std::move(set)});
    }
    return s;
}

/// Scalar summary of `m` contiguous ranges tiling [-1, 1], highest first.
inline DecisionSummary range_summary(std::mt19937_64& rng, std::size_t m, double min_width = 0.05) {
    DecisionSummary s;
    s.app_id = "random";
    s.api_kind = ApiKind::ScalarScore;
    s.decision_type = DecisionType::MultiChoiceAppOrder;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> cuts;
    while (cuts.size() + 1 < m) {
        const double c = u(rng);
        bool ok = std::abs(c - 1.0) >= min_width && std::abs(c + 1.0) >= min_width;
        for (double d : cuts) ok = ok && std::abs(c - d) >= min_width;
        if (ok) cuts.push_back(c);
    }
    cuts.push_back(-1.0);
    cuts.push_back(1.0);
    std::sort(cuts.begin(), cuts.end(), std::greater<>());
    for (std::size_t c = 0; c < m; ++c)
        s.classes.push_back({"r" + std::to_string(c + 1), Range{cuts[c + 1], cuts[c], true, c == 0}});
    return s;
}

/// 1..max_labels distinct labels from the universe.
inline GroundTruth label_truth(std::mt19937_64& rng, const DecisionSummary& s, std::size_t max_labels = 3) {
    std::uniform_int_distribution<std::size_t> n_d(1, std::min(max_labels, s.label_universe.size()));
    std::vector<LabelId> ids(s.label_universe.size());
    std::iota(ids.begin(), ids.end(), LabelId{0});
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(n_d(rng));
    return GroundTruth::label_set(std::move(ids));
}

/// Scores in (0, 1) that are pairwise at least `gap` apart and at least `gap`
/// away from theta, so max/min selections are stable under small perturbation.
inline std::vector<double> separated_scores(std::mt19937_64& rng, std::size_t n, double theta, double gap = 1e-3) {
    std::uniform_real_distribution<double> u(gap, 1.0 - gap);
    std::vector<double> out;
    while (out.size() < n) {
        const double v = u(rng);
        bool ok = std::abs(v - theta) >= gap;
        for (double w : out) ok = ok && std::abs(v - w) >= gap;
        if (ok) out.push_back(v);
    }
    return out;
}

}  // namespace dforge::random
