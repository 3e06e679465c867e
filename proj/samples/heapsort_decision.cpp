// SPDX-License-Identifier: Apache-2.0
// Extracts a summary from a recycling app written in DPL, then shows how one
// wrong label flips the app's decision and how the error is classified.
#include <iostream>

#include "dforge/dpl.hpp"
#include "dforge/taxonomy.hpp"

int main() {
    const char* program = R"(Recycle = ["Plastic", "Wood", "Glass", "Paper", "Cardboard", "Metal"]
Compost = ["Food", "Produce", "Snack"]
Donate = ["Clothing", "Jacket", "Shirt", "Pants", "Footwear", "Shoe"]
labels = ml_api_labels()
for obj in labels:
    if obj in Recycle:
        return "recycle"
    elif obj in Compost:
        return "compost"
    elif obj in Donate:
        return "donate"
return "other"
)";
    auto res = dforge::dpl::analyze({"recycling.dpl", program}, "recycling");
    if (!res.summary) {
        for (const auto& d : res.diagnostics) std::cerr << dforge::dpl::format(d, "recycling.dpl") << "\n";
        return 1;
    }
    const auto& s = *res.summary;
    std::cout << dforge::to_json(s);

    // The photo shows a snack, but the API ranks "Glass" first.
    std::vector<double> scores(s.label_universe.size(), 0.05);
    scores[*s.find_label("Glass")] = 0.92;
    scores[*s.find_label("Snack")] = 0.81;
    const auto truth = dforge::GroundTruth::label_set({*s.find_label("Snack")});
    const auto rep = dforge::classify_scores(s, scores, truth, {});

    std::cout << "decision: " << s.classes[rep.actual_decision.classes.front() - 1].name
              << ", expected: " << s.classes[rep.correct_decision.classes.front() - 1].name << "\n";
    std::cout << "critical error types:";
    for (auto t : rep.types.list()) std::cout << " " << dforge::to_string(t);
    std::cout << "\n";
    return 0;
}
