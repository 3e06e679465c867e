// SPDX-License-Identifier: Apache-2.0
// Trains the same linear model with BCE and with the decision loss on a
// synthetic dataset containing confusable labels, and compares how often
// each model leads the app to a wrong decision.
#include <cstdio>

#include "dforge/trainer.hpp"

int main() {
    dforge::DecisionSummary s;
    s.app_id = "sorter";
    s.decision_type = dforge::DecisionType::MultiChoiceAppOrder;
    const char* names[] = {"a1", "a2", "b1", "b2", "c1", "c2"};
    for (std::size_t i = 0; i < 6; ++i) s.label_universe.push_back({i, names[i]});
    s.classes = {{"A", dforge::LabelSet{0, 1}}, {"B", dforge::LabelSet{2, 3}}, {"C", dforge::LabelSet{4, 5}}};

    dforge::SyntheticDatasetSpec spec;
    spec.confusable_pairs = {{"a1", "a2"}, {"b1", "b2"}, {"c1", "c2"}};
    dforge::TrainConfig cfg;
    cfg.epochs = 100;

    const dforge::LossKind losses[] = {dforge::LossKind::Bce, dforge::LossKind::Decision};
    const std::uint64_t seeds[] = {1, 2, 3, 4, 5};
    for (const auto& row : dforge::compare_losses(s, spec, cfg, losses, seeds))
        std::printf("%-14s mean incorrect-decision rate %.4f\n", std::string(dforge::to_string(row.loss)).c_str(),
                    row.mean_rate);
    return 0;
}
