// SPDX-License-Identifier: Apache-2.0
// Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dforge/corpus.hpp"
#include "dforge/dpl.hpp"
#include "dforge/engine.hpp"
#include "dforge/loss.hpp"
#include "dforge/model_pool.hpp"
#include "dforge/random_instances.hpp"
#include "dforge/taxonomy.hpp"
#include "dforge/trainer.hpp"
#include "loss_checks.hpp"
#include "oracles.hpp"
#include "service_checks.hpp"
#include "test_support.hpp"

using namespace dforge;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double time_limit_s;  // <= 0: none
    std::function<Verdict()> run;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

constexpr DecisionType kLabelTypes[] = {DecisionType::TrueFalse, DecisionType::MultiSelect,
                                        DecisionType::MultiChoiceAppOrder, DecisionType::MultiChoiceApiOrder};

// Class layouts over L labels with m disjoint round-robin classes covering
// all labels, all but one, or just one label each.
std::vector<DecisionSummary> layouts(DecisionType t, std::size_t m, std::size_t L) {
    std::vector<DecisionSummary> out;
    std::vector<std::size_t> sizes{L};
    if (L - 1 >= m) sizes.push_back(L - 1);
    if (m < L - 1) sizes.push_back(m);
    for (std::size_t used : sizes) {
        DecisionSummary s;
        s.app_id = "enum";
        s.decision_type = t;
        for (std::size_t i = 0; i < L; ++i) s.label_universe.push_back({i, "l" + std::to_string(i)});
        for (std::size_t c = 0; c < m; ++c) s.classes.push_back({"c" + std::to_string(c + 1), LabelSet{}});
        for (std::size_t i = 0; i < used; ++i) std::get<LabelSet>(s.classes[i % m].kind).push_back(i);
        out.push_back(std::move(s));
    }
    return out;
}

Verdict taxonomy_equivalence() {
    std::size_t instances = 0, iff_fail = 0, oracle_fail = 0;
    const EngineConfig cfg{0.5};
    for (auto t : kLabelTypes) {
        for (std::size_t m = 1; m <= 3; ++m) {
            if (t == DecisionType::TrueFalse && m > 1) continue;
            for (std::size_t L = m; L <= 8; ++L) {
                for (const auto& s : layouts(t, m, L)) {
                    for (std::uint32_t sm = 0; sm < (1u << L); ++sm) {
                        std::vector<double> scores(L);
                        for (std::size_t i = 0; i < L; ++i) scores[i] = (sm >> i & 1) ? 0.9 : 0.1;
                        const auto out = api_output_from_scores(scores, cfg);
                        const auto ranked = oracle::filtered_ranking(scores, 0.5);
                        for (std::uint32_t gm = 0; gm < (1u << L); ++gm) {
                            std::vector<LabelId> g;
                            for (std::size_t i = 0; i < L; ++i)
                                if (gm >> i & 1) g.push_back(i);
                            const auto gt = GroundTruth::label_set(g);
                            const auto rep = classify(s, out, gt);
                            ++instances;
                            iff_fail += rep.types.empty() != is_correct(s, out, gt);
                            const auto v = oracle::taxonomy(s, ranked, g);
                            oracle_fail += v.type1 != rep.types.has(ErrorType::Type1) ||
                                           v.type2 != rep.types.has(ErrorType::Type2) ||
                                           v.type3 != rep.types.has(ErrorType::Type3);
                        }
                    }
                }
            }
        }
    }
    return {iff_fail == 0 && oracle_fail == 0,
            fmt("%zu instances, %zu iff counterexamples, %zu oracle type-set mismatches", instances, iff_fail,
                oracle_fail)};
}

Verdict gradient_correctness() {
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    std::string worst_op;
    for (const auto& op : checks::all_loss_ops()) {
        const auto r = checks::gradient_sweep(op, rng, 100, 10.0, 1e-5);
        if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            worst_op = op.name;
        }
    }
    return {worst <= 1e-4, fmt("%zu ops x 100 instances, max relative error %.3g (%s)", checks::all_loss_ops().size(),
                               worst, worst_op.c_str())};
}

Verdict step_limit_semantics() {
    LossParams p;
    p.k = 200.0;
    std::mt19937_64 rng(31);
    std::size_t bad = 0, correct = 0, total = 0;
    std::string first;
    for (auto t : kLabelTypes) {
        for (int i = 0; i < 1000; ++i) {
            const auto s = random::label_summary(rng, t, 1 + static_cast<std::size_t>(i % 3), 8);
            const auto g = i % 5 == 0 ? GroundTruth::label_set({}) : random::label_truth(rng, s);
            const auto o = checks::step_limit(s, checks::margin_scores(rng, 8, p.theta), g, p);
            ++total;
            correct += o.correct;
            if (!o.ok) {
                ++bad;
                if (first.empty()) first = std::string(to_string(t)) + ": " + o.detail;
            }
        }
    }
    std::string d = fmt("%zu instances (%zu correct decisions), %zu violations", total, correct, bad);
    if (!first.empty()) d += "; first: " + first;
    return {bad == 0, d};
}

Verdict worked_example() {
    DecisionSummary s;
    s.app_id = "worked";
    s.decision_type = DecisionType::MultiChoiceAppOrder;
    for (std::size_t i = 0; i < 3; ++i) {
        s.label_universe.push_back({i, "l" + std::to_string(i)});
        s.classes.push_back({"W" + std::to_string(i + 1), LabelSet{i}});
    }
    const std::vector<double> x{0.8, 0.7, 0.4};
    const auto ctx = make_context(s, GroundTruth::label_set({1}));
    const double want_args[] = {0.8 - 0.5, 0.8 - 0.7, 0.4 - 0.5};
    double worst = 0.0;
    bool args_ok = true;
    for (double k : {0.01, 0.5, 1.0, 10.0, 50.0, 200.0, 1000.0}) {
        LossParams p;
        p.k = k;
        const auto r = loss_app_order_perclass(s, x, ctx, p);
        args_ok = args_ok && r.terms.size() == 3;
        for (std::size_t i = 0; args_ok && i < 3; ++i) args_ok = r.terms[i].argument == want_args[i];
        const double want = oracle::S(0.3, k) + oracle::S(0.1, k) + oracle::S(-0.1, k);
        worst = std::max(worst, std::abs(r.value - want));
    }
    return {args_ok && worst <= 1e-12,
            fmt("arguments %s, max |L - (S(0.3)+S(0.1)+S(-0.1))| = %.3g over 7 values of k",
                args_ok ? "equal" : "DIFFER", worst)};
}

Verdict training_improvement() {
    std::vector<std::uint64_t> seeds(10);
    for (std::size_t i = 0; i < 10; ++i) seeds[i] = i + 1;
    const LossKind kinds[] = {LossKind::Bce, LossKind::Decision};
    bool pass = true;
    std::string d;
    for (const char* stem : {"true_false", "multi_select", "app_order", "api_order"}) {
        const auto s = checks::training_summary(stem);
        const auto spec = checks::training_spec(stem);
        const auto rows = compare_losses(s, spec.data, spec.train, kinds, seeds);
        std::size_t wins = 0;
        for (std::size_t i = 0; i < seeds.size(); ++i) wins += rows[1].rates[i] <= rows[0].rates[i];
        const bool ok = rows[1].mean_rate < rows[0].mean_rate && wins >= 8;
        pass = pass && ok;
        d += fmt("%s%s bce %.4f decision %.4f gap %.4f, decision <= bce on %zu/10 seeds", d.empty() ? "" : "; ", stem, rows[0].mean_rate,
                 rows[1].mean_rate, rows[0].mean_rate - rows[1].mean_rate, wins);
    }
    return {pass, d};
}

Verdict parser_fixtures() {
    std::size_t ok = 0;
    std::string bad;
    const char* stems[] = {"pattern_a_true_false", "pattern_b_multi_select", "pattern_c_app_order",
                           "pattern_d_api_order",  "heapsortcypher",     "fooddelivery"};
    for (const char* stem : stems) {
        const auto path = test::fixture(std::string("dpl/") + stem + ".dpl");
        const auto r = dpl::analyze({path.string(), test::slurp(path)}, stem);
        const std::string want = test::slurp(test::fixture(std::string("dpl/") + stem + ".expected.json"));
        if (r.summary && !want.empty() && to_json(*r.summary) == want) ++ok;
        else bad += std::string(bad.empty() ? "" : ", ") + stem;
    }
    return {ok == 6, fmt("%zu/6 byte-exact", ok) + (bad.empty() ? "" : "; mismatched: " + bad)};
}

Verdict corpus_integrity() {
    const auto entries = load_corpus();
    const auto st = corpus_stats(entries);
    auto count = [&](ApiFamily f) { return st.per_api.count(f) ? st.per_api.at(f) : std::size_t{0}; };
    const std::size_t want[] = {40, 8, 14, 6, 9};
    const ApiFamily fams[] = {ApiFamily::ImageClassification, ApiFamily::ObjectDetection, ApiFamily::Sentiment,
                              ApiFamily::EntityDetection, ApiFamily::TopicClassification};
    bool counts_ok = entries.size() == 77;
    std::string counts;
    for (std::size_t i = 0; i < 5; ++i) {
        counts_ok = counts_ok && count(fams[i]) == want[i];
        counts += fmt("%s%zu", i ? "," : "", count(fams[i]));
    }
    std::size_t complete = 0;
    std::string invalid;
    for (const auto& e : entries) {
        if (e.truncated()) continue;
        ++complete;
        const auto v = validate(to_summary(e));
        if (!v.empty()) invalid += (invalid.empty() ? "" : ", ") + e.name + " (" + v.front().code + ")";
    }
    const auto again = corpus_stats(load_corpus());
    const bool deterministic = stats_to_json(st).dump() == stats_to_json(again).dump() &&
                               stats_to_table(st) == stats_to_table(again);
    std::string d = fmt("%zu entries, per-API (%s), %zu complete entries, stats %s", entries.size(), counts.c_str(),
                        complete, deterministic ? "deterministic" : "NOT deterministic");
    if (!invalid.empty()) d += "; failing validate: " + invalid;
    return {counts_ok && invalid.empty() && deterministic, d};
}

Verdict service_roundtrip() {
    const auto dir = test::temp_dir("acceptance");
    std::size_t mismatches = 0;
    checks::ConcurrencyOutcome o;
    {
        ModelPool pool(PoolConfig{}, dir);
        pool.register_app("tf", checks::training_summary("true_false"), checks::quick_spec(1));
        pool.register_app("ms", checks::training_summary("multi_select"), checks::quick_spec(2));
        pool.register_app("api", checks::training_summary("api_order"), checks::quick_spec(3));
        const auto restarted = ModelPool::load(dir);
        mismatches = checks::roundtrip_mismatches(pool, *restarted, 100, 77);

        auto spec = checks::quick_spec(4);
        spec.data.n_train = 2000;
        spec.train.epochs = 40;
        o = checks::infer_during_reregistration(*restarted, "ms", checks::training_summary("multi_select"), spec, 16);
    }
    std::filesystem::remove_all(dir);
    const bool pass = mismatches == 0 && o.registered && o.errors == 0 && o.inconsistent == 0 && o.responses > 0;
    return {pass, fmt("100 queries after reload: %zu mismatches; 16 streams: %zu responses (%zu during training), "
                      "%zu errors, %zu mixed",
                      mismatches, o.responses, o.during_training, o.errors, o.inconsistent)};
}

Verdict baseline_identity() {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> a_d(-0.2, 1.2), u(0.01, 0.99);
    const double eps = std::numeric_limits<double>::epsilon();
    double worst = 0.0;
    std::size_t w_samples = 0, others = 0, n = 0;
    for (int i = 0; i < 2000; ++i) {
        const auto s = random::label_summary(rng, kLabelTypes[i % 4], 1 + static_cast<std::size_t>(i % 3), 8);
        const auto g = i % 3 == 0 ? GroundTruth::label_set({}) : random::label_truth(rng, s);
        std::vector<double> x(8), targets(8, 0.0);
        for (auto& v : x) v = u(rng);
        for (LabelId l : g.labels) targets[l] = 1.0;
        LossParams p;
        p.A = i % 50 == 0 ? (i % 100 == 0 ? 0.0 : 1.0) : a_d(rng);
        const double a = std::clamp(p.A, 1e-3, 1.0 - 1e-3);
        const bool w = !oracle::classes_hit(s, {g.labels.begin(), g.labels.end()}).empty();
        (w ? w_samples : others)++;

        double bce = 0.0;
        for (std::size_t j = 0; j < 8; ++j) bce -= (targets[j] * std::log(x[j]) + (1 - targets[j]) * std::log(1 - x[j])) / 8.0;
        const double want = (w ? 1.0 / a : a) * bce;
        const double got = loss_weighted_bce(x, targets, make_context(s, g), p).value;
        worst = std::max(worst, std::abs(got - want) / (eps * std::abs(want)));
        ++n;
    }
    return {worst <= 4.0, fmt("%zu samples (%zu W, %zu others), max deviation %.1f ulp", n, w_samples, others, worst)};
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "taxonomy-oracle equivalence", 10.0, taxonomy_equivalence},
        {2, "gradient correctness", 5.0, gradient_correctness},
        {3, "step-limit semantics", 10.0, step_limit_semantics},
        {4, "per-class worked example", 0.0, worked_example},
        {5, "training improvement", 120.0, training_improvement},
        {6, "parser fixtures", 0.0, parser_fixtures},
        {7, "corpus integrity", 0.0, corpus_integrity},
        {8, "service round-trip", 30.0, service_roundtrip},
        {9, "baseline identity", 0.0, baseline_identity},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.time_limit_s > 0 && secs >= c.time_limit_s) {
            v.pass = false;
            v.detail += fmt("; over the %.0f s limit", c.time_limit_s);
        }
        failed += !v.pass;
        std::printf("%s criterion %d (%s) [%.2f s]: %s\n", v.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), secs,
                    v.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
