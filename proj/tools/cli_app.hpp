// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dforge/corpus.hpp"
#include "dforge/dpl.hpp"
#include "dforge/engine.hpp"
#include "dforge/http_service.hpp"
#include "dforge/loss.hpp"
#include "dforge/model_pool.hpp"
#include "dforge/random_instances.hpp"
#include "dforge/summary.hpp"
#include "dforge/taxonomy.hpp"
#include "dforge/trainer.hpp"

namespace dforge::cli {

using ojson = nlohmann::ordered_json;

namespace detail {

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("IO_ERROR", "cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline nlohmann::json read_json(const std::string& path) {
    try {
        return nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("BAD_INPUT", path + ": " + e.what());
    }
}

inline DecisionSummary read_summary(const std::string& path) {
    const std::string text = read_text(path);
    return from_json(text);
}

// {"scores": [...]} by label id, {"labels": {"name": score}} by name, or {"score": y}.
inline ApiOutput read_output(const DecisionSummary& s, const nlohmann::json& j, const EngineConfig& cfg,
                             std::vector<double>* raw = nullptr) {
    if (s.api_kind == ApiKind::ScalarScore) {
        if (!j.contains("score") || !j["score"].is_number())
            throw Error("BAD_INPUT", "scalar summaries take {\"score\": y}");
        const double y = j["score"].get<double>();
        if (raw) *raw = {y};
        return ApiOutput::scalar_score(y);
    }
    std::vector<double> scores(s.label_universe.size(), 0.0);
    if (j.contains("scores")) {
        scores = j["scores"].get<std::vector<double>>();
        if (scores.size() != s.label_universe.size())
            throw Error("BAD_INPUT_DIM", "expected " + std::to_string(s.label_universe.size()) + " scores");
    } else if (j.contains("labels") && j["labels"].is_object()) {
        for (const auto& [name, v] : j["labels"].items()) {
            auto id = s.find_label(name);
            if (!id) throw Error("UNKNOWN_LABEL", "label '" + name + "' is not in the summary universe");
            scores[*id] = v.get<double>();
        }
    } else {
        throw Error("BAD_INPUT", "scores file needs \"scores\" or \"labels\"");
    }
    if (raw) *raw = scores;
    return api_output_from_scores(scores, cfg);
}

// {"labels": ["name", ...]} or {"score": g}.
inline GroundTruth read_truth(const DecisionSummary& s, const nlohmann::json& j) {
    if (s.api_kind == ApiKind::ScalarScore) {
        if (!j.contains("score")) throw Error("BAD_INPUT", "scalar ground truth takes {\"score\": g}");
        return GroundTruth::scalar_score(j["score"].get<double>());
    }
    if (!j.contains("labels") || !j["labels"].is_array())
        throw Error("BAD_INPUT", "ground truth takes {\"labels\": [names]}");
    std::vector<LabelId> ids;
    for (const auto& n : j["labels"]) {
        auto id = s.find_label(n.get<std::string>());
        // labels outside the universe cannot hit any class
        if (id) ids.push_back(*id);
    }
    return GroundTruth::label_set(std::move(ids));
}

inline ojson decision_json(const DecisionSummary& s, const Decision& d) {
    ojson names = ojson::array();
    for (auto c : d.classes) names.push_back(s.classes[c - 1].name);
    ojson j;
    j["classes"] = d.classes;
    j["names"] = names;
    j["others"] = d.is_others();
    return j;
}

inline ojson trace_json(const DecisionSummary& s, const DecisionTrace& t) {
    ojson checks = ojson::array();
    for (const auto& c : t.checks) {
        ojson e;
        e["class"] = c.class_index;
        e["name"] = s.classes[c.class_index - 1].name;
        e["matched"] = c.matched;
        if (c.label) e["label"] = s.label_universe[*c.label].name;
        checks.push_back(std::move(e));
    }
    ojson j;
    j["checks"] = std::move(checks);
    j["break_position"] = t.break_position ? ojson(*t.break_position) : ojson(nullptr);
    return j;
}

inline std::string cell(const ojson& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_float()) {
        std::ostringstream os;
        os << std::setprecision(6) << v.get<double>();
        return os.str();
    }
    return v.dump();
}

// Key/value lines for scalars; arrays of objects become column tables.
inline void render_table(const ojson& j, std::ostream& out, const std::string& indent = "") {
    std::size_t width = 0;
    for (const auto& [k, _] : j.items()) width = std::max(width, k.size());
    for (const auto& [k, v] : j.items()) {
        if (v.is_object()) {
            out << indent << k << "\n";
            render_table(v, out, indent + "  ");
        } else if (v.is_array() && !v.empty() && v.front().is_object()) {
            out << indent << k << "\n";
            std::vector<std::string> cols;
            for (const auto& [ck, _] : v.front().items()) cols.push_back(ck);
            std::vector<std::size_t> w(cols.size());
            for (std::size_t c = 0; c < cols.size(); ++c) {
                w[c] = cols[c].size();
                for (const auto& row : v)
                    if (row.contains(cols[c])) w[c] = std::max(w[c], cell(row[cols[c]]).size());
            }
            out << indent << "  ";
            for (std::size_t c = 0; c < cols.size(); ++c) out << std::left << std::setw(static_cast<int>(w[c] + 2)) << cols[c];
            out << "\n";
            for (const auto& row : v) {
                out << indent << "  ";
                for (std::size_t c = 0; c < cols.size(); ++c)
                    out << std::left << std::setw(static_cast<int>(w[c] + 2))
                        << (row.contains(cols[c]) ? cell(row[cols[c]]) : std::string("-"));
                out << "\n";
            }
        } else {
            out << indent << std::left << std::setw(static_cast<int>(width + 2)) << k << cell(v) << "\n";
        }
    }
}

struct Output {
    std::string path;
    std::string format = "json";
    std::ostream* out = nullptr;

    void emit(const ojson& j) const {
        std::ostringstream os;
        if (format == "table") render_table(j, os);
        else os << j.dump(2) << "\n";
        write(os.str());
    }
    void write(const std::string& text) const {
        if (path.empty()) {
            *out << text;
            return;
        }
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("IO_ERROR", "cannot write " + path);
        f << text;
    }
};

inline std::vector<std::uint64_t> seed_list(std::uint64_t first, std::size_t n) {
    std::vector<std::uint64_t> out(n);
    std::iota(out.begin(), out.end(), first);
    return out;
}

// Flags given on the command line override the spec file.
inline TrainSpec read_spec(const std::string& path, const CLI::App& sub, std::uint64_t seed, const LossParams& p) {
    TrainSpec spec;
    if (!path.empty()) spec = train_spec_from_json(read_json(path));
    if (sub.count("--seed")) spec.data.seed = spec.train.seed = seed;
    if (sub.count("--theta")) spec.train.params.theta = p.theta;
    if (sub.count("--k")) spec.train.params.k = p.k;
    return spec;
}

struct GradRow {
    std::string op;
    std::size_t instances = 0;
    std::size_t skipped_ties = 0;
    double max_rel_error = 0.0;
};

// Random non-tie instances for every loss op, checked by central differences.
inline std::vector<GradRow> grad_check_all(std::uint64_t seed, std::size_t n, const LossParams& base) {
    std::mt19937_64 rng(seed);
    std::vector<GradRow> rows;
    using Fn = std::function<LossResult(const DecisionSummary&, std::span<const double>, const SampleContext&,
                                        const GroundTruth&, const LossParams&)>;
    struct Op {
        const char* name;
        std::optional<DecisionType> type;  // nullopt: scalar ranges
        Fn fn;
    };
    const std::vector<Op> ops = {
        {"true_false", DecisionType::TrueFalse,
         [](auto& s, auto x, auto& c, auto&, auto& p) { return loss_true_false(s, x, c, p); }},
        {"multi_select", DecisionType::MultiSelect,
         [](auto& s, auto x, auto& c, auto&, auto& p) { return loss_multi_select(s, x, c, p); }},
        {"app_order", DecisionType::MultiChoiceAppOrder,
         [](auto& s, auto x, auto& c, auto&, auto& p) { return loss_app_order(s, x, c, p); }},
        {"app_order_perclass", DecisionType::MultiChoiceAppOrder,
         [](auto& s, auto x, auto& c, auto&, auto& p) { return loss_app_order_perclass(s, x, c, p); }},
        {"api_order", DecisionType::MultiChoiceApiOrder,
         [](auto& s, auto x, auto& c, auto&, auto& p) { return loss_api_order(s, x, c, p); }},
        {"value_range", std::nullopt,
         [](auto& s, auto x, auto& c, auto&, auto& p) { return loss_value_range(s, x[0], c, p); }},
        {"bce", DecisionType::MultiSelect,
         [](auto& s, auto x, auto&, auto& g, auto&) {
             return loss_bce(x, binary_targets(g, s.label_universe.size()));
         }},
        {"weighted_bce", DecisionType::MultiSelect,
         [](auto& s, auto x, auto& c, auto& g, auto& p) {
             return loss_weighted_bce(x, binary_targets(g, s.label_universe.size()), c, p);
         }},
    };
    std::uniform_int_distribution<std::size_t> m_d(1, 3), extra_d(0, 4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (const auto& op : ops) {
        GradRow row{op.name};
        std::size_t attempts = 0;
        while (row.instances < n && attempts < 20 * n) {
            ++attempts;
            DecisionSummary s;
            GroundTruth g;
            std::vector<double> x;
            if (op.type) {
                const std::size_t m = m_d(rng);
                s = random::label_summary(rng, *op.type, m, m + extra_d(rng) + 1);
                g = random::label_truth(rng, s);
                x = random::separated_scores(rng, s.label_universe.size(), base.theta);
            } else {
                s = random::range_summary(rng, m_d(rng));
                g = GroundTruth::scalar_score(u(rng));
                x = {u(rng)};
            }
            const SampleContext ctx = make_context(s, g);
            LossParams p = base;
            p.A = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
            auto f = [&](std::span<const double> v) { return op.fn(s, v, ctx, g, p); };
            try {
                const auto r = grad_check(f, x);
                row.max_rel_error = std::max(row.max_rel_error, r.max_rel_error);
                ++row.instances;
            } catch (const Error& e) {
                if (e.code() != "TIE_DETECTED") throw;
                ++row.skipped_ties;
            }
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace detail

/// Runs one CLI invocation. Returns 0 on success, 1 on a domain error and 2
/// on a usage error.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"decisionforge: decision-aware evaluation and training for ML API consumers", "decisionforge"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for all subcommands");

    std::string format = "json";
    std::string out_path;
    std::uint64_t seed = 1;
    double theta = 0.5, k = 10.0;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-o,--output", out_path, "Write machine output to this file");
        sub->add_option("--format", format, "Output format")->check(CLI::IsMember({"json", "table"}));
        sub->add_option("--seed", seed, "Random seed");
        sub->add_option("--theta", theta, "Prediction threshold")->check(CLI::Range(0.0, 1.0));
        sub->add_option("--k", k, "Sigmoid steepness")->check(CLI::PositiveNumber);
    };

    std::string in1, in2, in3, spec_path, app_id, variant = "decision", corpus_path = DFORGE_DEFAULT_CORPUS;
    std::string host = "127.0.0.1", pool_dir, losses_csv = "bce,decision";
    bool all = false;
    int port = 8080;
    std::size_t samples = 100, n_seeds = 10;
    double a_fraction = 0.5;

    auto* parse = app.add_subcommand("parse", "Extract a decision summary from a DPL program");
    parse->add_option("program", in1, "DPL source file")->required();
    parse->add_option("--app-id", app_id, "App id stored in the summary (default: file stem)");
    add_common(parse);

    auto* validate_cmd = app.add_subcommand("validate", "Check a summary file against its invariants");
    validate_cmd->add_option("summary", in1)->required();
    add_common(validate_cmd);

    auto* decide_cmd = app.add_subcommand("decide", "Run the decision engine on one API output");
    decide_cmd->add_option("summary", in1)->required();
    decide_cmd->add_option("scores", in2, "JSON with \"scores\", \"labels\" or \"score\"")->required();
    add_common(decide_cmd);

    auto* classify_cmd = app.add_subcommand("classify", "Classify the critical errors of one API output");
    classify_cmd->add_option("summary", in1)->required();
    classify_cmd->add_option("scores", in2)->required();
    classify_cmd->add_option("truth", in3, "JSON with \"labels\" or \"score\"")->required();
    add_common(classify_cmd);

    auto* loss_cmd = app.add_subcommand("loss", "Evaluate a loss and its gradient");
    loss_cmd->add_option("summary", in1)->required();
    loss_cmd->add_option("scores", in2)->required();
    loss_cmd->add_option("truth", in3)->required();
    loss_cmd->add_option("--variant", variant, "decision, app_order_perclass, bce or weighted_bce")
        ->check(CLI::IsMember({"decision", "app_order_perclass", "bce", "weighted_bce"}));
    loss_cmd->add_option("--A", a_fraction, "W-sample fraction for weighted_bce");
    add_common(loss_cmd);

    auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference check of every loss op");
    grad_cmd->add_flag("--all", all, "Check every loss op (the only mode)");
    grad_cmd->add_option("--samples", samples, "Instances per op");
    add_common(grad_cmd);

    auto* train_cmd = app.add_subcommand("train", "Train a model for a summary on synthetic data");
    train_cmd->add_option("summary", in1)->required();
    train_cmd->add_option("--spec", spec_path, "Train spec JSON");
    add_common(train_cmd);

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model on the spec's held-out data");
    eval_cmd->add_option("summary", in1)->required();
    eval_cmd->add_option("model", in2)->required();
    eval_cmd->add_option("--spec", spec_path, "Train spec JSON used to regenerate the data");
    add_common(eval_cmd);

    auto* compare_cmd = app.add_subcommand("compare", "Compare losses over several seeds");
    compare_cmd->add_option("summary", in1)->required();
    compare_cmd->add_option("--spec", spec_path, "Train spec JSON");
    compare_cmd->add_option("--losses", losses_csv, "Comma-separated loss kinds");
    compare_cmd->add_option("--seeds", n_seeds, "Number of consecutive seeds starting at --seed");
    add_common(compare_cmd);

    auto* stats_cmd = app.add_subcommand("corpus-stats", "Statistics of the bundled application corpus");
    stats_cmd->add_option("--corpus", corpus_path, "Corpus file");
    add_common(stats_cmd);

    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP backend");
    serve_cmd->add_option("--host", host);
    serve_cmd->add_option("--port", port);
    serve_cmd->add_option("--pool-dir", pool_dir, "Persistence directory (env DECISIONFORGE_POOL_DIR)");
    add_common(serve_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    detail::Output o{out_path, format, &out};
    const EngineConfig ecfg{theta};
    LossParams params{theta, k, 0.5};

    try {
        if (parse->parsed()) {
            dpl::SourceFile src{in1, detail::read_text(in1)};
            const std::string id = app_id.empty() ? std::filesystem::path(in1).stem().string() : app_id;
            const auto res = dpl::analyze(src, id);
            for (const auto& d : res.diagnostics) err << dpl::format(d, in1) << "\n";
            if (!res.summary) return 1;
            if (format == "table") o.emit(to_json_value(*res.summary));
            else o.write(to_json(*res.summary));
            return res.has_errors() ? 1 : 0;
        }
        if (validate_cmd->parsed()) {
            const auto s = detail::read_summary(in1);
            ojson j;
            j["valid"] = true;
            j["violations"] = ojson::array();
            for (const auto& v : validate(s)) {
                j["valid"] = false;
                j["violations"].push_back({{"code", v.code}, {"message", v.message}});
            }
            o.emit(j);
            return j["valid"].get<bool>() ? 0 : 1;
        }
        if (decide_cmd->parsed()) {
            const auto s = detail::read_summary(in1);
            const auto r = decide(s, detail::read_output(s, detail::read_json(in2), ecfg));
            ojson j;
            j["app_id"] = s.app_id;
            j["decision"] = detail::decision_json(s, r.decision);
            j["trace"] = detail::trace_json(s, r.trace);
            o.emit(j);
            return 0;
        }
        if (classify_cmd->parsed()) {
            const auto s = detail::read_summary(in1);
            const auto rep = classify(s, detail::read_output(s, detail::read_json(in2), ecfg),
                                      detail::read_truth(s, detail::read_json(in3)));
            ojson types = ojson::array();
            for (auto t : rep.types.list()) types.push_back(std::string(to_string(t)));
            ojson j;
            j["critical"] = rep.is_critical;
            j["types"] = types;
            j["correct_decision"] = detail::decision_json(s, rep.correct_decision);
            j["actual_decision"] = detail::decision_json(s, rep.actual_decision);
            j["trace"] = detail::trace_json(s, rep.trace);
            o.emit(j);
            return 0;
        }
        if (loss_cmd->parsed()) {
            const auto s = detail::read_summary(in1);
            std::vector<double> x;
            detail::read_output(s, detail::read_json(in2), ecfg, &x);
            const auto g = detail::read_truth(s, detail::read_json(in3));
            const auto ctx = make_context(s, g);
            params.A = a_fraction;
            LossResult r;
            if (variant == "decision") r = decision_loss(s, x, ctx, params);
            else if (variant == "app_order_perclass") r = loss_app_order_perclass(s, x, ctx, params);
            else if (variant == "bce") r = loss_bce(x, binary_targets(g, x.size()));
            else r = loss_weighted_bce(x, binary_targets(g, x.size()), ctx, params);
            ojson terms = ojson::array();
            for (const auto& t : r.terms) {
                ojson types = ojson::array();
                for (auto e : t.penalizes.list()) types.push_back(std::string(to_string(e)));
                terms.push_back({{"class", t.class_index}, {"penalizes", types}, {"argument", t.argument},
                                 {"value", t.value}});
            }
            ojson j;
            j["variant"] = variant;
            j["value"] = r.value;
            j["gradient"] = r.gradient;
            j["terms"] = terms;
            o.emit(j);
            return 0;
        }
        if (grad_cmd->parsed()) {
            const auto rows = detail::grad_check_all(seed, samples, params);
            ojson arr = ojson::array();
            double worst = 0.0;
            for (const auto& r : rows) {
                worst = std::max(worst, r.max_rel_error);
                arr.push_back({{"op", r.op}, {"instances", r.instances}, {"skipped_ties", r.skipped_ties},
                               {"max_rel_error", r.max_rel_error}});
            }
            ojson j;
            j["k"] = k;
            j["seed"] = seed;
            j["ops"] = arr;
            j["max_rel_error"] = worst;
            j["tolerance"] = 1e-4;
            o.emit(j);
            return worst <= 1e-4 ? 0 : 1;
        }
        if (train_cmd->parsed()) {
            const auto s = detail::read_summary(in1);
            const auto spec = detail::read_spec(spec_path, *train_cmd, seed, params);
            const auto res = fit(s, spec);
            ojson j;
            j["loss"] = std::string(to_string(spec.train.loss));
            j["metrics"] = report_to_json(res.report);
            if (out_path.empty()) {
                j["model"] = model_to_json(res.model);
                o.emit(j);
            } else {
                o.write(model_to_json(res.model).dump() + "\n");
                detail::Output{"", format, &out}.emit(j);
            }
            return 0;
        }
        if (eval_cmd->parsed()) {
            const auto s = detail::read_summary(in1);
            const auto model = model_from_json(detail::read_json(in2));
            const auto spec = detail::read_spec(spec_path, *eval_cmd, seed, params);
            if (spec.data.feature_dim != model.feature_dim)
                throw Error("BAD_INPUT_DIM", "model feature_dim differs from the spec");
            const auto ds = generate_dataset(spec.data, s);
            o.emit(report_to_json(evaluate(model, ds.test, s, EngineConfig{spec.train.params.theta})));
            return 0;
        }
        if (compare_cmd->parsed()) {
            const auto s = detail::read_summary(in1);
            const auto spec = detail::read_spec(spec_path, *compare_cmd, seed, params);
            std::vector<LossKind> kinds;
            std::stringstream ss(losses_csv);
            for (std::string item; std::getline(ss, item, ',');) {
                auto kk = parse_loss_kind(item);
                if (!kk) throw Error("BAD_CONFIG", "unknown loss '" + item + "'");
                kinds.push_back(*kk);
            }
            const auto seeds = detail::seed_list(seed, n_seeds);
            const auto rows = compare_losses(s, spec.data, spec.train, kinds, seeds);
            ojson arr = ojson::array();
            for (const auto& r : rows)
                arr.push_back({{"loss", std::string(to_string(r.loss))}, {"mean_rate", r.mean_rate}, {"rates", r.rates}});
            ojson j;
            j["seeds"] = seeds;
            j["results"] = arr;
            o.emit(j);
            return 0;
        }
        if (stats_cmd->parsed()) {
            const auto st = corpus_stats(load_corpus(corpus_path));
            if (format == "table") o.write(stats_to_table(st));
            else o.write(stats_to_json(st).dump(2) + "\n");
            return 0;
        }
        if (serve_cmd->parsed()) {
            if (pool_dir.empty()) {
                const char* env = std::getenv("DECISIONFORGE_POOL_DIR");
                pool_dir = env && *env ? env : "pool";
            }
            auto pool = ModelPool::load(pool_dir);
            HttpService svc(*pool);
            err << "serving on " << host << ":" << port << " with pool " << pool_dir << "\n";
            if (!svc.listen(host, port)) throw Error("IO_ERROR", "cannot bind " + host + ":" + std::to_string(port));
            return 0;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace dforge::cli
