// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "engine.hpp"
#include "error.hpp"
#include "loss.hpp"
#include "summary.hpp"
#include "taxonomy.hpp"

namespace dforge {

struct SyntheticDatasetSpec {
    std::uint64_t seed = 1;
    std::size_t feature_dim = 16;
    std::size_t n_train = 2000;
    std::size_t n_test = 500;
    double noise_sigma = 0.5;
    std::size_t min_labels = 1;
    std::size_t max_labels = 3;
    // Extra labels beyond the summary universe. Must contain the universe when non-empty.
    std::vector<std::string> labels;
    std::size_t distractors = 4;  // used when `labels` is empty
    std::vector<std::pair<std::string, std::string>> confusable_pairs;
    double w_fraction = 0.5;  // target share of samples whose ground truth hits a class
    double scalar_low = -1.0;
    double scalar_high = 1.0;
};

struct Sample {
    std::vector<double> features;
    GroundTruth truth;
    friend bool operator==(const Sample& a, const Sample& b) {
        return a.features == b.features && a.truth.labels == b.truth.labels &&
               a.truth.scalar == b.truth.scalar && a.truth.kind == b.truth.kind;
    }
};

struct Dataset {
    std::vector<std::string> labels;  // label space; the first entries are the summary universe
    std::vector<Sample> train;
    std::vector<Sample> test;
};

/// Linear head: logistic per label, or tanh for scalar scores.
struct Model {
    ApiKind kind = ApiKind::LabelScores;
    std::size_t feature_dim = 0;
    std::vector<std::string> labels;  // empty for scalar heads
    std::vector<double> weights;      // outputs x feature_dim, row-major
    std::vector<double> bias;

    std::size_t outputs() const { return bias.size(); }

    static Model make(ApiKind kind, std::size_t dim, std::vector<std::string> labels, std::uint64_t seed) {
        Model m;
        m.kind = kind;
        m.feature_dim = dim;
        const std::size_t n = kind == ApiKind::ScalarScore ? 1 : labels.size();
        m.labels = kind == ApiKind::ScalarScore ? std::vector<std::string>{} : std::move(labels);
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(-0.1, 0.1);
        m.weights.resize(n * dim);
        m.bias.resize(n);
        for (auto& w : m.weights) w = u(rng);
        for (auto& b : m.bias) b = u(rng);
        return m;
    }

    void logits(std::span<const double> x, std::vector<double>& z) const {
        z.assign(outputs(), 0.0);
        for (std::size_t o = 0; o < outputs(); ++o) {
            const double* w = weights.data() + o * feature_dim;
            double acc = bias[o];
            for (std::size_t i = 0; i < feature_dim; ++i) acc += w[i] * x[i];
            z[o] = acc;
        }
    }

    std::vector<double> forward(std::span<const double> x) const {
        if (x.size() != feature_dim)
            throw Error("BAD_INPUT_DIM", "expected " + std::to_string(feature_dim) + " features, got " +
                                             std::to_string(x.size()));
        std::vector<double> z;
        logits(x, z);
        for (auto& v : z) v = kind == ApiKind::ScalarScore ? std::tanh(v) : 1.0 / (1.0 + std::exp(-v));
        return z;
    }

    bool finite() const {
        auto ok = [](double v) { return std::isfinite(v); };
        return std::all_of(weights.begin(), weights.end(), ok) && std::all_of(bias.begin(), bias.end(), ok);
    }

    friend bool operator==(const Model&, const Model&) = default;
};

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::ordered_json model_to_json(const Model& m) {
    nlohmann::ordered_json j;
    j["format"] = "decisionforge-model";
    j["version"] = kModelFormatVersion;
    j["kind"] = std::string(to_string(m.kind));
    j["feature_dim"] = m.feature_dim;
    j["labels"] = m.labels;
    j["weights"] = m.weights;
    j["bias"] = m.bias;
    return j;
}

template <class J>
Model model_from_json(const J& j) {
    try {
        if (j.at("format").template get<std::string>() != "decisionforge-model")
            throw Error("CORRUPT_MODEL", "unexpected format tag");
        if (j.at("version").template get<int>() != kModelFormatVersion)
            throw Error("CORRUPT_MODEL", "unsupported model version");
        Model m;
        auto kind = parse_api_kind(j.at("kind").template get<std::string>());
        if (!kind) throw Error("CORRUPT_MODEL", "unknown model kind");
        m.kind = *kind;
        m.feature_dim = j.at("feature_dim").template get<std::size_t>();
        m.labels = j.at("labels").template get<std::vector<std::string>>();
        m.weights = j.at("weights").template get<std::vector<double>>();
        m.bias = j.at("bias").template get<std::vector<double>>();
        const std::size_t n = m.kind == ApiKind::ScalarScore ? 1 : m.labels.size();
        if (m.bias.size() != n || m.weights.size() != n * m.feature_dim)
            throw Error("CORRUPT_MODEL", "parameter shapes do not match");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error("CORRUPT_MODEL", e.what());
    }
}

enum class LossKind { Bce, WeightedBce, Decision, AppOrderPerClass, Mse };

inline std::string_view to_string(LossKind k) {
    switch (k) {
        case LossKind::Bce: return "bce";
        case LossKind::WeightedBce: return "weighted_bce";
        case LossKind::Decision: return "decision";
        case LossKind::AppOrderPerClass: return "app_order_perclass";
        case LossKind::Mse: return "mse";
    }
    return "?";
}

inline std::optional<LossKind> parse_loss_kind(std::string_view s) {
    for (auto k : {LossKind::Bce, LossKind::WeightedBce, LossKind::Decision, LossKind::AppOrderPerClass,
                   LossKind::Mse})
        if (to_string(k) == s) return k;
    return std::nullopt;
}

struct TrainConfig {
    LossKind loss = LossKind::Decision;
    double lr = 0.1;
    std::size_t epochs = 200;
    std::size_t batch = 64;
    std::uint64_t seed = 1;
    LossParams params;
};

struct TrainResult {
    Model model;
    std::vector<double> loss_curve;  // mean training loss per epoch
};

struct EvalReport {
    double incorrect_decision_rate = 0.0;
    ErrorRate errors;
    double label_precision = 0.0;
    double label_recall = 0.0;
    std::vector<double> loss_curve;
};

namespace detail {

inline std::vector<double> random_unit(std::mt19937_64& rng, std::size_t d) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(d);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (auto& x : v) {
            x = n(rng);
            norm += x * x;
        }
    } while (norm < 1e-12);
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

inline std::size_t index_of(const std::vector<std::string>& names, const std::string& n) {
    auto it = std::find(names.begin(), names.end(), n);
    if (it == names.end()) throw Error("SPEC_MISMATCH", "label '" + n + "' is not in the dataset label space");
    return static_cast<std::size_t>(it - names.begin());
}

}  // namespace detail

/// Builds the dataset label space: the summary universe first (so score
/// indices agree with label ids), then the remaining spec labels.
inline std::vector<std::string> dataset_labels(const SyntheticDatasetSpec& spec, const DecisionSummary& s) {
    std::vector<std::string> out;
    for (const auto& l : s.label_universe) out.push_back(l.name);
    if (spec.labels.empty()) {
        for (std::size_t i = 0; i < spec.distractors; ++i) out.push_back("distractor_" + std::to_string(i));
        return out;
    }
    for (const auto& l : s.label_universe)
        if (std::find(spec.labels.begin(), spec.labels.end(), l.name) == spec.labels.end())
            throw Error("SPEC_MISMATCH", "summary label '" + l.name + "' missing from dataset labels");
    for (const auto& n : spec.labels)
        if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
    return out;
}

inline Dataset generate_dataset(const SyntheticDatasetSpec& spec, const DecisionSummary& s) {
    if (spec.feature_dim == 0) throw Error("SPEC_MISMATCH", "feature_dim must be positive");
    if (spec.min_labels < 1 || spec.max_labels < spec.min_labels)
        throw Error("SPEC_MISMATCH", "labels_per_sample range is empty");
    Dataset ds;
    std::mt19937_64 rng(spec.seed);
    const std::size_t d = spec.feature_dim;
    std::normal_distribution<double> noise(0.0, 1.0);

    if (s.api_kind == ApiKind::ScalarScore) {
        const auto direction = detail::random_unit(rng, d);
        std::uniform_real_distribution<double> g(spec.scalar_low, spec.scalar_high);
        auto draw = [&](std::size_t n, std::vector<Sample>& out) {
            for (std::size_t i = 0; i < n; ++i) {
                const double v = g(rng);
                Sample x;
                x.truth = GroundTruth::scalar_score(v);
                x.features.resize(d);
                for (std::size_t k = 0; k < d; ++k) x.features[k] = v * direction[k] + spec.noise_sigma * noise(rng);
                out.push_back(std::move(x));
            }
        };
        draw(spec.n_train, ds.train);
        draw(spec.n_test, ds.test);
        return ds;
    }

    ds.labels = dataset_labels(spec, s);
    const std::size_t L = ds.labels.size();
    std::vector<std::vector<double>> proto(L);
    for (auto& p : proto) p = detail::random_unit(rng, d);
    for (const auto& [a_name, b_name] : spec.confusable_pairs) {
        const std::size_t a = detail::index_of(ds.labels, a_name);
        const std::size_t b = detail::index_of(ds.labels, b_name);
        // b sits at distance 0.5 from a along a direction orthogonal to a.
        auto u = detail::random_unit(rng, d);
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += u[k] * proto[a][k];
        double norm = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            u[k] -= dot * proto[a][k];
            norm += u[k] * u[k];
        }
        norm = std::sqrt(norm);
        for (std::size_t k = 0; k < d; ++k) proto[b][k] = proto[a][k] + 0.5 * u[k] / norm;
    }

    const auto w = s.all_class_labels();
    std::vector<LabelId> not_w;
    for (LabelId id = 0; id < L; ++id)
        if (!std::binary_search(w.begin(), w.end(), id)) not_w.push_back(id);
    if (w.empty() && spec.w_fraction > 0.0) throw Error("SPEC_MISMATCH", "summary has no class labels");
    if (not_w.empty() && spec.w_fraction < 1.0)
        throw Error("SPEC_MISMATCH", "no labels outside the classes for Others samples");

    std::bernoulli_distribution hits_class(std::clamp(spec.w_fraction, 0.0, 1.0));
    std::uniform_int_distribution<std::size_t> count(spec.min_labels, spec.max_labels);
    auto pick = [&](const std::vector<LabelId>& from) {
        std::uniform_int_distribution<std::size_t> u(0, from.size() - 1);
        return from[u(rng)];
    };
    std::vector<LabelId> all(L);
    std::iota(all.begin(), all.end(), LabelId{0});

    auto draw = [&](std::size_t n, std::vector<Sample>& out) {
        for (std::size_t i = 0; i < n; ++i) {
            const bool w_sample = hits_class(rng);
            const std::size_t k = count(rng);
            std::vector<LabelId> ids{pick(w_sample ? w : not_w)};
            const auto& extra_pool = w_sample ? all : not_w;
            for (std::size_t j = 1; j < k; ++j) ids.push_back(pick(extra_pool));
            Sample x;
            x.truth = GroundTruth::label_set(ids);
            x.features.assign(d, 0.0);
            const double inv = 1.0 / static_cast<double>(x.truth.labels.size());
            for (LabelId id : x.truth.labels)
                for (std::size_t c = 0; c < d; ++c) x.features[c] += proto[id][c] * inv;
            for (auto& f : x.features) f += spec.noise_sigma * noise(rng);
            out.push_back(std::move(x));
        }
    };
    draw(spec.n_train, ds.train);
    draw(spec.n_test, ds.test);
    return ds;
}

inline double w_sample_fraction(const DecisionSummary& s, std::span<const Sample> data) {
    if (data.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& x : data) hits += make_context(s, x.truth).y ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Loss and gradient with respect to the model outputs for one sample.
inline LossResult output_loss(const DecisionSummary& s, std::span<const double> out, const Sample& x,
                              LossKind kind, const LossParams& p) {
    switch (kind) {
        case LossKind::Bce: return loss_bce(out, binary_targets(x.truth, out.size()));
        case LossKind::WeightedBce:
            return loss_weighted_bce(out, binary_targets(x.truth, out.size()), make_context(s, x.truth), p);
        case LossKind::Decision: return decision_loss(s, out, make_context(s, x.truth), p);
        case LossKind::AppOrderPerClass: return loss_app_order_perclass(s, out, make_context(s, x.truth), p);
        case LossKind::Mse: {
            if (out.size() != 1) throw Error("WRONG_DECISION_TYPE", "mse applies to scalar heads");
            const double e = out[0] - x.truth.scalar;
            LossResult r;
            r.value = e * e;
            r.gradient = {2.0 * e};
            return r;
        }
    }
    throw Error("WRONG_DECISION_TYPE", "unknown loss kind");
}

inline TrainResult train(Model model, const DecisionSummary& s, std::span<const Sample> data, TrainConfig cfg) {
    if (!(cfg.lr >= 0.0) || cfg.epochs < 1 || cfg.batch < 1)
        throw Error("BAD_CONFIG", "lr must be >= 0, epochs >= 1, batch >= 1");
    if (model.kind != s.api_kind) throw Error("KIND_MISMATCH", "model kind differs from summary api_kind");
    if (cfg.loss == LossKind::WeightedBce) cfg.params.A = w_sample_fraction(s, data);

    TrainResult res;
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t dim = model.feature_dim;
    std::vector<double> gw(model.weights.size()), gb(model.bias.size()), z;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            std::fill(gw.begin(), gw.end(), 0.0);
            std::fill(gb.begin(), gb.end(), 0.0);
            for (std::size_t i = start; i < end; ++i) {
                const Sample& x = data[order[i]];
                model.logits(x.features, z);
                std::vector<double> out(z.size());
                for (std::size_t o = 0; o < z.size(); ++o)
                    out[o] = model.kind == ApiKind::ScalarScore ? std::tanh(z[o]) : 1.0 / (1.0 + std::exp(-z[o]));
                const LossResult l = output_loss(s, out, x, cfg.loss, cfg.params);
                epoch_loss += l.value;
                for (std::size_t o = 0; o < out.size(); ++o) {
                    const double dz = l.gradient[o] * (model.kind == ApiKind::ScalarScore
                                                           ? 1.0 - out[o] * out[o]
                                                           : out[o] * (1.0 - out[o]));
                    if (dz == 0.0) continue;
                    gb[o] += dz;
                    double* g = gw.data() + o * dim;
                    for (std::size_t k = 0; k < dim; ++k) g[k] += dz * x.features[k];
                }
            }
            const double scale = cfg.lr / static_cast<double>(end - start);
            for (std::size_t k = 0; k < gw.size(); ++k) model.weights[k] -= scale * gw[k];
            for (std::size_t k = 0; k < gb.size(); ++k) model.bias[k] -= scale * gb[k];
            if (!model.finite())
                throw Error("DIVERGENCE", "non-finite parameter after epoch " + std::to_string(epoch) +
                                              ", batch starting at " + std::to_string(start));
        }
        res.loss_curve.push_back(data.empty() ? 0.0 : epoch_loss / static_cast<double>(data.size()));
    }
    res.model = std::move(model);
    return res;
}

inline ScoredSample predict(const Model& m, const Sample& x) {
    ScoredSample p;
    auto out = m.forward(x.features);
    if (m.kind == ApiKind::ScalarScore)
        p.scalar = out[0];
    else
        p.scores = std::move(out);
    p.truth = x.truth;
    return p;
}

inline EvalReport evaluate(const Model& m, std::span<const Sample> test, const DecisionSummary& s,
                           const EngineConfig& cfg, std::vector<double> loss_curve = {}) {
    if (test.empty()) throw Error("EMPTY_DATASET", "evaluate needs at least one sample");
    std::vector<ScoredSample> preds;
    preds.reserve(test.size());
    for (const auto& x : test) preds.push_back(predict(m, x));
    EvalReport rep;
    rep.errors = error_rate(s, preds, cfg);
    rep.incorrect_decision_rate = rep.errors.incorrect_decision_rate;
    rep.loss_curve = std::move(loss_curve);
    if (m.kind == ApiKind::LabelScores) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (const auto& p : preds) {
            for (std::size_t l = 0; l < p.scores.size(); ++l) {
                const bool pred = p.scores[l] >= cfg.theta;
                const bool truth = p.truth.contains(l);
                tp += pred && truth;
                fp += pred && !truth;
                fn += !pred && truth;
            }
        }
        rep.label_precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        rep.label_recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    }
    return rep;
}

struct CompareRow {
    LossKind loss;
    std::vector<double> rates;  // one per seed
    double mean_rate = 0.0;
};

/// Trains one model per (loss, seed). A seed fixes both the data and the
/// initial parameters, so every loss sees identical inputs for that seed.
inline std::vector<CompareRow> compare_losses(const DecisionSummary& s, SyntheticDatasetSpec spec,
                                              const TrainConfig& base, std::span<const LossKind> losses,
                                              std::span<const std::uint64_t> seeds) {
    std::vector<CompareRow> rows;
    for (auto k : losses) rows.push_back({k, {}, 0.0});
    for (auto seed : seeds) {
        spec.seed = seed;
        const Dataset ds = generate_dataset(spec, s);
        const Model init = Model::make(s.api_kind, spec.feature_dim, ds.labels, seed);
        for (auto& row : rows) {
            TrainConfig cfg = base;
            cfg.loss = row.loss;
            cfg.seed = seed;
            const auto trained = train(init, s, ds.train, cfg);
            row.rates.push_back(evaluate(trained.model, ds.test, s, EngineConfig{cfg.params.theta}).incorrect_decision_rate);
        }
    }
    for (auto& row : rows)
        row.mean_rate = row.rates.empty() ? 0.0
                                          : std::accumulate(row.rates.begin(), row.rates.end(), 0.0) /
                                                static_cast<double>(row.rates.size());
    return rows;
}


/// Dataset and optimizer settings for one customized model.
struct TrainSpec {
    SyntheticDatasetSpec data;
    TrainConfig train;
};

inline nlohmann::ordered_json train_spec_to_json(const TrainSpec& t) {
    nlohmann::ordered_json j;
    j["seed"] = t.data.seed;
    j["feature_dim"] = t.data.feature_dim;
    j["n_train"] = t.data.n_train;
    j["n_test"] = t.data.n_test;
    j["noise_sigma"] = t.data.noise_sigma;
    j["min_labels"] = t.data.min_labels;
    j["max_labels"] = t.data.max_labels;
    j["labels"] = t.data.labels;
    j["distractors"] = t.data.distractors;
    j["confusable_pairs"] = nlohmann::ordered_json::array();
    for (const auto& [a, b] : t.data.confusable_pairs) j["confusable_pairs"].push_back({a, b});
    j["w_fraction"] = t.data.w_fraction;
    j["scalar_low"] = t.data.scalar_low;
    j["scalar_high"] = t.data.scalar_high;
    j["loss"] = std::string(to_string(t.train.loss));
    j["lr"] = t.train.lr;
    j["epochs"] = t.train.epochs;
    j["batch"] = t.train.batch;
    j["theta"] = t.train.params.theta;
    j["k"] = t.train.params.k;
    return j;
}

/// Missing keys keep their defaults. `seed` drives data, init and shuffling.
template <class J>
TrainSpec train_spec_from_json(const J& j) {
    TrainSpec t;
    if (!j.is_object()) throw Error("BAD_CONFIG", "train spec must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "seed") t.data.seed = t.train.seed = v.template get<std::uint64_t>();
            else if (key == "feature_dim") t.data.feature_dim = v.template get<std::size_t>();
            else if (key == "n_train") t.data.n_train = v.template get<std::size_t>();
            else if (key == "n_test") t.data.n_test = v.template get<std::size_t>();
            else if (key == "noise_sigma") t.data.noise_sigma = v.template get<double>();
            else if (key == "min_labels") t.data.min_labels = v.template get<std::size_t>();
            else if (key == "max_labels") t.data.max_labels = v.template get<std::size_t>();
            else if (key == "labels") t.data.labels = v.template get<std::vector<std::string>>();
            else if (key == "distractors") t.data.distractors = v.template get<std::size_t>();
            else if (key == "confusable_pairs") {
                for (const auto& p : v) {
                    const auto pair = p.template get<std::vector<std::string>>();
                    if (pair.size() != 2) throw Error("BAD_CONFIG", "confusable_pairs entries need two labels");
                    t.data.confusable_pairs.emplace_back(pair[0], pair[1]);
                }
            } else if (key == "w_fraction") t.data.w_fraction = v.template get<double>();
            else if (key == "scalar_low") t.data.scalar_low = v.template get<double>();
            else if (key == "scalar_high") t.data.scalar_high = v.template get<double>();
            else if (key == "loss") {
                auto k = parse_loss_kind(v.template get<std::string>());
                if (!k) throw Error("BAD_CONFIG", "unknown loss '" + v.template get<std::string>() + "'");
                t.train.loss = *k;
            } else if (key == "lr") t.train.lr = v.template get<double>();
            else if (key == "epochs") t.train.epochs = v.template get<std::size_t>();
            else if (key == "batch") t.train.batch = v.template get<std::size_t>();
            else if (key == "theta") t.train.params.theta = v.template get<double>();
            else if (key == "k") t.train.params.k = v.template get<double>();
            else throw Error("BAD_CONFIG", "unknown train spec field '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("BAD_CONFIG", e.what());
    }
    return t;
}

/// Generates data, trains from a seeded init and evaluates on the held-out split.
struct FitResult {
    Model model;
    EvalReport report;
};

inline FitResult fit(const DecisionSummary& s, const TrainSpec& spec) {
    const Dataset ds = generate_dataset(spec.data, s);
    TrainConfig cfg = spec.train;
    cfg.seed = spec.data.seed;
    auto trained = train(Model::make(s.api_kind, spec.data.feature_dim, ds.labels, spec.data.seed), s, ds.train, cfg);
    auto report = evaluate(trained.model, ds.test, s, EngineConfig{cfg.params.theta}, std::move(trained.loss_curve));
    return {std::move(trained.model), std::move(report)};
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["incorrect_decision_rate"] = r.incorrect_decision_rate;
    j["samples"] = r.errors.samples;
    j["critical"] = r.errors.critical;
    j["type1"] = r.errors.count(ErrorType::Type1);
    j["type2"] = r.errors.count(ErrorType::Type2);
    j["type3"] = r.errors.count(ErrorType::Type3);
    j["label_precision"] = r.label_precision;
    j["label_recall"] = r.label_recall;
    j["final_loss"] = r.loss_curve.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.loss_curve.back());
    return j;
}

}  // namespace dforge
