// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "engine.hpp"
#include "error.hpp"
#include "summary.hpp"
#include "trainer.hpp"

namespace dforge {

enum class AppStatus { Training, Ready, Failed };

inline std::string_view to_string(AppStatus s) {
    switch (s) {
        case AppStatus::Training: return "Training";
        case AppStatus::Ready: return "Ready";
        case AppStatus::Failed: return "Failed";
    }
    return "?";
}

inline std::optional<AppStatus> parse_app_status(std::string_view s) {
    for (auto v : {AppStatus::Training, AppStatus::Ready, AppStatus::Failed})
        if (to_string(v) == s) return v;
    return std::nullopt;
}

/// Immutable once published; replaced wholesale on re-registration.
struct AppRecord {
    std::string app_id;
    DecisionSummary summary;
    TrainSpec train_spec;
    std::shared_ptr<const Model> model;  // set iff status == Ready
    AppStatus status = AppStatus::Training;
    nlohmann::ordered_json metrics;      // null until evaluated
    std::string failure;                 // error text when Failed
    std::int64_t created = 0;            // unix seconds
    std::int64_t updated = 0;
};

inline nlohmann::ordered_json record_to_json(const AppRecord& r) {
    nlohmann::ordered_json j;
    j["app_id"] = r.app_id;
    j["status"] = std::string(to_string(r.status));
    j["summary"] = to_json_value(r.summary);
    j["train_spec"] = train_spec_to_json(r.train_spec);
    j["metrics"] = r.metrics;
    if (!r.failure.empty()) j["failure"] = r.failure;
    j["created"] = r.created;
    j["updated"] = r.updated;
    return j;
}

struct InferResponse {
    std::string model;  // "generic" or "customized:<app_id>"
    ApiKind kind = ApiKind::LabelScores;
    std::vector<std::pair<std::string, double>> labels;  // thresholded, ranked
    double score = 0.0;

    friend bool operator==(const InferResponse&, const InferResponse&) = default;
};

inline nlohmann::ordered_json response_to_json(const InferResponse& r) {
    nlohmann::ordered_json j;
    j["model"] = r.model;
    if (r.kind == ApiKind::ScalarScore) {
        j["score"] = r.score;
    } else {
        j["labels"] = nlohmann::ordered_json::array();
        for (const auto& [n, s] : r.labels) j["labels"].push_back({{"name", n}, {"score", s}});
    }
    return j;
}

struct PoolConfig {
    std::size_t feature_dim = 16;
    std::size_t generic_labels = 8;
    std::uint64_t seed = 7;
    double theta = 0.5;
};

inline bool valid_app_id(std::string_view id) {
    if (id.empty() || id.size() > 128 || id == "." || id == "..") return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
    });
}

namespace detail {

inline std::int64_t now_seconds() {
    return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("IO_ERROR", "cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Write-then-rename so readers never observe a partial file.
inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
    const auto tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("IO_ERROR", "cannot write " + tmp);
        out << text;
        if (!out) throw Error("IO_ERROR", "short write to " + tmp);
    }
    std::filesystem::rename(tmp, p, ec);
    if (ec) throw Error("IO_ERROR", "cannot rename " + tmp + ": " + ec.message());
}

inline Model train_generic(const PoolConfig& cfg) {
    DecisionSummary s;
    s.app_id = "generic";
    s.decision_type = DecisionType::MultiSelect;
    for (std::size_t i = 0; i < cfg.generic_labels; ++i) {
        s.label_universe.push_back({i, "label_" + std::to_string(i)});
        s.classes.push_back({"label_" + std::to_string(i), LabelSet{i}});
    }
    TrainSpec spec;
    spec.data.seed = cfg.seed;
    spec.data.feature_dim = cfg.feature_dim;
    spec.data.n_train = 500;
    spec.data.n_test = 100;
    spec.data.distractors = 0;
    spec.data.w_fraction = 1.0;
    spec.train.loss = LossKind::Bce;
    spec.train.epochs = 30;
    spec.train.params.theta = cfg.theta;
    return fit(s, spec).model;
}

}  // namespace detail

/// Registry of customized models plus the shared generic model.
///
/// Readers take a shared lock only long enough to copy a shared_ptr, so a
/// registration that is training never blocks inference. Registrations are
/// serialized among themselves.
class ModelPool {
public:
    explicit ModelPool(PoolConfig cfg = {}, std::optional<std::filesystem::path> dir = std::nullopt)
        : cfg_(cfg), dir_(std::move(dir)) {
        generic_ = std::make_shared<const Model>(detail::train_generic(cfg_));
    }

    const PoolConfig& config() const { return cfg_; }
    const std::optional<std::filesystem::path>& directory() const { return dir_; }

    /// Validates, trains, publishes and persists. Throws INVALID_APP_ID,
    /// INVALID_SUMMARY or TRAIN_FAILED; the failed record is still published.
    AppRecord register_app(const std::string& app_id, DecisionSummary summary, TrainSpec spec) {
        if (!valid_app_id(app_id)) throw Error("INVALID_APP_ID", "app id must match [A-Za-z0-9._-]+");
        summary.app_id = app_id;
        if (auto v = validate(summary); !v.empty())
            throw Error("INVALID_SUMMARY", v.front().code + ": " + v.front().message);

        std::lock_guard reg(register_mu_);
        auto previous = find(app_id);
        auto rec = std::make_shared<AppRecord>();
        rec->app_id = app_id;
        rec->summary = std::move(summary);
        rec->train_spec = spec;
        rec->created = previous ? previous->created : detail::now_seconds();
        rec->updated = detail::now_seconds();

        try {
            auto result = fit(rec->summary, spec);
            rec->model = std::make_shared<const Model>(std::move(result.model));
            rec->metrics = report_to_json(result.report);
            rec->status = AppStatus::Ready;
        } catch (const Error& e) {
            rec->status = AppStatus::Failed;
            rec->failure = e.what();
        }
        publish(rec);
        if (dir_) persist(*dir_);
        if (rec->status == AppStatus::Failed) throw Error("TRAIN_FAILED", rec->failure);
        return *rec;
    }

    std::shared_ptr<const AppRecord> find(const std::string& app_id) const {
        std::shared_lock lock(mu_);
        auto it = apps_.find(app_id);
        return it == apps_.end() ? nullptr : it->second;
    }

    std::vector<std::string> app_ids() const {
        std::shared_lock lock(mu_);
        std::vector<std::string> out;
        for (const auto& [id, _] : apps_) out.push_back(id);
        return out;
    }

    std::shared_ptr<const Model> generic_model() const {
        std::shared_lock lock(mu_);
        return generic_;
    }

    /// Routes to the app's Ready model, otherwise the generic model.
    InferResponse infer(const std::string& app_id, std::span<const double> features) const {
        std::shared_ptr<const AppRecord> rec = find(app_id);
        InferResponse r;
        std::shared_ptr<const Model> model;
        if (rec && rec->status == AppStatus::Ready) {
            model = rec->model;
            r.model = "customized:" + rec->app_id;
        } else {
            model = generic_model();
            r.model = "generic";
        }
        const auto out = model->forward(features);
        r.kind = model->kind;
        if (model->kind == ApiKind::ScalarScore) {
            r.score = out[0];
            return r;
        }
        const double theta = rec && rec->model ? rec->train_spec.train.params.theta : cfg_.theta;
        for (const auto& l : api_output_from_scores(out, EngineConfig{theta}).labels)
            r.labels.emplace_back(model->labels[l.id], l.score);
        return r;
    }

    /// Writes manifest.json, generic.model and models/<app_id>.model.
    void persist(const std::filesystem::path& dir) const {
        std::vector<std::shared_ptr<const AppRecord>> snapshot;
        std::shared_ptr<const Model> generic;
        {
            std::shared_lock lock(mu_);
            for (const auto& [_, r] : apps_) snapshot.push_back(r);
            generic = generic_;
        }
        nlohmann::ordered_json m;
        m["format"] = "decisionforge-pool";
        m["version"] = 1;
        m["feature_dim"] = cfg_.feature_dim;
        m["generic_labels"] = cfg_.generic_labels;
        m["seed"] = cfg_.seed;
        m["theta"] = cfg_.theta;
        m["generic_model"] = "generic.model";
        m["apps"] = nlohmann::ordered_json::array();
        detail::write_file(dir / "generic.model", model_to_json(*generic).dump() + "\n");
        for (const auto& r : snapshot) {
            auto j = record_to_json(*r);
            if (r->model) {
                const std::string file = "models/" + r->app_id + ".model";
                detail::write_file(dir / file, model_to_json(*r->model).dump() + "\n");
                j["model_file"] = file;
            }
            m["apps"].push_back(std::move(j));
        }
        detail::write_file(dir / "manifest.json", m.dump(2) + "\n");
    }

    /// Restores a pool. A directory without a manifest yields a pool holding
    /// only a freshly trained generic model.
    static std::unique_ptr<ModelPool> load(const std::filesystem::path& dir, PoolConfig defaults = {}) {
        const auto manifest_path = dir / "manifest.json";
        if (!std::filesystem::exists(manifest_path)) return std::make_unique<ModelPool>(defaults, dir);

        auto corrupt = [&](const std::string& msg) {
            return Error("CORRUPT_MANIFEST", manifest_path.string() + ": " + msg);
        };
        nlohmann::json m;
        nlohmann::ordered_json ordered;  // keeps metrics keys in written order
        try {
            const std::string text = detail::read_file(manifest_path);
            m = nlohmann::json::parse(text);
            ordered = nlohmann::ordered_json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw corrupt(e.what());
        }
        if (!m.is_object() || m.value("format", "") != "decisionforge-pool") throw corrupt("not a pool manifest");

        std::unique_ptr<ModelPool> pool(new ModelPool(Tag{}));
        pool->dir_ = dir;
        try {
            pool->cfg_.feature_dim = m.at("feature_dim").get<std::size_t>();
            pool->cfg_.generic_labels = m.at("generic_labels").get<std::size_t>();
            pool->cfg_.seed = m.at("seed").get<std::uint64_t>();
            pool->cfg_.theta = m.at("theta").get<double>();
            pool->generic_ = std::make_shared<const Model>(
                load_model(dir, m.at("generic_model").get<std::string>(), manifest_path));
            const auto& apps = m.at("apps");
            for (std::size_t i = 0; i < apps.size(); ++i) {
                const auto& a = apps.at(i);
                auto rec = std::make_shared<AppRecord>();
                rec->app_id = a.at("app_id").get<std::string>();
                if (!valid_app_id(rec->app_id)) throw corrupt("invalid app id '" + rec->app_id + "'");
                auto st = parse_app_status(a.at("status").get<std::string>());
                if (!st) throw corrupt("unknown status for " + rec->app_id);
                rec->status = *st;
                rec->summary = from_json_value(a.at("summary"));
                rec->train_spec = train_spec_from_json(a.at("train_spec"));
                rec->metrics = ordered.at("apps").at(i).at("metrics");
                if (a.contains("failure")) rec->failure = a.at("failure").get<std::string>();
                rec->created = a.at("created").get<std::int64_t>();
                rec->updated = a.at("updated").get<std::int64_t>();
                if (rec->status == AppStatus::Ready) {
                    if (!a.contains("model_file")) throw corrupt("Ready app " + rec->app_id + " has no model_file");
                    rec->model = std::make_shared<const Model>(
                        load_model(dir, a.at("model_file").get<std::string>(), manifest_path));
                }
                pool->apps_[rec->app_id] = std::move(rec);
            }
        } catch (const nlohmann::json::exception& e) {
            throw corrupt(e.what());
        } catch (const Error& e) {
            if (e.code() == "CORRUPT_MANIFEST") throw;
            throw corrupt(e.what());
        }
        return pool;
    }

private:
    struct Tag {};
    explicit ModelPool(Tag) {}

    static Model load_model(const std::filesystem::path& dir, const std::string& rel,
                            const std::filesystem::path& manifest) {
        const auto p = dir / rel;
        if (!std::filesystem::exists(p))
            throw Error("CORRUPT_MANIFEST", manifest.string() + ": referenced model file " + p.string() + " is missing");
        try {
            return model_from_json(nlohmann::json::parse(detail::read_file(p)));
        } catch (const nlohmann::json::exception& e) {
            throw Error("CORRUPT_MANIFEST", manifest.string() + ": model file " + p.string() + ": " + e.what());
        } catch (const Error& e) {
            throw Error("CORRUPT_MANIFEST", manifest.string() + ": model file " + p.string() + ": " + e.what());
        }
    }

    void publish(std::shared_ptr<const AppRecord> rec) {
        std::unique_lock lock(mu_);
        apps_[rec->app_id] = std::move(rec);
    }

    PoolConfig cfg_;
    std::optional<std::filesystem::path> dir_;
    mutable std::shared_mutex mu_;
    std::mutex register_mu_;
    std::map<std::string, std::shared_ptr<const AppRecord>> apps_;
    std::shared_ptr<const Model> generic_;
};

}  // namespace dforge
