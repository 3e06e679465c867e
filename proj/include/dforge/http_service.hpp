// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "error.hpp"
#include "model_pool.hpp"
#include "summary.hpp"
#include "trainer.hpp"

namespace dforge {

/// JSON-over-HTTP front end for a ModelPool.
///
///   POST /v1/apps               {app_id, summary, train_spec?} -> 201 record
///   GET  /v1/apps/{id}          -> 200 record
///   POST /v1/apps/{id}/infer    {features: [...]} -> 200 response
///   POST /v1/infer              same, app id taken from X-App-Id
///
/// Errors are {"error": {"code", "message"}}.
class HttpService {
public:
    explicit HttpService(ModelPool& pool) : pool_(pool) { routes(); }

    httplib::Server& server() { return svr_; }

    /// Binds and serves until stop(). Returns false if binding failed.
    bool listen(const std::string& host, int port) { return svr_.listen(host, port); }

    /// Binds an ephemeral port; call serve() afterwards.
    int bind_any(const std::string& host = "127.0.0.1") { return svr_.bind_to_any_port(host); }
    bool serve() { return svr_.listen_after_bind(); }
    void stop() { svr_.stop(); }
    void wait_until_ready() const { svr_.wait_until_ready(); }

private:
    static void send(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
        res.status = status;
        res.set_content(body.dump() + "\n", "application/json");
    }

    static void fail(httplib::Response& res, int status, const std::string& code, const std::string& message) {
        nlohmann::ordered_json j;
        j["error"] = {{"code", code}, {"message", message}};
        send(res, status, j);
    }

    static int status_for(const std::string& code) {
        if (code == "TRAIN_FAILED") return 422;
        if (code == "IO_ERROR") return 500;
        return 400;
    }

    void infer(const std::string& app_id, const httplib::Request& req, httplib::Response& res) {
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::exception& e) {
            return fail(res, 400, "BAD_REQUEST", e.what());
        }
        if (!body.is_object() || !body.contains("features") || !body["features"].is_array())
            return fail(res, 400, "BAD_REQUEST", "body needs a features array");
        std::vector<double> x;
        for (const auto& v : body["features"]) {
            if (!v.is_number()) return fail(res, 400, "BAD_REQUEST", "features must be numbers");
            x.push_back(v.get<double>());
        }
        try {
            send(res, 200, response_to_json(pool_.infer(app_id, x)));
        } catch (const Error& e) {
            fail(res, status_for(e.code()), e.code(), e.what());
        }
    }

    void routes() {
        svr_.Post("/v1/apps", [this](const httplib::Request& req, httplib::Response& res) {
            nlohmann::json body;
            try {
                body = nlohmann::json::parse(req.body);
            } catch (const nlohmann::json::exception& e) {
                return fail(res, 400, "INVALID_SUMMARY", std::string("malformed JSON: ") + e.what());
            }
            if (!body.is_object() || !body.contains("app_id") || !body["app_id"].is_string() ||
                !body.contains("summary"))
                return fail(res, 400, "INVALID_SUMMARY", "body needs app_id and summary");
            DecisionSummary summary;
            TrainSpec spec;
            try {
                summary = from_json_value(body["summary"]);
                if (body.contains("train_spec")) spec = train_spec_from_json(body["train_spec"]);
            } catch (const Error& e) {
                const std::string code = e.code() == "BAD_CONFIG" ? "BAD_CONFIG" : "INVALID_SUMMARY";
                return fail(res, 400, code, e.what());
            }
            try {
                send(res, 201, record_to_json(pool_.register_app(body["app_id"].get<std::string>(), summary, spec)));
            } catch (const Error& e) {
                fail(res, status_for(e.code()), e.code(), e.what());
            }
        });
        svr_.Get(R"(/v1/apps/([A-Za-z0-9._-]+))", [this](const httplib::Request& req, httplib::Response& res) {
            auto rec = pool_.find(req.matches[1]);
            if (!rec) return fail(res, 404, "NOT_FOUND", "no app '" + std::string(req.matches[1]) + "'");
            send(res, 200, record_to_json(*rec));
        });
        svr_.Post(R"(/v1/apps/([A-Za-z0-9._-]+)/infer)",
                  [this](const httplib::Request& req, httplib::Response& res) { infer(req.matches[1], req, res); });
        svr_.Post("/v1/infer", [this](const httplib::Request& req, httplib::Response& res) {
            infer(req.get_header_value("X-App-Id"), req, res);
        });
    }

    ModelPool& pool_;
    httplib::Server svr_;
};

}  // namespace dforge
