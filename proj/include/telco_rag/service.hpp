#pragma once

#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "error.hpp"
#include "pipeline.hpp"
#include "runtime.hpp"

namespace telco_rag {

struct ApiQueryRequest {
    std::string query;
    std::optional<Mode> mode;
    std::optional<std::vector<std::string>> options;
    nlohmann::json overrides = nlohmann::json::object(); // retrieval settings
};

/// A request body problem tied to one field.
class FieldError : public Error {
public:
    FieldError(std::string field, const std::string& message)
        : Error("argument", field + ": " + message), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

inline constexpr const char* kOverridable[] = {"context_budget", "chunks_per_context", "series_k",
                                               "candidate_answer_count", "rounds"};

inline ApiQueryRequest parse_query_request(const std::string& body) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception&) {
        throw FieldError("body", "not valid JSON");
    }
    if (!j.is_object()) throw FieldError("body", "must be a JSON object");

    ApiQueryRequest r;
    if (!j.contains("query") || !j["query"].is_string()) throw FieldError("query", "required string");
    r.query = j["query"].get<std::string>();
    if (trim(r.query).empty()) throw FieldError("query", "must not be empty");

    if (j.contains("mode") && !j["mode"].is_null()) {
        if (!j["mode"].is_string()) throw FieldError("mode", "must be a string");
        try {
            r.mode = mode_from_string(j["mode"].get<std::string>());
        } catch (const ArgumentError&) {
            throw FieldError("mode", "must be one of full, web, standards, llm-only");
        }
    }

    if (j.contains("options") && !j["options"].is_null()) {
        const auto& o = j["options"];
        if (!o.is_array() || o.size() < 2 || o.size() > 5) throw FieldError("options", "must be an array of 2 to 5 strings");
        std::vector<std::string> opts;
        for (std::size_t i = 0; i < o.size(); ++i) {
            if (!o[i].is_string()) throw FieldError("options[" + std::to_string(i) + "]", "must be a string");
            opts.push_back(o[i].get<std::string>());
        }
        r.options = std::move(opts);
    }

    if (j.contains("overrides") && !j["overrides"].is_null()) {
        const auto& ov = j["overrides"];
        if (!ov.is_object()) throw FieldError("overrides", "must be an object");
        for (const auto& [key, value] : ov.items()) {
            if (std::find(std::begin(kOverridable), std::end(kOverridable), key) == std::end(kOverridable))
                throw FieldError("overrides." + key, "unknown setting");
            if (!value.is_number_integer() || value.get<long long>() < 1)
                throw FieldError("overrides." + key, "must be a positive integer");
        }
        r.overrides = ov;
    }
    return r;
}

/// JSON adapter over a Runtime: POST /v1/query, GET /v1/health,
/// GET /v1/config.
class Service {
public:
    explicit Service(Runtime& rt) : rt_(rt) {}

    void mount(httplib::Server& srv) {
        srv.Post("/v1/query", [this](const httplib::Request& req, httplib::Response& res) { query(req, res); });
        srv.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(rt_.health().dump(), "application/json");
        });
        srv.Get("/v1/config", [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(rt_.config().to_json().dump(), "application/json");
        });
    }

    /// Blocks until stop() is called from another thread.
    void serve(const std::string& bind, int port) {
        mount(server_);
        if (!server_.bind_to_port(bind, port)) throw ConfigError("cannot bind " + bind + ":" + std::to_string(port));
        server_.listen_after_bind();
    }

    void stop() { server_.stop(); }

private:
    static void error(httplib::Response& res, int status, const Error& e, const std::string& field = {}) {
        nlohmann::json body = {{"kind", e.kind()}, {"message", e.what()}};
        if (!field.empty()) body["field"] = field;
        if (const auto* pe = dynamic_cast<const PipelineError*>(&e)) body["prompt"] = pe->prompt();
        res.status = status;
        res.set_content(nlohmann::json{{"error", body}}.dump(), "application/json");
    }

    void query(const httplib::Request& req, httplib::Response& res) {
        ApiQueryRequest q;
        try {
            q = parse_query_request(req.body);
        } catch (const FieldError& e) {
            return error(res, 400, e, e.field());
        }
        try {
            RetrievalConfig rc = rt_.config().retrieval;
            if (!q.overrides.empty()) {
                auto merged = rc.to_json();
                merged.update(q.overrides);
                rc = RetrievalConfig::from_json(merged);
            }
            auto pipeline = rt_.pipeline(rc);
            res.set_content(pipeline.answer(q.query, q.options, q.mode).to_json().dump(), "application/json");
        } catch (const PipelineError& e) {
            error(res, 503, e);
        } catch (const ConfigError& e) {
            error(res, 400, e, "overrides");
        } catch (const ArgumentError& e) {
            error(res, 400, e);
        } catch (const Error& e) {
            error(res, 500, e);
        }
    }

    Runtime& rt_;
    httplib::Server server_;
};

} // namespace telco_rag
