#pragma once

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "embedding.hpp"
#include "error.hpp"
#include "llm.hpp"
#include "pipeline.hpp"
#include "standards_retriever.hpp"
#include "web_retriever.hpp"

namespace telco_rag {

inline constexpr const char* kConfigEnv = "TELCO_RAG_CONFIG";

/// Everything the CLI and the service read from one JSON file. Relative
/// paths are resolved against the file's directory. Secrets never live here;
/// only the names of the environment variables holding them.
struct AppConfig {
    // "mock" runs fully offline; "http" talks to OpenAI-compatible endpoints;
    // "replay" answers llm calls from a recorded transcript.
    std::string llm_provider = "mock";
    std::string embedding_provider = "mock";
    HttpChatConfig chat;
    HttpEmbeddingConfig embedding;
    std::size_t mock_dim = 1024;
    std::optional<std::filesystem::path> llm_replay;
    std::size_t llm_max_inflight = 8;

    // Web search: a replay file, or an HTTP endpoint when search.endpoint is set.
    std::optional<std::filesystem::path> search_replay;
    HttpSearchConfig search;
    std::optional<std::filesystem::path> pages_index; // serve pages from disk instead of fetching
    std::optional<std::filesystem::path> fetch_cache;

    RetrievalConfig retrieval;
    WebConfig web;

    std::filesystem::path store = "store";
    std::optional<std::filesystem::path> router;
    std::optional<std::filesystem::path> summaries;
    std::optional<std::filesystem::path> glossary;

    Mode mode = Mode::full;
    bool deterministic_clock = false;
    std::size_t eval_parallelism = 1;
    std::string bind = "127.0.0.1";
    int port = 8080;

    std::filesystem::path source; // file this was read from, empty for defaults

    nlohmann::json to_json() const {
        auto opt = [](const std::optional<std::filesystem::path>& p) {
            return p ? nlohmann::json(p->string()) : nlohmann::json(nullptr);
        };
        auto secret = [](const std::string& env) {
            const char* v = env.empty() ? nullptr : std::getenv(env.c_str());
            return nlohmann::json{{"env", env}, {"value", v && *v ? "<redacted>" : "<unset>"}};
        };
        return {
            {"llm",
             {{"provider", llm_provider},
              {"endpoint", chat.endpoint},
              {"model", chat.model},
              {"temperature", chat.temperature},
              {"timeout_seconds", chat.timeout_seconds},
              {"api_key", secret(chat.api_key_env)},
              {"replay", opt(llm_replay)},
              {"max_inflight", llm_max_inflight}}},
            {"embedding",
             {{"provider", embedding_provider},
              {"endpoint", embedding.endpoint},
              {"model", embedding.model},
              {"dim", embedding_provider == "mock" ? mock_dim : embedding.dim},
              {"timeout_seconds", embedding.timeout_seconds},
              {"api_key", secret(embedding.api_key_env)}}},
            {"search",
             {{"replay", opt(search_replay)},
              {"endpoint", search.endpoint},
              {"api_key", secret(search.api_key_env)},
              {"pages_index", opt(pages_index)},
              {"fetch_cache", opt(fetch_cache)}}},
            {"retrieval", retrieval.to_json()},
            {"web", web.to_json()},
            {"paths", {{"store", store.string()}, {"router", opt(router)}, {"summaries", opt(summaries)},
                       {"glossary", opt(glossary)}}},
            {"mode", to_string(mode)},
            {"deterministic_clock", deterministic_clock},
            {"eval_parallelism", eval_parallelism},
            {"server", {{"bind", bind}, {"port", port}}},
            {"source", source.string()},
        };
    }
};

namespace detail {

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

inline std::optional<std::filesystem::path> opt_path(const nlohmann::json& j, const char* key,
                                                     const std::filesystem::path& base) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return resolve(base, j.at(key).get<std::string>());
}

} // namespace detail

inline AppConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
    AppConfig c;
    try {
        if (const auto llm = j.value("llm", nlohmann::json::object()); !llm.empty()) {
            c.llm_provider = llm.value("provider", c.llm_provider);
            c.chat.endpoint = llm.value("endpoint", c.chat.endpoint);
            c.chat.model = llm.value("model", c.chat.model);
            c.chat.api_key_env = llm.value("api_key_env", c.chat.api_key_env);
            c.chat.temperature = llm.value("temperature", c.chat.temperature);
            c.chat.timeout_seconds = llm.value("timeout_seconds", c.chat.timeout_seconds);
            c.llm_replay = detail::opt_path(llm, "replay", base);
            c.llm_max_inflight = llm.value("max_inflight", c.llm_max_inflight);
        }
        if (const auto emb = j.value("embedding", nlohmann::json::object()); !emb.empty()) {
            c.embedding_provider = emb.value("provider", c.embedding_provider);
            c.embedding.endpoint = emb.value("endpoint", c.embedding.endpoint);
            c.embedding.model = emb.value("model", c.embedding.model);
            c.embedding.dim = emb.value("dim", c.embedding.dim);
            c.embedding.api_key_env = emb.value("api_key_env", c.embedding.api_key_env);
            c.embedding.timeout_seconds = emb.value("timeout_seconds", c.embedding.timeout_seconds);
            c.mock_dim = emb.value("dim", c.mock_dim);
        }
        if (const auto s = j.value("search", nlohmann::json::object()); !s.empty()) {
            c.search_replay = detail::opt_path(s, "replay", base);
            c.search.endpoint = s.value("endpoint", c.search.endpoint);
            c.search.api_key_env = s.value("api_key_env", c.search.api_key_env);
            c.search.api_key_header = s.value("api_key_header", c.search.api_key_header);
            c.search.results_pointer = s.value("results_pointer", c.search.results_pointer);
            c.search.url_field = s.value("url_field", c.search.url_field);
            c.search.title_field = s.value("title_field", c.search.title_field);
            c.search.snippet_field = s.value("snippet_field", c.search.snippet_field);
            c.pages_index = detail::opt_path(s, "pages_index", base);
            c.fetch_cache = detail::opt_path(s, "fetch_cache", base);
        }
        c.retrieval = RetrievalConfig::from_json(j.value("retrieval", nlohmann::json::object()));
        c.web = WebConfig::from_json(j.value("web", nlohmann::json::object()));
        if (const auto p = j.value("paths", nlohmann::json::object()); !p.empty()) {
            if (p.contains("store")) c.store = detail::resolve(base, p.at("store").get<std::string>());
            c.router = detail::opt_path(p, "router", base);
            c.summaries = detail::opt_path(p, "summaries", base);
            c.glossary = detail::opt_path(p, "glossary", base);
        } else {
            c.store = detail::resolve(base, c.store.string());
        }
        c.mode = mode_from_string(j.value("mode", std::string(to_string(c.mode))));
        c.deterministic_clock = j.value("deterministic_clock", c.deterministic_clock);
        c.eval_parallelism = j.value("eval_parallelism", c.eval_parallelism);
        if (const auto srv = j.value("server", nlohmann::json::object()); !srv.empty()) {
            c.bind = srv.value("bind", c.bind);
            c.port = srv.value("port", c.port);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const ArgumentError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    for (const auto* p : {&c.llm_provider, &c.embedding_provider})
        if (*p != "mock" && *p != "http" && *p != "replay")
            throw ConfigError("config: unknown provider '" + *p + "' (expected mock, http or replay)");
    if (c.embedding_provider == "replay") throw ConfigError("config: embeddings have no replay provider");
    if (c.llm_provider == "replay" && !c.llm_replay) throw ConfigError("config: llm.replay is required for the replay provider");
    if (c.mock_dim == 0 || c.embedding.dim == 0) throw ConfigError("config: embedding dim must be positive");
    if (c.eval_parallelism == 0 || c.llm_max_inflight == 0) throw ConfigError("config: parallelism must be positive");
    return c;
}

/// Reads `path`, or the file named by TELCO_RAG_CONFIG, or returns defaults
/// when neither is given.
inline AppConfig load_config(const std::optional<std::filesystem::path>& path = std::nullopt) {
    std::optional<std::filesystem::path> p = path;
    if (!p)
        if (const char* env = std::getenv(kConfigEnv); env && *env) p = env;
    if (!p) return config_from_json(nlohmann::json::object());
    if (!std::filesystem::is_regular_file(*p)) throw ConfigError("config file not found: " + p->string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(*p));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(p->string() + ": " + e.what());
    }
    auto c = config_from_json(j, p->parent_path());
    c.source = *p;
    return c;
}

} // namespace telco_rag
