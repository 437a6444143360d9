#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>

#include <telco_rag/service.hpp>

#include "support/local_server.hpp"
#include "support/pipeline_fixture.hpp"

using namespace telco_rag;

namespace {

struct Deployment {
    fixtures::TempDir dir{"service"};
    std::filesystem::path store = dir.path / "store";

    Deployment() {
        auto emb = fixtures::mock_embedder();
        fixtures::build_corpus_store(store, *emb);
    }

    /// Mirrors the wiring of fixtures::PipelineFixture.
    nlohmann::json config_json() const {
        const auto d = fixtures::data_dir();
        return {{"llm", {{"provider", "mock"}}},
                {"embedding", {{"provider", "mock"}, {"dim", fixtures::kMockDim}}},
                {"search", {{"replay", (d / "web" / "search_replay.json").string()},
                            {"pages_index", (d / "web" / "pages.json").string()}}},
                {"retrieval", {{"series_k", 18}}},
                {"paths", {{"store", store.string()}, {"glossary", (d / "glossary.json").string()}}},
                {"deterministic_clock", true}};
    }
};

Deployment& shared() {
    static Deployment d;
    return d;
}

nlohmann::json body_of(const httplib::Result& r) { return nlohmann::json::parse(r->body); }

} // namespace

TEST_CASE("request bodies are validated field by field", "[service]") {
    auto field_of = [](const std::string& body) {
        try {
            parse_query_request(body);
        } catch (const FieldError& e) {
            return e.field();
        }
        return std::string("<accepted>");
    };
    CHECK(field_of("{") == "body");
    CHECK(field_of("[1]") == "body");
    CHECK(field_of(R"({"mode":"full"})") == "query");
    CHECK(field_of(R"({"query":"  "})") == "query");
    CHECK(field_of(R"({"query":"q","mode":"fast"})") == "mode");
    CHECK(field_of(R"({"query":"q","options":["only"]})") == "options");
    CHECK(field_of(R"({"query":"q","options":["a",2]})") == "options[1]");
    CHECK(field_of(R"({"query":"q","overrides":{"colour":1}})") == "overrides.colour");
    CHECK(field_of(R"({"query":"q","overrides":{"series_k":0}})") == "overrides.series_k");
    CHECK(field_of(R"({"query":"q","mode":"llm-only","options":["a","b"],"overrides":{"series_k":3}})") == "<accepted>");

    const auto r = parse_query_request(R"({"query":"q","mode":"standards","options":["a","b","c"]})");
    CHECK(r.mode == Mode::standards);
    CHECK(r.options->size() == 3);
}

TEST_CASE("config files: relative paths, defaults, bad values", "[service][config]") {
    fixtures::TempDir dir("config");
    std::ofstream(dir.path / "c.json") << R"({"paths":{"store":"s","router":"r.bin"},"mode":"standards",
                                              "retrieval":{"series_k":7}})";
    const auto c = load_config(dir.path / "c.json");
    CHECK(c.store == dir.path / "s");
    CHECK(*c.router == dir.path / "r.bin");
    CHECK(c.mode == Mode::standards);
    CHECK(c.retrieval.series_k == 7);
    CHECK(c.retrieval.chunks_per_context == 8);
    CHECK(c.llm_provider == "mock");

    CHECK_THROWS_AS(config_from_json({{"mode", "fast"}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"retrieval", {{"series_k", 19}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"retrieval", {{"series_k", "five"}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"llm", {{"provider", "magic"}}}}), ConfigError);
    CHECK_THROWS_AS(load_config(dir.path / "missing.json"), ConfigError);
}

TEST_CASE("/v1/query passes the pipeline answer through", "[service]") {
    auto& d = shared();
    Runtime rt(config_from_json(d.config_json()));
    REQUIRE(rt.store() != nullptr);
    Service svc(rt);
    fixtures::LocalServer srv;
    svc.mount(srv.server);
    srv.start();
    httplib::Client cli(srv.base());

    fixtures::PipelineFixture f;
    auto p = f.pipeline(Mode::full);
    const std::string q = "What is the default value of timer T3515 in the paging procedures?";
    const std::vector<std::string> options = {"12 seconds", "30 seconds", "45 seconds", "60 seconds"};
    const auto expected = p.answer(q, options).to_json();

    const auto res = cli.Post("/v1/query", nlohmann::json{{"query", q}, {"options", options}}.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(body_of(res) == expected);

    const auto llm_only =
        cli.Post("/v1/query", nlohmann::json{{"query", q}, {"mode", "llm-only"}}.dump(), "application/json");
    REQUIRE(llm_only);
    CHECK(body_of(llm_only)["mode"] == "llm-only");
    CHECK(body_of(llm_only)["retrievals"]["standards"].empty());

    const auto narrow = cli.Post(
        "/v1/query",
        nlohmann::json{{"query", q}, {"mode", "standards"}, {"overrides", {{"chunks_per_context", 2}}}}.dump(),
        "application/json");
    REQUIRE(narrow);
    CHECK(narrow->status == 200);
    CHECK(body_of(narrow)["retrievals"]["standards"].size() <= 2);

    const auto bad = cli.Post("/v1/query", R"({"query": 5})", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    CHECK(body_of(bad)["error"]["field"] == "query");

    const auto health = cli.Get("/v1/health");
    REQUIRE(health);
    CHECK(body_of(health)["store"] == true);
    CHECK(body_of(health)["router"] == false);
    CHECK(body_of(health)["providers"]["llm"] == true);
}

TEST_CASE("health, config redaction and 503 when nothing can answer", "[service]") {
    ::setenv("TELCO_RAG_TEST_SECRET", "s3cr3t-value", 1);
    auto j = shared().config_json();
    j["paths"]["store"] = "/nonexistent/store";
    j["llm"] = {{"provider", "http"}, {"endpoint", "http://127.0.0.1:1/v1/chat/completions"},
                {"api_key_env", "TELCO_RAG_TEST_SECRET"}, {"timeout_seconds", 1}};
    j.erase("search");
    Runtime rt(config_from_json(j));
    CHECK(rt.store() == nullptr);

    Service svc(rt);
    fixtures::LocalServer srv;
    svc.mount(srv.server);
    srv.start();
    httplib::Client cli(srv.base());
    cli.set_read_timeout(30, 0);

    const auto health = cli.Get("/v1/health");
    REQUIRE(health);
    const auto h = body_of(health);
    CHECK(h["store"] == false);
    CHECK(h["status"] == "degraded");
    CHECK(h["providers"]["llm"] == false);
    CHECK(h["errors"].contains("store"));

    const auto cfg = cli.Get("/v1/config");
    REQUIRE(cfg);
    CHECK(cfg->body.find("s3cr3t-value") == std::string::npos);
    CHECK(body_of(cfg)["llm"]["api_key"]["value"] == "<redacted>");
    CHECK(body_of(cfg)["llm"]["api_key"]["env"] == "TELCO_RAG_TEST_SECRET");

    const auto res = cli.Post("/v1/query", R"({"query":"What is NR?"})", "application/json");
    REQUIRE(res);
    CHECK(res->status == 503);
    CHECK(body_of(res)["error"]["kind"] == "pipeline");
    CHECK(body_of(res)["error"]["prompt"].get<std::string>().find("What is NR?") != std::string::npos);
    ::unsetenv("TELCO_RAG_TEST_SECRET");
}

TEST_CASE("llm-only answers never read an embedding shard", "[service][mode]") {
    Runtime rt(config_from_json(shared().config_json()));
    REQUIRE(rt.store() != nullptr);
    auto p = rt.pipeline();
    const auto a = p.answer("What is the default value of timer T3512?", std::nullopt, Mode::llm_only);
    CHECK(a.standards.empty());
    CHECK(rt.store()->shard_reads() == 0);

    p.answer("What is the default value of timer T3512?", std::nullopt, Mode::standards);
    CHECK(rt.store()->shard_reads() > 0);
}
