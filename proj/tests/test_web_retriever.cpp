#include <catch_amalgamated.hpp>

#include <atomic>
#include <chrono>

#include <telco_rag/web_retriever.hpp>

#include "support/corpus_store.hpp"
#include "support/fixtures.hpp"
#include "support/local_server.hpp"

using namespace telco_rag;
using namespace std::chrono_literals;

namespace {

// "w0 w1 ... w{n-1}" with the snippet spliced in at `at` when given.
std::string numbered_page(std::size_t n, std::optional<std::size_t> at, const std::string& snippet) {
    std::vector<std::string> words;
    for (std::size_t i = 0; i < n; ++i) words.push_back("w" + std::to_string(i));
    if (at) {
        auto snip = default_tokenizer().tokenize(snippet).tokens;
        for (std::size_t k = 0; k < snip.size(); ++k) words[*at + k] = snip[k].text;
    }
    std::string out;
    for (const auto& w : words) out += w + (out.size() % 7 == 0 ? "\n" : " ");
    return out;
}

const std::string kSnippet = "The default value of timer T3590 is 88 seconds";

std::vector<WebParagraph> numbered_paragraphs(std::size_t n) {
    std::vector<WebParagraph> out;
    for (std::size_t i = 1; i <= n; ++i) out.push_back({.url = "https://p/" + std::to_string(i), .rank = i,
                                                        .text = "para-" + std::to_string(i)});
    return out;
}

// Answers per paragraph by its number, using the given rule.
FunctionLlm verdict_llm(std::function<bool(int)> rule) {
    return FunctionLlm("verdicts", [rule](const LlmRequest& req) {
        static const std::regex id(R"(para-(\d+))");
        std::string reply;
        for (auto it = std::sregex_iterator(req.prompt.begin(), req.prompt.end(), id); it != std::sregex_iterator(); ++it)
            reply += (reply.empty() ? "" : "\n") + std::to_string(reply.size()) + ": " +
                     (rule(std::stoi((*it)[1].str())) ? "True" : "False");
        return reply;
    });
}

std::vector<int> ranks(const std::vector<WebParagraph>& ps) {
    std::vector<int> out;
    for (const auto& p : ps) out.push_back(static_cast<int>(p.rank));
    return out;
}

class ThrowingSearch final : public SearchProvider {
public:
    std::string id() const override { return "down"; }
    std::vector<WebResult> search(const std::string&, std::size_t) override { throw ProviderError("timeout"); }
};

} // namespace

TEST_CASE("web_search: rank order, truncation and degradation", "[web]") {
    std::vector<WebResult> ten;
    for (std::size_t i = 1; i <= 10; ++i) ten.push_back({"https://r" + std::to_string(i) + ".example/", "t", "s", i});
    ReplaySearchProvider replay({{"", ten}});
    auto all = web_search("anything", replay, 10);
    CHECK_FALSE(all.degraded);
    REQUIRE(all.results.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) CHECK(all.results[i].url == ten[i].url);
    auto three = web_search("anything", replay, 3);
    REQUIRE(three.results.size() == 3);
    CHECK(three.results.back().rank == 3);

    ThrowingSearch down;
    auto failed = web_search("q", down, 10);
    CHECK(failed.results.empty());
    CHECK(failed.degraded);
    CHECK(failed.error.find("timeout") != std::string::npos);

    auto fixture = ReplaySearchProvider::from_file(fixtures::data_dir() / "web" / "search_replay.json");
    CHECK(fixture.search("timer T3519 value", 10).size() == 2);
    CHECK(fixture.search("unrelated", 10).empty());
}

TEST_CASE("http search provider reads configurable result fields", "[web][http]") {
    fixtures::LocalServer srv;
    std::string seen_key, seen_q;
    srv.server.Get("/search", [&](const httplib::Request& req, httplib::Response& res) {
        seen_key = req.get_header_value("X-Key");
        seen_q = req.get_param_value("q");
        res.set_content(R"({"data":{"items":[{"link":"https://a.example/1","t":"A","s":"one"},)"
                        R"({"link":"https://a.example/2","t":"B","s":""},{"link":"https://a.example/3","t":"C","s":"three"}]}})",
                        "application/json");
    });
    srv.start();
    ::setenv("TELCO_RAG_TEST_SEARCH_KEY", "k123", 1);
    HttpSearchProvider p({.endpoint = srv.base() + "/search", .api_key_env = "TELCO_RAG_TEST_SEARCH_KEY",
                          .api_key_header = "X-Key", .results_pointer = "/data/items", .url_field = "link",
                          .title_field = "t", .snippet_field = "s"});
    const auto r = p.search("PRACH period", 5);
    CHECK(seen_key == "k123");
    CHECK(seen_q == "PRACH period");
    REQUIRE(r.size() == 2); // a result without a snippet is dropped
    CHECK(r[1].url == "https://a.example/3");
    CHECK(r[1].rank == 2);
}

TEST_CASE("snippet windows: centred, clamped and absent", "[web][window]") {
    const WebResult res{"https://x.example/", "t", kSnippet, 1};

    auto p = extract_paragraph(res, numbered_page(2000, 500, kSnippet));
    CHECK(p.anchor_found);
    CHECK(p.snippet_offset == 500);
    CHECK(p.token_start == 375);
    CHECK(p.token_end == 625);
    CHECK(std::regex_replace(p.text, std::regex("\\s+"), " ").find(kSnippet) != std::string::npos);
    CHECK(p.text.rfind("w375", 0) == 0);

    p = extract_paragraph(res, numbered_page(2000, 50, kSnippet));
    CHECK(p.anchor_found);
    CHECK(p.token_start == 0);
    CHECK(p.token_end == 250);

    p = extract_paragraph(res, numbered_page(2000, 1990, kSnippet));
    CHECK(p.token_start == 1750);
    CHECK(p.token_end == 2000);

    const auto absent = numbered_page(2000, std::nullopt, kSnippet);
    p = extract_paragraph(res, absent);
    CHECK_FALSE(p.anchor_found);
    CHECK(p.token_start == 0);
    CHECK(p.token_end == 250);
    // Exhaustive scan: no snippet word occurs anywhere in the page.
    for (const auto& t : default_tokenizer().tokenize(kSnippet).tokens)
        for (const auto& d : default_tokenizer().tokenize(absent).tokens) REQUIRE(normalize_token(d.text) != normalize_token(t.text));

    p = extract_paragraph(res, numbered_page(100, 10, kSnippet));
    CHECK(p.token_start == 0);
    CHECK(p.token_end == 100);
}

TEST_CASE("snippet location tolerates rewrites down to 60% overlap", "[web][window]") {
    const auto page = numbered_page(1000, 600, kSnippet);
    const WebResult ellipsized{"u", "t", "... default value of timer T3590 is roughly 88 sec ...", 1};
    auto p = extract_paragraph(ellipsized, page);
    CHECK(p.anchor_found);
    CHECK(p.snippet_offset == 601); // first shared token inside the best window

    const WebResult weak{"u", "t", "default timer unknown words here entirely different", 1};
    CHECK_FALSE(extract_paragraph(weak, page).anchor_found);
}

TEST_CASE("window legality over random anchors", "[web][window][property]") {
    SplitMix64 rng(9);
    for (int i = 0; i < 2000; ++i) {
        const std::size_t total = rng.below(3000), anchor = total ? rng.below(total) : 0;
        const auto w = centered_window(anchor, total);
        REQUIRE(w.start <= w.end);
        REQUIRE(w.end <= total);
        REQUIRE(w.end - w.start == std::min<std::size_t>(250, total));
        if (total) REQUIRE((w.start <= anchor && anchor < w.end));
    }
}

TEST_CASE("html_to_text keeps visible text only", "[web]") {
    const std::string html = "<html><head><title>T &amp; C</title><style>p{color:red}</style></head><body>"
                             "<script>var a = '<p>hidden</p>';</script><!-- note -->"
                             "<p>Hello<b>World</b> &lt;NR&gt;&nbsp;&#x3b1;&#946;</p><div>next   line</div></body></html>";
    CHECK(html_to_text(html) == "T & C\nHelloWorld <NR> αβ\nnext line");

    TextExtractor ex;
    CHECK_THROWS_AS(ex.to_text({"u", "application/pdf", "%PDF"}), ParseError);
    ex.add("application/pdf", [](std::string_view) { return std::string("extracted"); });
    CHECK(ex.to_text({"u", "application/pdf; charset=binary", "%PDF"}) == "extracted");
    CHECK(ex.to_text({"u", "text/html; charset=utf-8", "<p>x</p>"}) == "x");
}

TEST_CASE("fetch_and_extract isolates failures and bounds concurrency", "[web][concurrency]") {
    class SlowFetcher final : public Fetcher {
    public:
        std::atomic<int> in_flight{0}, peak{0};
        FetchedDocument fetch(const std::string& url) override {
            const int now = ++in_flight;
            int p = peak.load();
            while (now > p && !peak.compare_exchange_weak(p, now)) {
            }
            std::this_thread::sleep_for(30ms);
            --in_flight;
            if (url.ends_with("/bad")) throw RetrievalError("fetch " + url + ": HTTP 404");
            return {url, "text/plain", numbered_page(600, 300, kSnippet)};
        }
    };
    std::vector<WebResult> results;
    for (std::size_t i = 1; i <= 20; ++i)
        results.push_back({"https://h" + std::to_string(i) + (i == 5 ? ".example/bad" : ".example/ok"), "t", kSnippet, i});
    SlowFetcher f;
    const auto t0 = std::chrono::steady_clock::now();
    const auto out = fetch_and_extract(results, f);
    const auto elapsed = std::chrono::steady_clock::now() - t0;
    CHECK(f.peak.load() <= 8);
    CHECK(f.peak.load() > 1);
    CHECK(elapsed < 20 * 30ms);
    REQUIRE(out.failures.size() == 1);
    CHECK(out.failures[0].url == results[4].url);
    REQUIRE(out.paragraphs.size() == 19);
    for (std::size_t i = 1; i < out.paragraphs.size(); ++i) CHECK(out.paragraphs[i - 1].rank < out.paragraphs[i].rank);
    for (const auto& p : out.paragraphs) CHECK(p.token_start == 175);
}

TEST_CASE("http fetcher: user agent, one redirect, no retry on 4xx, disk cache", "[web][http]") {
    fixtures::LocalServer srv;
    std::atomic<int> page_hits{0}, missing_hits{0}, flaky_hits{0};
    std::string agent;
    srv.server.Get("/page", [&](const httplib::Request& req, httplib::Response& res) {
        ++page_hits;
        agent = req.get_header_value("User-Agent");
        res.set_content("<p>body text</p>", "text/html");
    });
    srv.server.Get("/hop1", [](const httplib::Request&, httplib::Response& res) { res.set_redirect("/page"); });
    srv.server.Get("/hop2", [](const httplib::Request&, httplib::Response& res) { res.set_redirect("/hop1"); });
    srv.server.Get("/missing", [&](const httplib::Request&, httplib::Response& res) {
        ++missing_hits;
        res.status = 404;
    });
    srv.server.Get("/flaky", [&](const httplib::Request&, httplib::Response& res) {
        if (++flaky_hits == 1) {
            res.status = 503;
            return;
        }
        res.set_content("ok", "text/plain");
    });
    srv.start();
    fixtures::TempDir cache("fetch_cache");

    HttpFetcher f({.cache_dir = cache.path});
    auto doc = f.fetch(srv.base() + "/hop1");
    CHECK(doc.body == "<p>body text</p>");
    CHECK(agent == std::string(kUserAgent));
    CHECK_THROWS_AS(f.fetch(srv.base() + "/hop2"), RetrievalError);
    CHECK_THROWS_AS(f.fetch(srv.base() + "/missing"), RetrievalError);
    CHECK(missing_hits == 1);
    CHECK(f.fetch(srv.base() + "/flaky").body == "ok");
    CHECK(flaky_hits == 2);

    const int before = page_hits;
    HttpFetcher again({.cache_dir = cache.path});
    CHECK(again.fetch(srv.base() + "/hop1").content_type.starts_with("text/html"));
    CHECK(page_hits == before);
}

TEST_CASE("validator early stopping", "[web][validate]") {
    const std::string q = "question";
    SECTION("all True stops after one call") {
        auto llm = verdict_llm([](int) { return true; });
        const auto out = validate_batches(numbered_paragraphs(20), q, llm, 4, 4);
        CHECK(llm.calls() == 1);
        CHECK(ranks(out.accepted) == std::vector<int>{1, 2, 3, 4});
    }
    SECTION("first 7 False, rest True") {
        auto llm = verdict_llm([](int i) { return i > 7; });
        const auto out = validate_batches(numbered_paragraphs(20), q, llm, 4, 4);
        CHECK(llm.calls() == 3);
        CHECK(out.llm_calls == 3);
        CHECK(ranks(out.accepted) == std::vector<int>{8, 9, 10, 11});
        CHECK(out.all[11].validated == Verdict::relevant);
        CHECK(out.all[12].validated == Verdict::pending);
        CHECK(out.all[0].validated == Verdict::irrelevant);
    }
    SECTION("all False exhausts the list") {
        auto llm = verdict_llm([](int) { return false; });
        const auto out = validate_batches(numbered_paragraphs(20), q, llm, 4, 1);
        CHECK(llm.calls() == 5);
        CHECK(out.accepted.empty());
    }
    SECTION("malformed replies and failures mark the batch False") {
        int call = 0;
        FunctionLlm llm("flaky", [&](const LlmRequest&) -> std::string {
            ++call;
            if (call == 1) return "True True"; // wrong count
            if (call == 2) throw ProviderError("down");
            return "1: True\n2: True\n3: False\n4: True";
        });
        const auto out = validate_batches(numbered_paragraphs(12), q, llm, 4, 4);
        CHECK(out.failed_batches == 2);
        CHECK(ranks(out.accepted) == std::vector<int>{9, 10, 12});
        CHECK(out.llm_calls == 3);
    }
    auto llm = verdict_llm([](int) { return true; });
    CHECK_THROWS_AS(validate_batches(numbered_paragraphs(3), q, llm, 0, 4), ArgumentError);
    CHECK_THROWS_AS(validate_batches(numbered_paragraphs(3), q, llm, 4, 0), ArgumentError);
}

TEST_CASE("validator call count is minimal", "[web][validate][property]") {
    SplitMix64 rng(77);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = rng.below(25), batch = 1 + rng.below(6), threshold = 1 + rng.below(6);
        std::vector<bool> truth(n + 1);
        for (std::size_t i = 1; i <= n; ++i) truth[i] = rng.below(3) == 0;
        auto llm = verdict_llm([&](int i) { return truth[static_cast<std::size_t>(i)]; });
        const auto out = validate_batches(numbered_paragraphs(n), "q", llm, batch, threshold);
        std::size_t seen = 0, at = 0;
        for (std::size_t i = 1; i <= n && !at; ++i)
            if (truth[i] && ++seen == threshold) at = i;
        const std::size_t expected = at ? (at + batch - 1) / batch : (n + batch - 1) / batch;
        REQUIRE(out.llm_calls == expected);
        REQUIRE(out.accepted.size() <= threshold);
        REQUIRE(out.accepted.size() == std::min(threshold, static_cast<std::size_t>(std::count(truth.begin(), truth.end(), true))));
        for (const auto& p : out.accepted) REQUIRE(truth[p.rank]);
    }
}

TEST_CASE("web retriever over the fixture pages", "[web]") {
    auto search = std::make_shared<ReplaySearchProvider>(
        ReplaySearchProvider::from_file(fixtures::data_dir() / "web" / "search_replay.json"));
    auto fetcher = std::make_shared<FixtureFetcher>(FixtureFetcher::from_file(fixtures::data_dir() / "web" / "pages.json"));
    WebRetriever web(search, fetcher);
    FunctionLlm relevant_if_timer("v", [](const LlmRequest& req) {
        std::string reply;
        for (std::size_t pos = 0, n = 0; (pos = req.prompt.find("\nParagraph ", pos)) != std::string::npos; ++n) {
            const auto next = req.prompt.find("\nParagraph ", pos + 1);
            const auto body = req.prompt.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
            reply += std::to_string(n + 1) + (body.find("timer") != std::string::npos ? ": True\n" : ": False\n");
            pos += 1;
        }
        return reply;
    });
    const auto ctx = web.retrieve("What is the default value of timer T3519?", relevant_if_timer);
    CHECK_FALSE(ctx.degraded);
    CHECK(ctx.results.size() == 2);
    CHECK(ctx.failures.empty());
    REQUIRE(ctx.paragraphs.size() == 1);
    CHECK(ctx.paragraphs[0].anchor_found);
    CHECK(ctx.paragraphs[0].token_count() == 250);
    CHECK(ctx.paragraphs[0].text.find("T3519") != std::string::npos);
    CHECK(ctx.llm_calls == 1);

    CHECK(web.retrieve("no matching search", relevant_if_timer).results.empty());
    WebRetriever down(std::make_shared<ThrowingSearch>(), fetcher);
    CHECK(down.retrieve("q", relevant_if_timer).degraded);
}
