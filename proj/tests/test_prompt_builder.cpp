#include <catch_amalgamated.hpp>

#include <telco_rag/prompt_builder.hpp>

using namespace telco_rag;

namespace {

QueryState box_state() {
    QueryState s;
    s.raw = "Why is the association pattern period for PRACH introduced in NR?";
    s.rephrased = "What is the purpose of introducing the association pattern period for PRACH in NR (New Radio) standards?";
    s.matched_terms = {{"Association Pattern Period", "Defines the interval in which a specific access pattern repeats."}};
    s.matched_abbrs = {{"PRACH", "Physical Random Access Channel"}, {"NR", "New Radio"}};
    s.refined = s.rephrased + "\n\nTerms and Definitions:\n...";
    return s;
}

ContextChunk chunk_of(std::size_t tokens, int series, const std::string& id) {
    ContextChunk c;
    c.chunk.chunk_id = id;
    c.chunk.doc_id = "TS " + std::to_string(series) + ".300";
    c.chunk.series_id = series;
    for (std::size_t i = 0; i < tokens; ++i) c.chunk.text += id + "_" + std::to_string(i) + " ";
    c.chunk.token_count = static_cast<long>(tokens);
    return c;
}

std::size_t occurrences(const std::string& hay, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
    return n;
}

std::vector<std::string> names(const PromptBundle& b) {
    std::vector<std::string> out;
    for (const auto& s : b.spans) out.push_back(s.name);
    return out;
}

} // namespace

TEST_CASE("prompt: sections in order, query exactly twice", "[prompt]") {
    const auto s = box_state();
    std::vector<ContextChunk> chunks = {chunk_of(20, 38, "a"), chunk_of(10, 38, "b")};
    std::vector<WebParagraph> web = {{.url = "https://wiki.example.org/prach", .text = "PRACH occasions repeat."}};
    const auto b = build_prompt(s, context_units(chunks, web), std::vector<std::string>{"x", "y", "z", "w"}, 2000);

    CHECK(names(b) == std::vector<std::string>{"query1", "terms", "abbreviations", "context", "query2", "options"});
    for (std::size_t i = 1; i < b.spans.size(); ++i) CHECK(b.spans[i - 1].end == b.spans[i].begin);
    CHECK(b.spans.back().end == b.text.size());
    CHECK(occurrences(b.text, s.rephrased) == 2);
    CHECK(b.text.rfind("*Please provide the answer to the following question: " + s.rephrased + "\n", 0) == 0);
    CHECK(b.text.find("*Terms and Definitions:\nAssociation Pattern Period: Defines") != std::string::npos);
    CHECK(b.text.find("*Abbreviations:\nPRACH: Physical Random Access Channel\nNR: New Radio\n") != std::string::npos);
    const auto ctx = b.text.substr(b.span("context")->begin, b.span("context")->end - b.span("context")->begin);
    CHECK(ctx.find("[3GPP 38 | TS 38.300]") < ctx.find("[web: wiki.example.org]"));
    CHECK(b.context_tokens == 33);
    const auto opts = b.text.substr(b.span("options")->begin);
    CHECK(opts == "*Options:\nOption 1: x\nOption 2: y\nOption 3: z\nOption 4: w\n");
    CHECK(b.token_count == default_tokenizer().count(b.text));
    CHECK(build_prompt(s, context_units(chunks, web), std::vector<std::string>{"x", "y", "z", "w"}, 2000).text == b.text);
}

TEST_CASE("prompt: no-context baseline", "[prompt]") {
    const auto s = box_state();
    const auto b = build_prompt(s, {}, std::nullopt, 2000);
    CHECK(names(b) == std::vector<std::string>{"query1", "terms", "abbreviations", "query2"});
    CHECK(occurrences(b.text, s.rephrased) == 2);
    CHECK(b.text.find("context") == std::string::npos);

    QueryState bare{.raw = "q", .rephrased = "What is a BWP?"};
    CHECK(build_prompt(bare, {}, std::nullopt, 10).text ==
          "*Please provide the answer to the following question: What is a BWP?\n"
          "*Please provide the answer to the following question: What is a BWP?\n");
}

TEST_CASE("prompt: whole-unit truncation at the budget boundary", "[prompt]") {
    const auto s = box_state();
    std::vector<ContextChunk> eight;
    for (int i = 0; i < 8; ++i) eight.push_back(chunk_of(250, 21 + i, "c" + std::to_string(i)));
    const auto units = context_units(eight, {});

    auto full = build_prompt(s, units, std::nullopt, 2000);
    CHECK(full.units.size() == 8);
    CHECK(full.context_tokens == 2000);

    auto cut = build_prompt(s, units, std::nullopt, 1999);
    CHECK(cut.units.size() == 7);
    CHECK(cut.context_tokens == 1750);
    CHECK(cut.text.find("c7_0") == std::string::npos);
    CHECK(cut.text.find("c6_249") != std::string::npos);

    CHECK_THROWS_AS(build_prompt(s, units, std::nullopt, 5), ArgumentError);
}

TEST_CASE("prompt: budget property over random units", "[prompt][property]") {
    const auto s = box_state();
    SplitMix64 rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<ContextChunk> chunks;
        for (std::uint64_t i = 0, n = rng.below(12); i < n; ++i)
            chunks.push_back(chunk_of(1 + rng.below(400), 21 + static_cast<int>(rng.below(18)), "u" + std::to_string(i)));
        const auto units = context_units(chunks, {});
        const std::size_t budget = 20 + rng.below(2500);
        const auto b = build_prompt(s, units, std::nullopt, budget);
        REQUIRE(b.context_tokens <= budget);
        std::size_t k = 0;
        for (const auto& u : units) {
            if (k < b.units.size() && b.units[k].source == u.source) {
                ++k;
                REQUIRE(b.text.find(u.text) != std::string::npos);
                continue;
            }
            REQUIRE(b.context_tokens + u.token_count > budget);
        }
        REQUIRE(occurrences(b.text, s.rephrased) == 2);
    }
}
