#include <catch_amalgamated.hpp>

#include <sstream>

#include <telco_rag/chunking.hpp>

#include "support/fixtures.hpp"

using namespace telco_rag;

namespace {

// Reference whitespace splitter, independent of the tokenizer under test.
std::size_t reference_word_count(const std::string& text) {
    std::istringstream in(text);
    std::size_t n = 0;
    for (std::string w; in >> w;) ++n;
    return n;
}

Document doc_with_tokens(std::size_t tokens) {
    Document d{"doc", 38, "t", ""};
    for (std::size_t i = 0; i < tokens; ++i) d.body += "w" + std::to_string(i) + " ";
    return d;
}

} // namespace

TEST_CASE("tokenize: empty input and word-level tokens", "[tokenize]") {
    const auto& tok = default_tokenizer();
    CHECK(tok.tokenize("").empty());
    CHECK(tok.tokenize(" \n\t ").empty());
    CHECK(detokenize(tok.tokenize(" \n\t ")) == " \n\t ");

    const std::string text = "PRACH in NR";
    const auto seq = tok.tokenize(text);
    REQUIRE(seq.size() == reference_word_count(text));
    CHECK(seq.size() == 3);
    CHECK(seq.tokens[0].text == "PRACH");
    CHECK(seq.tokens[2].offset == 9);
}

TEST_CASE("tokenize: detokenize round-trips arbitrary text", "[tokenize][property]") {
    const auto& tok = default_tokenizer();
    SplitMix64 rng(7);
    const std::string alphabet[] = {"a", "Z", "9", " ", "  ", "\n", "\t", "\r\n", ".", ",", "é", "—", "日本", "(x)"};
    for (int trial = 0; trial < 500; ++trial) {
        std::string text;
        const auto len = rng.below(60);
        for (std::uint64_t i = 0; i < len; ++i) text += alphabet[rng.below(std::size(alphabet))];
        const auto seq = tok.tokenize(text);
        REQUIRE(detokenize(seq) == text);
        REQUIRE(seq.size() == reference_word_count(text));
        REQUIRE(tok.tokenize(text).size() == seq.size()); // deterministic
    }
}

TEST_CASE("tokenize: unknown tokenizer id is a configuration error", "[tokenize]") {
    CHECK_THROWS_AS(make_tokenizer("bpe-42"), ConfigError);
    CHECK(make_tokenizer("whitespace")->id() == "whitespace");
}

TEST_CASE("chunk_document: exact division and remainder", "[chunking]") {
    ChunkingConfig cfg;
    auto c = chunk_document(doc_with_tokens(1000), cfg);
    REQUIRE(c.size() == 4);
    for (const auto& ch : c) CHECK(ch.token_count == 250);

    c = chunk_document(doc_with_tokens(1001), cfg);
    REQUIRE(c.size() == 5);
    CHECK(c.back().token_count == 1);
    CHECK(c.back().token_start == 1000);
    CHECK(c.back().series_id == 38);
}

TEST_CASE("chunk_document: empty document and bad chunk size", "[chunking]") {
    CHECK(chunk_document(Document{"d", std::nullopt, "", ""}, {}).empty());
    CHECK(chunk_document(Document{"d", std::nullopt, "", "   \n"}, {}).empty());
    CHECK_THROWS_AS(chunk_document(doc_with_tokens(10), ChunkingConfig{0, "whitespace"}), ConfigError);
    CHECK_THROWS_AS(chunk_document(doc_with_tokens(10), ChunkingConfig{-3, "whitespace"}), ConfigError);
    CHECK_THROWS_AS(chunk_document(doc_with_tokens(10), ChunkingConfig{10, "nope"}), ConfigError);
}

TEST_CASE("chunk_document: tiling, lossless text and determinism on the fixture corpus", "[chunking][property]") {
    const auto docs = fixtures::release_corpus();
    const auto& tok = default_tokenizer();
    for (long size : {1L, 7L, 125L, 250L, 500L}) {
        ChunkingConfig cfg{size, "whitespace"};
        for (const auto& d : docs) {
            const auto seq = tok.tokenize(d.body);
            const auto chunks = chunk_document(d, cfg);
            REQUIRE(chunks.size() == (seq.size() + size - 1) / size);
            std::size_t expect_start = 0;
            std::string rebuilt = seq.leading;
            for (std::size_t i = 0; i < chunks.size(); ++i) {
                const auto& c = chunks[i];
                REQUIRE(c.token_start == expect_start);
                REQUIRE(c.token_count == c.token_end - c.token_start);
                if (i + 1 < chunks.size()) REQUIRE(c.token_count == static_cast<std::size_t>(size));
                REQUIRE(c.chunk_id == make_chunk_id(d.doc_id, c.token_start, c.token_end));
                expect_start = c.token_end;
                rebuilt += c.text;
            }
            REQUIRE(expect_start == seq.size());
            REQUIRE(rebuilt == d.body);
            const auto again = chunk_document(d, cfg);
            for (std::size_t i = 0; i < chunks.size(); ++i) REQUIRE(again[i].chunk_id == chunks[i].chunk_id);
        }
    }
}

TEST_CASE("chunk_document: halving the chunk size doubles the count per document (+/-1)", "[chunking]") {
    for (const auto& d : fixtures::release_corpus()) {
        const auto n250 = chunk_document(d, {250, "whitespace"}).size();
        const auto n125 = chunk_document(d, {125, "whitespace"}).size();
        CHECK((n125 == 2 * n250 || n125 + 1 == 2 * n250));
    }
}

TEST_CASE("chunk ids are unique across the corpus", "[chunking]") {
    const auto chunks = chunk_corpus(fixtures::release_corpus(), {});
    std::set<std::string> ids;
    for (const auto& c : chunks) ids.insert(c.chunk_id);
    CHECK(ids.size() == chunks.size());
}

TEST_CASE("estimate_memory", "[chunking]") {
    CHECK(estimate_memory(1000, 250, 4, 4) == 64);
    CHECK(estimate_memory(1001, 250, 4, 4) == 80);
    CHECK(estimate_memory(1'000'000, 125, 1024, 4) == 2 * estimate_memory(1'000'000, 250, 1024, 4));
    // Ceiling effects: 1001 tokens -> 5 chunks at 250, 9 chunks at 125.
    CHECK(estimate_memory(1001, 125, 1, 1) == 9);
    CHECK_THROWS_AS(estimate_memory(0, 250, 4, 4), ArgumentError);
    CHECK_THROWS_AS(estimate_memory(10, -1, 4, 4), ArgumentError);
    CHECK_THROWS_AS(estimate_memory(10, 250, 0, 4), ArgumentError);
    CHECK_THROWS_AS(estimate_memory(10, 250, 4, 0), ArgumentError);
}

TEST_CASE("corpus manifest and chunk records", "[chunking][io]") {
    fixtures::TempDir dir("manifest");
    write_file(dir.path / "a.txt", "PRACH occasions are mapped to SSB indices.");
    write_file(dir.path / "b.txt", "Vocabulary entries.");
    write_file(dir.path / "manifest.jsonl",
               R"({"doc_id":"38.213","series_id":38,"title":"Physical layer procedures","path":"a.txt"})"
               "\n\n"
               R"({"doc_id":"21.905","series_id":null,"title":"Vocabulary","path":"b.txt"})"
               "\n");
    const auto docs = load_corpus(dir.path);
    REQUIRE(docs.size() == 2);
    CHECK(docs[0].series_id == 38);
    CHECK_FALSE(docs[1].series_id.has_value());

    auto chunks = chunk_corpus(docs, {3, "whitespace"});
    write_chunks(dir.path / "chunks.jsonl", chunks);
    const auto back = read_chunks(dir.path / "chunks.jsonl");
    REQUIRE(back.size() == chunks.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].chunk_id == chunks[i].chunk_id);
        CHECK(back[i].text == chunks[i].text);
        CHECK(back[i].series_id == chunks[i].series_id);
    }

    write_file(dir.path / "manifest.jsonl", R"({"doc_id":"x","series_id":40,"path":"a.txt"})"
                                            "\n");
    CHECK_THROWS_AS(load_corpus(dir.path), IntegrityError);
    write_file(dir.path / "manifest.jsonl", R"({"doc_id":"x","series_id":21,"path":"a.txt"})"
                                            "\n"
                                            R"({"doc_id":"x","series_id":22,"path":"b.txt"})"
                                            "\n");
    CHECK_THROWS_AS(load_corpus(dir.path), IntegrityError);
    write_file(dir.path / "manifest.jsonl", "{not json\n");
    CHECK_THROWS_AS(load_corpus(dir.path), ParseError);
}
