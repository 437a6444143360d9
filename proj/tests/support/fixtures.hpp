#pragma once

// Deterministic fixture builders shared by the test suites.

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include <telco_rag/chunking.hpp>
#include <telco_rag/hashing.hpp>

namespace fixtures {

inline const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> words = {
        "the",      "UE",        "shall",     "transmit", "PRACH",    "preamble", "on",       "resources",
        "configured", "by",      "higher",    "layers.",  "gNB",      "NR",       "carrier,", "bandwidth",
        "part",     "(BWP)",     "switching", "timer",    "expires;", "RRC",      "connection", "setup",
        "procedure", "includes", "security",  "context",  "AMF",      "SMF",      "PDU",      "session",
        "QoS",      "flow",      "mapping",   "rule",     "—",        "résumé",   "measurement", "report."};
    return words;
}

/// Body of roughly `tokens` whitespace tokens with varied separators.
inline std::string synthetic_body(std::uint64_t seed, std::size_t tokens) {
    telco_rag::SplitMix64 rng(seed);
    const auto& vocab = vocabulary();
    static const char* seps[] = {" ", " ", " ", "  ", "\n", "\t", " \n\n"};
    std::string body = seed % 3 == 0 ? "  " : "";
    for (std::size_t i = 0; i < tokens; ++i) {
        body += vocab[rng.below(vocab.size())];
        if (i + 1 < tokens || seed % 2 == 0) body += seps[rng.below(7)];
    }
    return body;
}

/// 50 documents spread over the 18 series with lengths between 40 and 1,340
/// tokens.
inline std::vector<telco_rag::Document> release_corpus(std::size_t n_docs = 50) {
    std::vector<telco_rag::Document> docs;
    for (std::size_t i = 0; i < n_docs; ++i) {
        telco_rag::Document d;
        d.doc_id = "TS-" + std::to_string(21 + i % 18) + "." + std::to_string(100 + i);
        d.series_id = static_cast<int>(21 + i % 18);
        d.title = "Synthetic standard " + std::to_string(i);
        d.body = synthetic_body(1000 + i, 40 + (i * 263) % 1301);
        docs.push_back(std::move(d));
    }
    return docs;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("telco_rag_" + tag + "_" + telco_rag::hex64(telco_rag::fnv1a64(tag + std::to_string(::getpid()))));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

} // namespace fixtures
