#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "hashing.hpp"
#include "tokenize.hpp"

namespace telco_rag {

inline constexpr int kFirstSeries = 21;
inline constexpr int kLastSeries = 38;
inline constexpr int kNumSeries = kLastSeries - kFirstSeries + 1;

inline bool valid_series(int id) noexcept { return id >= kFirstSeries && id <= kLastSeries; }

struct Document {
    std::string doc_id;
    std::optional<int> series_id;
    std::string title;
    std::string body;
};

struct Chunk {
    std::string chunk_id;
    std::string doc_id;
    std::optional<int> series_id;
    std::size_t token_start = 0;
    std::size_t token_end = 0;
    std::size_t token_count = 0;
    std::string text;
};

struct ChunkingConfig {
    long chunk_size = 250;
    std::string tokenizer_id = std::string(WhitespaceTokenizer::kId);
};

/// Stable across re-ingestion: depends only on where the chunk sits.
inline std::string make_chunk_id(std::string_view doc_id, std::size_t start, std::size_t end) {
    std::string key(doc_id);
    key += '\x1f';
    key += std::to_string(start);
    key += '\x1f';
    key += std::to_string(end);
    return hex64(fnv1a64(key));
}

/// Splits a document into consecutive, non-overlapping windows of
/// `cfg.chunk_size` tokens. The trailing window may be shorter; it is kept
/// as-is so the windows tile [0, T) exactly.
inline std::vector<Chunk> chunk_document(const Document& doc, const ChunkingConfig& cfg) {
    if (cfg.chunk_size <= 0) throw ConfigError("chunk_size must be >= 1");
    const auto tokenizer = make_tokenizer(cfg.tokenizer_id);
    const TokenSequence seq = tokenizer->tokenize(doc.body);
    const std::size_t total = seq.size();
    const auto size = static_cast<std::size_t>(cfg.chunk_size);

    std::vector<Chunk> chunks;
    chunks.reserve((total + size - 1) / size);
    for (std::size_t start = 0; start < total; start += size) {
        const std::size_t end = std::min(start + size, total);
        Chunk c;
        c.chunk_id = make_chunk_id(doc.doc_id, start, end);
        c.doc_id = doc.doc_id;
        c.series_id = doc.series_id;
        c.token_start = start;
        c.token_end = end;
        c.token_count = end - start;
        c.text = detokenize(std::span<const Token>(seq.tokens).subspan(start, end - start));
        chunks.push_back(std::move(c));
    }
    return chunks;
}

inline std::vector<Chunk> chunk_corpus(const std::vector<Document>& docs, const ChunkingConfig& cfg) {
    std::vector<Chunk> all;
    for (const auto& d : docs) {
        auto part = chunk_document(d, cfg);
        all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    return all;
}

/// Bytes needed to hold the embeddings of a corpus of `total_tokens` tokens:
/// ceil(L / chunk_size) * dim * bytes_per_component. For reference, a full
/// standards release at chunk_size 125 and dim 1024 lands around 11.5 GB.
inline std::uint64_t estimate_memory(long long total_tokens, long long chunk_size, long long dim,
                                     long long bytes_per_component) {
    if (total_tokens <= 0 || chunk_size <= 0 || dim <= 0 || bytes_per_component <= 0)
        throw ArgumentError("estimate_memory: all inputs must be positive");
    const auto chunks = static_cast<std::uint64_t>((total_tokens + chunk_size - 1) / chunk_size);
    return chunks * static_cast<std::uint64_t>(dim) * static_cast<std::uint64_t>(bytes_per_component);
}

// ---------------------------------------------------------------------------
// Corpus manifest and chunk records (JSON lines)

inline std::optional<int> series_from_json(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    if (!j.is_number_integer()) throw ParseError("series_id must be an integer or null");
    const int s = j.get<int>();
    if (!valid_series(s)) throw IntegrityError("series_id " + std::to_string(s) + " outside [21, 38]");
    return s;
}

inline nlohmann::json series_to_json(const std::optional<int>& s) {
    return s ? nlohmann::json(*s) : nlohmann::json(nullptr);
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IntegrityError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& p, std::string_view data) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IntegrityError("cannot write " + p.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

/// Parses JSON lines, skipping blank lines. Throws ParseError with the line
/// number on malformed input.
inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw IntegrityError("cannot open " + p.string());
    std::vector<nlohmann::json> rows;
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            rows.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(p.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return rows;
}

/// Loads `<dir>/manifest.jsonl`; each record names a text file relative to
/// `dir`: {"doc_id", "series_id", "title", "path"}.
inline std::vector<Document> load_corpus(const std::filesystem::path& dir) {
    std::vector<Document> docs;
    std::set<std::string> seen;
    for (const auto& rec : read_jsonl(dir / "manifest.jsonl")) {
        Document d;
        d.doc_id = rec.at("doc_id").get<std::string>();
        if (!seen.insert(d.doc_id).second) throw IntegrityError("duplicate doc_id " + d.doc_id);
        d.series_id = series_from_json(rec.value("series_id", nlohmann::json(nullptr)));
        d.title = rec.value("title", std::string{});
        d.body = read_file(dir / rec.at("path").get<std::string>());
        docs.push_back(std::move(d));
    }
    return docs;
}

inline nlohmann::json chunk_to_json(const Chunk& c) {
    return {{"chunk_id", c.chunk_id},     {"doc_id", c.doc_id},       {"series_id", series_to_json(c.series_id)},
            {"token_start", c.token_start}, {"token_end", c.token_end}, {"text", c.text}};
}

inline Chunk chunk_from_json(const nlohmann::json& j) {
    Chunk c;
    c.chunk_id = j.at("chunk_id").get<std::string>();
    c.doc_id = j.at("doc_id").get<std::string>();
    c.series_id = series_from_json(j.at("series_id"));
    c.token_start = j.at("token_start").get<std::size_t>();
    c.token_end = j.at("token_end").get<std::size_t>();
    if (c.token_end < c.token_start) throw IntegrityError("chunk " + c.chunk_id + " has token_end < token_start");
    c.token_count = c.token_end - c.token_start;
    c.text = j.at("text").get<std::string>();
    return c;
}

inline void write_chunks(const std::filesystem::path& p, const std::vector<Chunk>& chunks) {
    std::string out;
    for (const auto& c : chunks) {
        out += chunk_to_json(c).dump();
        out += '\n';
    }
    write_file(p, out);
}

inline std::vector<Chunk> read_chunks(const std::filesystem::path& p) {
    std::vector<Chunk> chunks;
    for (const auto& rec : read_jsonl(p)) chunks.push_back(chunk_from_json(rec));
    return chunks;
}

} // namespace telco_rag
