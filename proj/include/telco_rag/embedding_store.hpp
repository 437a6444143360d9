#pragma once

// On-disk embedding store, one shard per standards series.
//
//   <dir>/store.json            {"version", "dim", "model", "shards": [{"series", "rows", "file", "ids"}]}
//   <dir>/chunks.jsonl          chunk catalog (text + provenance)
//   <dir>/series_<id>.bin       16-byte header + rows * dim little-endian float32
//   <dir>/series_<id>.ids.jsonl {"chunk_id", "row"} per row
//
// Shard header: magic "TRES", u32 version, u32 dim, u32 row count, all
// little-endian. Chunks without a series go to shard key 0 ("series_none").

#include <atomic>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "chunking.hpp"
#include "embedding.hpp"
#include "error.hpp"

namespace telco_rag {

inline constexpr char kShardMagic[4] = {'T', 'R', 'E', 'S'};
inline constexpr std::uint32_t kShardVersion = 1;
inline constexpr std::size_t kShardHeaderBytes = 16;
inline constexpr std::size_t kBytesPerComponent = sizeof(float);

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }
inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

} // namespace detail

inline std::string shard_stem(int series_key) {
    return series_key == 0 ? std::string("series_none") : "series_" + std::to_string(series_key);
}

inline std::string encode_shard(std::uint32_t dim, const std::vector<const Vector*>& rows) {
    std::string out;
    out.reserve(kShardHeaderBytes + rows.size() * dim * kBytesPerComponent);
    out.append(kShardMagic, 4);
    detail::put_u32(out, kShardVersion);
    detail::put_u32(out, dim);
    detail::put_u32(out, static_cast<std::uint32_t>(rows.size()));
    for (const auto* r : rows) {
        if (r->size() != dim) throw IntegrityError("row dimension mismatch while writing shard");
        for (float f : *r) detail::put_f32(out, f);
    }
    return out;
}

/// Row-major float matrix of one shard plus the chunk ids of its rows.
struct LoadedShard {
    int series_key = 0;
    std::size_t dim = 0;
    std::vector<float> data;
    std::vector<std::string> ids;

    std::size_t rows() const noexcept { return ids.size(); }
    std::size_t resident_bytes() const noexcept { return data.size() * kBytesPerComponent; }
};

inline LoadedShard decode_shard(int series_key, std::string_view bytes) {
    if (bytes.size() < kShardHeaderBytes || std::memcmp(bytes.data(), kShardMagic, 4) != 0)
        throw IntegrityError("shard " + shard_stem(series_key) + ": bad magic");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const auto version = detail::get_u32(p + 4);
    if (version != kShardVersion) throw IntegrityError("shard " + shard_stem(series_key) + ": unsupported version");
    LoadedShard s;
    s.series_key = series_key;
    s.dim = detail::get_u32(p + 8);
    const std::size_t rows = detail::get_u32(p + 12);
    if (bytes.size() != kShardHeaderBytes + rows * s.dim * kBytesPerComponent)
        throw IntegrityError("shard " + shard_stem(series_key) + ": payload size does not match header");
    s.data.resize(rows * s.dim);
    for (std::size_t i = 0; i < s.data.size(); ++i) s.data[i] = detail::get_f32(p + kShardHeaderBytes + 4 * i);
    s.ids.resize(rows);
    return s;
}

struct ShardInfo {
    int series_key = 0;
    std::size_t rows = 0;
};

class EmbeddingStore {
public:
    /// Writes a complete store. `vectors[i]` is the embedding of `chunks[i]`;
    /// vectors are normalized here.
    static void write(const std::filesystem::path& dir, std::size_t dim, const std::string& model,
                      const std::vector<Chunk>& chunks, std::vector<Vector> vectors) {
        if (chunks.size() != vectors.size()) throw IntegrityError("chunk/vector count mismatch");
        std::filesystem::create_directories(dir);
        std::map<int, std::vector<std::size_t>> by_series;
        for (std::size_t i = 0; i < chunks.size(); ++i) {
            if (vectors[i].size() != dim) throw IntegrityError("vector dimension mismatch for " + chunks[i].chunk_id);
            normalize_in_place(vectors[i]);
            by_series[chunks[i].series_id.value_or(0)].push_back(i);
        }
        nlohmann::json manifest = {{"version", kShardVersion}, {"dim", dim}, {"model", model},
                                   {"shards", nlohmann::json::array()}};
        for (const auto& [key, idx] : by_series) {
            std::vector<const Vector*> rows;
            std::string ids;
            for (std::size_t r = 0; r < idx.size(); ++r) {
                rows.push_back(&vectors[idx[r]]);
                ids += nlohmann::json{{"chunk_id", chunks[idx[r]].chunk_id}, {"row", r}}.dump();
                ids += '\n';
            }
            const std::string stem = shard_stem(key);
            write_file(dir / (stem + ".bin"), encode_shard(static_cast<std::uint32_t>(dim), rows));
            write_file(dir / (stem + ".ids.jsonl"), ids);
            manifest["shards"].push_back(
                {{"series", key}, {"rows", idx.size()}, {"file", stem + ".bin"}, {"ids", stem + ".ids.jsonl"}});
        }
        write_chunks(dir / "chunks.jsonl", chunks);
        write_file(dir / "store.json", manifest.dump(2));
    }

    /// Opens a store: reads the manifest and chunk catalog, and verifies that
    /// every catalogued chunk has exactly one row. Shard payloads stay on disk.
    static EmbeddingStore open(const std::filesystem::path& dir) {
        EmbeddingStore s;
        s.dir_ = dir;
        nlohmann::json manifest;
        try {
            manifest = nlohmann::json::parse(read_file(dir / "store.json"));
        } catch (const nlohmann::json::exception& e) {
            throw IntegrityError("store.json: " + std::string(e.what()));
        }
        s.dim_ = manifest.at("dim").get<std::size_t>();
        s.model_ = manifest.value("model", std::string{});
        for (auto& c : read_chunks(dir / "chunks.jsonl")) {
            const auto id = c.chunk_id;
            if (!s.chunks_.emplace(id, std::move(c)).second) throw IntegrityError("duplicate chunk id " + id);
        }
        std::unordered_map<std::string, int> seen;
        for (const auto& sh : manifest.at("shards")) {
            ShardInfo info{sh.at("series").get<int>(), sh.at("rows").get<std::size_t>()};
            std::size_t n = 0;
            for (const auto& rec : read_jsonl(dir / sh.at("ids").get<std::string>())) {
                const auto id = rec.at("chunk_id").get<std::string>();
                if (!s.chunks_.contains(id)) throw IntegrityError("shard row for unknown chunk " + id);
                if (!seen.emplace(id, info.series_key).second) throw IntegrityError("chunk " + id + " stored twice");
                ++n;
            }
            if (n != info.rows) throw IntegrityError("id index of " + shard_stem(info.series_key) + " has wrong row count");
            s.shards_.emplace(info.series_key, info);
        }
        if (seen.size() != s.chunks_.size()) throw IntegrityError("some catalogued chunks have no embedding row");
        return s;
    }

    std::size_t dim() const noexcept { return dim_; }
    const std::string& model() const noexcept { return model_; }
    const std::map<int, ShardInfo>& shards() const noexcept { return shards_; }
    bool has_series(int key) const { return shards_.contains(key); }

    std::set<int> series_keys() const {
        std::set<int> keys;
        for (const auto& [k, _] : shards_) keys.insert(k);
        return keys;
    }

    const Chunk& chunk(const std::string& id) const {
        auto it = chunks_.find(id);
        if (it == chunks_.end()) throw IntegrityError("unknown chunk " + id);
        return it->second;
    }
    std::size_t chunk_count() const noexcept { return chunks_.size(); }

    /// Payload bytes of the whole store (headers excluded).
    std::size_t payload_bytes() const {
        std::size_t total = 0;
        for (const auto& [_, s] : shards_) total += s.rows * dim_ * kBytesPerComponent;
        return total;
    }

    LoadedShard load_shard(int key) const {
        if (!shards_.contains(key)) throw IntegrityError("missing shard " + shard_stem(key));
        shard_reads_.fetch_add(1);
        LoadedShard s = decode_shard(key, read_file(dir_ / (shard_stem(key) + ".bin")));
        if (s.dim != dim_) throw IntegrityError("shard " + shard_stem(key) + " has dim " + std::to_string(s.dim));
        if (s.rows() != shards_.at(key).rows) throw IntegrityError("shard " + shard_stem(key) + " row count mismatch");
        for (const auto& rec : read_jsonl(dir_ / (shard_stem(key) + ".ids.jsonl"))) {
            const auto row = rec.at("row").get<std::size_t>();
            if (row >= s.rows()) throw IntegrityError("id index row out of range in " + shard_stem(key));
            s.ids[row] = rec.at("chunk_id").get<std::string>();
        }
        return s;
    }

    /// Loads only the requested shards; all must exist.
    std::vector<LoadedShard> load_series(const std::set<int>& keys) const {
        for (int k : keys)
            if (!shards_.contains(k)) throw IntegrityError("missing shard " + shard_stem(k));
        std::vector<LoadedShard> out;
        for (int k : keys) out.push_back(load_shard(k));
        return out;
    }

    /// Number of shard payload reads since open; lets callers verify that a
    /// code path never touched the store.
    std::size_t shard_reads() const noexcept { return shard_reads_.load(); }

    EmbeddingStore(EmbeddingStore&& o) noexcept
        : dir_(std::move(o.dir_)), dim_(o.dim_), model_(std::move(o.model_)), chunks_(std::move(o.chunks_)),
          shards_(std::move(o.shards_)), shard_reads_(o.shard_reads_.load()) {}

private:
    EmbeddingStore() = default;

    std::filesystem::path dir_;
    std::size_t dim_ = 0;
    std::string model_;
    std::unordered_map<std::string, Chunk> chunks_;
    std::map<int, ShardInfo> shards_;
    mutable std::atomic<std::size_t> shard_reads_{0};
};

inline std::size_t resident_bytes(const std::vector<LoadedShard>& shards) {
    std::size_t total = 0;
    for (const auto& s : shards) total += s.resident_bytes();
    return total;
}

} // namespace telco_rag
