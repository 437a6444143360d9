#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "concurrency.hpp"
#include "embedding.hpp"
#include "embedding_store.hpp"
#include "error.hpp"

namespace telco_rag {

struct SearchHit {
    std::string chunk_id;
    double score = 0.0;
    std::size_t rank = 0; // 1-based
    std::size_t row = 0;  // insertion position in the index
};

/// Exact inner-product index over unit-norm rows. Rows are stored as float;
/// dot products accumulate in double. Ties in score resolve to the row that
/// was inserted first, so results are fully deterministic.
class FlatIndex {
public:
    explicit FlatIndex(std::size_t dim) : dim_(dim) {
        if (dim == 0) throw ArgumentError("index dim must be positive");
    }

    static FlatIndex from_shards(std::size_t dim, const std::vector<LoadedShard>& shards) {
        FlatIndex idx(dim);
        for (const auto& s : shards) idx.add_shard(s);
        return idx;
    }

    void add_shard(const LoadedShard& s) {
        if (s.dim != dim_) throw IntegrityError("shard dim does not match index dim");
        data_.insert(data_.end(), s.data.begin(), s.data.end());
        ids_.insert(ids_.end(), s.ids.begin(), s.ids.end());
    }

    void add(std::string id, std::span<const float> v) {
        if (v.size() != dim_) throw IntegrityError("vector dim " + std::to_string(v.size()) + " != index dim " +
                                                   std::to_string(dim_));
        data_.insert(data_.end(), v.begin(), v.end());
        ids_.push_back(std::move(id));
    }

    std::size_t size() const noexcept { return ids_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    bool empty() const noexcept { return ids_.empty(); }
    const std::string& id(std::size_t row) const { return ids_.at(row); }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * dim_, dim_}; }

    /// Top-k rows by inner product. `workers` > 1 splits the scan into row
    /// ranges and merges the partial top-k lists.
    std::vector<SearchHit> search(std::span<const float> query, std::size_t k, std::size_t workers = 1) const {
        if (query.size() != dim_) throw IntegrityError("query dim " + std::to_string(query.size()) +
                                                       " != index dim " + std::to_string(dim_));
        if (k == 0) throw ArgumentError("k must be >= 1");
        if (empty()) throw RetrievalError("search on an empty index");
        const std::size_t n = size();
        k = std::min(k, n);
        workers = std::clamp<std::size_t>(workers, 1, n);

        std::vector<std::vector<Scored>> partial(workers);
        const std::size_t span = (n + workers - 1) / workers;
        bounded_parallel_for(workers, workers, [&](std::size_t w) {
            const std::size_t lo = w * span, hi = std::min(n, lo + span);
            auto& part = partial[w];
            part.reserve(hi > lo ? hi - lo : 0);
            for (std::size_t r = lo; r < hi; ++r) part.push_back({dot(query, row(r)), r});
            const std::size_t keep = std::min(k, part.size());
            std::partial_sort(part.begin(), part.begin() + static_cast<std::ptrdiff_t>(keep), part.end(), better);
            part.resize(keep);
        });

        std::vector<Scored> merged;
        for (auto& p : partial) merged.insert(merged.end(), p.begin(), p.end());
        std::sort(merged.begin(), merged.end(), better);
        merged.resize(k);

        std::vector<SearchHit> hits;
        hits.reserve(k);
        for (std::size_t i = 0; i < k; ++i) hits.push_back({ids_[merged[i].row], merged[i].score, i + 1, merged[i].row});
        return hits;
    }

private:
    struct Scored {
        double score;
        std::size_t row;
    };
    static bool better(const Scored& a, const Scored& b) {
        return a.score != b.score ? a.score > b.score : a.row < b.row;
    }

    std::size_t dim_;
    std::vector<float> data_;
    std::vector<std::string> ids_;
};

/// Checks that ranking by descending inner product and by ascending
/// Euclidean distance agree (ties broken by position in both). For unit
/// vectors ||a - b||^2 = 2 - 2 a.b, so this holds up to rounding.
inline bool rank_equivalence_check(const std::vector<Vector>& vectors, std::span<const float> query) {
    const std::size_t n = vectors.size();
    std::vector<double> ip(n), l2(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (vectors[i].size() != query.size()) return false;
        ip[i] = dot(query, vectors[i]);
        double d = 0.0;
        for (std::size_t j = 0; j < query.size(); ++j) {
            const double diff = static_cast<double>(query[j]) - vectors[i][j];
            d += diff * diff;
        }
        l2[i] = d;
    }
    std::vector<std::size_t> by_ip(n), by_l2(n);
    std::iota(by_ip.begin(), by_ip.end(), 0);
    std::iota(by_l2.begin(), by_l2.end(), 0);
    std::stable_sort(by_ip.begin(), by_ip.end(), [&](auto a, auto b) { return ip[a] > ip[b]; });
    std::stable_sort(by_l2.begin(), by_l2.end(), [&](auto a, auto b) { return l2[a] < l2[b]; });
    return by_ip == by_l2;
}

} // namespace telco_rag
