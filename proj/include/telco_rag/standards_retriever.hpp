#pragma once

#include <algorithm>
#include <functional>
#include <list>
#include <memory>
#include <regex>
#include <span>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "embedding.hpp"
#include "embedding_store.hpp"
#include "error.hpp"
#include "llm.hpp"
#include "query_refine.hpp"
#include "router.hpp"
#include "vector_index.hpp"

namespace telco_rag {

struct RetrievalConfig {
    long chunk_size = 250;
    std::size_t chunks_per_context = 8;
    std::size_t context_budget = 2000;
    std::size_t series_k = 5;
    std::size_t candidate_answer_count = 3;
    int rounds = 2;

    void validate() const {
        if (chunk_size <= 0 || chunks_per_context == 0 || context_budget == 0)
            throw ConfigError("retrieval sizes must be positive");
        if (series_k < 1 || series_k > static_cast<std::size_t>(kNumSeries))
            throw ConfigError("series_k must be in [1, 18]");
        if (rounds != 1 && rounds != 2) throw ConfigError("rounds must be 1 or 2");
    }

    nlohmann::json to_json() const {
        return {{"chunk_size", chunk_size},
                {"chunks_per_context", chunks_per_context},
                {"context_budget", context_budget},
                {"series_k", series_k},
                {"candidate_answer_count", candidate_answer_count},
                {"rounds", rounds}};
    }

    static RetrievalConfig from_json(const nlohmann::json& j) {
        RetrievalConfig c;
        c.chunk_size = j.value("chunk_size", c.chunk_size);
        c.chunks_per_context = j.value("chunks_per_context", c.chunks_per_context);
        c.context_budget = j.value("context_budget", c.context_budget);
        c.series_k = j.value("series_k", c.series_k);
        c.candidate_answer_count = j.value("candidate_answer_count", c.candidate_answer_count);
        c.rounds = j.value("rounds", c.rounds);
        c.validate();
        return c;
    }
};

struct ContextChunk {
    Chunk chunk;
    double score = 0.0;
    int round = 1;
};

struct RetrievedContext {
    std::vector<ContextChunk> chunks;
    std::size_t total_tokens = 0;
    std::set<int> scope;
    std::vector<std::string> candidate_answers;
    bool candidates_degraded = false;
    int rounds_run = 0;
};

/// Picks the series to search for a query embedding. Returns series ids.
using SeriesSelector = std::function<std::vector<int>(std::span<const float>, std::size_t k)>;

inline SeriesSelector router_selector(std::shared_ptr<const Router> router,
                                      std::shared_ptr<const SeriesSummaries> summaries) {
    return [router = std::move(router), summaries = std::move(summaries)](std::span<const float> q, std::size_t k) {
        return predict_topk(*router, q, *summaries, k);
    };
}

/// Keeps up to `capacity` decoded shards, evicting the least recently used.
class ShardCache {
public:
    explicit ShardCache(const EmbeddingStore& store, std::size_t capacity) : store_(store), capacity_(capacity) {}

    std::shared_ptr<const LoadedShard> get(int key) {
        {
            std::lock_guard lock(mu_);
            for (auto it = lru_.begin(); it != lru_.end(); ++it)
                if ((*it)->series_key == key) {
                    lru_.splice(lru_.begin(), lru_, it);
                    ++hits_;
                    return lru_.front();
                }
        }
        auto loaded = std::make_shared<const LoadedShard>(store_.load_shard(key));
        std::lock_guard lock(mu_);
        ++misses_;
        lru_.push_front(loaded);
        while (lru_.size() > capacity_) lru_.pop_back();
        return loaded;
    }

    void set_capacity(std::size_t c) {
        std::lock_guard lock(mu_);
        capacity_ = std::max<std::size_t>(c, 1);
        while (lru_.size() > capacity_) lru_.pop_back();
    }

    std::size_t resident_bytes() const {
        std::lock_guard lock(mu_);
        std::size_t total = 0;
        for (const auto& s : lru_) total += s->resident_bytes();
        return total;
    }

    std::set<int> resident_series() const {
        std::lock_guard lock(mu_);
        std::set<int> out;
        for (const auto& s : lru_) out.insert(s->series_key);
        return out;
    }

    std::size_t hits() const {
        std::lock_guard lock(mu_);
        return hits_;
    }
    std::size_t misses() const {
        std::lock_guard lock(mu_);
        return misses_;
    }

private:
    const EmbeddingStore& store_;
    std::size_t capacity_;
    mutable std::mutex mu_;
    std::list<std::shared_ptr<const LoadedShard>> lru_;
    std::size_t hits_ = 0, misses_ = 0;
};

inline constexpr std::string_view kCandidatesSystem =
    "You are an expert in 3GPP telecommunications standards. Using the context, propose short candidate answers "
    "to the question. Write one candidate per line with no numbering and no other text.";

/// Splits an LLM reply into at most `k` candidate answers, dropping list
/// markers and blank or repeated lines.
inline std::vector<std::string> parse_candidates(std::string_view reply, std::size_t k) {
    static const std::regex marker(R"(^\s*(?:[-*•]|\d+[.)]|option\s*\d+\s*[:.)])\s*)", std::regex::icase);
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= reply.size() && out.size() < k) {
        auto nl = reply.find('\n', pos);
        if (nl == std::string_view::npos) nl = reply.size();
        auto line = trim(std::regex_replace(std::string(reply.substr(pos, nl - pos)), marker, ""));
        if (!line.empty() && std::find(out.begin(), out.end(), line) == out.end()) out.push_back(std::move(line));
        pos = nl + 1;
    }
    return out;
}

inline std::string candidates_prompt(const std::string& q_plus, const std::vector<const Chunk*>& context,
                                     std::size_t k) {
    std::string p = "Question:\n" + q_plus + "\n\nContext:\n";
    for (const auto* c : context) p += c->text + "\n\n";
    p += "Give up to " + std::to_string(k) + " candidate answers.";
    return p;
}

struct CandidateResult {
    std::vector<std::string> answers;
    bool degraded = false;
};

inline CandidateResult generate_candidates(const std::string& q_plus, const std::vector<const Chunk*>& round1,
                                           LlmClient& llm, std::size_t k_a,
                                           const RetryPolicy& retry = RetryPolicy::none()) {
    if (k_a == 0) return {};
    try {
        const auto reply = with_retries(retry, [&] {
            return llm.complete({LlmTask::candidates, std::string(kCandidatesSystem), candidates_prompt(q_plus, round1, k_a)});
        });
        return {parse_candidates(reply, k_a), false};
    } catch (const ProviderError&) {
        return {{}, true};
    }
}

/// Keeps hits in rank order while both the chunk count and token budget
/// allow; a chunk that does not fit is skipped and later ones are still
/// considered.
inline std::vector<ContextChunk> fit_to_budget(std::vector<ContextChunk> ranked, std::size_t max_chunks,
                                               std::size_t budget, std::size_t* total_out = nullptr) {
    std::vector<ContextChunk> out;
    std::size_t total = 0;
    for (auto& c : ranked) {
        if (out.size() == max_chunks) break;
        const auto t = static_cast<std::size_t>(c.chunk.token_count);
        if (total + t > budget) continue;
        total += t;
        out.push_back(std::move(c));
    }
    if (total_out) *total_out = total;
    return out;
}

class StandardsRetriever {
public:
    StandardsRetriever(const EmbeddingStore& store, std::shared_ptr<EmbedClient> embedder, RetrievalConfig cfg,
                       SeriesSelector selector = {})
        : store_(store), embedder_(std::move(embedder)), cfg_(cfg), selector_(std::move(selector)),
          cache_(store, cfg.series_k) {
        cfg_.validate();
        if (embedder_->dim() != store.dim())
            throw IntegrityError("embedder dim " + std::to_string(embedder_->dim()) + " != store dim " +
                                 std::to_string(store.dim()));
    }

    const RetrievalConfig& config() const noexcept { return cfg_; }
    const ShardCache& cache() const noexcept { return cache_; }
    const EmbeddingStore& store() const noexcept { return store_; }

    /// Series searched for this query embedding. Without a selector, or with
    /// series_k = 18, every stored shard is in scope.
    std::set<int> select_scope(std::span<const float> q) const {
        if (!selector_ || cfg_.series_k >= static_cast<std::size_t>(kNumSeries)) return store_.series_keys();
        const auto picked = selector_(q, cfg_.series_k);
        return {picked.begin(), picked.end()};
    }

    /// Builds a flat index over the stored shards of `scope`. Series without
    /// stored chunks contribute nothing.
    FlatIndex scoped_index(const std::set<int>& scope) {
        if (scope.size() > cfg_.series_k) cache_.set_capacity(scope.size());
        FlatIndex idx(store_.dim());
        for (int key : scope)
            if (store_.has_series(key)) idx.add_shard(*cache_.get(key));
        return idx;
    }

    std::vector<SearchHit> retrieve_round(std::span<const float> query, const FlatIndex& index,
                                          const std::set<int>& scope) const {
        if (index.empty()) {
            std::string names;
            for (int s : scope) names += (names.empty() ? "" : ",") + std::to_string(s);
            throw RetrievalError("no stored chunks in selected series {" + names + "}");
        }
        return index.search(query, cfg_.chunks_per_context);
    }

    std::vector<SearchHit> retrieve_round(const std::string& query_text, const std::set<int>& scope) {
        const auto q = embedder_->embed_one(query_text);
        return retrieve_round(q, scoped_index(scope), scope);
    }

    /// Round 1 with Q+, candidate answers, then round 2 with Q++ over the same
    /// scope. Round 2 replaces round 1. Updates the candidate answers and Q++
    /// in `state`.
    RetrievedContext retrieve(QueryState& state, LlmClient* llm, const RetryPolicy& retry = RetryPolicy::none()) {
        RetrievedContext ctx;
        const auto q1 = embedder_->embed_one(state.refined);
        ctx.scope = select_scope(q1);
        const auto index = scoped_index(ctx.scope);
        auto hits = retrieve_round(q1, index, ctx.scope);
        int round = 1;
        ctx.rounds_run = 1;

        if (cfg_.rounds == 2 && cfg_.candidate_answer_count > 0) {
            std::vector<const Chunk*> round1;
            for (const auto& h : hits) round1.push_back(&store_.chunk(h.chunk_id));
            CandidateResult cand;
            if (llm)
                cand = generate_candidates(state.refined, round1, *llm, cfg_.candidate_answer_count, retry);
            else
                cand.degraded = true;
            ctx.candidate_answers = cand.answers;
            ctx.candidates_degraded = cand.degraded;
            state.candidate_answers = cand.answers;
            if (!cand.answers.empty()) {
                state.augmented = augment_query(state.refined, cand.answers);
                hits = retrieve_round(embedder_->embed_one(*state.augmented), index, ctx.scope);
                round = 2;
                ctx.rounds_run = 2;
            }
        }

        std::vector<ContextChunk> ranked;
        for (const auto& h : hits) ranked.push_back({store_.chunk(h.chunk_id), h.score, round});
        ctx.chunks = fit_to_budget(std::move(ranked), cfg_.chunks_per_context, cfg_.context_budget, &ctx.total_tokens);
        return ctx;
    }

private:
    const EmbeddingStore& store_;
    std::shared_ptr<EmbedClient> embedder_;
    RetrievalConfig cfg_;
    SeriesSelector selector_;
    ShardCache cache_;
};

} // namespace telco_rag
