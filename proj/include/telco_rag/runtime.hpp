#pragma once

#include <condition_variable>
#include <filesystem>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "chunking.hpp"
#include "config.hpp"
#include "embedding.hpp"
#include "embedding_store.hpp"
#include "http.hpp"
#include "mock_llm.hpp"
#include "pipeline.hpp"
#include "router.hpp"

namespace telco_rag {

/// Caps the number of in-flight calls to one provider; every request served
/// by a process shares the same instance.
class LimitedLlm final : public LlmClient {
public:
    LimitedLlm(std::shared_ptr<LlmClient> inner, std::size_t max_inflight)
        : inner_(std::move(inner)), max_(std::max<std::size_t>(1, max_inflight)) {}

    std::string id() const override { return inner_->id(); }

    std::string complete(const LlmRequest& req) override {
        {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [&] { return inflight_ < max_; });
            ++inflight_;
        }
        struct Release {
            LimitedLlm* self;
            ~Release() {
                {
                    std::lock_guard lock(self->mu_);
                    --self->inflight_;
                }
                self->cv_.notify_one();
            }
        } release{this};
        return inner_->complete(req);
    }

    LlmClient& inner() { return *inner_; }

private:
    std::shared_ptr<LlmClient> inner_;
    std::size_t max_;
    std::size_t inflight_ = 0;
    std::mutex mu_;
    std::condition_variable cv_;
};

struct IngestSummary {
    std::size_t documents = 0;
    std::size_t chunks = 0;
    std::set<int> series;
    std::size_t dim = 0;
    std::filesystem::path store;

    nlohmann::json to_json() const {
        return {{"documents", documents}, {"chunks", chunks}, {"series", series}, {"dim", dim},
                {"store", store.string()}};
    }
};

/// Chunks every document under `corpus_dir`, embeds the chunks and writes a
/// sharded store to `store_dir`.
inline IngestSummary ingest_corpus(const std::filesystem::path& corpus_dir, const std::filesystem::path& store_dir,
                                   EmbedClient& embedder, const ChunkingConfig& chunking) {
    const auto docs = load_corpus(corpus_dir);
    if (docs.empty()) throw ArgumentError("corpus " + corpus_dir.string() + " has no documents");
    const auto chunks = chunk_corpus(docs, chunking);
    std::vector<std::string> texts;
    texts.reserve(chunks.size());
    for (const auto& c : chunks) texts.push_back(c.text);
    std::vector<Vector> vecs;
    vecs.reserve(chunks.size());
    for (auto& e : embedder.embed(texts)) vecs.push_back(std::move(e.components));
    EmbeddingStore::write(store_dir, embedder.dim(), embedder.provider().model_id(), chunks, std::move(vecs));

    IngestSummary s;
    s.documents = docs.size();
    s.chunks = chunks.size();
    for (const auto& c : chunks) s.series.insert(c.series_id.value_or(0));
    s.dim = embedder.dim();
    s.store = store_dir;
    return s;
}

inline std::shared_ptr<EmbeddingProvider> make_embedding_provider(const AppConfig& cfg) {
    if (cfg.embedding_provider == "mock") return std::make_shared<MockEmbeddingProvider>(cfg.mock_dim);
    return std::make_shared<HttpEmbeddingProvider>(cfg.embedding);
}

inline std::shared_ptr<LlmClient> make_llm(const AppConfig& cfg) {
    std::shared_ptr<LlmClient> base;
    if (cfg.llm_provider == "mock")
        base = std::make_shared<MockLlm>();
    else if (cfg.llm_provider == "replay")
        base = ReplayLlm::from_file(*cfg.llm_replay);
    else
        base = std::make_shared<HttpChatClient>(cfg.chat);
    return std::make_shared<LimitedLlm>(std::move(base), cfg.llm_max_inflight);
}

/// Any HTTP response from the endpoint's origin counts as reachable.
inline bool endpoint_reachable(const std::string& endpoint, int timeout_seconds = 3) {
    try {
        auto cli = make_http_client(parse_url(endpoint), timeout_seconds);
        return static_cast<bool>(cli.Get("/"));
    } catch (const std::exception&) {
        return false;
    }
}

/// Components wired from an AppConfig. Parts that fail to load are left
/// empty and reported by health(); the pipeline then degrades around them.
class Runtime {
public:
    explicit Runtime(AppConfig cfg) : cfg_(std::move(cfg)) {
        embedder_ = std::make_shared<EmbedClient>(make_embedding_provider(cfg_));
        llm_ = make_llm(cfg_);
        if (cfg_.glossary)
            glossary_ = std::make_shared<const Glossary>(Glossary::load(*cfg_.glossary));
        else
            glossary_ = std::make_shared<const Glossary>();

        init_router();
        init_store();
        init_web();
    }

    Runtime(const Runtime&) = delete;
    Runtime& operator=(const Runtime&) = delete;

    const AppConfig& config() const noexcept { return cfg_; }
    EmbedClient& embedder() { return *embedder_; }
    std::shared_ptr<LlmClient> llm() const { return llm_; }
    const EmbeddingStore* store() const { return store_.get(); }
    std::shared_ptr<const Router> router() const { return router_; }
    std::shared_ptr<const SeriesSummaries> summaries() const { return summaries_; }
    const std::string& store_error() const noexcept { return store_error_; }
    const std::string& router_error() const noexcept { return router_error_; }

    PipelineOptions pipeline_options() const {
        PipelineOptions o;
        o.mode = cfg_.mode;
        o.context_budget = cfg_.retrieval.context_budget;
        if (cfg_.deterministic_clock) o.clock = constant_clock();
        return o;
    }

    Pipeline pipeline() const { return pipeline(cfg_.retrieval); }

    /// A pipeline over the shared components with different retrieval
    /// settings; the store and providers are not reloaded.
    Pipeline pipeline(const RetrievalConfig& retrieval) const {
        auto o = pipeline_options();
        o.context_budget = retrieval.context_budget;
        std::shared_ptr<StandardsRetriever> standards;
        if (store_) {
            if (retrieval.to_json() == cfg_.retrieval.to_json())
                standards = standards_;
            else
                standards = std::make_shared<StandardsRetriever>(*store_, embedder_, retrieval, selector());
        }
        return Pipeline({llm_, glossary_, standards, web_}, o);
    }

    /// Series ids in descending router probability, with the probabilities.
    std::vector<std::pair<int, double>> route(const std::string& question, std::size_t k) {
        if (!router_) throw ConfigError("router not available: " + router_error_);
        if (k < 1 || k > static_cast<std::size_t>(kNumSeries)) throw ArgumentError("k must be in [1, 18]");
        const auto q = embedder_->embed_one(question);
        const auto in = build_inputs(q, *summaries_);
        const auto probs = forward(*router_, in.query, in.alignment);
        const auto ranked = rank_series(probs);
        std::vector<std::pair<int, double>> out;
        for (std::size_t i = 0; i < k; ++i) out.emplace_back(ranked[i], probs[ranked[i] - kFirstSeries]);
        return out;
    }

    nlohmann::json health(bool probe_providers = true) const {
        auto provider = [&](const std::string& kind, const std::string& endpoint) {
            if (kind == "mock" || kind == "replay") return true;
            return probe_providers && endpoint_reachable(endpoint);
        };
        const bool llm_ok = provider(cfg_.llm_provider, cfg_.chat.endpoint);
        const bool emb_ok = provider(cfg_.embedding_provider, cfg_.embedding.endpoint);
        bool search_ok = false;
        if (cfg_.search_replay)
            search_ok = web_ != nullptr;
        else if (!cfg_.search.endpoint.empty())
            search_ok = probe_providers && endpoint_reachable(cfg_.search.endpoint);
        const bool ready = llm_ok && (store_ != nullptr || search_ok);
        nlohmann::json errors = nlohmann::json::object();
        if (!store_error_.empty()) errors["store"] = store_error_;
        if (!router_error_.empty()) errors["router"] = router_error_;
        if (!web_error_.empty()) errors["web"] = web_error_;
        return {{"status", ready ? "ok" : "degraded"},
                {"store", store_ != nullptr},
                {"router", router_ != nullptr},
                {"providers", {{"llm", llm_ok}, {"embedding", emb_ok}, {"search", search_ok}}},
                {"errors", errors}};
    }

private:
    SeriesSelector selector() const {
        return router_ ? router_selector(router_, summaries_) : SeriesSelector{};
    }

    void init_router() {
        if (!cfg_.router) {
            router_error_ = "no router configured";
            return;
        }
        try {
            if (!cfg_.summaries) throw ConfigError("router needs paths.summaries");
            auto router = std::make_shared<const Router>(telco_rag::load_router(*cfg_.router));
            auto summaries = std::make_shared<const SeriesSummaries>(SeriesSummaries::load(*cfg_.summaries, embedder_.get()));
            if (summaries->dim() != embedder_->dim())
                throw IntegrityError("summary embeddings have dim " + std::to_string(summaries->dim()) +
                                     ", embedder has " + std::to_string(embedder_->dim()));
            router_ = std::move(router);
            summaries_ = std::move(summaries);
        } catch (const std::exception& e) {
            router_error_ = e.what();
        }
    }

    void init_store() {
        try {
            if (!std::filesystem::is_regular_file(cfg_.store / "store.json"))
                throw IntegrityError("no store at " + cfg_.store.string());
            store_ = std::make_shared<EmbeddingStore>(EmbeddingStore::open(cfg_.store));
            standards_ = std::make_shared<StandardsRetriever>(*store_, embedder_, cfg_.retrieval, selector());
        } catch (const std::exception& e) {
            store_.reset();
            standards_.reset();
            store_error_ = e.what();
        }
    }

    void init_web() {
        try {
            std::shared_ptr<SearchProvider> search;
            if (cfg_.search_replay)
                search = std::make_shared<ReplaySearchProvider>(ReplaySearchProvider::from_file(*cfg_.search_replay));
            else if (!cfg_.search.endpoint.empty())
                search = std::make_shared<HttpSearchProvider>(cfg_.search);
            if (!search) {
                web_error_ = "no search provider configured";
                return;
            }
            std::shared_ptr<Fetcher> fetcher;
            if (cfg_.pages_index) {
                fetcher = std::make_shared<FixtureFetcher>(FixtureFetcher::from_file(*cfg_.pages_index));
            } else {
                HttpFetchOptions o;
                o.cache_dir = cfg_.fetch_cache;
                fetcher = std::make_shared<HttpFetcher>(o);
            }
            web_ = std::make_shared<WebRetriever>(search, fetcher, cfg_.web);
        } catch (const std::exception& e) {
            web_.reset();
            web_error_ = e.what();
        }
    }

    AppConfig cfg_;
    std::shared_ptr<EmbedClient> embedder_;
    std::shared_ptr<LlmClient> llm_;
    std::shared_ptr<const Glossary> glossary_;
    std::shared_ptr<EmbeddingStore> store_;
    std::shared_ptr<StandardsRetriever> standards_;
    std::shared_ptr<const Router> router_;
    std::shared_ptr<const SeriesSummaries> summaries_;
    std::shared_ptr<WebRetriever> web_;
    std::string store_error_, router_error_, web_error_;
};

} // namespace telco_rag
