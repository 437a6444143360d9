#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "concurrency.hpp"
#include "error.hpp"
#include "hashing.hpp"
#include "http.hpp"

namespace telco_rag {

using Vector = std::vector<float>;

struct EmbeddingVector {
    std::string id;
    Vector components;
};

/// Scales v to unit Euclidean norm, accumulating in double.
inline void normalize_in_place(std::span<float> v) {
    double ss = 0.0;
    for (float x : v) ss += static_cast<double>(x) * x;
    if (!(ss > 0.0) || !std::isfinite(ss)) throw NumericError("cannot normalize a zero or non-finite vector");
    const double inv = 1.0 / std::sqrt(ss);
    for (float& x : v) x = static_cast<float>(x * inv);
}

inline double dot(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

inline double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    /// Identifies the model so cached vectors are never mixed across models.
    virtual std::string model_id() const = 0;
    virtual std::size_t dim() const = 0;
    /// Raw (not necessarily normalized) vectors, one per input, in order.
    virtual std::vector<Vector> embed_batch(const std::vector<std::string>& texts) = 0;
};

/// Deterministic offline provider. Each content word (lower-cased
/// alphanumeric run, minus a few stop words) maps to a Gaussian vector seeded
/// from its hash; a text embeds to the normalized sum of its distinct words,
/// each weighted by 1 + ln(count). Texts sharing rare words therefore land
/// close together, which is enough for retrieval fixtures to be meaningful.
class MockEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit MockEmbeddingProvider(std::size_t dim, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {
        if (dim == 0) throw ConfigError("embedding dim must be positive");
    }

    std::string model_id() const override { return "mock-hash-" + std::to_string(dim_) + "-" + std::to_string(seed_); }
    std::size_t dim() const override { return dim_; }

    std::vector<Vector> embed_batch(const std::vector<std::string>& texts) override {
        calls_.fetch_add(1);
        std::vector<Vector> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(embed_one(t));
        return out;
    }

    static std::vector<std::string> content_words(std::string_view text) {
        static const std::unordered_set<std::string> stop = {
            "a", "an", "and", "are", "as", "at", "be", "by", "does", "for", "from", "how", "in",
            "is", "it", "its", "of", "on", "or", "that", "the", "this", "to", "was", "what",
            "when", "which", "why", "with"};
        std::vector<std::string> words;
        std::string cur;
        auto flush = [&] {
            if (!cur.empty() && !stop.contains(cur)) words.push_back(cur);
            cur.clear();
        };
        for (unsigned char c : text) {
            if (std::isalnum(c) || c >= 0x80) {
                cur.push_back(static_cast<char>(std::tolower(c)));
            } else {
                flush();
            }
        }
        flush();
        return words;
    }

    Vector embed_one(std::string_view text) const {
        std::vector<double> acc(dim_, 0.0);
        auto add = [&](std::string_view key, double weight) {
            SplitMix64 rng(fnv1a64(key) ^ seed_);
            for (auto& a : acc) a += weight * rng.normal();
        };
        const auto words = content_words(text);
        if (words.empty()) add(text, 1.0);
        std::vector<std::pair<std::string_view, int>> counts; // first-occurrence order
        std::unordered_map<std::string_view, std::size_t> slot;
        for (const auto& w : words) {
            auto [it, fresh] = slot.try_emplace(w, counts.size());
            if (fresh) counts.emplace_back(w, 0);
            ++counts[it->second].second;
        }
        for (const auto& [w, n] : counts) add(w, 1.0 + std::log(static_cast<double>(n)));
        Vector v(dim_);
        for (std::size_t i = 0; i < dim_; ++i) v[i] = static_cast<float>(acc[i]);
        normalize_in_place(v);
        return v;
    }

    std::size_t calls() const noexcept { return calls_.load(); }

private:
    std::size_t dim_;
    std::uint64_t seed_;
    std::atomic<std::size_t> calls_{0};
};

struct HttpEmbeddingConfig {
    std::string endpoint = "https://api.openai.com/v1/embeddings";
    std::string model = "text-embedding-3-large";
    std::size_t dim = 1024;
    std::string api_key_env = "OPENAI_API_KEY";
    int timeout_seconds = 30;
};

/// Client for any OpenAI-compatible `/embeddings` endpoint.
class HttpEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit HttpEmbeddingProvider(HttpEmbeddingConfig cfg) : cfg_(std::move(cfg)), url_(parse_url(cfg_.endpoint)) {}

    std::string model_id() const override { return cfg_.model + "@" + std::to_string(cfg_.dim); }
    std::size_t dim() const override { return cfg_.dim; }

    std::vector<Vector> embed_batch(const std::vector<std::string>& texts) override {
        nlohmann::json body = {{"model", cfg_.model}, {"input", texts}, {"dimensions", cfg_.dim}};
        auto cli = make_http_client(url_, cfg_.timeout_seconds);
        httplib::Headers headers;
        if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
            headers.emplace("Authorization", std::string("Bearer ") + key);
        const auto& res = require_ok(cli.Post(url_.path, headers, body.dump(), "application/json"), "embeddings");
        std::vector<Vector> out(texts.size());
        try {
            const auto j = nlohmann::json::parse(res.body);
            for (const auto& item : j.at("data")) {
                const auto idx = item.value("index", std::size_t{0});
                if (idx >= out.size()) throw ProviderError("embeddings: index out of range");
                out[idx] = item.at("embedding").get<Vector>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw ProviderError(std::string("embeddings: malformed response: ") + e.what());
        }
        for (const auto& v : out)
            if (v.empty()) throw ProviderError("embeddings: missing vector in response");
        return out;
    }

private:
    HttpEmbeddingConfig cfg_;
    Url url_;
};

struct EmbedClientOptions {
    std::size_t batch_size = 64;
    std::size_t max_concurrency = 4;
    RetryPolicy retry{};
};

/// Front door for embeddings: batching, bounded concurrency, retries,
/// normalization, dimension checks and a content-hash cache.
class EmbedClient {
public:
    EmbedClient(std::shared_ptr<EmbeddingProvider> provider, EmbedClientOptions opts = {})
        : provider_(std::move(provider)), opts_(opts) {
        if (!provider_) throw ConfigError("embedding provider not configured");
    }

    std::size_t dim() const { return provider_->dim(); }
    const EmbeddingProvider& provider() const { return *provider_; }

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) {
        if (texts.empty()) throw ArgumentError("embed: no texts");
        std::vector<std::string> keys;
        keys.reserve(texts.size());
        for (const auto& t : texts) keys.push_back(cache_key(t));

        // Unique uncached texts, first-occurrence order.
        std::vector<std::size_t> missing;
        {
            std::lock_guard lock(mu_);
            std::unordered_set<std::string> queued;
            for (std::size_t i = 0; i < texts.size(); ++i)
                if (!cache_.contains(keys[i]) && queued.insert(keys[i]).second) missing.push_back(i);
        }

        const std::size_t bs = std::max<std::size_t>(1, opts_.batch_size);
        const std::size_t batches = (missing.size() + bs - 1) / bs;
        bounded_parallel_for(batches, opts_.max_concurrency, [&](std::size_t b) {
            std::vector<std::string> batch;
            const std::size_t lo = b * bs, hi = std::min(missing.size(), lo + bs);
            for (std::size_t m = lo; m < hi; ++m) batch.push_back(texts[missing[m]]);
            std::vector<Vector> vecs;
            try {
                vecs = with_retries(opts_.retry, [&] {
                    provider_calls_.fetch_add(1);
                    return provider_->embed_batch(batch);
                });
            } catch (const ProviderError& e) {
                throw ProviderError(std::string("embedding provider failed after retries: ") + e.what());
            }
            if (vecs.size() != batch.size()) throw ProviderError("embedding provider returned wrong count");
            for (auto& v : vecs) {
                if (v.size() != dim())
                    throw IntegrityError("embedding dimension " + std::to_string(v.size()) + " != " +
                                         std::to_string(dim()));
                normalize_in_place(v);
            }
            std::lock_guard lock(mu_);
            for (std::size_t m = lo; m < hi; ++m) cache_.emplace(keys[missing[m]], std::move(vecs[m - lo]));
        });

        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        std::lock_guard lock(mu_);
        for (std::size_t i = 0; i < texts.size(); ++i) out.push_back({keys[i], cache_.at(keys[i])});
        return out;
    }

    Vector embed_one(const std::string& text) { return embed({text}).front().components; }

    std::size_t provider_calls() const noexcept { return provider_calls_.load(); }
    std::size_t cache_size() const {
        std::lock_guard lock(mu_);
        return cache_.size();
    }

private:
    std::string cache_key(std::string_view text) const {
        return hex64(fnv1a64(text, fnv1a64(provider_->model_id())));
    }

    std::shared_ptr<EmbeddingProvider> provider_;
    EmbedClientOptions opts_;
    mutable std::mutex mu_;
    std::unordered_map<std::string, Vector> cache_;
    std::atomic<std::size_t> provider_calls_{0};
};

} // namespace telco_rag
