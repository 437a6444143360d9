#pragma once

// 18-cluster synthetic routing task: one random unit "summary" direction per
// series; each query embedding is its series direction plus isotropic noise,
// renormalized. Nearest-summary classification is exact on this construction
// for the noise levels used in the tests.

#include <vector>

#include <telco_rag/router.hpp>

namespace fixtures {

inline telco_rag::Vector random_unit(telco_rag::SplitMix64& rng, std::size_t dim) {
    telco_rag::Vector v(dim);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    telco_rag::normalize_in_place(v);
    return v;
}

inline telco_rag::SeriesSummaries synthetic_summaries(std::size_t dim, std::uint64_t seed) {
    telco_rag::SplitMix64 rng(seed);
    std::vector<telco_rag::SeriesSummary> entries;
    for (int s = telco_rag::kFirstSeries; s <= telco_rag::kLastSeries; ++s)
        entries.push_back({s, "series " + std::to_string(s), random_unit(rng, dim)});
    return telco_rag::SeriesSummaries(std::move(entries));
}

inline std::vector<telco_rag::RouterExample> synthetic_examples(const telco_rag::SeriesSummaries& summaries,
                                                                std::size_t n, double noise, std::uint64_t seed) {
    telco_rag::SplitMix64 rng(seed);
    const std::size_t dim = summaries.dim();
    const double sigma = noise / std::sqrt(static_cast<double>(dim));
    std::vector<telco_rag::RouterExample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = telco_rag::kFirstSeries + static_cast<int>(rng.below(telco_rag::kNumSeries));
        const auto& center = summaries.entries()[label - telco_rag::kFirstSeries].embedding;
        telco_rag::Vector v(dim);
        for (std::size_t j = 0; j < dim; ++j) v[j] = static_cast<float>(center[j] + sigma * rng.normal());
        telco_rag::normalize_in_place(v);
        out.push_back({"q" + std::to_string(i), std::move(v), label});
    }
    return out;
}

/// Oracle: argmax_j <x, summary_j>.
inline int nearest_summary(const telco_rag::SeriesSummaries& summaries, const telco_rag::Vector& x) {
    int best = 0;
    double best_score = -2.0;
    for (const auto& s : summaries.entries()) {
        const double sc = telco_rag::dot(x, s.embedding);
        if (sc > best_score) {
            best_score = sc;
            best = s.series_id;
        }
    }
    return best;
}

} // namespace fixtures
