#include <catch_amalgamated.hpp>

#include <telco_rag/vector_index.hpp>

#include "support/synthetic.hpp"

using namespace telco_rag;
using Catch::Approx;

namespace {

// Full scan with a stable sort on descending score: the oracle.
std::vector<std::size_t> brute_force(const std::vector<Vector>& rows, const Vector& q, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        long double s = 0;
        for (std::size_t j = 0; j < q.size(); ++j) s += static_cast<long double>(q[j]) * rows[i][j];
        scored.emplace_back(static_cast<double>(s), i);
    }
    std::stable_sort(scored.begin(), scored.end(), [](auto& a, auto& b) { return a.first > b.first; });
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < std::min(k, rows.size()); ++i) out.push_back(scored[i].second);
    return out;
}

std::vector<Vector> random_units(std::size_t n, std::size_t dim, std::uint64_t seed) {
    SplitMix64 rng(seed);
    std::vector<Vector> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back(fixtures::random_unit(rng, dim));
    return v;
}

FlatIndex build(const std::vector<Vector>& rows) {
    FlatIndex idx(rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) idx.add("v" + std::to_string(i), rows[i]);
    return idx;
}

} // namespace

TEST_CASE("search: self-match and orthogonality", "[index]") {
    const auto rows = random_units(50, 16, 1);
    const auto idx = build(rows);
    const auto hits = idx.search(rows[17], 3);
    REQUIRE(hits.size() == 3);
    CHECK(hits[0].chunk_id == "v17");
    CHECK(hits[0].score == Approx(1.0).margin(1e-6));
    CHECK(hits[0].rank == 1);

    FlatIndex two(2);
    two.add("x", std::vector<float>{1, 0});
    two.add("y", std::vector<float>{0, 1});
    const auto h = two.search(std::vector<float>{1, 0}, 2);
    CHECK(h[1].chunk_id == "y");
    CHECK(h[1].score == Approx(0.0).margin(1e-6));
}

TEST_CASE("search: equals the brute-force oracle", "[index][property]") {
    const auto rows = random_units(1000, 32, 42);
    const auto idx = build(rows);
    const auto queries = random_units(20, 32, 43);
    for (const auto& q : queries) {
        const auto want = brute_force(rows, q, 10);
        const auto hits = idx.search(q, 10);
        REQUIRE(hits.size() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i) {
            REQUIRE(hits[i].row == want[i]);
            REQUIRE(hits[i].rank == i + 1);
        }
        const auto par = idx.search(q, 10, 4);
        for (std::size_t i = 0; i < want.size(); ++i) REQUIRE(par[i].row == want[i]);
    }
}

TEST_CASE("search: prefix monotonicity, score bounds, k larger than index", "[index][property]") {
    const auto rows = random_units(120, 8, 7);
    const auto idx = build(rows);
    const auto q = random_units(1, 8, 8).front();
    auto prev = idx.search(q, 1);
    for (std::size_t k = 2; k <= 130; ++k) {
        const auto cur = idx.search(q, k);
        REQUIRE(cur.size() == std::min<std::size_t>(k, 120));
        for (std::size_t i = 0; i < prev.size(); ++i) REQUIRE(cur[i].row == prev[i].row);
        for (const auto& h : cur) REQUIRE((h.score >= -1 - 1e-6 && h.score <= 1 + 1e-6));
        prev = cur;
    }
}

TEST_CASE("search: ties resolve to insertion order", "[index]") {
    FlatIndex idx(2);
    for (int i = 0; i < 5; ++i) idx.add("dup" + std::to_string(i), std::vector<float>{0.6f, 0.8f});
    idx.add("best", std::vector<float>{1.0f, 0.0f});
    const auto hits = idx.search(std::vector<float>{1.0f, 0.0f}, 6, 3);
    CHECK(hits[0].chunk_id == "best");
    for (int i = 0; i < 5; ++i) CHECK(hits[i + 1].chunk_id == "dup" + std::to_string(i));
}

TEST_CASE("search: errors", "[index]") {
    FlatIndex idx(3);
    CHECK_THROWS_AS(idx.search(std::vector<float>{1, 0, 0}, 1), RetrievalError);
    idx.add("a", std::vector<float>{1, 0, 0});
    CHECK_THROWS_AS(idx.search(std::vector<float>{1, 0}, 1), IntegrityError);
    CHECK_THROWS_AS(idx.search(std::vector<float>{1, 0, 0}, 0), ArgumentError);
    CHECK_THROWS_AS(idx.add("b", std::vector<float>{1, 0}), IntegrityError);
}

TEST_CASE("rank equivalence of inner product and Euclidean order", "[index]") {
    const auto rows = random_units(500, 32, 99);
    for (const auto& q : random_units(10, 32, 100)) CHECK(rank_equivalence_check(rows, q));

    // Unnormalized rows break the identity.
    const std::vector<Vector> raw = {{1.0f, 0.0f}, {10.0f, 0.0f}};
    CHECK_FALSE(rank_equivalence_check(raw, std::vector<float>{1.0f, 0.0f}));
}
