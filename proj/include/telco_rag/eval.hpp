#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "chunking.hpp"
#include "concurrency.hpp"
#include "embedding_store.hpp"
#include "error.hpp"
#include "llm.hpp"
#include "pipeline.hpp"
#include "router.hpp"

namespace telco_rag {

// ---------------------------------------------------------------------------
// MCQ datasets

struct McqItem {
    std::string id;
    std::string question;
    std::vector<std::string> options;
    int answer_index = 0; // 1-based
    std::string category;
    std::string explanation;
    nlohmann::json source = nlohmann::json::object();
};

struct SkippedItem {
    std::string id;
    std::string reason;
};

struct McqDataset {
    std::vector<McqItem> items;
    std::vector<SkippedItem> skipped;
};

inline std::optional<std::string> validate_item(const McqItem& it) {
    if (trim(it.question).empty()) return "empty question";
    if (it.options.size() < 2 || it.options.size() > 5) return "needs 2 to 5 options";
    if (std::set<std::string>(it.options.begin(), it.options.end()).size() != it.options.size())
        return "options are not distinct";
    if (it.answer_index < 1 || it.answer_index > static_cast<int>(it.options.size())) return "answer_index out of range";
    return std::nullopt;
}

namespace detail {

/// TeleQnA record: "option 1".."option 5" fields and an answer such as
/// "option 2: text".
inline McqItem item_from_teleqna(const std::string& id, const nlohmann::json& rec) {
    McqItem it;
    it.id = id;
    it.question = rec.at("question").get<std::string>();
    for (int i = 1; i <= 5; ++i)
        if (const auto key = "option " + std::to_string(i); rec.contains(key)) it.options.push_back(rec.at(key).get<std::string>());
    static const std::regex label(R"(^\s*option\s*(\d+))", std::regex::icase);
    const auto answer = rec.at("answer").get<std::string>();
    std::smatch m;
    if (!std::regex_search(answer, m, label)) throw ParseError("answer '" + answer + "' names no option");
    it.answer_index = std::stoi(m[1].str());
    it.category = rec.value("category", std::string{});
    it.explanation = rec.value("explanation", std::string{});
    return it;
}

inline McqItem item_from_jsonl(const nlohmann::json& rec, std::size_t line) {
    McqItem it;
    it.id = rec.value("id", "line-" + std::to_string(line));
    it.question = rec.at("question").get<std::string>();
    it.options = rec.at("options").get<std::vector<std::string>>();
    it.answer_index = rec.at("answer_index").get<int>();
    it.category = rec.value("category", std::string{});
    it.explanation = rec.value("explanation", std::string{});
    if (rec.contains("source")) it.source = rec.at("source");
    return it;
}

} // namespace detail

/// Reads line-delimited records {id?, question, options, answer_index
/// (1-based), category, explanation?, source?}, or a TeleQnA-style JSON
/// object keyed by question id. Invalid items are skipped and recorded.
inline McqDataset load_mcq(const std::filesystem::path& p) {
    McqDataset ds;
    auto accept = [&](std::function<McqItem()> make, const std::string& fallback_id) {
        try {
            auto it = make();
            if (auto why = validate_item(it)) {
                ds.skipped.push_back({it.id, *why});
                return;
            }
            ds.items.push_back(std::move(it));
        } catch (const std::exception& e) {
            ds.skipped.push_back({fallback_id, e.what()});
        }
    };
    const auto text = read_file(p);
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        nlohmann::json whole;
        try {
            whole = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception&) {
            whole = nullptr; // JSONL whose first record starts with '{'
        }
        if (whole.is_object() && !whole.contains("question")) {
            for (const auto& [key, rec] : whole.items())
                accept([&, key = key] { return detail::item_from_teleqna(key, rec); }, key);
            return ds;
        }
    }
    std::size_t line_no = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fallback = "line-" + std::to_string(line_no);
        accept([&] { return detail::item_from_jsonl(nlohmann::json::parse(line), line_no); }, fallback);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// MCQ evaluation

struct ItemRecord {
    std::string id;
    std::string category;
    std::optional<int> predicted;
    int truth = 0;
    bool correct = false;
    std::map<std::string, double> stage_ms;
    std::map<std::string, bool> degraded;
    double total_ms = 0.0;
    std::string error;
};

struct CategoryScore {
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct EvalReport {
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
    std::map<std::string, CategoryScore> categories;
    std::vector<ItemRecord> items;
    std::vector<SkippedItem> skipped;
    nlohmann::json config = nlohmann::json::object();

    nlohmann::json to_json() const {
        nlohmann::json cats = nlohmann::json::object();
        for (const auto& [name, s] : categories)
            cats[name] = {{"correct", s.correct}, {"total", s.total}, {"accuracy", s.accuracy()}};
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& r : items)
            rows.push_back({{"id", r.id},
                            {"category", r.category},
                            {"predicted", r.predicted ? nlohmann::json(*r.predicted) : nlohmann::json(nullptr)},
                            {"truth", r.truth},
                            {"correct", r.correct},
                            {"stage_timings_ms", r.stage_ms},
                            {"total_ms", r.total_ms},
                            {"degraded", r.degraded},
                            {"error", r.error}});
        nlohmann::json skipped_json = nlohmann::json::array();
        for (const auto& s : skipped) skipped_json.push_back({{"id", s.id}, {"reason", s.reason}});
        return {{"accuracy", accuracy}, {"correct", correct}, {"total", total}, {"categories", cats},
                {"items", rows},        {"skipped", skipped_json}, {"config", config}};
    }

    /// One row per item, comma separated, for spreadsheet import.
    std::string items_csv() const {
        std::string out = "id,category,predicted,truth,correct,total_ms\n";
        auto quote = [](const std::string& s) {
            std::string q = "\"";
            for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
            return q + "\"";
        };
        for (const auto& r : items) {
            std::ostringstream row;
            row << quote(r.id) << ',' << quote(r.category) << ',' << (r.predicted ? std::to_string(*r.predicted) : "")
                << ',' << r.truth << ',' << (r.correct ? 1 : 0) << ',' << r.total_ms << '\n';
            out += row.str();
        }
        return out;
    }
};

/// Answers every item once (up to `parallelism` at a time) and scores the
/// parsed option; an unparsed answer or a failed item counts as incorrect.
inline EvalReport run_mcq_eval(const McqDataset& ds, Pipeline& pipeline, std::size_t parallelism = 1,
                               nlohmann::json config_snapshot = nlohmann::json::object()) {
    EvalReport rep;
    rep.skipped = ds.skipped;
    rep.config = std::move(config_snapshot);
    rep.items.resize(ds.items.size());
    bounded_parallel_for(ds.items.size(), parallelism, [&](std::size_t i) {
        const auto& it = ds.items[i];
        auto& r = rep.items[i];
        r.id = it.id;
        r.category = it.category;
        r.truth = it.answer_index;
        try {
            const auto a = pipeline.answer(it.question, it.options);
            r.predicted = a.option;
            r.stage_ms = a.stage_ms;
            r.degraded = a.degraded;
            r.total_ms = a.total_ms;
        } catch (const std::exception& e) {
            r.error = e.what();
        }
        r.correct = r.predicted && *r.predicted == it.answer_index;
    });
    for (const auto& r : rep.items) {
        auto& c = rep.categories[r.category];
        ++c.total;
        ++rep.total;
        if (r.correct) {
            ++c.correct;
            ++rep.correct;
        }
    }
    rep.accuracy = rep.total ? static_cast<double>(rep.correct) / static_cast<double>(rep.total) : 0.0;
    return rep;
}

// ---------------------------------------------------------------------------
// Router benchmark

/// Series ranking from the `n` nearest training queries by inner product:
/// more votes first, then larger summed similarity, then smaller id. Series
/// without votes follow in id order.
inline std::vector<int> knn_rank(std::span<const float> query, const std::vector<RouterExample>& train, std::size_t n) {
    std::vector<std::pair<double, std::size_t>> sims;
    sims.reserve(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) sims.emplace_back(dot(query, train[i].embedding), i);
    const std::size_t keep = std::min(n, sims.size());
    std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(keep), sims.end(),
                      [](auto& a, auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    std::vector<std::size_t> votes(kNumSeries, 0);
    std::vector<double> mass(kNumSeries, 0.0);
    for (std::size_t i = 0; i < keep; ++i) {
        const int s = train[sims[i].second].label - kFirstSeries;
        ++votes[s];
        mass[s] += sims[i].first;
    }
    std::vector<int> ids(kNumSeries);
    std::iota(ids.begin(), ids.end(), 0);
    std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
        if (votes[a] != votes[b]) return votes[a] > votes[b];
        if (votes[a] == 0) return false;
        return mass[a] > mass[b];
    });
    for (auto& i : ids) i += kFirstSeries;
    return ids;
}

struct RouterBenchRow {
    std::string name;
    std::map<std::size_t, double> accuracy;
};

struct RouterBench {
    std::vector<RouterBenchRow> rows; // router, router (alpha=0), router (beta=0), k-NN, random
    TopkEvaluation router_eval;

    nlohmann::json to_json() const {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& r : rows) {
            nlohmann::json acc = nlohmann::json::object();
            for (const auto& [k, v] : r.accuracy) acc["top" + std::to_string(k)] = v;
            out.push_back({{"model", r.name}, {"accuracy", acc}});
        }
        return {{"rows", out}, {"total", router_eval.total}};
    }

    std::string table() const {
        std::ostringstream os;
        os << "model";
        for (const auto& [k, _] : rows.front().accuracy) os << ",top" << k;
        os << '\n';
        for (const auto& r : rows) {
            os << r.name;
            for (const auto& [_, v] : r.accuracy) os << ',' << std::fixed << std::setprecision(1) << 100.0 * v;
            os << '\n';
        }
        return os.str();
    }
};

/// 18x18 table of row-normalized percentages, true series down the rows.
inline std::string confusion_table(const TopkEvaluation& ev) {
    std::ostringstream os;
    os << "true\\predicted";
    for (int s = kFirstSeries; s <= kLastSeries; ++s) os << ',' << s;
    os << '\n';
    for (int r = 0; r < kNumSeries; ++r) {
        os << (kFirstSeries + r);
        for (int c = 0; c < kNumSeries; ++c) os << ',' << std::fixed << std::setprecision(2) << ev.confusion[r][c];
        os << '\n';
    }
    return os.str();
}

template <class Scalar>
RouterBench run_router_bench(const RouterModel<Scalar>& model, const SeriesSummaries& summaries,
                             const std::vector<RouterExample>& train, const std::vector<RouterExample>& test,
                             const std::vector<std::size_t>& k_values, std::size_t knn_n = 5,
                             std::uint64_t seed = 42) {
    if (test.empty()) throw ArgumentError("router bench needs a labelled test set");
    std::vector<int> labels;
    for (const auto& ex : test) labels.push_back(ex.label);
    RouterBench b;
    b.router_eval = evaluate_rankings(rank_examples(model, test, summaries), labels, k_values);
    b.rows.push_back({"router", b.router_eval.accuracy});
    b.rows.push_back({"router (alpha=0)",
                      evaluate_rankings(rank_examples(ablate(model, true, false), test, summaries), labels, k_values).accuracy});
    b.rows.push_back({"router (beta=0)",
                      evaluate_rankings(rank_examples(ablate(model, false, true), test, summaries), labels, k_values).accuracy});
    if (!train.empty()) {
        std::vector<std::vector<int>> knn;
        for (const auto& ex : test) knn.push_back(knn_rank(ex.embedding, train, knn_n));
        b.rows.push_back({"k-NN (n=" + std::to_string(knn_n) + ")", evaluate_rankings(knn, labels, k_values).accuracy});
    }
    SplitMix64 rng(seed);
    std::vector<std::vector<int>> random;
    for (std::size_t i = 0; i < test.size(); ++i) {
        std::vector<std::size_t> order(kNumSeries);
        std::iota(order.begin(), order.end(), 0);
        deterministic_shuffle(order, rng);
        std::vector<int> r;
        for (auto o : order) r.push_back(kFirstSeries + static_cast<int>(o));
        random.push_back(std::move(r));
    }
    b.rows.push_back({"random", evaluate_rankings(random, labels, k_values).accuracy});
    return b;
}

// ---------------------------------------------------------------------------
// LLM-as-judge

struct JudgeVerdict {
    bool verdict = false;
    bool parsed = false;
    std::string rationale;
    std::string judge;
};

inline JudgeVerdict parse_judge_reply(const std::string& reply) {
    static const std::regex first(R"(^\s*VERDICT:\s*(true|false)\s*$)", std::regex::icase);
    JudgeVerdict v;
    std::istringstream in(reply);
    std::string line;
    while (std::getline(in, line) && trim(line).empty()) {
    }
    std::smatch m;
    if (std::regex_match(line, m, first)) {
        v.parsed = true;
        v.verdict = ascii_lower(m[1].str()) == "true";
        std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        v.rationale = trim(rest);
    } else {
        v.rationale = trim(reply);
    }
    return v;
}

inline JudgeVerdict judge_open_ended(const std::string& question, const std::string& truth, const std::string& answer,
                                     LlmClient& judge, const RetryPolicy& retry = RetryPolicy::none()) {
    JudgeVerdict v;
    try {
        v = parse_judge_reply(with_retries(retry, [&] {
            return judge.complete({LlmTask::judge, std::string(kJudgeSystem), judge_prompt(question, truth, answer)});
        }));
    } catch (const ProviderError& e) {
        v.rationale = std::string("judge unavailable: ") + e.what();
    }
    v.judge = judge.id();
    return v;
}

// ---------------------------------------------------------------------------
// Latency

struct StageLatency {
    std::vector<std::pair<double, double>> ecdf; // (latency ms, cumulative fraction)
    std::map<int, double> quantiles;             // 50, 90, 95
    double mean = 0.0;
    std::size_t samples = 0;
};

/// Nearest-rank quantile: the smallest sample with at least p% of samples at
/// or below it.
inline double nearest_rank(std::vector<double> sorted_values, double p) {
    if (sorted_values.empty()) throw ArgumentError("quantile of an empty sample");
    std::sort(sorted_values.begin(), sorted_values.end());
    const auto n = sorted_values.size();
    auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    return sorted_values[rank - 1];
}

inline StageLatency stage_latency(std::vector<double> values) {
    if (values.empty()) throw ArgumentError("latency report needs at least one sample");
    std::sort(values.begin(), values.end());
    StageLatency s;
    s.samples = values.size();
    const double n = static_cast<double>(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i + 1 < values.size() && values[i + 1] == values[i]) continue;
        s.ecdf.emplace_back(values[i], static_cast<double>(i + 1) / n);
    }
    for (int q : {50, 90, 95}) s.quantiles[q] = nearest_rank(values, q);
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    return s;
}

struct LatencyReport {
    std::map<std::string, StageLatency> stages; // includes "end_to_end"
    double mean_end_to_end = 0.0;

    nlohmann::json to_json() const {
        nlohmann::json out = nlohmann::json::object();
        for (const auto& [name, s] : stages) {
            nlohmann::json pts = nlohmann::json::array();
            for (const auto& [x, y] : s.ecdf) pts.push_back({x, y});
            out[name] = {{"ecdf", pts},
                         {"p50", s.quantiles.at(50)},
                         {"p90", s.quantiles.at(90)},
                         {"p95", s.quantiles.at(95)},
                         {"mean", s.mean},
                         {"samples", s.samples}};
        }
        return {{"stages", out}, {"mean_end_to_end_ms", mean_end_to_end}};
    }
};

/// Per-stage ECDFs and quantiles; `end_to_end` uses each item's total.
inline LatencyReport latency_report(const std::vector<std::map<std::string, double>>& stage_ms,
                                    const std::vector<double>& totals) {
    if (stage_ms.empty() || totals.empty()) throw ArgumentError("latency report needs at least one item");
    std::map<std::string, std::vector<double>> by_stage;
    for (const auto& item : stage_ms)
        for (const auto& [k, v] : item) by_stage[k].push_back(v);
    LatencyReport rep;
    for (auto& [k, v] : by_stage) rep.stages[k] = stage_latency(std::move(v));
    rep.stages["end_to_end"] = stage_latency(totals);
    rep.mean_end_to_end = rep.stages["end_to_end"].mean;
    return rep;
}

inline LatencyReport latency_report(const EvalReport& r) {
    std::vector<std::map<std::string, double>> stages;
    std::vector<double> totals;
    for (const auto& it : r.items)
        if (it.error.empty()) {
            stages.push_back(it.stage_ms);
            totals.push_back(it.total_ms);
        }
    return latency_report(stages, totals);
}

// ---------------------------------------------------------------------------
// Memory

struct MemoryReport {
    std::size_t full_bytes = 0;
    std::vector<std::size_t> scoped_bytes; // one per query scope
    double median_reduction = 0.0;         // fraction of full_bytes saved

    nlohmann::json to_json() const {
        return {{"full_bytes", full_bytes}, {"scoped_bytes", scoped_bytes}, {"median_reduction", median_reduction}};
    }
};

/// Resident embedding bytes when only each scope's shards are loaded,
/// compared with loading the whole store.
inline MemoryReport memory_report(const EmbeddingStore& store, const std::vector<std::set<int>>& scopes) {
    MemoryReport m;
    m.full_bytes = store.payload_bytes();
    std::vector<double> reductions;
    for (const auto& scope : scopes) {
        std::size_t bytes = 0;
        for (int s : scope)
            if (store.has_series(s)) bytes += store.shards().at(s).rows * store.dim() * kBytesPerComponent;
        m.scoped_bytes.push_back(bytes);
        reductions.push_back(m.full_bytes ? 1.0 - static_cast<double>(bytes) / static_cast<double>(m.full_bytes) : 0.0);
    }
    if (!reductions.empty()) {
        std::sort(reductions.begin(), reductions.end());
        const auto n = reductions.size();
        m.median_reduction = n % 2 ? reductions[n / 2] : (reductions[n / 2 - 1] + reductions[n / 2]) / 2.0;
    }
    return m;
}

} // namespace telco_rag
