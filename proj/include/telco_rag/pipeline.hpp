#pragma once

#include <chrono>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "llm.hpp"
#include "prompt_builder.hpp"
#include "query_refine.hpp"
#include "standards_retriever.hpp"
#include "web_retriever.hpp"

namespace telco_rag {

enum class Mode { full, web, standards, llm_only };

inline std::string_view to_string(Mode m) {
    switch (m) {
    case Mode::full: return "full";
    case Mode::web: return "web";
    case Mode::standards: return "standards";
    case Mode::llm_only: return "llm-only";
    }
    return "full";
}

inline Mode mode_from_string(std::string_view s) {
    if (s == "full") return Mode::full;
    if (s == "web") return Mode::web;
    if (s == "standards") return Mode::standards;
    if (s == "llm-only" || s == "llm_only") return Mode::llm_only;
    throw ArgumentError("unknown mode '" + std::string(s) + "' (expected full, web, standards or llm-only)");
}

inline bool uses_web(Mode m) { return m == Mode::full || m == Mode::web; }
inline bool uses_standards(Mode m) { return m == Mode::full || m == Mode::standards; }

/// Milliseconds from an arbitrary origin.
using Clock = std::function<double()>;

inline Clock steady_clock_ms() {
    return [] {
        using namespace std::chrono;
        return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
    };
}

/// Every reading is zero, so all recorded timings are zero and reports do not
/// depend on machine speed.
inline Clock constant_clock() {
    return [] { return 0.0; };
}

inline const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {"rephrase",   "glossary", "web_retrieval", "standards_retrieval",
                                                   "prompt", "generation"};
    return names;
}

inline const std::vector<std::string>& degradable_stages() {
    static const std::vector<std::string> names = {"rephrase", "web_retrieval", "standards_retrieval", "candidates",
                                                   "generation"};
    return names;
}

inline constexpr std::string_view kAnswerSystem =
    "You are an expert in 3GPP telecommunications standards. Answer the question using the provided terms, "
    "abbreviations and context. When answer options are listed, state the chosen option as 'Option <number>'.";

/// Option index (1-based) named by an LLM reply: a single "option N" label,
/// a reply that is just a number, or the text of exactly one option.
inline std::optional<int> parse_mcq_option(std::string_view output, const std::vector<std::string>& options) {
    if (options.empty()) return std::nullopt;
    const int n = static_cast<int>(options.size());
    const std::string text(output);

    static const std::regex label(R"(\boption\s*#?\s*(\d+)\b)", std::regex::icase);
    std::set<int> named;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), label); it != std::sregex_iterator(); ++it)
        named.insert(std::stoi((*it)[1].str()));
    if (!named.empty()) {
        if (named.size() == 1 && *named.begin() >= 1 && *named.begin() <= n) return *named.begin();
        return std::nullopt;
    }

    static const std::regex bare(R"(^\s*\(?(\d+)\)?\s*[.:)]?(\s|$))");
    std::smatch m;
    if (std::regex_search(text, m, bare)) {
        const int k = std::stoi(m[1].str());
        if (k >= 1 && k <= n) return k;
    }

    const auto lower = ascii_lower(text);
    std::optional<int> found;
    for (int i = 0; i < n; ++i) {
        const auto opt = ascii_lower(trim(options[static_cast<std::size_t>(i)]));
        if (opt.empty() || lower.find(opt) == std::string::npos) continue;
        if (found) return std::nullopt;
        found = i + 1;
    }
    return found;
}

struct PipelineAnswer {
    Mode mode = Mode::full;
    std::string text;
    std::optional<int> option;
    QueryState state;
    std::vector<ContextChunk> standards;
    std::vector<WebParagraph> web;
    std::set<int> scope;
    PromptBundle prompt;
    std::map<std::string, double> stage_ms;
    std::map<std::string, bool> degraded;
    double retrieval_ms = 0.0;
    double total_ms = 0.0;

    nlohmann::json to_json() const {
        nlohmann::json standards_json = nlohmann::json::array();
        for (const auto& c : standards)
            standards_json.push_back({{"chunk_id", c.chunk.chunk_id},
                                      {"doc_id", c.chunk.doc_id},
                                      {"series_id", series_to_json(c.chunk.series_id)},
                                      {"score", c.score},
                                      {"round", c.round},
                                      {"label", standards_label(c.chunk)},
                                      {"text", c.chunk.text}});
        nlohmann::json web_json = nlohmann::json::array();
        for (const auto& p : web)
            web_json.push_back({{"url", p.url},
                                {"host", url_host(p.url)},
                                {"title", p.title},
                                {"snippet", p.snippet},
                                {"rank", p.rank},
                                {"anchor_found", p.anchor_found},
                                {"validated", to_string(p.validated)},
                                {"text", p.text}});
        return {{"mode", to_string(mode)},
                {"answer", text},
                {"option", option ? nlohmann::json(*option) : nlohmann::json(nullptr)},
                {"query",
                 {{"raw", state.raw},
                  {"rephrased", state.rephrased},
                  {"refined", state.refined},
                  {"candidate_answers", state.candidate_answers},
                  {"augmented", state.augmented ? nlohmann::json(*state.augmented) : nlohmann::json(nullptr)}}},
                {"retrievals", {{"standards", standards_json}, {"web", web_json}, {"series_scope", scope}}},
                {"stage_timings_ms", stage_ms},
                {"retrieval_ms", retrieval_ms},
                {"total_ms", total_ms},
                {"degraded", degraded},
                {"prompt", prompt.text}};
    }
};

struct PipelineComponents {
    std::shared_ptr<LlmClient> llm;
    std::shared_ptr<const Glossary> glossary;
    std::shared_ptr<StandardsRetriever> standards; // may be null
    std::shared_ptr<WebRetriever> web;             // may be null
};

struct PipelineOptions {
    Mode mode = Mode::full;
    std::size_t context_budget = 2000;
    RetryPolicy retry{};
    Clock clock = steady_clock_ms();
};

class Pipeline {
public:
    Pipeline(PipelineComponents c, PipelineOptions o) : c_(std::move(c)), o_(std::move(o)) {
        if (!c_.llm) throw ConfigError("pipeline needs an llm client");
        if (!c_.glossary) c_.glossary = std::make_shared<const Glossary>();
        if (!o_.clock) o_.clock = steady_clock_ms();
    }

    const PipelineOptions& options() const noexcept { return o_; }
    const PipelineComponents& components() const noexcept { return c_; }

    /// Runs one query. `options` switches to multiple-choice mode.
    PipelineAnswer answer(const std::string& raw, const std::optional<std::vector<std::string>>& options = std::nullopt,
                          std::optional<Mode> mode_override = std::nullopt) {
        if (trim(raw).empty()) throw ArgumentError("query is empty");
        const Mode mode = mode_override.value_or(o_.mode);
        const Clock& now = o_.clock;
        PipelineAnswer a;
        a.mode = mode;
        for (const auto& s : stage_names()) a.stage_ms[s] = 0.0;
        for (const auto& s : degradable_stages()) a.degraded[s] = false;
        const double t_start = now();

        double t = now();
        a.state.raw = raw;
        auto r = rephrase(raw, *c_.llm, o_.retry);
        a.state.rephrased = std::move(r.text);
        a.state.rephrase_degraded = a.degraded["rephrase"] = r.degraded;
        a.stage_ms["rephrase"] = now() - t;

        t = now();
        auto g = glossary_enhance(a.state.rephrased, *c_.glossary);
        a.state.matched_abbrs = std::move(g.abbrs);
        a.state.matched_terms = std::move(g.terms);
        a.state.refined = std::move(g.refined);
        a.stage_ms["glossary"] = now() - t;

        const double t_retrieval = now();
        std::future<void> web_done, std_done;
        WebContext web_ctx;
        std::optional<RetrievedContext> std_ctx;
        QueryState std_state = a.state;
        const std::string q_plus = a.state.refined;
        double web_ms = 0.0, std_ms = 0.0;
        bool web_failed = false, std_failed = false;

        if (uses_web(mode)) {
            web_done = std::async(std::launch::async, [&] {
                const double t0 = now();
                if (!c_.web) {
                    web_failed = true;
                } else {
                    try {
                        web_ctx = c_.web->retrieve(q_plus, *c_.llm, o_.retry);
                        web_failed = web_ctx.degraded;
                    } catch (const std::exception&) {
                        web_failed = true;
                    }
                }
                web_ms = now() - t0;
            });
        }
        if (uses_standards(mode)) {
            std_done = std::async(std::launch::async, [&] {
                const double t0 = now();
                if (!c_.standards) {
                    std_failed = true;
                } else {
                    try {
                        std_ctx = c_.standards->retrieve(std_state, c_.llm.get(), o_.retry);
                    } catch (const std::exception&) {
                        std_failed = true;
                    }
                }
                std_ms = now() - t0;
            });
        }
        if (web_done.valid()) web_done.get();
        if (std_done.valid()) std_done.get();
        a.retrieval_ms = now() - t_retrieval;
        a.stage_ms["web_retrieval"] = web_ms;
        a.stage_ms["standards_retrieval"] = std_ms;
        a.degraded["web_retrieval"] = web_failed;
        a.degraded["standards_retrieval"] = std_failed;

        if (std_ctx) {
            a.state.candidate_answers = std_state.candidate_answers;
            a.state.augmented = std_state.augmented;
            a.degraded["candidates"] = std_ctx->candidates_degraded;
            a.standards = std::move(std_ctx->chunks);
            a.scope = std::move(std_ctx->scope);
        }
        a.web = std::move(web_ctx.paragraphs);

        t = now();
        a.prompt = build_prompt(a.state, context_units(a.standards, a.web), options, o_.context_budget);
        a.stage_ms["prompt"] = now() - t;

        t = now();
        try {
            a.text = with_retries(o_.retry, [&] {
                return c_.llm->complete({LlmTask::answer, std::string(kAnswerSystem), a.prompt.text});
            });
        } catch (const ProviderError& e) {
            a.degraded["generation"] = true;
            const bool no_retrieval = (!uses_web(mode) || web_failed) && (!uses_standards(mode) || std_failed);
            if (no_retrieval)
                throw PipelineError(std::string("generation failed and no retrieval branch is available: ") + e.what(),
                                    a.prompt.text);
        }
        a.stage_ms["generation"] = now() - t;
        if (options && !a.degraded["generation"]) a.option = parse_mcq_option(a.text, *options);
        a.total_ms = now() - t_start;
        return a;
    }

private:
    PipelineComponents c_;
    PipelineOptions o_;
};

} // namespace telco_rag
