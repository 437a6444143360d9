#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "http.hpp"
#include "query_refine.hpp"
#include "standards_retriever.hpp"
#include "tokenize.hpp"
#include "web_retriever.hpp"

namespace telco_rag {

inline constexpr std::string_view kQuestionLine = "*Please provide the answer to the following question: ";
inline constexpr std::string_view kTermsLine = "*Terms and Definitions:";
inline constexpr std::string_view kAbbreviationsLine = "*Abbreviations:";
inline constexpr std::string_view kContextLine = "*Considering the following context:";
inline constexpr std::string_view kOptionsLine = "*Options:";

enum class UnitKind { standards, web };

/// One labelled piece of context: a standards chunk or a validated web
/// paragraph.
struct ContextUnit {
    UnitKind kind = UnitKind::standards;
    std::string label;
    std::string source; // chunk id or url
    std::string text;
    std::size_t token_count = 0;
    double score = 0.0;
};

inline std::string standards_label(const Chunk& c) {
    const std::string series = c.series_id ? std::to_string(*c.series_id) : std::string("-");
    return "[3GPP " + series + " | " + c.doc_id + "]";
}

inline std::string web_label(const std::string& url) { return "[web: " + url_host(url) + "]"; }

inline std::vector<ContextUnit> context_units(const std::vector<ContextChunk>& chunks,
                                              const std::vector<WebParagraph>& paragraphs,
                                              const Tokenizer& tok = default_tokenizer()) {
    std::vector<ContextUnit> out;
    for (const auto& c : chunks)
        out.push_back({UnitKind::standards, standards_label(c.chunk), c.chunk.chunk_id, trim(c.chunk.text),
                       tok.count(c.chunk.text), c.score});
    for (const auto& p : paragraphs)
        out.push_back({UnitKind::web, web_label(p.url), p.url, p.text, tok.count(p.text), 0.0});
    return out;
}

struct PromptSpan {
    std::string name; // query1, terms, abbreviations, context, query2, options
    std::size_t begin = 0, end = 0;
};

struct PromptBundle {
    std::string text;
    std::vector<PromptSpan> spans;
    std::vector<ContextUnit> units; // the units that made it into the prompt
    std::size_t context_tokens = 0;
    std::size_t token_count = 0;

    const PromptSpan* span(std::string_view name) const {
        for (const auto& s : spans)
            if (s.name == name) return &s;
        return nullptr;
    }
};

/// Renders the final prompt. Context units are taken in order while their
/// token total stays within `budget`; a unit that does not fit is skipped
/// whole. An empty unit list renders the no-context prompt.
inline PromptBundle build_prompt(const QueryState& state, const std::vector<ContextUnit>& units,
                                 const std::optional<std::vector<std::string>>& options, std::size_t budget,
                                 const Tokenizer& tok = default_tokenizer()) {
    const std::string& q = state.rephrased;
    if (tok.count(q) > budget)
        throw ArgumentError("budget of " + std::to_string(budget) + " tokens is smaller than the query");

    PromptBundle b;
    auto section = [&](std::string name, const std::string& body) {
        const auto begin = b.text.size();
        b.text += body;
        b.spans.push_back({std::move(name), begin, b.text.size()});
    };

    section("query1", std::string(kQuestionLine) + q + "\n");
    if (!state.matched_terms.empty()) {
        std::string s = std::string(kTermsLine) + "\n";
        for (const auto& [term, def] : state.matched_terms) s += term + ": " + def + "\n";
        section("terms", s);
    }
    if (!state.matched_abbrs.empty()) {
        std::string s = std::string(kAbbreviationsLine) + "\n";
        for (const auto& [abbr, full] : state.matched_abbrs) s += abbr + ": " + full + "\n";
        section("abbreviations", s);
    }

    for (const auto& u : units) {
        if (b.context_tokens + u.token_count > budget) continue;
        b.context_tokens += u.token_count;
        b.units.push_back(u);
    }
    if (!b.units.empty()) {
        std::string s = std::string(kContextLine) + "\n";
        for (const auto& u : b.units) s += u.label + "\n" + u.text + "\n\n";
        section("context", s);
    }

    section("query2", std::string(kQuestionLine) + q + "\n");
    if (options && !options->empty()) {
        std::string s = std::string(kOptionsLine) + "\n";
        for (std::size_t i = 0; i < options->size(); ++i) s += "Option " + std::to_string(i + 1) + ": " + (*options)[i] + "\n";
        section("options", s);
    }
    b.token_count = tok.count(b.text);
    return b;
}

} // namespace telco_rag
