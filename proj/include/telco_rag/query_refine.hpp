#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "chunking.hpp"
#include "concurrency.hpp"
#include "error.hpp"
#include "llm.hpp"

namespace telco_rag {

inline constexpr std::string_view kTermsHeader = "\n\nTerms and Definitions:\n";
inline constexpr std::string_view kAbbrHeader = "\n\nAbbreviations:\n";
inline constexpr std::string_view kCandidatesHeader = "\n\nCandidate answers:\n";

inline std::string ascii_lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline bool is_word_char(char c) noexcept { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

/// Abbreviation and term dictionaries. Abbreviation keys are case-sensitive
/// ("IP" is not "ip"); term keys are unique ignoring case.
class Glossary {
public:
    struct Term {
        std::string term; // as written in the source vocabulary
        std::string definition;
    };

    void add_abbreviation(const std::string& abbr, const std::string& expansion) {
        if (trim(abbr).empty() || trim(expansion).empty()) throw IntegrityError("empty abbreviation or expansion");
        if (!abbr_.emplace(abbr, expansion).second) throw IntegrityError("duplicate abbreviation " + abbr);
    }

    void add_term(const std::string& term, const std::string& definition) {
        if (trim(term).empty() || trim(definition).empty()) throw IntegrityError("empty term or definition");
        if (!terms_.emplace(ascii_lower(term), Term{term, definition}).second)
            throw IntegrityError("duplicate term " + term);
    }

    const std::map<std::string, std::string>& abbreviations() const noexcept { return abbr_; }
    const std::map<std::string, Term>& terms() const noexcept { return terms_; }

    /// {"abbreviations": {abbr: expansion}, "terms": {term: definition}}.
    /// The fixture glossary follows the 3GPP vocabulary (TR 21.905) layout;
    /// converting the full vocabulary is a matter of emitting this JSON.
    static Glossary from_json(const nlohmann::json& j) {
        Glossary g;
        const auto abbrs = j.value("abbreviations", nlohmann::json::object());
        const auto terms = j.value("terms", nlohmann::json::object());
        for (const auto& [k, v] : abbrs.items()) g.add_abbreviation(k, v.get<std::string>());
        for (const auto& [k, v] : terms.items()) g.add_term(k, v.get<std::string>());
        return g;
    }

    static Glossary load(const std::filesystem::path& p) {
        try {
            return from_json(nlohmann::json::parse(read_file(p)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(p.string() + ": " + e.what());
        }
    }

private:
    std::map<std::string, std::string> abbr_;
    std::map<std::string, Term> terms_; // keyed by lower-cased term
};

using GlossaryEntry = std::pair<std::string, std::string>;

struct QueryState {
    std::string raw;
    std::string rephrased; // Q
    bool rephrase_degraded = false;
    std::vector<GlossaryEntry> matched_abbrs;
    std::vector<GlossaryEntry> matched_terms;
    std::string refined; // Q+
    std::vector<std::string> candidate_answers;
    std::optional<std::string> augmented; // Q++

    /// Text used for the latest retrieval round.
    const std::string& retrieval_text() const { return augmented ? *augmented : refined; }
};

struct RephraseResult {
    std::string text;
    bool degraded = false;
};

inline constexpr std::string_view kRephraseSystem =
    "You rewrite questions about telecommunications standards. Rephrase the user's question so that it is "
    "clear and grammatically correct, keeping its meaning and all technical terms. Reply with the rephrased "
    "question only.";

/// Asks the model for a cleaner phrasing. Any provider failure, or an empty
/// reply, falls back to the raw text with `degraded` set.
inline RephraseResult rephrase(const std::string& raw, LlmClient& llm, const RetryPolicy& retry = RetryPolicy::none()) {
    try {
        auto out = trim(with_retries(retry, [&] {
            return llm.complete({LlmTask::rephrase, std::string(kRephraseSystem), raw});
        }));
        if (out.empty()) return {raw, true};
        return {std::move(out), false};
    } catch (const ProviderError&) {
        return {raw, true};
    }
}

/// Strips any blocks a previous enhancement appended, leaving the query.
inline std::string_view query_part(std::string_view text) {
    std::size_t cut = text.size();
    for (auto marker : {kTermsHeader, kAbbrHeader, kCandidatesHeader})
        cut = std::min(cut, text.find(marker) == std::string_view::npos ? text.size() : text.find(marker));
    return text.substr(0, cut);
}

struct GlossaryMatch {
    std::vector<GlossaryEntry> abbrs;
    std::vector<GlossaryEntry> terms;
    std::string refined;
};

inline bool bounded_at(std::string_view text, std::size_t pos, std::size_t len) {
    const bool left = pos == 0 || !is_word_char(text[pos - 1]);
    const bool right = pos + len >= text.size() || !is_word_char(text[pos + len]);
    return left && right;
}

inline std::string render_refined(std::string_view q, const std::vector<GlossaryEntry>& terms,
                                  const std::vector<GlossaryEntry>& abbrs) {
    std::string out(q);
    if (!terms.empty()) {
        out += kTermsHeader;
        for (std::size_t i = 0; i < terms.size(); ++i)
            out += (i ? "\n- " : "- ") + terms[i].first + ": " + terms[i].second;
    }
    if (!abbrs.empty()) {
        out += kAbbrHeader;
        for (std::size_t i = 0; i < abbrs.size(); ++i)
            out += (i ? "\n- " : "- ") + abbrs[i].first + ": " + abbrs[i].second;
    }
    return out;
}

/// Builds Q+ from Q.
///  - abbreviations match as exact-case whole words;
///  - terms match case-insensitively on word boundaries, scanning left to
///    right and taking the longest term at each position;
///  - a key that matched as an abbreviation is not repeated as a term.
/// Entries are listed once each, in order of first occurrence. Only the
/// query part of `text` is scanned, so enhancing Q+ again is a no-op.
inline GlossaryMatch glossary_enhance(std::string_view text, const Glossary& glossary) {
    const std::string_view q = query_part(text);
    GlossaryMatch m;

    std::vector<std::pair<std::size_t, GlossaryEntry>> abbr_hits;
    for (const auto& [abbr, expansion] : glossary.abbreviations()) {
        for (auto pos = q.find(abbr); pos != std::string_view::npos; pos = q.find(abbr, pos + 1)) {
            if (bounded_at(q, pos, abbr.size())) {
                abbr_hits.push_back({pos, {abbr, expansion}});
                break;
            }
        }
    }
    std::stable_sort(abbr_hits.begin(), abbr_hits.end(), [](auto& a, auto& b) { return a.first < b.first; });
    for (auto& [_, e] : abbr_hits) m.abbrs.push_back(std::move(e));

    const std::string lower = ascii_lower(q);
    std::map<std::string, bool> taken;
    for (const auto& a : m.abbrs) taken[ascii_lower(a.first)] = true;
    std::size_t i = 0;
    while (i < lower.size()) {
        if (!is_word_char(lower[i]) || (i > 0 && is_word_char(lower[i - 1]))) {
            ++i;
            continue;
        }
        const Glossary::Term* best = nullptr;
        std::size_t best_len = 0;
        for (const auto& [key, term] : glossary.terms()) {
            if (key.size() > best_len && lower.compare(i, key.size(), key) == 0 && bounded_at(lower, i, key.size())) {
                best = &term;
                best_len = key.size();
            }
        }
        if (!best) {
            ++i;
            continue;
        }
        const std::string key = ascii_lower(best->term);
        if (!taken[key]) {
            taken[key] = true;
            m.terms.push_back({best->term, best->definition});
        }
        i += best_len;
    }

    m.refined = render_refined(q, m.terms, m.abbrs);
    return m;
}

/// Q++ = Q+ followed by the candidate answers.
inline std::string augment_query(const std::string& refined, const std::vector<std::string>& candidates) {
    if (candidates.empty()) return refined;
    std::string out = refined;
    out += kCandidatesHeader;
    for (std::size_t i = 0; i < candidates.size(); ++i) out += (i ? "\n- " : "- ") + candidates[i];
    return out;
}

/// Runs rephrasing and glossary enhancement, filling a fresh QueryState.
inline QueryState refine_query(const std::string& raw, LlmClient& llm, const Glossary& glossary,
                               const RetryPolicy& retry = RetryPolicy::none()) {
    QueryState s;
    s.raw = raw;
    auto r = rephrase(raw, llm, retry);
    s.rephrased = std::move(r.text);
    s.rephrase_degraded = r.degraded;
    auto g = glossary_enhance(s.rephrased, glossary);
    s.matched_abbrs = std::move(g.abbrs);
    s.matched_terms = std::move(g.terms);
    s.refined = std::move(g.refined);
    return s;
}

} // namespace telco_rag
