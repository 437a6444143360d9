#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "chunking.hpp"
#include "concurrency.hpp"
#include "error.hpp"
#include "hashing.hpp"
#include "http.hpp"
#include "llm.hpp"
#include "query_refine.hpp"
#include "tokenize.hpp"

namespace telco_rag {

struct WebResult {
    std::string url;
    std::string title;
    std::string snippet;
    std::size_t rank = 0; // 1-based provider order
};

enum class Verdict { pending, relevant, irrelevant };

inline std::string_view to_string(Verdict v) {
    switch (v) {
    case Verdict::pending: return "pending";
    case Verdict::relevant: return "true";
    case Verdict::irrelevant: return "false";
    }
    return "pending";
}

struct WebParagraph {
    std::string url;
    std::string title;
    std::string snippet;
    std::size_t rank = 0;
    std::string text;
    std::size_t token_start = 0;
    std::size_t token_end = 0;
    std::size_t snippet_offset = 0; // anchor token index in the fetched document
    bool anchor_found = false;
    Verdict validated = Verdict::pending;

    std::size_t token_count() const noexcept { return token_end - token_start; }
};

// ---------------------------------------------------------------------------
// Search

class SearchProvider {
public:
    virtual ~SearchProvider() = default;
    virtual std::string id() const = 0;
    virtual std::vector<WebResult> search(const std::string& query, std::size_t max_results) = 0;
};

struct HttpSearchConfig {
    std::string endpoint;
    std::string api_key_env = "TELCO_RAG_SEARCH_API_KEY";
    std::string api_key_header = "Ocp-Apim-Subscription-Key";
    std::string query_param = "q";
    std::string count_param = "count";
    std::string results_pointer = "/webPages/value";
    std::string url_field = "url";
    std::string title_field = "name";
    std::string snippet_field = "snippet";
    int timeout_seconds = 10;
};

/// GET {endpoint}?q=...&count=... returning JSON; result records are read
/// from `results_pointer` with configurable field names.
class HttpSearchProvider final : public SearchProvider {
public:
    explicit HttpSearchProvider(HttpSearchConfig cfg) : cfg_(std::move(cfg)), url_(parse_url(cfg_.endpoint)) {}

    std::string id() const override { return "http:" + url_.host; }

    std::vector<WebResult> search(const std::string& query, std::size_t max_results) override {
        auto cli = make_http_client(url_, cfg_.timeout_seconds);
        httplib::Headers headers;
        if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
            headers.emplace(cfg_.api_key_header, key);
        const httplib::Params params = {{cfg_.query_param, query}, {cfg_.count_param, std::to_string(max_results)}};
        const auto res = require_ok(cli.Get(url_.path, params, headers), "search");
        std::vector<WebResult> out;
        try {
            const auto body = nlohmann::json::parse(res.body);
            const auto ptr = nlohmann::json::json_pointer(cfg_.results_pointer);
            if (!body.contains(ptr)) return out;
            for (const auto& r : body.at(ptr)) {
                if (out.size() == max_results) break;
                WebResult w{r.value(cfg_.url_field, std::string{}), r.value(cfg_.title_field, std::string{}),
                            r.value(cfg_.snippet_field, std::string{}), out.size() + 1};
                if (!w.url.empty() && !w.snippet.empty()) out.push_back(std::move(w));
            }
        } catch (const nlohmann::json::exception& e) {
            throw ProviderError(std::string("search: malformed response: ") + e.what());
        }
        return out;
    }

private:
    HttpSearchConfig cfg_;
    Url url_;
};

/// Answers from a fixture: {"searches": [{"match": substring, "results": [...]}]}.
/// The first entry whose match occurs in the query wins; no match yields no
/// results.
class ReplaySearchProvider final : public SearchProvider {
public:
    struct Entry {
        std::string match;
        std::vector<WebResult> results;
    };

    explicit ReplaySearchProvider(std::vector<Entry> entries) : entries_(std::move(entries)) {}

    static ReplaySearchProvider from_file(const std::filesystem::path& p) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(p));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(p.string() + ": " + e.what());
        }
        std::vector<Entry> entries;
        for (const auto& s : j.at("searches")) {
            Entry e{s.value("match", std::string{}), {}};
            for (const auto& r : s.at("results"))
                e.results.push_back({r.at("url").get<std::string>(), r.value("title", std::string{}),
                                     r.at("snippet").get<std::string>(), e.results.size() + 1});
            entries.push_back(std::move(e));
        }
        return ReplaySearchProvider(std::move(entries));
    }

    std::string id() const override { return "replay"; }

    std::vector<WebResult> search(const std::string& query, std::size_t max_results) override {
        for (const auto& e : entries_)
            if (query.find(e.match) != std::string::npos) {
                std::vector<WebResult> out(e.results.begin(),
                                           e.results.begin() + static_cast<std::ptrdiff_t>(std::min(max_results, e.results.size())));
                return out;
            }
        return {};
    }

private:
    std::vector<Entry> entries_;
};

struct SearchOutcome {
    std::vector<WebResult> results;
    bool degraded = false;
    std::string error;
};

inline SearchOutcome web_search(const std::string& query, SearchProvider& provider, std::size_t max_results,
                                const RetryPolicy& retry = RetryPolicy::none()) {
    try {
        auto results = with_retries(retry, [&] { return provider.search(query, max_results); });
        if (results.size() > max_results) results.resize(max_results);
        return {std::move(results), false, {}};
    } catch (const Error& e) {
        return {{}, true, e.what()};
    }
}

// ---------------------------------------------------------------------------
// Fetching and text extraction

struct FetchedDocument {
    std::string url;
    std::string content_type;
    std::string body;
};

class Fetcher {
public:
    virtual ~Fetcher() = default;
    /// Throws ProviderError for transient failures and RetrievalError for
    /// permanent ones.
    virtual FetchedDocument fetch(const std::string& url) = 0;
};

inline constexpr std::string_view kUserAgent = "telco-rag-fetcher/1.0 (+standards question answering)";

struct HttpFetchOptions {
    int timeout_seconds = 10;
    std::string user_agent = std::string(kUserAgent);
    RetryPolicy retry = RetryPolicy::immediate(2);
    std::optional<std::filesystem::path> cache_dir;
};

class HttpFetcher final : public Fetcher {
public:
    explicit HttpFetcher(HttpFetchOptions opts = {}) : opts_(std::move(opts)) {
        if (opts_.cache_dir) std::filesystem::create_directories(*opts_.cache_dir);
    }

    FetchedDocument fetch(const std::string& url) override {
        if (auto hit = cached(url)) return *hit;
        auto doc = with_retries(opts_.retry, [&] { return fetch_once(url); });
        store(doc);
        return doc;
    }

private:
    FetchedDocument fetch_once(const std::string& url) const {
        std::string target = url;
        for (int hop = 0;; ++hop) {
            const auto u = parse_url(target);
            auto cli = make_http_client(u, opts_.timeout_seconds);
            cli.set_follow_location(false);
            auto res = cli.Get(u.path, httplib::Headers{{"User-Agent", opts_.user_agent}});
            if (!res) throw ProviderError("fetch " + url + ": " + httplib::to_string(res.error()));
            const int status = res->status;
            if (status >= 300 && status < 400 && res->has_header("Location")) {
                if (hop == 1) throw RetrievalError("fetch " + url + ": too many redirects");
                auto loc = res->get_header_value("Location");
                target = loc.find("://") == std::string::npos ? u.origin() + (loc.starts_with("/") ? "" : "/") + loc : loc;
                continue;
            }
            if (status >= 400 && status < 500) throw RetrievalError("fetch " + url + ": HTTP " + std::to_string(status));
            if (status < 200 || status >= 300) throw ProviderError("fetch " + url + ": HTTP " + std::to_string(status));
            return {url, res->get_header_value("Content-Type"), res->body};
        }
    }

    std::filesystem::path cache_path(const std::string& url, const char* ext) const {
        return *opts_.cache_dir / (hex64(fnv1a64(url)) + ext);
    }

    std::optional<FetchedDocument> cached(const std::string& url) const {
        if (!opts_.cache_dir || !std::filesystem::exists(cache_path(url, ".body"))) return std::nullopt;
        return FetchedDocument{url, read_file(cache_path(url, ".type")), read_file(cache_path(url, ".body"))};
    }

    void store(const FetchedDocument& d) const {
        if (!opts_.cache_dir) return;
        std::lock_guard lock(mu_);
        write_file(cache_path(d.url, ".type"), d.content_type);
        write_file(cache_path(d.url, ".body"), d.body);
    }

    HttpFetchOptions opts_;
    mutable std::mutex mu_;
};

/// Serves pages from disk: {"<url>": "<relative file>"}. Content type comes
/// from the file extension. An optional delay simulates network latency.
class FixtureFetcher final : public Fetcher {
public:
    FixtureFetcher(std::filesystem::path root, std::map<std::string, std::string> pages,
                   std::chrono::milliseconds delay = {})
        : root_(std::move(root)), pages_(std::move(pages)), delay_(delay) {}

    static FixtureFetcher from_file(const std::filesystem::path& index, std::chrono::milliseconds delay = {}) {
        std::map<std::string, std::string> pages;
        try {
            pages = nlohmann::json::parse(read_file(index)).get<std::map<std::string, std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(index.string() + ": " + e.what());
        }
        return FixtureFetcher(index.parent_path(), std::move(pages), delay);
    }

    FetchedDocument fetch(const std::string& url) override {
        if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
        auto it = pages_.find(url);
        if (it == pages_.end()) throw RetrievalError("fetch " + url + ": HTTP 404");
        const auto ext = std::filesystem::path(it->second).extension().string();
        const std::string type = ext == ".html" || ext == ".htm" ? "text/html"
                                 : ext == ".pdf"                 ? "application/pdf"
                                                                 : "text/plain";
        return {url, type, read_file(root_ / it->second)};
    }

private:
    std::filesystem::path root_;
    std::map<std::string, std::string> pages_;
    std::chrono::milliseconds delay_;
};

namespace detail {

inline void append_utf8(std::string& out, unsigned long cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x110000) {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

inline std::string decode_entities(std::string_view s) {
    static const std::unordered_map<std::string_view, std::string_view> named = {
        {"amp", "&"}, {"lt", "<"}, {"gt", ">"}, {"quot", "\""}, {"apos", "'"}, {"nbsp", " "},
        {"ndash", "–"}, {"mdash", "—"}, {"hellip", "…"}, {"copy", "©"}};
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '&') {
            out += s[i];
            continue;
        }
        const auto semi = s.find(';', i);
        if (semi == std::string_view::npos || semi - i > 10) {
            out += '&';
            continue;
        }
        const auto name = s.substr(i + 1, semi - i - 1);
        if (!name.empty() && name[0] == '#') {
            const bool hex = name.size() > 1 && (name[1] == 'x' || name[1] == 'X');
            char* end = nullptr;
            const std::string digits(name.substr(hex ? 2 : 1));
            const unsigned long cp = std::strtoul(digits.c_str(), &end, hex ? 16 : 10);
            if (digits.empty() || *end != '\0') {
                out += '&';
                continue;
            }
            append_utf8(out, cp);
        } else if (auto it = named.find(name); it != named.end()) {
            out += it->second;
        } else {
            out += '&';
            continue;
        }
        i = semi;
    }
    return out;
}

} // namespace detail

/// Visible text of an HTML page: scripts, styles and comments are dropped,
/// block elements break lines, entities are decoded and runs of blanks are
/// collapsed.
inline std::string html_to_text(std::string_view html) {
    static const std::set<std::string, std::less<>> blocks = {
        "p", "div", "br", "li", "ul", "ol", "tr", "td", "th", "table", "h1", "h2", "h3", "h4", "h5", "h6",
        "section", "article", "header", "footer", "title", "pre", "blockquote", "hr", "dd", "dt"};
    std::string raw;
    std::size_t i = 0;
    while (i < html.size()) {
        if (html[i] != '<') {
            raw += html[i++];
            continue;
        }
        if (html.substr(i, 4) == "<!--") {
            const auto end = html.find("-->", i + 4);
            i = end == std::string_view::npos ? html.size() : end + 3;
            continue;
        }
        const auto close = html.find('>', i);
        if (close == std::string_view::npos) break;
        std::string_view tag = html.substr(i + 1, close - i - 1);
        const bool closing = !tag.empty() && tag[0] == '/';
        if (closing) tag.remove_prefix(1);
        std::size_t n = 0;
        while (n < tag.size() && (std::isalnum(static_cast<unsigned char>(tag[n])))) ++n;
        const std::string name = ascii_lower(tag.substr(0, n));
        i = close + 1;
        if (!closing && (name == "script" || name == "style" || name == "noscript")) {
            const auto end = ascii_lower(html.substr(i)).find("</" + name);
            i = end == std::string::npos ? html.size() : i + end;
            continue;
        }
        raw += blocks.contains(name) ? "\n" : "";
    }
    const auto text = detail::decode_entities(raw);

    std::string out;
    int pending_newlines = 0;
    bool pending_space = false;
    for (char c : text) {
        if (c == '\n') {
            ++pending_newlines;
        } else if (is_ascii_space(c)) {
            pending_space = true;
        } else {
            if (!out.empty()) {
                if (pending_newlines > 0) out += '\n';
                else if (pending_space) out += ' ';
            }
            pending_newlines = 0;
            pending_space = false;
            out += c;
        }
    }
    return out;
}

/// Converts fetched bytes to plain text by content type. PDF and other
/// binary formats need a registered converter.
class TextExtractor {
public:
    using Convert = std::function<std::string(std::string_view)>;

    TextExtractor() {
        add("text/html", [](std::string_view b) { return html_to_text(b); });
        add("application/xhtml", [](std::string_view b) { return html_to_text(b); });
        add("text/plain", [](std::string_view b) { return std::string(b); });
    }

    void add(std::string type_prefix, Convert fn) { converters_.emplace_back(std::move(type_prefix), std::move(fn)); }

    std::string to_text(const FetchedDocument& d) const {
        const auto type = ascii_lower(d.content_type);
        for (auto it = converters_.rbegin(); it != converters_.rend(); ++it)
            if (type.starts_with(it->first)) return it->second(d.body);
        throw ParseError("no text extractor for content type '" + d.content_type + "' (" + d.url + ")");
    }

private:
    std::vector<std::pair<std::string, Convert>> converters_;
};

// ---------------------------------------------------------------------------
// Snippet location and windowing

inline constexpr std::size_t kParagraphTokens = 250;
inline constexpr double kSnippetMinOverlap = 0.6;

/// Lower-cased token with leading and trailing ASCII punctuation removed.
inline std::string normalize_token(std::string_view t) {
    std::size_t b = 0, e = t.size();
    while (b < e && static_cast<unsigned char>(t[b]) < 0x80 && std::ispunct(static_cast<unsigned char>(t[b]))) ++b;
    while (e > b && static_cast<unsigned char>(t[e - 1]) < 0x80 && std::ispunct(static_cast<unsigned char>(t[e - 1]))) --e;
    return ascii_lower(t.substr(b, e - b));
}

struct SnippetMatch {
    std::size_t anchor = 0;
    double overlap = 0.0;
};

/// Finds the window of |snippet| document tokens sharing the most tokens
/// (as a multiset) with the snippet. The anchor is the first snippet token
/// inside the earliest best window. Returns nothing below `min_overlap`.
inline std::optional<SnippetMatch> locate_snippet(const std::vector<std::string>& doc_norm,
                                                  std::string_view snippet, double min_overlap = kSnippetMinOverlap) {
    std::unordered_map<std::string, int> need;
    std::size_t m = 0;
    for (const auto& t : default_tokenizer().tokenize(snippet).tokens) {
        auto n = normalize_token(t.text);
        if (n.empty() || n == "…") continue;
        ++need[n];
        ++m;
    }
    if (m == 0 || doc_norm.empty()) return std::nullopt;
    const std::size_t w = std::min(m, doc_norm.size());

    std::unordered_map<std::string_view, int> have;
    std::size_t matched = 0;
    auto push = [&](const std::string& t) {
        auto it = need.find(t);
        if (it == need.end()) return;
        if (++have[t] <= it->second) ++matched;
    };
    auto pop = [&](const std::string& t) {
        auto it = need.find(t);
        if (it == need.end()) return;
        if (have[t]-- <= it->second) --matched;
    };

    std::size_t best_start = 0, best = 0;
    for (std::size_t i = 0; i < doc_norm.size(); ++i) {
        push(doc_norm[i]);
        if (i >= w) pop(doc_norm[i - w]);
        if (i + 1 >= w && matched > best) {
            best = matched;
            best_start = i + 1 - w;
        }
    }
    const double overlap = static_cast<double>(best) / static_cast<double>(m);
    if (best == 0 || overlap < min_overlap) return std::nullopt;
    std::size_t anchor = best_start;
    while (anchor < best_start + w && !need.contains(doc_norm[anchor])) ++anchor;
    return SnippetMatch{anchor, overlap};
}

struct TokenWindow {
    std::size_t start = 0, end = 0;
};

/// `width` tokens centred on `anchor`, shifted to stay inside [0, total).
inline TokenWindow centered_window(std::size_t anchor, std::size_t total, std::size_t width = kParagraphTokens) {
    if (total <= width) return {0, total};
    const std::size_t half = width / 2;
    const std::size_t start = std::min(anchor > half ? anchor - half : 0, total - width);
    return {start, start + width};
}

/// Cuts the snippet-anchored paragraph out of a document's plain text.
inline WebParagraph extract_paragraph(const WebResult& r, std::string_view text,
                                      std::size_t width = kParagraphTokens) {
    const auto seq = default_tokenizer().tokenize(text);
    std::vector<std::string> norm;
    norm.reserve(seq.tokens.size());
    for (const auto& t : seq.tokens) norm.push_back(normalize_token(t.text));
    WebParagraph p{.url = r.url, .title = r.title, .snippet = r.snippet, .rank = r.rank};
    const auto match = locate_snippet(norm, r.snippet);
    p.anchor_found = match.has_value();
    p.snippet_offset = match ? match->anchor : 0;
    const auto win = match ? centered_window(match->anchor, norm.size(), width) : TokenWindow{0, std::min(width, norm.size())};
    p.token_start = win.start;
    p.token_end = win.end;
    p.text = trim(detokenize(std::span(seq.tokens).subspan(win.start, win.end - win.start)));
    return p;
}

struct FetchFailure {
    std::string url;
    std::string error;
};

struct ExtractionOutcome {
    std::vector<WebParagraph> paragraphs; // provider rank order
    std::vector<FetchFailure> failures;
};

inline constexpr std::size_t kMaxConcurrentFetches = 8;

/// Fetches every result with at most `max_concurrency` requests in flight and
/// extracts one paragraph per document. A failing url is recorded and
/// skipped.
inline ExtractionOutcome fetch_and_extract(const std::vector<WebResult>& results, Fetcher& fetcher,
                                           const TextExtractor& extractor = TextExtractor{},
                                           std::size_t max_concurrency = kMaxConcurrentFetches) {
    std::vector<std::optional<WebParagraph>> slots(results.size());
    std::vector<std::optional<std::string>> errors(results.size());
    bounded_parallel_for(results.size(), max_concurrency, [&](std::size_t i) {
        try {
            const auto doc = fetcher.fetch(results[i].url);
            slots[i] = extract_paragraph(results[i], extractor.to_text(doc));
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });
    ExtractionOutcome out;
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (slots[i]) out.paragraphs.push_back(std::move(*slots[i]));
        if (errors[i]) out.failures.push_back({results[i].url, *errors[i]});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Validation

inline constexpr std::string_view kValidateSystem =
    "You judge whether paragraphs help answer a question about 3GPP telecommunications standards. "
    "For each numbered paragraph answer True if it is relevant and False otherwise. "
    "Reply with one line per paragraph in the form '<number>: True' or '<number>: False'.";

inline std::string validation_prompt(const std::string& query, std::span<const WebParagraph> batch) {
    std::string p = "Question:\n" + query + "\n";
    for (std::size_t i = 0; i < batch.size(); ++i)
        p += "\nParagraph " + std::to_string(i + 1) + ":\n" + batch[i].text + "\n";
    return p;
}

/// One verdict per paragraph, in order; nothing when the reply does not hold
/// exactly `n` True/False tokens.
inline std::optional<std::vector<bool>> parse_verdicts(std::string_view reply, std::size_t n) {
    static const std::regex word(R"(\b(true|false)\b)", std::regex::icase);
    std::vector<bool> out;
    const std::string s(reply);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), word); it != std::sregex_iterator(); ++it)
        out.push_back(ascii_lower((*it)[1].str()) == "true");
    if (out.size() != n) return std::nullopt;
    return out;
}

struct ValidationOutcome {
    std::vector<WebParagraph> accepted;
    std::vector<WebParagraph> all; // every paragraph with its final verdict
    std::size_t llm_calls = 0;
    std::size_t failed_batches = 0;
};

/// Validates paragraphs in rank order, one llm call per batch, stopping once
/// `threshold` paragraphs are accepted. A failed or malformed batch counts
/// as all False. The first `threshold` accepted paragraphs are returned;
/// later ones from the final batch keep their verdict in `all`.
inline ValidationOutcome validate_batches(std::vector<WebParagraph> paragraphs, const std::string& query,
                                          LlmClient& llm, std::size_t batch_size = 4, std::size_t threshold = 4,
                                          const RetryPolicy& retry = RetryPolicy::none()) {
    if (batch_size == 0) throw ArgumentError("batch_size must be >= 1");
    if (threshold == 0) throw ArgumentError("threshold must be >= 1");
    ValidationOutcome out;
    std::size_t accepted = 0;
    for (std::size_t lo = 0; lo < paragraphs.size() && accepted < threshold; lo += batch_size) {
        const std::size_t n = std::min(batch_size, paragraphs.size() - lo);
        const std::span<WebParagraph> batch(paragraphs.data() + lo, n);
        ++out.llm_calls;
        std::optional<std::vector<bool>> verdicts;
        try {
            verdicts = parse_verdicts(with_retries(retry, [&] {
                                          return llm.complete({LlmTask::validate, std::string(kValidateSystem),
                                                               validation_prompt(query, batch)});
                                      }),
                                      n);
        } catch (const ProviderError&) {
        }
        if (!verdicts) ++out.failed_batches;
        for (std::size_t i = 0; i < n; ++i) {
            const bool ok = verdicts && (*verdicts)[i];
            batch[i].validated = ok ? Verdict::relevant : Verdict::irrelevant;
            if (ok && ++accepted <= threshold) out.accepted.push_back(batch[i]);
        }
    }
    out.all = std::move(paragraphs);
    return out;
}

// ---------------------------------------------------------------------------
// Orchestration

struct WebConfig {
    std::size_t max_results = 10;
    std::size_t batch_size = 4;
    std::size_t threshold = 4;
    std::size_t max_concurrency = kMaxConcurrentFetches;

    nlohmann::json to_json() const {
        return {{"max_results", max_results},
                {"batch_size", batch_size},
                {"threshold", threshold},
                {"max_concurrency", max_concurrency}};
    }

    static WebConfig from_json(const nlohmann::json& j) {
        WebConfig c;
        c.max_results = j.value("max_results", c.max_results);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.threshold = j.value("threshold", c.threshold);
        c.max_concurrency = j.value("max_concurrency", c.max_concurrency);
        if (c.max_results == 0 || c.batch_size == 0 || c.threshold == 0 || c.max_concurrency == 0)
            throw ConfigError("web settings must be positive");
        return c;
    }
};

struct WebContext {
    std::vector<WebParagraph> paragraphs; // validated, rank order
    std::vector<WebResult> results;
    std::vector<FetchFailure> failures;
    std::size_t llm_calls = 0;
    bool degraded = false;
    std::string error;
};

class WebRetriever {
public:
    WebRetriever(std::shared_ptr<SearchProvider> search, std::shared_ptr<Fetcher> fetcher, WebConfig cfg = {},
                 TextExtractor extractor = {})
        : search_(std::move(search)), fetcher_(std::move(fetcher)), cfg_(cfg), extractor_(std::move(extractor)) {}

    const WebConfig& config() const noexcept { return cfg_; }

    WebContext retrieve(const std::string& q_plus, LlmClient& llm, const RetryPolicy& retry = RetryPolicy::none()) {
        WebContext ctx;
        auto found = web_search(q_plus, *search_, cfg_.max_results, retry);
        ctx.degraded = found.degraded;
        ctx.error = found.error;
        ctx.results = std::move(found.results);
        if (ctx.results.empty()) return ctx;
        auto extracted = fetch_and_extract(ctx.results, *fetcher_, extractor_, cfg_.max_concurrency);
        ctx.failures = std::move(extracted.failures);
        auto validated = validate_batches(std::move(extracted.paragraphs), q_plus, llm, cfg_.batch_size,
                                          cfg_.threshold, retry);
        ctx.paragraphs = std::move(validated.accepted);
        ctx.llm_calls = validated.llm_calls;
        return ctx;
    }

private:
    std::shared_ptr<SearchProvider> search_;
    std::shared_ptr<Fetcher> fetcher_;
    WebConfig cfg_;
    TextExtractor extractor_;
};

} // namespace telco_rag
