#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace telco_rag {

/// One token plus the whitespace that follows it. Keeping the trailing
/// whitespace makes detokenization exact.
struct Token {
    std::string text;
    std::string trailing;
    std::size_t offset = 0; // byte offset of `text` in the source
};

struct TokenSequence {
    std::string leading; // whitespace before the first token
    std::vector<Token> tokens;

    std::size_t size() const noexcept { return tokens.size(); }
    bool empty() const noexcept { return tokens.empty(); }
};

inline std::string detokenize(std::span<const Token> tokens) {
    std::string out;
    for (const auto& t : tokens) {
        out += t.text;
        out += t.trailing;
    }
    return out;
}

inline std::string detokenize(const TokenSequence& seq) {
    return seq.leading + detokenize(std::span<const Token>(seq.tokens));
}

class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::string id() const = 0;
    virtual TokenSequence tokenize(std::string_view text) const = 0;

    std::size_t count(std::string_view text) const { return tokenize(text).size(); }
};

inline bool is_ascii_space(char c) noexcept {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

/// Reference scheme: a token is a maximal run of non-whitespace bytes, so
/// punctuation stays attached to its word. Multi-byte UTF-8 sequences never
/// contain ASCII whitespace bytes, which keeps code points intact.
class WhitespaceTokenizer final : public Tokenizer {
public:
    static constexpr std::string_view kId = "whitespace";

    std::string id() const override { return std::string(kId); }

    TokenSequence tokenize(std::string_view text) const override {
        TokenSequence seq;
        std::size_t i = 0;
        while (i < text.size() && is_ascii_space(text[i])) ++i;
        seq.leading.assign(text.substr(0, i));
        while (i < text.size()) {
            Token tok;
            tok.offset = i;
            std::size_t j = i;
            while (j < text.size() && !is_ascii_space(text[j])) ++j;
            tok.text.assign(text.substr(i, j - i));
            std::size_t k = j;
            while (k < text.size() && is_ascii_space(text[k])) ++k;
            tok.trailing.assign(text.substr(j, k - j));
            seq.tokens.push_back(std::move(tok));
            i = k;
        }
        return seq;
    }
};

inline std::shared_ptr<const Tokenizer> make_tokenizer(std::string_view id) {
    if (id == WhitespaceTokenizer::kId) return std::make_shared<WhitespaceTokenizer>();
    throw ConfigError("unknown tokenizer_id '" + std::string(id) + "'");
}

inline const Tokenizer& default_tokenizer() {
    static const WhitespaceTokenizer tok;
    return tok;
}

} // namespace telco_rag
