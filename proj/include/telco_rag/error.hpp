#pragma once

#include <stdexcept>
#include <string>

namespace telco_rag {

/// Root of every exception thrown by the library. `kind()` is a short
/// machine-parsable tag used by the CLI and the HTTP service.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define TELCO_RAG_ERROR(Name, tag)                                        \
    class Name : public Error {                                           \
    public:                                                               \
        explicit Name(const std::string& what) : Error(tag, what) {}      \
    }

TELCO_RAG_ERROR(ConfigError, "config");
TELCO_RAG_ERROR(ArgumentError, "argument");
TELCO_RAG_ERROR(IntegrityError, "integrity");
TELCO_RAG_ERROR(ProviderError, "provider");
TELCO_RAG_ERROR(RetrievalError, "retrieval");
TELCO_RAG_ERROR(NumericError, "numeric");
TELCO_RAG_ERROR(TrainingError, "training");
TELCO_RAG_ERROR(ParseError, "parse");

#undef TELCO_RAG_ERROR

/// Generation failed after retries; carries the assembled prompt so it can
/// be inspected or replayed.
class PipelineError : public Error {
public:
    PipelineError(const std::string& what, std::string prompt)
        : Error("pipeline", what), prompt_(std::move(prompt)) {}

    const std::string& prompt() const noexcept { return prompt_; }

private:
    std::string prompt_;
};

} // namespace telco_rag
