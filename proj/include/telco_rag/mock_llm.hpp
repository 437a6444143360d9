#pragma once

// Deterministic offline LLM used by the test suites, the CLI's "mock"
// provider and the service when no endpoint is configured. It reads the
// prompts the library itself renders and answers from their content only.

#include <algorithm>
#include <atomic>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "embedding.hpp"
#include "llm.hpp"
#include "prompt_builder.hpp"
#include "query_refine.hpp"

namespace telco_rag {

class MockLlm final : public LlmClient {
public:
    std::string id() const override { return "mock"; }

    std::string complete(const LlmRequest& req) override {
        calls_.fetch_add(1);
        switch (req.task) {
        case LlmTask::rephrase: return req.prompt;
        case LlmTask::candidates: return candidates(req.prompt);
        case LlmTask::validate: return validate(req.prompt);
        case LlmTask::answer: return answer(req.prompt);
        case LlmTask::judge: return judge(req.prompt);
        }
        return {};
    }

    std::size_t calls() const noexcept { return calls_.load(); }

    /// Sentences of `text`, split at full stops and line breaks.
    static std::vector<std::string> sentences(std::string_view text) {
        std::vector<std::string> out;
        std::string cur;
        auto flush = [&] {
            auto s = trim(cur);
            if (!s.empty()) out.push_back(std::move(s));
            cur.clear();
        };
        for (char c : text) {
            cur += c;
            if (c == '.' || c == '\n') flush();
        }
        flush();
        return out;
    }

    /// Up to `k` sentences sharing the most content words with `question`,
    /// best first; ties keep document order.
    static std::vector<std::string> best_sentences(std::string_view question, std::string_view context, std::size_t k) {
        const auto qw = MockEmbeddingProvider::content_words(question);
        const std::unordered_set<std::string> q(qw.begin(), qw.end());
        std::vector<std::pair<std::size_t, std::string>> scored;
        for (auto& s : sentences(context)) {
            std::unordered_set<std::string> seen;
            for (const auto& w : MockEmbeddingProvider::content_words(s))
                if (q.contains(w)) seen.insert(w);
            if (!seen.empty()) scored.emplace_back(seen.size(), std::move(s));
        }
        std::stable_sort(scored.begin(), scored.end(), [](auto& a, auto& b) { return a.first > b.first; });
        std::vector<std::string> out;
        for (auto& [_, s] : scored) {
            if (out.size() == k) break;
            if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
        }
        return out;
    }

private:
    static std::string between(std::string_view text, std::string_view from, std::string_view to) {
        auto b = text.find(from);
        if (b == std::string_view::npos) return {};
        b += from.size();
        const auto e = to.empty() ? std::string_view::npos : text.find(to, b);
        return std::string(text.substr(b, e == std::string_view::npos ? std::string_view::npos : e - b));
    }

    static std::string candidates(const std::string& prompt) {
        const auto question = between(prompt, "Question:\n", "\n\nContext:\n");
        const auto context = between(prompt, "\n\nContext:\n", "\n\nGive up to ");
        std::size_t k = 3;
        if (const auto p = prompt.rfind("Give up to "); p != std::string::npos) k = std::stoul(prompt.substr(p + 11));
        std::string out;
        for (const auto& s : best_sentences(question, context, k)) out += s + "\n";
        return out;
    }

    static std::string validate(const std::string& prompt) {
        std::string out;
        std::size_t n = 0;
        for (auto p = prompt.find("\nParagraph "); p != std::string::npos; p = prompt.find("\nParagraph ", p + 1))
            out += std::to_string(++n) + ": True\n";
        return out;
    }

    static std::string answer(const std::string& prompt) {
        const std::string question_line(kQuestionLine);
        const auto question = between(prompt, question_line, "\n");
        const auto context_start = prompt.find(kContextLine);
        std::string context;
        if (context_start != std::string::npos) {
            const auto end = prompt.find(question_line, context_start);
            context = prompt.substr(context_start, end - context_start);
        }
        std::vector<std::string> options;
        if (const auto p = prompt.find(kOptionsLine); p != std::string::npos) {
            for (const auto& line : sentences_by_line(prompt.substr(p + kOptionsLine.size()))) {
                const auto colon = line.find(": ");
                if (line.starts_with("Option ") && colon != std::string::npos) options.push_back(line.substr(colon + 2));
            }
        }
        const auto lower_ctx = ascii_lower(context);
        if (!options.empty()) {
            for (std::size_t i = 0; i < options.size(); ++i)
                if (lower_ctx.find(ascii_lower(options[i])) != std::string::npos)
                    return "Option " + std::to_string(i + 1) + ": " + options[i];
            return "The context does not determine the answer.";
        }
        const auto best = best_sentences(question, context, 1);
        return best.empty() ? std::string("No answer could be found in the context.") : best.front();
    }

    static std::vector<std::string> sentences_by_line(std::string_view text) {
        std::vector<std::string> out;
        std::size_t pos = 0;
        while (pos < text.size()) {
            auto nl = text.find('\n', pos);
            if (nl == std::string_view::npos) nl = text.size();
            out.emplace_back(text.substr(pos, nl - pos));
            pos = nl + 1;
        }
        return out;
    }

    static std::string judge(const std::string& prompt) {
        const auto truth = trim(between(prompt, kJudgeTruthLabel, kJudgeAnswerLabel));
        const auto answer = between(prompt, kJudgeAnswerLabel, "");
        const bool ok = !truth.empty() && ascii_lower(answer).find(ascii_lower(truth)) != std::string::npos;
        return ok ? "VERDICT: true\nThe answer contains the ground truth." : "VERDICT: false\nThe answer does not contain the ground truth.";
    }

    std::atomic<std::size_t> calls_{0};
};

} // namespace telco_rag
