#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "chunking.hpp"
#include "error.hpp"
#include "http.hpp"

namespace telco_rag {

enum class LlmTask { rephrase, candidates, validate, answer, judge };

inline std::string_view to_string(LlmTask t) {
    switch (t) {
    case LlmTask::rephrase: return "rephrase";
    case LlmTask::candidates: return "candidates";
    case LlmTask::validate: return "validate";
    case LlmTask::answer: return "answer";
    case LlmTask::judge: return "judge";
    }
    return "unknown";
}

inline constexpr std::string_view kJudgeSystem =
    "You grade answers to questions about 3GPP telecommunications standards. Compare the answer with the ground "
    "truth. The first line of your reply must be exactly 'VERDICT: true' or 'VERDICT: false', followed by a short "
    "rationale.";
inline constexpr std::string_view kJudgeQuestionLabel = "Question:\n";
inline constexpr std::string_view kJudgeTruthLabel = "\n\nGround truth:\n";
inline constexpr std::string_view kJudgeAnswerLabel = "\n\nAnswer to evaluate:\n";

inline std::string judge_prompt(const std::string& question, const std::string& truth, const std::string& answer) {
    return std::string(kJudgeQuestionLabel) + question + std::string(kJudgeTruthLabel) + truth +
           std::string(kJudgeAnswerLabel) + answer;
}

inline LlmTask llm_task_from_string(std::string_view s) {
    for (auto t : {LlmTask::rephrase, LlmTask::candidates, LlmTask::validate, LlmTask::answer, LlmTask::judge})
        if (to_string(t) == s) return t;
    throw ParseError("unknown llm task '" + std::string(s) + "'");
}

/// One chat turn: a system instruction and a user message. `task` is not
/// sent to real models; it lets mocks and transcripts dispatch.
struct LlmRequest {
    LlmTask task = LlmTask::answer;
    std::string system;
    std::string prompt;
};

class LlmClient {
public:
    virtual ~LlmClient() = default;
    virtual std::string id() const = 0;
    /// Throws ProviderError on transport or model failure.
    virtual std::string complete(const LlmRequest& req) = 0;
};

struct HttpChatConfig {
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string model = "gpt-3.5-turbo";
    std::string api_key_env = "OPENAI_API_KEY";
    double temperature = 0.0;
    int timeout_seconds = 60;
};

/// OpenAI-compatible chat completions client.
class HttpChatClient final : public LlmClient {
public:
    explicit HttpChatClient(HttpChatConfig cfg) : cfg_(std::move(cfg)), url_(parse_url(cfg_.endpoint)) {}

    std::string id() const override { return cfg_.model; }

    std::string complete(const LlmRequest& req) override {
        nlohmann::json messages = nlohmann::json::array();
        if (!req.system.empty()) messages.push_back({{"role", "system"}, {"content", req.system}});
        messages.push_back({{"role", "user"}, {"content", req.prompt}});
        const nlohmann::json body = {{"model", cfg_.model}, {"messages", messages}, {"temperature", cfg_.temperature}};
        auto cli = make_http_client(url_, cfg_.timeout_seconds);
        httplib::Headers headers;
        if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
            headers.emplace("Authorization", std::string("Bearer ") + key);
        const auto& res = require_ok(cli.Post(url_.path, headers, body.dump(), "application/json"), "chat");
        try {
            return nlohmann::json::parse(res.body).at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ProviderError(std::string("chat: malformed response: ") + e.what());
        }
    }

private:
    HttpChatConfig cfg_;
    Url url_;
};

/// Adapts a callable; used by tests and by the deterministic mock.
class FunctionLlm final : public LlmClient {
public:
    using Fn = std::function<std::string(const LlmRequest&)>;

    FunctionLlm(std::string id, Fn fn) : id_(std::move(id)), fn_(std::move(fn)) {}

    std::string id() const override { return id_; }
    std::string complete(const LlmRequest& req) override {
        calls_.fetch_add(1);
        {
            std::lock_guard lock(mu_);
            tasks_.push_back(req.task);
        }
        return fn_(req);
    }

    std::size_t calls() const noexcept { return calls_.load(); }
    std::size_t calls(LlmTask t) const {
        std::lock_guard lock(mu_);
        return static_cast<std::size_t>(std::count(tasks_.begin(), tasks_.end(), t));
    }

private:
    std::string id_;
    Fn fn_;
    std::atomic<std::size_t> calls_{0};
    mutable std::mutex mu_;
    std::vector<LlmTask> tasks_;
};

inline std::shared_ptr<FunctionLlm> identity_llm() {
    return std::make_shared<FunctionLlm>("identity", [](const LlmRequest& r) { return r.prompt; });
}

inline std::shared_ptr<FunctionLlm> unreachable_llm() {
    return std::make_shared<FunctionLlm>("unreachable", [](const LlmRequest&) -> std::string {
        throw ProviderError("llm unreachable");
    });
}

/// Replays a recorded transcript. Each entry is
/// {"task": "...", "match": "...", "response": "..."}; the first entry with a
/// matching task whose `match` occurs in the prompt (empty = any) answers.
class ReplayLlm final : public LlmClient {
public:
    struct Entry {
        LlmTask task;
        std::string match;
        std::string response;
    };

    explicit ReplayLlm(std::vector<Entry> entries, std::string id = "replay")
        : entries_(std::move(entries)), id_(std::move(id)) {}

    static std::shared_ptr<ReplayLlm> from_file(const std::filesystem::path& p) {
        std::vector<Entry> entries;
        for (const auto& rec : read_jsonl(p))
            entries.push_back({llm_task_from_string(rec.at("task").get<std::string>()), rec.value("match", std::string{}),
                               rec.at("response").get<std::string>()});
        return std::make_shared<ReplayLlm>(std::move(entries), "replay:" + p.filename().string());
    }

    std::string id() const override { return id_; }

    std::string complete(const LlmRequest& req) override {
        calls_.fetch_add(1);
        for (const auto& e : entries_)
            if (e.task == req.task && (e.match.empty() || req.prompt.find(e.match) != std::string::npos))
                return e.response;
        throw ProviderError("replay: no transcript entry for " + std::string(to_string(req.task)) + " request");
    }

    std::size_t calls() const noexcept { return calls_.load(); }

private:
    std::vector<Entry> entries_;
    std::string id_;
    std::atomic<std::size_t> calls_{0};
};

} // namespace telco_rag
