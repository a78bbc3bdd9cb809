#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "counselflow/gateway.hpp"

namespace counselflow {

// Replays fixed replies. Each task tag owns a queue; requests for a task
// without a queue fall back to the default queue, then to `fallback` if one
// is set, and otherwise raise ScriptExhausted.
class ScriptedBackend : public Backend {
public:
    explicit ScriptedBackend(std::size_t embed_dimension = kDefaultMockDimension);

    ScriptedBackend& script(const std::string& task, std::vector<std::string> replies);
    ScriptedBackend& script_default(std::vector<std::string> replies);
    // Replies produced by a function of the request, consulted after queues.
    ScriptedBackend& respond(const std::string& task,
                             std::function<std::string(const ChatRequest&)> fn);
    ScriptedBackend& fallback(std::shared_ptr<Backend> next);

    std::string name() const override { return "scripted"; }
    std::string complete(const ChatRequest& req) override;
    EmbeddingVector embed(std::string_view text) override;

    std::vector<ChatRequest> requests() const;
    std::size_t remaining(const std::string& task) const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::deque<std::string>> queues_;
    std::deque<std::string> default_queue_;
    std::map<std::string, std::function<std::string(const ChatRequest&)>> responders_;
    std::shared_ptr<Backend> fallback_;
    std::vector<ChatRequest> log_;
    std::size_t embed_dimension_;
};

// Deterministic offline stand-in for a chat model. Every reply is a pure
// function of (seed, request), so concurrent sessions sharing one instance
// stay reproducible regardless of scheduling. It reads the JSON context block
// each prompt carries and produces plausible, schema-conforming output for
// every task the engine issues.
class OfflineBackend : public Backend {
public:
    explicit OfflineBackend(std::uint64_t seed = 0,
                            std::size_t embed_dimension = kDefaultMockDimension);

    std::string name() const override { return "offline"; }
    std::string complete(const ChatRequest& req) override;
    EmbeddingVector embed(std::string_view text) override;

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::size_t embed_dimension_;
};

struct HttpBackendConfig {
    // e.g. "https://api.openai.com/v1"
    std::string base_url;
    std::string api_key;
    std::string chat_model;
    std::string embed_model;
    int timeout_ms = 60000;
};

// OpenAI-compatible chat-completions and embeddings client.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig config);

    std::string name() const override { return "http"; }
    std::string complete(const ChatRequest& req) override;
    EmbeddingVector embed(std::string_view text) override;

private:
    Json post(const std::string& path, const Json& body);

    HttpBackendConfig config_;
    std::string origin_;
    std::string prefix_;
};

// Extracts the JSON context block a prompt carries (the last ```json fence in
// the first user message that has one). Discarded value when absent.
Json extract_context(const ChatRequest& req);

}  // namespace counselflow
