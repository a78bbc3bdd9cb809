#pragma once

// One abstraction over chat-completion and embedding providers. Policies,
// the recorder and the evaluator talk only to Gateway; what sits behind it is
// either an OpenAI-compatible HTTP endpoint or one of the offline backends.

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "counselflow/domain.hpp"

namespace counselflow {

enum class Role { System, User, Assistant };
std::string_view to_string(Role r);

struct ChatMessage {
    Role role = Role::User;
    std::string content;
};

enum class ResponseFormat { FreeText, StructuredDocument };

inline constexpr double kAgentTemperature = 0.3;
inline constexpr double kJudgeTemperature = 0.0;

struct ChatRequest {
    // Internal tag naming the calling policy ("reason", "judge", ...). Not
    // sent over the wire; offline backends dispatch on it.
    std::string task;
    std::vector<ChatMessage> messages;
    double temperature = kAgentTemperature;
    ResponseFormat response_format = ResponseFormat::FreeText;
    int max_tokens = 1024;
};

struct EmbeddingVector {
    std::vector<double> values;

    std::size_t dimension() const { return values.size(); }
    double norm() const;
    bool operator==(const EmbeddingVector&) const = default;
};

// dot(a,b) / (|a||b|). Throws PreconditionError on dimension mismatch or a
// zero-norm input.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string name() const = 0;
    virtual std::string complete(const ChatRequest& req) = 0;
    virtual EmbeddingVector embed(std::string_view text) = 0;
};

struct GatewayOptions {
    // Structured-output re-asks before giving up.
    int max_retries = 2;
    // Zero accepts whatever the backend returns on first use, then pins it.
    std::size_t embed_dimension = 0;
    int max_in_flight = 16;
};

class Gateway {
public:
    explicit Gateway(std::shared_ptr<Backend> backend, GatewayOptions options = {});

    std::string chat(const ChatRequest& req);
    // chat() for structured_document requests, returning the parsed document.
    Json chat_document(ChatRequest req);
    EmbeddingVector embed(std::string_view text);

    const GatewayOptions& options() const { return options_; }
    Backend& backend() { return *backend_; }
    std::uint64_t chat_calls() const { return chat_calls_.load(); }

private:
    std::string call_backend(const ChatRequest& req);

    std::shared_ptr<Backend> backend_;
    GatewayOptions options_;
    std::counting_semaphore<4096> in_flight_;
    std::atomic<std::uint64_t> chat_calls_{0};
    std::atomic<std::size_t> pinned_dimension_{0};
};

// Result of a structured request whose content was checked and, when the
// check failed, re-asked. `problem` is empty when the final document passed.
struct RepairOutcome {
    Json doc;
    std::string problem;
    int repairs = 0;
};

// Issues a structured request; while `check` reports a problem and repairs
// remain, appends the reply plus `reask(problem)` and asks again.
RepairOutcome chat_with_repair(Gateway& gateway, ChatRequest req,
                               const std::function<std::string(const Json&)>& check,
                               const std::function<std::string(const std::string&)>& reask,
                               int max_repairs = 1);

// Parses a structured document out of model text, tolerating a surrounding
// markdown code fence. Returns a discarded value when nothing parses.
Json parse_document(std::string_view text);

// The instruction appended when asking a model to repair its output.
extern const char* const kReturnOnlyDocument;

// Deterministic text encoder: FNV-1a seeded expansion, L2-normalized.
EmbeddingVector hash_embedding(std::string_view text, std::size_t dimension);
inline constexpr std::size_t kDefaultMockDimension = 64;

std::uint64_t fnv1a(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace counselflow
