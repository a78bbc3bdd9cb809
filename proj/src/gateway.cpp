#include "counselflow/gateway.hpp"

#include <cmath>

#include "counselflow/errors.hpp"

namespace counselflow {

const char* const kReturnOnlyDocument =
    "Your previous reply was not a valid JSON document. Return only the JSON document, "
    "with no commentary and no code fence.";

std::string_view to_string(Role r) {
    switch (r) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    return "user";
}

double EmbeddingVector::norm() const {
    double s = 0.0;
    for (double v : values) s += v * v;
    return std::sqrt(s);
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dimension() != b.dimension()) {
        throw PreconditionError("cosine: dimension mismatch " + std::to_string(a.dimension()) +
                                " vs " + std::to_string(b.dimension()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0.0 || nb == 0.0) throw PreconditionError("cosine: zero-norm input");
    double c = dot / (std::sqrt(na) * std::sqrt(nb));
    if (c > 1.0) c = 1.0;
    if (c < -1.0) c = -1.0;
    return c;
}

std::uint64_t fnv1a(std::string_view text, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

EmbeddingVector hash_embedding(std::string_view text, std::size_t dimension) {
    std::uint64_t state = fnv1a(text);
    auto next = [&state] {
        // splitmix64
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    EmbeddingVector out;
    out.values.resize(dimension);
    double sq = 0.0;
    for (auto& v : out.values) {
        v = static_cast<double>(next() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
        sq += v * v;
    }
    const double n = std::sqrt(sq);
    for (auto& v : out.values) v /= n;
    return out;
}

Json parse_document(std::string_view text) {
    auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return Json(Json::value_t::discarded);
    text.remove_prefix(first);
    if (text.starts_with("```")) {
        auto nl = text.find('\n');
        auto close = text.rfind("```");
        if (nl == std::string_view::npos || close == std::string_view::npos || close <= nl) {
            return Json(Json::value_t::discarded);
        }
        text = text.substr(nl + 1, close - nl - 1);
    }
    Json doc = Json::parse(text.begin(), text.end(), nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) return Json(Json::value_t::discarded);
    return doc;
}

Gateway::Gateway(std::shared_ptr<Backend> backend, GatewayOptions options)
    : backend_(std::move(backend)),
      options_(options),
      in_flight_(options.max_in_flight > 0 ? options.max_in_flight : 1) {
    if (!backend_) throw PreconditionError("gateway configured without a backend");
    pinned_dimension_ = options_.embed_dimension;
}

std::string Gateway::call_backend(const ChatRequest& req) {
    in_flight_.acquire();
    struct Release {
        std::counting_semaphore<4096>& s;
        ~Release() { s.release(); }
    } release{in_flight_};
    ++chat_calls_;
    return backend_->complete(req);
}

std::string Gateway::chat(const ChatRequest& req) {
    if (req.messages.empty()) throw PreconditionError("chat request without messages");
    if (req.temperature < 0.0 || req.temperature > 2.0) {
        throw PreconditionError("temperature outside [0,2]");
    }
    if (req.max_tokens <= 0) throw PreconditionError("max_tokens must be positive");
    if (req.response_format == ResponseFormat::FreeText) return call_backend(req);

    ChatRequest attempt = req;
    std::string text;
    for (int i = 0; i <= options_.max_retries; ++i) {
        text = call_backend(attempt);
        if (!parse_document(text).is_discarded()) return text;
        attempt.messages.push_back({Role::Assistant, text});
        attempt.messages.push_back({Role::User, kReturnOnlyDocument});
    }
    throw MalformedOutputError("task '" + req.task + "': no valid document after " +
                               std::to_string(options_.max_retries) + " re-asks");
}

Json Gateway::chat_document(ChatRequest req) {
    req.response_format = ResponseFormat::StructuredDocument;
    return parse_document(chat(req));
}

EmbeddingVector Gateway::embed(std::string_view text) {
    if (text.empty()) throw PreconditionError("embed: empty input");
    EmbeddingVector v = backend_->embed(text);
    if (v.dimension() == 0) throw GatewayError("embed: backend returned an empty vector");
    std::size_t expected = 0;
    if (pinned_dimension_.compare_exchange_strong(expected, v.dimension())) {
        expected = v.dimension();
    }
    if (v.dimension() != expected) {
        throw GatewayError("embed: dimension " + std::to_string(v.dimension()) +
                           " differs from configured " + std::to_string(expected));
    }
    if (v.norm() == 0.0) throw GatewayError("embed: zero-norm vector");
    return v;
}

RepairOutcome chat_with_repair(Gateway& gateway, ChatRequest req,
                               const std::function<std::string(const Json&)>& check,
                               const std::function<std::string(const std::string&)>& reask,
                               int max_repairs) {
    req.response_format = ResponseFormat::StructuredDocument;
    RepairOutcome out;
    while (true) {
        const std::string text = gateway.chat(req);
        out.doc = parse_document(text);
        out.problem = check(out.doc);
        if (out.problem.empty() || out.repairs >= max_repairs) return out;
        ++out.repairs;
        req.messages.push_back({Role::Assistant, text});
        req.messages.push_back({Role::User, reask(out.problem)});
    }
}

}  // namespace counselflow
