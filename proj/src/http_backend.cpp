#include <httplib.h>

#include "counselflow/backends.hpp"
#include "counselflow/errors.hpp"

namespace counselflow {
namespace {

// Splits "https://host:port/v1" into origin and path prefix.
std::pair<std::string, std::string> split_base_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw PreconditionError("base_url lacks a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, ""};
    std::string prefix = url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {url.substr(0, path_start), prefix};
}

}  // namespace

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) throw PreconditionError("http backend needs base_url");
    std::tie(origin_, prefix_) = split_base_url(config_.base_url);
}

Json HttpBackend::post(const std::string& path, const Json& body) {
    httplib::Client client(origin_);
    const auto secs = config_.timeout_ms / 1000;
    const auto usecs = (config_.timeout_ms % 1000) * 1000;
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!config_.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + config_.api_key);
    }
    auto res = client.Post(prefix_ + path, headers, body.dump(), "application/json");
    if (!res) {
        throw TransportError("POST " + path + " failed: " + httplib::to_string(res.error()));
    }
    if (res->status >= 400) {
        throw BackendRejected("POST " + path + " returned " + std::to_string(res->status) + ": " +
                              res->body.substr(0, 400));
    }
    Json doc = Json::parse(res->body, nullptr, false);
    if (doc.is_discarded()) throw TransportError("POST " + path + " returned a non-JSON body");
    return doc;
}

std::string HttpBackend::complete(const ChatRequest& req) {
    Json messages = Json::array();
    for (const auto& m : req.messages) {
        messages.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
    }
    Json body = {
        {"model", config_.chat_model},
        {"messages", std::move(messages)},
        {"temperature", req.temperature},
        {"max_tokens", req.max_tokens},
    };
    if (req.response_format == ResponseFormat::StructuredDocument) {
        body["response_format"] = {{"type", "json_object"}};
    }
    Json doc = post("/chat/completions", body);
    try {
        return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
        throw TransportError("chat completion response lacks choices[0].message.content");
    }
}

EmbeddingVector HttpBackend::embed(std::string_view text) {
    Json doc = post("/embeddings", {{"model", config_.embed_model}, {"input", std::string(text)}});
    EmbeddingVector out;
    try {
        out.values = doc.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const nlohmann::json::exception&) {
        throw TransportError("embedding response lacks data[0].embedding");
    }
    return out;
}

}  // namespace counselflow
