#include "counselflow/backends.hpp"
#include "counselflow/errors.hpp"

namespace counselflow {

ScriptedBackend::ScriptedBackend(std::size_t embed_dimension) : embed_dimension_(embed_dimension) {}

ScriptedBackend& ScriptedBackend::script(const std::string& task, std::vector<std::string> replies) {
    std::lock_guard lock(mutex_);
    auto& q = queues_[task];
    q.insert(q.end(), replies.begin(), replies.end());
    return *this;
}

ScriptedBackend& ScriptedBackend::script_default(std::vector<std::string> replies) {
    std::lock_guard lock(mutex_);
    default_queue_.insert(default_queue_.end(), replies.begin(), replies.end());
    return *this;
}

ScriptedBackend& ScriptedBackend::respond(const std::string& task,
                                          std::function<std::string(const ChatRequest&)> fn) {
    std::lock_guard lock(mutex_);
    responders_[task] = std::move(fn);
    return *this;
}

ScriptedBackend& ScriptedBackend::fallback(std::shared_ptr<Backend> next) {
    std::lock_guard lock(mutex_);
    fallback_ = std::move(next);
    return *this;
}

std::string ScriptedBackend::complete(const ChatRequest& req) {
    std::function<std::string(const ChatRequest&)> responder;
    std::shared_ptr<Backend> next;
    {
        std::lock_guard lock(mutex_);
        log_.push_back(req);
        if (auto it = queues_.find(req.task); it != queues_.end() && !it->second.empty()) {
            std::string reply = std::move(it->second.front());
            it->second.pop_front();
            return reply;
        }
        if (auto it = responders_.find(req.task); it != responders_.end()) {
            responder = it->second;
        } else if (!default_queue_.empty()) {
            std::string reply = std::move(default_queue_.front());
            default_queue_.pop_front();
            return reply;
        }
        next = fallback_;
    }
    if (responder) return responder(req);
    if (next) return next->complete(req);
    throw ScriptExhausted("no scripted reply left for task '" + req.task + "'");
}

EmbeddingVector ScriptedBackend::embed(std::string_view text) {
    return hash_embedding(text, embed_dimension_);
}

std::vector<ChatRequest> ScriptedBackend::requests() const {
    std::lock_guard lock(mutex_);
    return log_;
}

std::size_t ScriptedBackend::remaining(const std::string& task) const {
    std::lock_guard lock(mutex_);
    auto it = queues_.find(task);
    return it == queues_.end() ? 0 : it->second.size();
}

Json extract_context(const ChatRequest& req) {
    static constexpr std::string_view kOpen = "```json\n";
    for (const auto& m : req.messages) {
        if (m.role != Role::User) continue;
        auto open = m.content.rfind(kOpen);
        if (open == std::string::npos) continue;
        auto start = open + kOpen.size();
        auto close = m.content.find("```", start);
        if (close == std::string::npos) continue;
        return Json::parse(m.content.begin() + static_cast<std::ptrdiff_t>(start),
                           m.content.begin() + static_cast<std::ptrdiff_t>(close), nullptr, false);
    }
    return Json(Json::value_t::discarded);
}

}  // namespace counselflow
