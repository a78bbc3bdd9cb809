#pragma once

// HTTP-shaped session service. Requests are handled in-process by
// SessionService::handle; HttpFrontend binds it to a real listener.
//
// Storage layout under the root:
//   sessions/<stem>/events.jsonl   append-only event log
//   sessions/<stem>/snapshot.json  latest folded state (informational)
//   sessions/<stem>/meta.json      session id, client id, token
//   memory/<client stem>.jsonl     per-client memory journal

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <vector>

#include "counselflow/orchestrator.hpp"

namespace counselflow {

struct HttpRequest {
    std::string method;
    std::string path;
    std::map<std::string, std::string> query;
    // Lower-case header names.
    std::map<std::string, std::string> headers;
    std::string body;
};

struct HttpResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
    std::map<std::string, std::string> headers;

    Json json() const { return Json::parse(body); }
};

struct ServiceConfig {
    // Unset keeps everything in memory.
    std::optional<std::filesystem::path> storage_root;
    EngineConfig engine;
    std::size_t max_page = 1000;
    // Fixed seed makes session ids and tokens reproducible (tests).
    std::optional<std::uint64_t> id_seed;
    FaultInjector* faults = nullptr;
};

void to_json(Json& j, const ServiceConfig& c);
void from_json(const Json& j, ServiceConfig& c);

// The client-facing projection of a session: no prompts, no other sessions.
Json session_view(const SessionState& s, std::size_t event_count);

struct RecoveryReport {
    std::string session_id;
    std::size_t discarded_events = 0;
    std::size_t discarded_units = 0;
    bool torn_tail = false;
    bool aborted = false;
};

class SessionService {
public:
    // A null gateway makes session creation answer 503. Existing sessions
    // under the storage root are recovered before the constructor returns.
    SessionService(std::shared_ptr<Gateway> gateway, const PromptLibrary& prompts, Clock& clock,
                   ServiceConfig config);
    ~SessionService();

    HttpResponse handle(const HttpRequest& req);

    const std::vector<RecoveryReport>& recovered() const { return recovered_; }
    std::size_t session_count() const;
    // For tests: the engine's view of a session.
    std::optional<SessionState> state_of(const std::string& session_id) const;
    std::vector<Event> events_of(const std::string& session_id) const;

private:
    struct Session;

    HttpResponse create(const HttpRequest& req);
    HttpResponse post_message(Session& s, const HttpRequest& req);
    HttpResponse get_view(Session& s);
    HttpResponse get_artifact(Session& s, const std::string& kind, const HttpRequest& req);
    HttpResponse get_events(Session& s, const HttpRequest& req);

    std::shared_ptr<Session> find(const std::string& id) const;
    std::filesystem::path session_dir(const std::string& id) const;
    std::unique_ptr<Session> open_session(const std::string& id, const std::string& client_id,
                                          const std::string& token);
    void recover_all();
    // Cuts the log back to its last commit boundary and rebuilds the engine.
    RecoveryReport rollback(Session& s, std::vector<Event> events, bool torn);
    void persist_snapshot(Session& s);
    void publish(Session& s);
    std::string fresh_hex(int bytes);

    // Never null; a stand-in that always fails when none was configured.
    std::shared_ptr<Gateway> gateway_;
    bool available_ = true;
    const PromptLibrary& prompts_;
    Clock& clock_;
    ServiceConfig config_;
    std::unique_ptr<MemoryRegistry> registry_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::mutex rng_mutex_;
    std::mt19937_64 rng_;
    std::vector<RecoveryReport> recovered_;
};

// Binds `service` to a TCP host:port or a Unix socket path. listen* blocks
// until stop() is called from another thread.
class HttpFrontend {
public:
    explicit HttpFrontend(SessionService& service);
    ~HttpFrontend();
    bool listen(const std::string& host, int port);
    bool listen_unix(const std::filesystem::path& socket_path);
    void stop();
    void wait_until_ready();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace counselflow
