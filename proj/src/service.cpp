#include "counselflow/service.hpp"

#include <algorithm>
#include <cstdio>

#include "counselflow/backends.hpp"
#include "counselflow/errors.hpp"

namespace counselflow {

namespace fs = std::filesystem;

struct SessionService::Session {
    std::string id;
    std::string client_id;
    std::string token;
    fs::path dir;  // empty when kept in memory
    std::unique_ptr<FileSink> sink;
    std::shared_ptr<MemoryStore> memory;
    std::unique_ptr<SessionEngine> engine;
    // One message in flight per session; a second caller gets 409.
    std::atomic<bool> busy{false};
    std::mutex write_mutex;
    // Copies handed to readers so GETs never wait on a running iteration.
    mutable std::mutex pub_mutex;
    SessionState pub_state;
    std::vector<Event> pub_events;
};

namespace {

HttpResponse json_response(int status, const Json& body) {
    HttpResponse r;
    r.status = status;
    r.body = body.dump();
    return r;
}

HttpResponse error_response(int status, const std::string& code, const std::string& message,
                            const std::vector<Violation>& violations = {}) {
    Json body{{"error", {{"code", code}, {"message", message}}}};
    if (!violations.empty()) body["error"]["violations"] = violations;
    return json_response(status, body);
}

std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : path) {
        if (c == '?') break;
        if (c == '/') {
            if (!cur.empty()) parts.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) parts.push_back(std::move(cur));
    return parts;
}

std::string header(const HttpRequest& req, const std::string& name) {
    auto it = req.headers.find(name);
    return it == req.headers.end() ? std::string{} : it->second;
}

bool truthy(const std::string& v) { return v == "1" || v == "true" || v == "yes"; }

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::optional<ArtifactKind> artifact_slot(const std::string& name) {
    if (name == "F_case") return ArtifactKind::CaseForm;
    if (name == "O_ther") return ArtifactKind::TherapeuticRecord;
    if (name == "P_rel") return ArtifactKind::RelapsePlan;
    return std::nullopt;
}

std::optional<Json> artifact_json(const ArtifactBundle& b, ArtifactKind k) {
    switch (k) {
        case ArtifactKind::CaseForm:
            if (b.case_form) return Json(*b.case_form);
            break;
        case ArtifactKind::TherapeuticRecord:
            if (b.therapeutic_record) return Json(*b.therapeutic_record);
            break;
        case ArtifactKind::RelapsePlan:
            if (b.relapse_plan) return Json(*b.relapse_plan);
            break;
    }
    return std::nullopt;
}

std::optional<std::size_t> parse_count(const std::string& s) {
    if (s.empty() || s.size() > 18) return std::nullopt;
    std::size_t v = 0;
    for (char c : s) {
        if (c < '0' || c > '9') return std::nullopt;
        v = v * 10 + static_cast<std::size_t>(c - '0');
    }
    return v;
}

std::string sse_frame(const std::string& event, const Json& data) {
    return "event: " + event + "\ndata: " + canonical(data) + "\n\n";
}

}  // namespace

void to_json(Json& j, const ServiceConfig& c) {
    j = Json{{"engine", c.engine}, {"max_page", c.max_page}};
    j["storage_root"] = c.storage_root ? Json(c.storage_root->string()) : Json(nullptr);
    j["id_seed"] = c.id_seed ? Json(*c.id_seed) : Json(nullptr);
}

void from_json(const Json& j, ServiceConfig& c) {
    if (!j.is_object()) throw ValidationError("service config must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        if (k != "engine" && k != "max_page" && k != "storage_root" && k != "id_seed")
            throw ValidationError("service config: unknown key '" + k + "'");
    }
    try {
        if (j.contains("engine")) c.engine = j.at("engine").get<EngineConfig>();
        if (j.contains("max_page")) c.max_page = j.at("max_page").get<std::size_t>();
        if (j.contains("storage_root")) {
            const auto& v = j.at("storage_root");
            c.storage_root = v.is_null() ? std::nullopt : std::optional<fs::path>(v.get<std::string>());
        }
        if (j.contains("id_seed")) {
            const auto& v = j.at("id_seed");
            c.id_seed = v.is_null() ? std::nullopt : std::optional<std::uint64_t>(v.get<std::uint64_t>());
        }
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("service config: ") + e.what());
    }
    if (c.max_page == 0) throw ValidationError("service config: max_page must be at least 1");
}

Json session_view(const SessionState& s, std::size_t event_count) {
    Json messages = Json::array();
    for (const auto& t : s.transcript) {
        Json m{{"turn_index", t.turn_index},
               {"speaker", t.speaker},
               {"content", t.content},
               {"stage", t.stage},
               {"kind", t.kind},
               {"timestamp", t.timestamp}};
        m["submodule"] = t.submodule ? Json(*t.submodule) : Json(nullptr);
        messages.push_back(std::move(m));
    }
    Json routing = nullptr;
    if (s.routing) {
        Json suit = Json::object();
        for (auto school : kAllSchools) suit[std::string(to_string(school))] = s.routing->score(school);
        routing = Json{{"selected", s.routing->selected}, {"suitability", suit}};
    }
    return Json{{"session_id", s.session_id},
                {"client_id", s.profile.client_id},
                {"stage", s.stage},
                {"status", s.status},
                {"routing", routing},
                {"messages", messages},
                {"artifacts",
                 {{"F_case", s.artifacts.case_form.has_value()},
                  {"O_ther", s.artifacts.therapeutic_record.has_value()},
                  {"P_rel", s.artifacts.relapse_plan.has_value()}}},
                {"event_count", event_count},
                {"condition", s.ablation.label()}};
}

SessionService::SessionService(std::shared_ptr<Gateway> gateway, const PromptLibrary& prompts, Clock& clock,
                               ServiceConfig config)
    : gateway_(std::move(gateway)), prompts_(prompts), clock_(clock), config_(std::move(config)) {
    if (!gateway_) {
        available_ = false;
        gateway_ = std::make_shared<Gateway>(std::make_shared<ScriptedBackend>());
    }
    if (config_.id_seed) {
        rng_.seed(*config_.id_seed);
    } else {
        std::random_device rd;
        rng_.seed((static_cast<std::uint64_t>(rd()) << 32) ^ rd());
    }
    if (config_.storage_root) {
        fs::create_directories(*config_.storage_root / "sessions");
        registry_ = std::make_unique<MemoryRegistry>(*config_.storage_root / "memory", config_.faults);
        recover_all();
    } else {
        registry_ = std::make_unique<MemoryRegistry>();
    }
}

SessionService::~SessionService() = default;

std::size_t SessionService::session_count() const {
    std::shared_lock lock(sessions_mutex_);
    return sessions_.size();
}

std::shared_ptr<SessionService::Session> SessionService::find(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

std::optional<SessionState> SessionService::state_of(const std::string& session_id) const {
    auto s = find(session_id);
    if (!s) return std::nullopt;
    std::lock_guard lock(s->pub_mutex);
    return s->pub_state;
}

std::vector<Event> SessionService::events_of(const std::string& session_id) const {
    auto s = find(session_id);
    if (!s) return {};
    std::lock_guard lock(s->pub_mutex);
    return s->pub_events;
}

fs::path SessionService::session_dir(const std::string& id) const {
    return *config_.storage_root / "sessions" / safe_file_stem(id);
}

std::string SessionService::fresh_hex(int bytes) {
    std::lock_guard lock(rng_mutex_);
    std::string out;
    while (static_cast<int>(out.size()) < bytes * 2) out += hex64(rng_());
    out.resize(static_cast<std::size_t>(bytes) * 2);
    return out;
}

std::unique_ptr<SessionService::Session> SessionService::open_session(const std::string& id,
                                                                      const std::string& client_id,
                                                                      const std::string& token) {
    auto s = std::make_unique<Session>();
    s->id = id;
    s->client_id = client_id;
    s->token = token;
    s->memory = registry_->store_for(client_id);
    if (config_.storage_root) {
        s->dir = session_dir(id);
        s->sink = std::make_unique<FileSink>(s->dir / "events.jsonl", config_.faults);
    }
    s->engine = std::make_unique<SessionEngine>(EngineDeps{*gateway_, prompts_, s->memory, clock_, s->sink.get()},
                                                config_.engine);
    return s;
}

void SessionService::publish(Session& s) {
    std::lock_guard lock(s.pub_mutex);
    s.pub_state = s.engine->state();
    s.pub_events = s.engine->events();
}

void SessionService::persist_snapshot(Session& s) {
    if (s.dir.empty()) return;
    Json snap{{"event_count", s.engine->events().size()}, {"state", s.engine->state()}};
    write_file_atomic(s.dir / "snapshot.json", snap.dump(2) + "\n", config_.faults);
}

RecoveryReport SessionService::rollback(Session& s, std::vector<Event> events, bool torn) {
    RecoveryReport rep;
    rep.session_id = s.id;
    rep.torn_tail = torn;
    const std::size_t prefix = committed_prefix(events);
    std::uint64_t hw = 0;
    bool terminal = false;
    if (prefix == 0) {
        // Nothing was ever committed: keep the opening event and close the session.
        if (events.empty() || events.front().type != EventType::SessionStarted)
            throw ValidationError("session " + s.id + ": log has no session_started");
        rep.discarded_events = events.size() - 1;
        events.resize(1);
        rep.aborted = true;
    } else {
        rep.discarded_events = events.size() - prefix;
        const Event& boundary = events[prefix - 1];
        terminal = boundary.type == EventType::SessionCompleted || boundary.type == EventType::SessionAborted;
        hw = boundary.payload.value("memory_high_water", std::uint64_t{0});
        events.resize(prefix);
    }
    if (!terminal) rep.discarded_units = s.memory->discard_after(s.id, hw);

    if (!s.dir.empty() && (rep.discarded_events > 0 || torn)) {
        std::vector<std::string> lines;
        lines.reserve(events.size());
        for (const auto& e : events) lines.push_back(canonical(Json(e)));
        rewrite_lines(s.dir / "events.jsonl", lines);
    }

    s.engine = std::make_unique<SessionEngine>(EngineDeps{*gateway_, prompts_, s.memory, clock_, s.sink.get()},
                                               config_.engine);
    s.engine->restore(std::move(events));

    if (rep.aborted) {
        s.engine->abort("interrupted before the first commit");
    } else if (s.engine->state().status == SessionStatus::Active) {
        auto problems = validate_session(s.engine->state());
        if (!problems.empty()) {
            s.engine->abort("recovered state is invalid: " + describe(problems));
            rep.aborted = true;
        } else if (rep.discarded_events > 0 || torn) {
            s.engine->mark_recovered(Json{{"discarded_events", rep.discarded_events},
                                          {"discarded_units", rep.discarded_units},
                                          {"torn_tail", torn},
                                          {"memory_high_water", s.memory->high_water()}});
        }
    }
    return rep;
}

void SessionService::recover_all() {
    const fs::path root = *config_.storage_root / "sessions";
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
        Json meta;
        try {
            meta = Json::parse(read_file(dir / "meta.json"));
        } catch (...) {
            continue;  // never acknowledged to a caller
        }
        const auto id = meta.value("session_id", std::string{});
        const auto client = meta.value("client_id", std::string{});
        const auto token = meta.value("token", std::string{});
        if (id.empty() || token.empty()) continue;
        EventLogRead log;
        try {
            log = load_event_log(dir / "events.jsonl");
        } catch (const Error&) {
            continue;
        }
        if (log.events.empty()) continue;
        auto s = open_session(id, client, token);
        RecoveryReport rep;
        try {
            rep = rollback(*s, std::move(log.events), log.torn_tail);
        } catch (const Error&) {
            continue;
        }
        // Timestamps keep increasing across the restart.
        if (auto* lc = dynamic_cast<LogicalClock*>(&clock_); lc && !s->engine->events().empty())
            lc->advance_past(s->engine->events().back().at);
        persist_snapshot(*s);
        publish(*s);
        if (rep.discarded_events > 0 || rep.torn_tail || rep.aborted) recovered_.push_back(rep);
        std::shared_ptr<Session> shared(std::move(s));
        sessions_.emplace(shared->id, shared);
    }
}

HttpResponse SessionService::handle(const HttpRequest& req) {
    const auto parts = split_path(req.path);
    try {
        if (parts.size() == 1 && parts[0] == "healthz") {
            if (req.method != "GET") return error_response(405, "method_not_allowed", "use GET");
            return json_response(200, Json{{"status", "ok"}, {"sessions", session_count()}});
        }
        if (parts.empty() || parts[0] != "sessions" || parts.size() > 4)
            return error_response(404, "not_found", "no such route");
        if (parts.size() == 1) {
            if (req.method != "POST") return error_response(405, "method_not_allowed", "use POST");
            return create(req);
        }

        // Routes below address one session.
        const bool known_shape = parts.size() == 2 || (parts.size() == 3 && parts[2] == "messages") ||
                                 (parts.size() == 3 && parts[2] == "events") ||
                                 (parts.size() == 4 && parts[2] == "artifacts");
        if (!known_shape) return error_response(404, "not_found", "no such route");
        const std::string want = parts.size() == 3 && parts[2] == "messages" ? "POST" : "GET";
        if (req.method != want) return error_response(405, "method_not_allowed", "use " + want);

        auto s = find(parts[1]);
        if (!s) return error_response(404, "not_found", "unknown session");
        if (header(req, "authorization") != "Bearer " + s->token)
            return error_response(401, "unauthorized", "missing or wrong bearer token");

        if (parts.size() == 2) return get_view(*s);
        if (parts[2] == "messages") return post_message(*s, req);
        if (parts[2] == "events") return get_events(*s, req);
        return get_artifact(*s, parts[3], req);
    } catch (const ValidationError& e) {
        return error_response(422, "invalid", e.what());
    } catch (const GatewayError& e) {
        return error_response(502, "gateway", e.what());
    } catch (const Error& e) {
        return error_response(500, "internal", e.what());
    } catch (const std::exception& e) {
        return error_response(500, "internal", e.what());
    }
}

HttpResponse SessionService::create(const HttpRequest& req) {
    Json body;
    try {
        body = Json::parse(req.body);
    } catch (const Json::exception& e) {
        return error_response(400, "bad_json", e.what());
    }
    if (!body.is_object()) return error_response(400, "bad_json", "body must be an object");
    const Json& pj = body.contains("profile") ? body.at("profile") : body;
    ClientProfile profile;
    try {
        profile = pj.get<ClientProfile>();
    } catch (const ValidationError& e) {
        return error_response(422, "invalid_profile", e.what());
    } catch (const Json::exception& e) {
        return error_response(422, "invalid_profile", e.what());
    }
    if (auto v = validate_profile(profile); !v.empty())
        return error_response(422, "invalid_profile", describe(v), v);
    if (!available_) return error_response(503, "unavailable", "no model backend configured");

    std::string id;
    do {
        id = "s_" + fresh_hex(8);
    } while (find(id));
    const std::string token = fresh_hex(16);

    auto s = open_session(id, profile.client_id, token);
    if (!s->dir.empty()) {
        // meta first: a log without it is never recovered.
        fs::create_directories(s->dir);
        Json meta{{"session_id", id}, {"client_id", profile.client_id}, {"token", token}};
        write_file_atomic(s->dir / "meta.json", meta.dump(2) + "\n", config_.faults);
    }
    try {
        s->engine->start(id, profile);
    } catch (const GatewayError& e) {
        if (!s->dir.empty()) fs::remove_all(s->dir);
        s->memory->discard_after(id, 0);
        return error_response(502, "gateway", e.what());
    }
    persist_snapshot(*s);
    publish(*s);
    Json view = session_view(s->pub_state, s->pub_events.size());
    {
        std::unique_lock lock(sessions_mutex_);
        sessions_.emplace(id, std::shared_ptr<Session>(std::move(s)));
    }
    HttpResponse r = json_response(201, Json{{"session_id", id}, {"token", token}, {"session", view}});
    r.headers["location"] = "/sessions/" + id;
    return r;
}

HttpResponse SessionService::post_message(Session& s, const HttpRequest& req) {
    Json body;
    try {
        body = Json::parse(req.body);
    } catch (const Json::exception& e) {
        return error_response(400, "bad_json", e.what());
    }
    if (!body.is_object() || !body.contains("content") || !body.at("content").is_string())
        return error_response(400, "bad_json", "expected {\"content\": string}");
    const std::string content = body.at("content").get<std::string>();
    if (content.find_first_not_of(" \t\r\n") == std::string::npos)
        return error_response(422, "blank_message", "message is blank");

    bool expected = false;
    if (!s.busy.compare_exchange_strong(expected, true))
        return error_response(409, "busy", "a message for this session is already in flight");
    struct Release {
        std::atomic<bool>& flag;
        ~Release() { flag.store(false); }
    } release{s.busy};
    std::lock_guard lock(s.write_mutex);

    if (s.engine->state().status != SessionStatus::Active)
        return error_response(409, "not_active",
                              "session is " + std::string(to_string(s.engine->state().status)));

    AdvanceResult res;
    try {
        res = s.engine->advance(content);
    } catch (const GatewayError& e) {
        // Back to the last commit; the client may simply resend.
        rollback(s, s.engine->events(), false);
        persist_snapshot(s);
        publish(s);
        return error_response(502, "gateway", e.what());
    }
    persist_snapshot(s);
    publish(s);

    const bool stream = truthy(req.query.count("stream") ? req.query.at("stream") : "") ||
                        body.value("stream", false) ||
                        header(req, "accept").find("text/event-stream") != std::string::npos;
    Json reply{{"reply", res.reply}, {"status", res.status}, {"stage", s.engine->state().stage}};
    if (stream) {
        HttpResponse r;
        r.content_type = "text/event-stream";
        for (const auto& e : res.events) r.body += sse_frame(std::string(to_string(e.type)), Json(e));
        r.body += sse_frame("reply", reply);
        r.body += sse_frame("done", Json::object());
        r.headers["cache-control"] = "no-cache";
        return r;
    }
    Json events = Json::array();
    for (const auto& e : res.events) events.push_back(e);
    reply["events"] = std::move(events);
    return json_response(200, reply);
}

HttpResponse SessionService::get_view(Session& s) {
    std::lock_guard lock(s.pub_mutex);
    return json_response(200, session_view(s.pub_state, s.pub_events.size()));
}

HttpResponse SessionService::get_artifact(Session& s, const std::string& kind, const HttpRequest& req) {
    auto slot = artifact_slot(kind);
    if (!slot) return error_response(404, "not_found", "artifact must be F_case, O_ther or P_rel");
    std::optional<Json> doc;
    {
        std::lock_guard lock(s.pub_mutex);
        doc = artifact_json(s.pub_state.artifacts, *slot);
    }
    if (!doc) return error_response(404, "not_found", kind + " has not been compiled");
    HttpResponse r;
    r.body = canonical(*doc);
    const std::string etag = "\"" + hex64(fnv1a(r.body)) + "\"";
    r.headers["etag"] = etag;
    if (header(req, "if-none-match") == etag) {
        r.status = 304;
        r.body.clear();
    }
    return r;
}

HttpResponse SessionService::get_events(Session& s, const HttpRequest& req) {
    std::size_t since = 0;
    std::size_t limit = config_.max_page;
    if (auto it = req.query.find("since"); it != req.query.end()) {
        auto v = parse_count(it->second);
        if (!v) return error_response(416, "bad_cursor", "since must be a non-negative integer");
        since = *v;
    }
    if (auto it = req.query.find("limit"); it != req.query.end()) {
        auto v = parse_count(it->second);
        if (!v || *v == 0) return error_response(416, "bad_cursor", "limit must be a positive integer");
        limit = std::min(*v, config_.max_page);
    }
    std::lock_guard lock(s.pub_mutex);
    const std::size_t total = s.pub_events.size();
    Json page = Json::array();
    std::size_t next = since;
    for (std::size_t i = since; i < total && page.size() < limit; ++i, ++next) page.push_back(s.pub_events[i]);
    return json_response(200, Json{{"events", page}, {"next", next}, {"total", total}});
}

}  // namespace counselflow
