#include <httplib.h>

#include <condition_variable>
#include <future>
#include <set>
#include <thread>

#include "counselflow/errors.hpp"
#include "counselflow/service.hpp"
#include "support.hpp"

using namespace cft;

namespace {

HttpRequest req(std::string method, std::string path, std::string body = "", std::string token = "") {
    HttpRequest r;
    r.method = std::move(method);
    auto q = path.find('?');
    if (q != std::string::npos) {
        std::string qs = path.substr(q + 1);
        path.resize(q);
        std::size_t start = 0;
        while (start <= qs.size()) {
            auto amp = qs.find('&', start);
            auto part = qs.substr(start, amp == std::string::npos ? std::string::npos : amp - start);
            auto eq = part.find('=');
            if (!part.empty()) r.query[part.substr(0, eq)] = eq == std::string::npos ? "" : part.substr(eq + 1);
            if (amp == std::string::npos) break;
            start = amp + 1;
        }
    }
    r.path = std::move(path);
    r.body = std::move(body);
    if (!token.empty()) r.headers["authorization"] = "Bearer " + token;
    return r;
}

std::string profile_body(const std::string& id = "c1") { return Json{{"profile", profile(id)}}.dump(); }

std::string msg(const std::string& text) { return Json{{"content", text}}.dump(); }

struct Handle {
    std::string id, token;
};

struct Svc {
    LogicalClock clock;
    std::shared_ptr<Gateway> gw;
    std::unique_ptr<SessionService> svc;

    explicit Svc(ServiceConfig cfg = {}, std::shared_ptr<Gateway> g = offline(13)) : gw(std::move(g)) {
        if (!cfg.id_seed) cfg.id_seed = 99;
        svc = std::make_unique<SessionService>(gw, prompts(), clock, cfg);
    }
    HttpResponse operator()(const HttpRequest& r) { return svc->handle(r); }

    Handle create(const std::string& client = "c1") {
        auto r = svc->handle(req("POST", "/sessions", profile_body(client)));
        REQUIRE(r.status == 201);
        auto j = r.json();
        return {j["session_id"], j["token"]};
    }
    HttpResponse say(const Handle& h, const std::string& text) {
        return svc->handle(req("POST", "/sessions/" + h.id + "/messages", msg(text), h.token));
    }
    HttpResponse get(const Handle& h, const std::string& sub = "") {
        return svc->handle(req("GET", "/sessions/" + h.id + sub, "", h.token));
    }
    // Talks until the session ends; returns the number of messages sent.
    int finish(const Handle& h, int limit = 200) {
        for (int i = 0; i < limit; ++i) {
            auto r = say(h, "message " + std::to_string(i) + " about my week");
            if (r.status != 200) return -1;
            if (r.json()["status"] != "active") return i + 1;
        }
        return -1;
    }
};

}  // namespace

TEST_CASE("service config JSON round-trips and rejects unknown keys") {
    ServiceConfig c;
    c.max_page = 50;
    c.storage_root = "/tmp/x";
    Json j = c;
    auto back = j.get<ServiceConfig>();
    CHECK(back.max_page == 50);
    CHECK(back.storage_root == c.storage_root);
    j["colour"] = "blue";
    CHECK_THROWS_AS(j.get<ServiceConfig>(), ValidationError);
    j.erase("colour");
    j["max_page"] = 0;
    CHECK_THROWS_AS(j.get<ServiceConfig>(), ValidationError);
}

TEST_CASE("health, routing errors and method checks") {
    Svc s;
    CHECK(s(req("GET", "/healthz")).status == 200);
    CHECK(s(req("POST", "/healthz")).status == 405);
    CHECK(s(req("GET", "/nope")).status == 404);
    CHECK(s(req("GET", "/sessions")).status == 405);
    CHECK(s(req("GET", "/sessions/s_0/whatever")).status == 404);
    CHECK(s(req("GET", "/sessions/s_unknown")).status == 404);
    auto h = s.create();
    CHECK(s(req("GET", "/sessions/" + h.id + "/messages", "", h.token)).status == 405);
    CHECK(s(req("DELETE", "/sessions/" + h.id, "", h.token)).status == 405);
    auto err = s(req("GET", "/nope")).json();
    CHECK(err["error"]["code"] == "not_found");
}

TEST_CASE("creating a session") {
    Svc s;
    SUBCASE("happy path") {
        auto r = s(req("POST", "/sessions", profile_body()));
        CHECK(r.status == 201);
        auto j = r.json();
        CHECK(j["session_id"].get<std::string>().rfind("s_", 0) == 0);
        CHECK(j["session_id"].get<std::string>().size() == 18);
        CHECK(j["token"].get<std::string>().size() == 32);
        CHECK(r.headers["location"] == "/sessions/" + j["session_id"].get<std::string>());
        CHECK(j["session"]["status"] == "active");
        CHECK(j["session"]["stage"] == "Exploration");
        CHECK(j["session"]["condition"] == "full");
        CHECK(j["session"]["routing"].is_null());
    }
    SUBCASE("bare profile bodies are accepted too") {
        CHECK(s(req("POST", "/sessions", Json(profile()).dump())).status == 201);
    }
    SUBCASE("bad JSON is 400, an invalid profile 422 with violations") {
        CHECK(s(req("POST", "/sessions", "{nope")).status == 400);
        CHECK(s(req("POST", "/sessions", "[1]")).status == 400);
        auto p = profile();
        p.age = 0;
        auto r = s(req("POST", "/sessions", Json{{"profile", p}}.dump()));
        CHECK(r.status == 422);
        CHECK(r.json()["error"]["violations"][0]["code"] == "profile.age");
        auto bad = Json(profile());
        bad["problem_category"] = "gardening";
        CHECK(s(req("POST", "/sessions", bad.dump())).status == 422);
    }
    SUBCASE("no backend means 503") {
        LogicalClock clock;
        SessionService none(nullptr, prompts(), clock, {});
        CHECK(none.handle(req("POST", "/sessions", profile_body())).status == 503);
        CHECK(none.handle(req("GET", "/healthz")).status == 200);
    }
}

TEST_CASE("a full conversation through the API") {
    Svc s;
    auto h = s.create();
    const int sent = s.finish(h);
    CHECK(sent > 0);
    auto view = s.get(h).json();
    CHECK(view["status"] == "completed");
    CHECK(view["artifacts"]["F_case"] == true);
    CHECK(view["artifacts"]["P_rel"] == true);
    CHECK_FALSE(view["routing"].is_null());
    CHECK(view["messages"].size() == static_cast<std::size_t>(2 * sent));
    CHECK(audit_log(s.svc->events_of(h.id)).empty());

    auto after = s.say(h, "one more thing");
    CHECK(after.status == 409);
    CHECK(after.json()["error"]["code"] == "not_active");
    CHECK(s.say(h, "   ").status == 422);
    CHECK(s(req("POST", "/sessions/" + h.id + "/messages", "{\"text\":1}", h.token)).status == 400);
}

TEST_CASE("bearer tokens gate every session route") {
    Svc s;
    auto h = s.create();
    for (const std::string sub : {"", "/events", "/artifacts/F_case"}) {
        CHECK(s(req("GET", "/sessions/" + h.id + sub)).status == 401);
        CHECK(s(req("GET", "/sessions/" + h.id + sub, "", "wrong")).status == 401);
    }
    CHECK(s(req("POST", "/sessions/" + h.id + "/messages", msg("hi"))).status == 401);
}

TEST_CASE("sessions are isolated from each other") {
    Svc s;
    std::vector<Handle> hs;
    for (int i = 0; i < 5; ++i) hs.push_back(s.create("client-" + std::to_string(i)));
    std::mt19937_64 rng(5);
    for (int round = 0; round < 40; ++round) {
        const auto& a = hs[rng() % hs.size()];
        const auto& b = hs[rng() % hs.size()];
        s.say(a, "round " + std::to_string(round));
        auto cross = s(req("GET", "/sessions/" + a.id, "", b.token));
        if (a.id == b.id) {
            CHECK(cross.status == 200);
        } else {
            CHECK(cross.status == 401);
            CHECK(s(req("POST", "/sessions/" + a.id + "/messages", msg("x"), b.token)).status == 401);
        }
    }
    for (std::size_t i = 0; i < hs.size(); ++i) {
        auto view = s.get(hs[i]).body;
        for (std::size_t j = 0; j < hs.size(); ++j) {
            if (i == j) continue;
            CHECK(view.find(hs[j].id) == std::string::npos);
            CHECK(view.find("client-" + std::to_string(j)) == std::string::npos);
        }
    }
    std::set<std::string> tokens;
    for (const auto& h : hs) tokens.insert(h.token);
    CHECK(tokens.size() == hs.size());
}

TEST_CASE("reads are idempotent and artifacts carry a stable ETag") {
    Svc s;
    auto h = s.create();
    CHECK(s.get(h, "/artifacts/F_case").status == 404);
    CHECK(s.get(h, "/artifacts/Q").status == 404);
    s.finish(h);
    auto a = s.get(h, "/artifacts/O_ther");
    auto b = s.get(h, "/artifacts/O_ther");
    REQUIRE(a.status == 200);
    CHECK(a.body == b.body);
    CHECK(a.headers["etag"] == b.headers["etag"]);
    CHECK(a.headers["etag"].front() == '"');
    CHECK(s.get(h).body == s.get(h).body);

    auto cond = req("GET", "/sessions/" + h.id + "/artifacts/O_ther", "", h.token);
    cond.headers["if-none-match"] = a.headers["etag"];
    auto r = s(cond);
    CHECK(r.status == 304);
    CHECK(r.body.empty());
    cond.headers["if-none-match"] = "\"stale\"";
    CHECK(s(cond).status == 200);
    CHECK(s.get(h, "/artifacts/F_case").headers["etag"] != a.headers["etag"]);
}

TEST_CASE("event pages") {
    ServiceConfig cfg;
    cfg.max_page = 7;
    Svc s(cfg);
    auto h = s.create();
    for (int i = 0; i < 4; ++i) s.say(h, "hello " + std::to_string(i));
    const auto all = s.svc->events_of(h.id);
    std::vector<Json> collected;
    std::size_t since = 0;
    while (true) {
        auto page = s.get(h, "/events?since=" + std::to_string(since) + "&limit=100").json();
        CHECK(page["total"] == all.size());
        CHECK(page["events"].size() <= 7);
        if (page["events"].empty()) {
            CHECK(page["next"] == since);
            break;
        }
        for (const auto& e : page["events"]) collected.push_back(e);
        since = page["next"];
    }
    REQUIRE(collected.size() == all.size());
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(collected[i] == Json(all[i]));
    CHECK(s.get(h, "/events?since=-1").status == 416);
    CHECK(s.get(h, "/events?limit=abc").status == 416);
    CHECK(s.get(h, "/events?since=100000").json()["events"].empty());
}

TEST_CASE("streaming replies are server-sent event frames") {
    Svc s;
    auto h = s.create();
    auto r = s(req("POST", "/sessions/" + h.id + "/messages?stream=1", msg("hi there"), h.token));
    CHECK(r.status == 200);
    CHECK(r.content_type == "text/event-stream");
    CHECK(r.body.find("event: turn\n") != std::string::npos);
    CHECK(r.body.find("event: reply\n") != std::string::npos);
    CHECK(r.body.rfind("event: done\n") != std::string::npos);
    CHECK(r.body.substr(r.body.size() - 2) == "\n\n");
    auto viaheader = req("POST", "/sessions/" + h.id + "/messages", msg("again"), h.token);
    viaheader.headers["accept"] = "text/event-stream";
    CHECK(s(viaheader).content_type == "text/event-stream");
}

TEST_CASE("a second message while one is in flight is refused with 409") {
    auto backend = std::make_shared<ScriptedBackend>();
    backend->fallback(std::make_shared<OfflineBackend>(13));
    std::mutex m;
    std::condition_variable cv;
    bool entered = false, release = false;
    backend->respond("explore", [&](const ChatRequest&) {
        std::unique_lock lock(m);
        entered = true;
        cv.notify_all();
        cv.wait(lock, [&] { return release; });
        return std::string("I hear you.");
    });
    Svc s({}, std::make_shared<Gateway>(backend));
    auto h = s.create();
    auto first = std::async(std::launch::async, [&] { return s.say(h, "first"); });
    {
        std::unique_lock lock(m);
        cv.wait(lock, [&] { return entered; });
    }
    auto second = s.say(h, "second");
    CHECK(second.status == 409);
    CHECK(second.json()["error"]["code"] == "busy");
    // Reads are not blocked by the writer.
    CHECK(s.get(h).status == 200);
    {
        std::lock_guard lock(m);
        release = true;
    }
    cv.notify_all();
    CHECK(first.get().status == 200);
    CHECK(s.say(h, "third").status == 200);
}

TEST_CASE("a gateway failure answers 502 and rolls back to the last commit") {
    auto backend = std::make_shared<ScriptedBackend>();
    backend->fallback(std::make_shared<OfflineBackend>(13));
    int calls = 0;
    backend->respond("explore", [&](const ChatRequest&) -> std::string {
        if (++calls == 2) throw BackendRejected("overloaded");
        return "Go on.";
    });
    Svc s({}, std::make_shared<Gateway>(backend));
    auto h = s.create();
    REQUIRE(s.say(h, "one").status == 200);
    const auto before = s.svc->events_of(h.id);
    auto r = s.say(h, "two");
    CHECK(r.status == 502);
    CHECK(r.json()["error"]["code"] == "gateway");
    // The committed prefix is kept; the only addition is the recovery marker.
    auto after = s.svc->events_of(h.id);
    REQUIRE(after.size() == before.size() + 1);
    CHECK(std::vector<Event>(after.begin(), after.end() - 1) == before);
    CHECK(after.back().type == EventType::Recovered);
    CHECK(after.back().payload["discarded_events"].get<int>() > 0);
    CHECK(s.get(h).json()["status"] == "active");
    CHECK(s.say(h, "two again").status == 200);
    CHECK(audit_log(s.svc->events_of(h.id)).empty());
}

TEST_CASE("sessions survive a restart of the service") {
    TempDir dir("svc-restart");
    ServiceConfig cfg;
    cfg.storage_root = dir.path();
    Handle h;
    std::string view;
    {
        Svc s(cfg);
        h = s.create();
        for (int i = 0; i < 5; ++i) s.say(h, "before restart " + std::to_string(i));
        view = s.get(h).body;
    }
    CHECK(fs::exists(dir / "sessions"));
    Svc s(cfg);
    CHECK(s.svc->session_count() == 1);
    CHECK(s.svc->recovered().empty());
    CHECK(s.get(h).body == view);
    CHECK(s.finish(h) > 0);
    CHECK(s.get(h).json()["status"] == "completed");
}

TEST_CASE("a crash at any write recovers to a valid, resumable session") {
    // Count the writes of one full session first.
    long total = 0;
    {
        TempDir dir("svc-count");
        FaultInjector counter(-1, false);
        ServiceConfig cfg;
        cfg.storage_root = dir.path();
        cfg.faults = &counter;
        Svc s(cfg);
        s.finish(s.create());
        total = counter.writes();
    }
    REQUIRE(total > 20);

    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 24; ++trial) {
        const long at = static_cast<long>(rng() % static_cast<unsigned long>(total));
        const bool torn = trial % 2 == 1;
        CAPTURE(at);
        CAPTURE(torn);
        TempDir dir("svc-crash");
        ServiceConfig cfg;
        cfg.storage_root = dir.path();
        FaultInjector fi(at, torn);
        cfg.faults = &fi;
        Handle h;
        bool crashed = false;
        {
            Svc s(cfg);
            try {
                auto r = s(req("POST", "/sessions", profile_body()));
                if (r.status == 201) {
                    h = {r.json()["session_id"], r.json()["token"]};
                    s.finish(h);
                }
            } catch (const SimulatedCrash&) {
                crashed = true;
            }
        }
        REQUIRE(crashed);
        ServiceConfig clean = cfg;
        clean.faults = nullptr;
        Svc s(clean);
        if (h.id.empty()) {
            // Crashed before the client learned its id; whatever survived must still be valid.
            CHECK(s.svc->session_count() <= 1);
            continue;
        }
        auto state = s.svc->state_of(h.id);
        REQUIRE(state);
        CHECK(validate_session(*state).empty());
        CHECK(audit_log(s.svc->events_of(h.id)).empty());
        if (state->status == SessionStatus::Active) {
            CHECK(s.finish(h) > 0);
            CHECK(s.get(h).json()["status"] == "completed");
            CHECK(audit_log(s.svc->events_of(h.id)).empty());
        }
    }
}

TEST_CASE("the HTTP frontend serves the API over a Unix socket") {
    TempDir dir("svc-http");
    Svc s;
    HttpFrontend front(*s.svc);
    const auto sock = dir / "api.sock";
    std::thread server([&] { front.listen_unix(sock); });
    front.wait_until_ready();

    httplib::Client cli(sock.string());
    cli.set_address_family(AF_UNIX);
    auto health = cli.Get("/healthz");
    REQUIRE(health);
    CHECK(health->status == 200);

    auto created = cli.Post("/sessions", profile_body(), "application/json");
    REQUIRE(created);
    CHECK(created->status == 201);
    auto j = Json::parse(created->body);
    const std::string id = j["session_id"], token = j["token"];
    httplib::Headers auth{{"Authorization", "Bearer " + token}};

    auto reply = cli.Post("/sessions/" + id + "/messages", auth, msg("hello"), "application/json");
    REQUIRE(reply);
    CHECK(reply->status == 200);
    CHECK_FALSE(Json::parse(reply->body)["reply"].get<std::string>().empty());

    auto page = cli.Get("/sessions/" + id + "/events?since=0&limit=2", auth);
    REQUIRE(page);
    CHECK(Json::parse(page->body)["events"].size() == 2);
    auto unauth = cli.Get("/sessions/" + id);
    REQUIRE(unauth);
    CHECK(unauth->status == 401);

    front.stop();
    server.join();
}

TEST_CASE("the OpenAPI document lists every route and error code the service uses") {
    const auto api = slurp(fs::path(COUNSELFLOW_SOURCE_DIR) / "docs" / "api.yaml");
    for (const char* path : {"/healthz:", "/sessions:", "/sessions/{id}:", "/sessions/{id}/messages:",
                             "/sessions/{id}/events:", "/sessions/{id}/artifacts/{kind}:"})
        CHECK_MESSAGE(api.find(path) != std::string::npos, path);
    for (const char* code : {"not_found", "method_not_allowed", "unauthorized", "bad_json", "invalid_profile",
                             "blank_message", "busy", "not_active", "bad_cursor", "gateway", "unavailable"})
        CHECK_MESSAGE(api.find(code) != std::string::npos, code);
    for (const char* status : {"\"201\"", "\"304\"", "\"401\"", "\"409\"", "\"416\"", "\"422\"", "\"502\"", "\"503\""})
        CHECK_MESSAGE(api.find(status) != std::string::npos, status);
}
