#include "counselflow/errors.hpp"
#include "counselflow/events.hpp"
#include "support.hpp"

using namespace cft;

namespace {

const MockSession& completed() {
    static const MockSession m = mock_session(sample_cases()[0]);
    return m;
}

bool has_code(const std::vector<Violation>& v, const std::string& code) {
    for (const auto& x : v)
        if (x.code == code) return true;
    return false;
}

std::size_t index_of(const std::vector<Event>& ev, EventType t, std::size_t from = 0) {
    for (std::size_t i = from; i < ev.size(); ++i)
        if (ev[i].type == t) return i;
    return ev.size();
}

}  // namespace

TEST_CASE("event type names round-trip") {
    for (int i = 0; i <= static_cast<int>(EventType::Recovered); ++i) {
        auto t = static_cast<EventType>(i);
        CHECK(parse_event_type(to_string(t)) == t);
    }
    CHECK_FALSE(parse_event_type("teleported"));
}

TEST_CASE("a completed session's log replays to its final state and audits clean") {
    const auto& m = completed();
    REQUIRE(m.run.state.status == SessionStatus::Completed);
    CHECK(replay(m.run.events) == m.run.state);
    CHECK(audit_log(m.run.events).empty());
    CHECK(m.run.events.front().type == EventType::SessionStarted);
    CHECK(m.run.events.back().type == EventType::SessionCompleted);
}

TEST_CASE("every prefix replays without error and only ever grows the transcript") {
    const auto& ev = completed().run.events;
    SessionState s;
    std::size_t last = 0;
    for (const auto& e : ev) {
        apply(s, e);
        CHECK(s.transcript.size() >= last);
        last = s.transcript.size();
    }
}

TEST_CASE("events survive a JSON round trip") {
    for (const auto& e : completed().run.events) {
        Json j = e;
        CHECK(j.get<Event>() == e);
    }
}

TEST_CASE("audit flags each kind of log damage") {
    const auto base = completed().run.events;
    SUBCASE("sequence gap") {
        auto ev = base;
        ev.erase(ev.begin() + 3);
        CHECK(has_code(audit_log(ev), "log.seq"));
    }
    SUBCASE("time going backwards") {
        auto ev = base;
        ev[5].at = ev[4].at;
        CHECK(has_code(audit_log(ev), "log.time"));
    }
    SUBCASE("event after the terminal one") {
        auto ev = base;
        Event extra = ev[ev.size() - 2];
        extra.seq = ev.size();
        extra.at = ev.back().at + 1;
        ev.push_back(extra);
        CHECK(has_code(audit_log(ev), "log.after_terminal"));
    }
    SUBCASE("stage regression") {
        auto ev = base;
        const auto first = index_of(ev, EventType::StageEntered);
        const auto second = index_of(ev, EventType::StageEntered, first + 1);
        REQUIRE(second < ev.size());
        ev[second].payload = ev[first].payload;
        CHECK(has_code(audit_log(ev), "log.stage_regression"));
    }
    SUBCASE("unparseable payload") {
        auto ev = base;
        const auto t = index_of(ev, EventType::Turn);
        ev[t].payload = Json{{"turn", "garbage"}};
        CHECK(has_code(audit_log(ev), "log.payload"));
    }
    SUBCASE("log that does not open with session_started") {
        auto ev = base;
        ev.erase(ev.begin());
        for (std::size_t i = 0; i < ev.size(); ++i) ev[i].seq = i;
        CHECK(has_code(audit_log(ev), "log.first_event"));
    }
}

TEST_CASE("audit flags CBT submodules run out of order") {
    // Any CBT-routed session; swap a C1 turn's submodule for C3.
    for (const auto& bc : sample_cases()) {
        if (bc.profile.ground_truth_school != TherapySchool::CBT) continue;
        auto m = mock_session(bc);
        if (!m.run.state.routing || m.run.state.routing->selected != TherapySchool::CBT) continue;
        auto ev = m.run.events;
        for (auto& e : ev) {
            if (e.type != EventType::Turn) continue;
            auto t = e.payload["turn"].get<DialogueTurn>();
            if (t.submodule == Submodule::C1_AutoThoughts) {
                t.submodule = Submodule::C3_ReorganizeInterBelief;
                e.payload["turn"] = t;
                break;
            }
        }
        CHECK(has_code(audit_log(ev), "log.cbt_order"));
        return;
    }
    FAIL("no CBT-routed session in the sample");
}

TEST_CASE("committed_prefix ends at the last commit boundary") {
    const auto& ev = completed().run.events;
    CHECK(committed_prefix({}) == 0);
    CHECK(committed_prefix(ev) == ev.size());  // session_completed is a boundary
    std::size_t last_commit = 0;
    for (std::size_t i = 0; i + 1 < ev.size(); ++i)
        if (ev[i].type == EventType::IterationCommitted) last_commit = i + 1;
    std::vector<Event> cut(ev.begin(), ev.end() - 1);
    CHECK(committed_prefix(cut) == last_commit);
    std::vector<Event> first_only(ev.begin(), ev.begin() + 1);
    CHECK(committed_prefix(first_only) == 0);
}

TEST_CASE("file sink writes canonical lines and the loader skips a torn tail") {
    TempDir dir("events");
    const auto path = dir / "events.jsonl";
    const auto& ev = completed().run.events;
    {
        FileSink sink(path);
        for (std::size_t i = 0; i < 10; ++i) sink.append(ev[i]);
    }
    auto r = load_event_log(path);
    CHECK_FALSE(r.torn_tail);
    CHECK(r.events == std::vector<Event>(ev.begin(), ev.begin() + 10));
    write_text(path, slurp(path) + "{\"seq\":10,\"ty");
    r = load_event_log(path);
    CHECK(r.torn_tail);
    CHECK(r.events.size() == 10);

    write_text(path, slurp(path).substr(0, slurp(path).find('\n') + 1) + "not json\n");
    CHECK_THROWS_AS(load_event_log(path), ValidationError);
}
