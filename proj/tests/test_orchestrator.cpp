#include <algorithm>

#include "counselflow/errors.hpp"
#include "counselflow/orchestrator.hpp"
#include "support.hpp"

using namespace cft;

namespace {

// Offline model for everything, with the planning and routing replies
// overridable per test.
struct Rig {
    std::shared_ptr<ScriptedBackend> backend = std::make_shared<ScriptedBackend>();
    Gateway gw{backend};
    LogicalClock clock;
    MemorySink sink;
    std::shared_ptr<MemoryStore> memory = std::make_shared<MemoryStore>("c1");

    explicit Rig(std::uint64_t seed = 3) { backend->fallback(std::make_shared<OfflineBackend>(seed)); }

    EngineDeps deps() { return {gw, prompts(), memory, clock, &sink}; }

    void route_to(TherapySchool s) {
        backend->respond("route", [s](const ChatRequest&) {
            Json scores{{"SFBT", 0.2}, {"CBT", 0.2}, {"MBCT", 0.2}};
            scores[std::string(to_string(s))] = 0.9;
            return Json{{"scores", scores}, {"rationale", "test"}}.dump();
        });
    }
    // The planner proposes `pick(state context)` and never declares a stage done.
    void plan(std::function<std::string(const Json&)> pick, bool complete = false) {
        backend->respond("reason", [pick, complete](const ChatRequest& r) {
            auto ctx = extract_context(r);
            return Json{{"goal", "g"}, {"submodule", pick(ctx)}, {"stage_complete", complete}}.dump();
        });
    }
};

std::vector<Submodule> agent_submodules(const SessionState& s, StageId stage) {
    std::vector<Submodule> out;
    for (const auto& t : s.transcript)
        if (t.stage == stage && t.speaker == Speaker::Agent && t.kind == TurnKind::Standard && t.submodule)
            out.push_back(*t.submodule);
    return out;
}

std::size_t longest_run(const std::vector<Submodule>& v) {
    std::size_t best = 0, cur = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        cur = (i > 0 && v[i] == v[i - 1]) ? cur + 1 : 1;
        best = std::max(best, cur);
    }
    return best;
}

int count_events(const std::vector<Event>& ev, EventType t) {
    return static_cast<int>(std::count_if(ev.begin(), ev.end(), [t](const Event& e) { return e.type == t; }));
}

void drive(SessionEngine& e, int n, const std::string& msg = "I keep worrying about work") {
    for (int i = 0; i < n && e.state().status == SessionStatus::Active; ++i) e.advance(msg + " " + std::to_string(i));
}

}  // namespace

TEST_CASE("stage plan under each ablation") {
    AblationConfig a;
    CHECK(active_stages(a) == std::vector<StageId>{StageId::Exploration, StageId::Insight, StageId::Action});
    a.remove_stage = StageId::Insight;
    CHECK(active_stages(a) == std::vector<StageId>{StageId::Exploration, StageId::Action});
    CHECK(parse_stage_ref("2") == StageId::Insight);
    CHECK(parse_stage_ref("Action") == StageId::Action);
    CHECK_FALSE(parse_stage_ref("none"));
    CHECK_THROWS_AS(parse_stage_ref("4"), ValidationError);
}

TEST_CASE("engine config JSON keeps defaults and rejects bad values") {
    EngineConfig c = Json::parse(R"({"k":3,"ablation":{"remove_stage":2}})").get<EngineConfig>();
    CHECK(c.k == 3);
    CHECK(c.ablation.remove_stage == StageId::Insight);
    CHECK(c.max_pairs_per_stage == 30);
    CHECK_THROWS_AS(Json::parse(R"({"k":0})").get<EngineConfig>(), ValidationError);
    Json j = c;
    CHECK(j.get<EngineConfig>().k == 3);
    EngineConfig both;
    both.ablation.remove_stage = StageId::Action;
    both.ablation.prompt_stage = StageId::Action;
    Rig rig;
    CHECK_THROWS_AS(SessionEngine(rig.deps(), both), PreconditionError);
}

TEST_CASE("Exploration closes at exactly 15 pairs when the planner never stops") {
    Rig rig;
    rig.route_to(TherapySchool::SFBT);
    // Alternate so the consecutive cap never interferes.
    int n = 0;
    rig.plan([&n](const Json&) { return (n++ % 2) ? "MoodCheck" : "GoalSet"; });
    SessionEngine e(rig.deps(), {});
    e.start("s", profile());
    drive(e, 15);
    CHECK(e.state().exploration_turn_pairs == 15);
    CHECK(e.state().stage == StageId::Insight);
    CHECK(e.state().artifacts.case_form);
    CHECK(validate_session(e.state()).empty());
}

TEST_CASE("a submodule proposed forever runs at most 6 times in a row") {
    Rig rig;
    rig.route_to(TherapySchool::SFBT);
    rig.plan([](const Json&) { return "MoodCheck"; });
    SessionEngine e(rig.deps(), {});
    e.start("s", profile());
    drive(e, 15);
    auto subs = agent_submodules(e.state(), StageId::Exploration);
    CHECK(subs.size() == 15);
    CHECK(longest_run(subs) == 6);
    CHECK(subs[6] != Submodule::MoodCheck);
    CHECK(audit_log(e.events()).empty());
}

TEST_CASE("CBT submodules follow C1..C5 even when the planner skips ahead") {
    Rig rig;
    rig.route_to(TherapySchool::CBT);
    rig.plan([](const Json& ctx) {
        if (ctx.value("stage", "") != "Insight") return std::string("MoodCheck");
        // Always ask for the last legal CBT step plus one, i.e. one step too far.
        return std::string("C5_RebuildCoreBelief");
    });
    EngineConfig cfg;
    cfg.max_pairs_per_stage = 12;
    SessionEngine e(rig.deps(), cfg);
    e.start("s", profile());
    drive(e, 40);
    auto subs = agent_submodules(e.state(), StageId::Insight);
    REQUIRE_FALSE(subs.empty());
    int high = -1;
    for (auto m : subs) {
        int r = *cbt_rank(m);
        CHECK(r <= high + 1);
        high = std::max(high, r);
    }
    // The rejected proposal was re-asked, and the re-ask is visible in the log.
    bool reasked = false;
    for (const auto& ev : e.events())
        if (ev.type == EventType::Reason && ev.payload.value("reasked", false)) reasked = true;
    CHECK(reasked);
    CHECK(audit_log(e.events()).empty());
}

TEST_CASE("a proposal outside the stage set is re-asked once, then falls back") {
    Rig rig;
    rig.plan([](const Json&) { return "M2_Acceptance"; });
    SessionEngine e(rig.deps(), {});
    e.start("s", profile());
    auto step = e.reason("hello");
    REQUIRE(step.chosen_submodule);
    CHECK(*step.chosen_submodule == legal_submodules(e.state()).front());
    CHECK(step.notes.find("rejected") != std::string::npos);
    // Two planner calls: the proposal and its single re-ask.
    auto reqs = rig.backend->requests();
    CHECK(std::count_if(reqs.begin(), reqs.end(), [](const ChatRequest& r) { return r.task == "reason"; }) == 2);
}

TEST_CASE("refusal keywords get the referral text and do not count as a pair") {
    Rig rig;
    EngineConfig cfg;
    cfg.refusal_keywords = {"hurt myself"};
    SessionEngine e(rig.deps(), cfg);
    e.start("s", profile());
    auto r = e.advance("Sometimes I want to HURT MYSELF");
    CHECK(r.reply == prompts().text("referral"));
    CHECK(count_events(r.events, EventType::SafetyScreen) == 1);
    CHECK(e.state().transcript.back().kind == TurnKind::Referral);
    CHECK(e.state().exploration_turn_pairs == 0);
    CHECK(e.state().status == SessionStatus::Active);
}

TEST_CASE("advance preconditions and the message limit") {
    Rig rig;
    EngineConfig cfg;
    cfg.max_messages = 6;
    SessionEngine e(rig.deps(), cfg);
    CHECK_THROWS_AS(e.advance("hi"), PreconditionError);
    e.start("s", profile());
    CHECK_THROWS_AS(e.start("s", profile()), PreconditionError);
    CHECK_THROWS_AS(e.advance("  \n"), PreconditionError);
    drive(e, 10);
    CHECK(e.state().status == SessionStatus::Aborted);
    CHECK(e.state().transcript.size() <= 6);
    CHECK_THROWS_AS(e.advance("more"), PreconditionError);
}

TEST_CASE("an invalid profile is rejected before anything is logged") {
    Rig rig;
    SessionEngine e(rig.deps(), {});
    auto p = profile();
    p.age = -1;
    CHECK_THROWS_AS(e.start("s", p), ValidationError);
    CHECK(rig.sink.events.empty());
}

TEST_CASE("a gateway failure mid-turn leaves no half pair and aborts under drive_session") {
    Rig rig;
    int calls = 0;
    rig.backend->respond("explore", [&calls](const ChatRequest&) -> std::string {
        if (++calls == 3) throw BackendRejected("upstream said no");
        return "Tell me more.";
    });
    SessionEngine e(rig.deps(), {});
    e.start("s", profile());
    ScriptedChannel ch(std::vector<std::string>(10, "work is hard"));
    CHECK_THROWS_AS(drive_session(e, ch), GatewayError);
    CHECK(e.state().status == SessionStatus::Aborted);
    CHECK(e.state().transcript.size() % 2 == 0);
    CHECK(audit_log(e.events()).empty());
}

TEST_CASE("offline sessions over the sample complete and satisfy every invariant at every step") {
    for (const auto& bc : sample_cases()) {
        CAPTURE(bc.profile.client_id);
        auto gw = offline(5);
        LogicalClock clock;
        MemorySink sink;
        SessionEngine e({*gw, prompts(), nullptr, clock, &sink}, {});
        e.start("s-" + bc.profile.client_id, bc.profile);
        SimulatedClient client(bc, *gw, prompts());
        while (e.state().status == SessionStatus::Active) {
            e.advance(client.next(e.state()));
            REQUIRE(validate_session(e.state()).empty());
        }
        CHECK(e.state().status == SessionStatus::Completed);
        CHECK(e.state().artifacts.count() == 3);
        CHECK(audit_log(e.events()).empty());
        CHECK(sink.events == e.events());
        CHECK(e.state().transcript.back().kind == TurnKind::Closing);
    }
}

TEST_CASE("ablations change the run as described") {
    const auto& bc = sample_cases()[1];
    SUBCASE("removing a stage skips it and leaves a stub") {
        for (auto removed : kAllStages) {
            CAPTURE(to_string(removed));
            EngineConfig cfg;
            cfg.ablation.remove_stage = removed;
            auto m = mock_session(bc, 7, cfg);
            CHECK(m.run.state.status == SessionStatus::Completed);
            for (const auto& t : m.run.state.transcript) {
                if (t.kind != TurnKind::Closing) CHECK(t.stage != removed);
            }
            const auto& a = m.run.state.artifacts;
            CHECK(a.count() == 3);
            const ArtifactMeta& meta = removed == StageId::Exploration ? a.case_form->meta
                                       : removed == StageId::Insight   ? a.therapeutic_record->meta
                                                                       : a.relapse_plan->meta;
            CHECK(meta.provenance == Provenance::StageRemoved);
            CHECK(m.run.state.routing.has_value() == (removed != StageId::Insight));
            CHECK(validate_session(m.run.state).empty());
        }
    }
    SUBCASE("a prompt stage runs one generic turn pair") {
        EngineConfig cfg;
        cfg.ablation.prompt_stage = StageId::Insight;
        auto m = mock_session(bc, 7, cfg);
        CHECK(m.run.state.status == SessionStatus::Completed);
        int prompt_turns = 0;
        for (const auto& t : m.run.state.transcript) {
            if (t.stage != StageId::Insight) continue;
            if (t.speaker == Speaker::Agent) {
                CHECK(t.kind == TurnKind::StagePrompt);
                CHECK_FALSE(t.submodule);
                ++prompt_turns;
            }
        }
        CHECK(prompt_turns == 1);
        CHECK(m.run.state.artifacts.therapeutic_record->meta.provenance == Provenance::PromptStage);
    }
    SUBCASE("without the recorder nothing is stored and artifacts are plain summaries") {
        EngineConfig cfg;
        cfg.ablation.disable_recorder = true;
        auto m = mock_session(bc, 7, cfg);
        CHECK(m.run.state.status == SessionStatus::Completed);
        CHECK(m.memory->size() == 0);
        CHECK(count_events(m.run.events, EventType::MemoryAdded) == 0);
        CHECK(m.run.state.artifacts.case_form->meta.provenance == Provenance::PlainSummary);
        CHECK_FALSE(m.run.state.artifacts.case_form->meta.plain_summary.empty());
        CHECK(m.run.state.artifacts.relapse_plan->meta.provenance == Provenance::PlainSummary);
        CHECK(m.run.state.ablation.label() == "w/o Recorder");
    }
}

TEST_CASE("restoring from a committed prefix continues exactly like an uninterrupted run") {
    const auto& bc = sample_cases()[2];
    std::vector<std::string> lines;
    for (int i = 0; i < 60; ++i) lines.push_back("line " + std::to_string(i) + " about how things have been");

    auto full = [&] {
        auto gw = offline(9);
        LogicalClock clock;
        ScriptedChannel ch(lines);
        return run_session({*gw, prompts(), nullptr, clock, nullptr}, {}, "s", bc.profile, ch);
    }();

    for (std::size_t cut_at : {3u, 11u, 25u}) {
        CAPTURE(cut_at);
        auto gw = offline(9);
        LogicalClock clock;
        auto memory = std::make_shared<MemoryStore>(bc.profile.client_id);
        SessionEngine first({*gw, prompts(), memory, clock, nullptr}, {});
        first.start("s", bc.profile);
        for (std::size_t i = 0; i < cut_at && first.state().status == SessionStatus::Active; ++i)
            first.advance(lines[i]);
        const auto prefix = first.events();
        REQUIRE(committed_prefix(prefix) == prefix.size());

        LogicalClock resumed_clock;
        resumed_clock.advance_past(prefix.back().at);
        SessionEngine second({*gw, prompts(), memory, resumed_clock, nullptr}, {});
        second.restore(prefix);
        CHECK(second.state() == first.state());
        ScriptedChannel rest(std::vector<std::string>(lines.begin() + static_cast<std::ptrdiff_t>(cut_at), lines.end()));
        drive_session(second, rest);
        CHECK(second.state() == full.state);
        CHECK(second.events() == full.events);
    }
}
