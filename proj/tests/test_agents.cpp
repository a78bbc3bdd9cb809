#include "counselflow/agents.hpp"
#include "counselflow/errors.hpp"
#include "counselflow/recorder.hpp"
#include "support.hpp"

using namespace cft;

namespace {

// Brute force: highest score, earliest in CBT, MBCT, SFBT order.
TherapySchool oracle_school(const std::array<double, 3>& s) {
    const TherapySchool order[] = {TherapySchool::CBT, TherapySchool::MBCT, TherapySchool::SFBT};
    double best = -1;
    for (auto x : s) best = std::max(best, x);
    for (auto sc : order)
        if (s[static_cast<std::size_t>(sc)] == best) return sc;
    return TherapySchool::CBT;
}

CaseConceptualizationForm form() {
    CaseConceptualizationForm f;
    f.presenting_problems = {"exam anxiety"};
    return f;
}

std::array<double, 3> scores(double sfbt, double cbt, double mbct) { return {sfbt, cbt, mbct}; }

std::string route_reply(double sfbt, double cbt, double mbct, const std::string& selected = "") {
    Json j{{"scores", {{"SFBT", sfbt}, {"CBT", cbt}, {"MBCT", mbct}}}, {"rationale", "fits"}};
    if (!selected.empty()) j["selected"] = selected;
    return j.dump();
}

DialogueTurn turn(int i, Speaker who, StageId stage = StageId::Exploration) {
    DialogueTurn t;
    t.turn_index = i;
    t.speaker = who;
    t.stage = stage;
    t.content = "t" + std::to_string(i);
    if (who == Speaker::Agent) t.submodule = Submodule::MoodCheck;
    return t;
}

}  // namespace

TEST_CASE("select_school: argmax with ties to CBT, then MBCT, then SFBT") {
    CHECK(select_school(scores(0.9, 0.1, 0.1)) == TherapySchool::SFBT);
    CHECK(select_school(scores(0.5, 0.5, 0.5)) == TherapySchool::CBT);
    CHECK(select_school(scores(0.7, 0.2, 0.7)) == TherapySchool::MBCT);
    CHECK(select_school(scores(0.7, 0.7, 0.1)) == TherapySchool::CBT);
    CHECK(select_school(scores(0, 0, 0)) == TherapySchool::CBT);
}

TEST_CASE("select_school agrees with brute force and ignores positive rescaling") {
    std::mt19937_64 rng(7);
    // Coarse grid so ties happen often.
    std::uniform_int_distribution<int> grid(0, 4);
    std::uniform_real_distribution<double> scale(0.01, 100.0);
    for (int i = 0; i < 2000; ++i) {
        std::array<double, 3> s{grid(rng) / 4.0, grid(rng) / 4.0, grid(rng) / 4.0};
        CHECK(select_school(s) == oracle_school(s));
        const double c = scale(rng);
        std::array<double, 3> r{s[0] * c, s[1] * c, s[2] * c};
        CHECK(select_school(r) == select_school(s));
    }
}

TEST_CASE("route parses scores, keeps the local argmax and notes a disagreeing judge") {
    auto backend = std::make_shared<ScriptedBackend>(16);
    backend->script("route", {route_reply(0.9, 0.3, 0.2, "CBT")});
    Gateway gw(backend);
    auto d = route({gw, prompts()}, form(), "f1");
    CHECK(d.selected == TherapySchool::SFBT);
    CHECK(d.score(TherapySchool::SFBT) == 0.9);
    CHECK(d.case_form_id == "f1");
    CHECK(d.rationale.find("judge selected CBT") != std::string::npos);
    CHECK(backend->requests()[0].temperature == 0.0);
}

TEST_CASE("route re-asks once on out-of-range scores, then gives up") {
    auto backend = std::make_shared<ScriptedBackend>(16);
    backend->script("route", {route_reply(1.4, 0.3, 0.2), route_reply(0.1, 0.3, 0.2)});
    Gateway gw(backend);
    CHECK(route({gw, prompts()}, form(), "f").selected == TherapySchool::CBT);

    backend->script("route", {route_reply(1.4, 0.3, 0.2), route_reply(-1, 0.3, 0.2)});
    CHECK_THROWS_AS(route({gw, prompts()}, form(), "f"), ValidationError);
    CHECK_THROWS_AS(route({gw, prompts()}, CaseConceptualizationForm{}, "f"), PreconditionError);
}

TEST_CASE("run_reason parses the plan and keeps unknown names") {
    auto backend = std::make_shared<ScriptedBackend>(16);
    backend->script("reason", {R"({"goal":"g","submodule":"C7_Imaginary","alternatives":["GoalSet",3,"x"],"stage_complete":true})"});
    Gateway gw(backend);
    SessionState s;
    s.profile = profile();
    AgentDeps deps{gw, prompts()};
    auto req = reason_request(deps, s, "hello", {Submodule::MoodCheck});
    auto p = run_reason(deps, req);
    CHECK(p.goal == "g");
    CHECK_FALSE(p.submodule);
    CHECK(p.raw_submodule == "C7_Imaginary");
    CHECK(p.alternatives == std::vector<Submodule>{Submodule::GoalSet});
    CHECK(p.stage_complete);
    CHECK(req.messages.back().role == Role::Assistant);
}

TEST_CASE("policy requests check their preconditions") {
    Gateway gw(std::make_shared<ScriptedBackend>(16));
    AgentDeps deps{gw, prompts()};
    SessionState s;
    s.profile = profile();
    CHECK_THROWS_AS(exploration_request(deps, s, Submodule::C1_AutoThoughts, "g", "m"), PreconditionError);
    s.stage = StageId::Insight;
    CHECK_THROWS_AS(reason_request(deps, s, "m", {}), PreconditionError);
    RoutingDecision r;
    r.selected = TherapySchool::CBT;
    s.routing = r;
    CHECK_THROWS_AS(therapy_request(deps, s, TherapySchool::CBT, Submodule::C1_AutoThoughts, "g", "m"),
                    PreconditionError);  // no F_case yet
    s.artifacts.case_form = form();
    CHECK_THROWS_AS(therapy_request(deps, s, TherapySchool::CBT, Submodule::M1_PresentAwareness, "g", "m"),
                    PreconditionError);
    CHECK_NOTHROW(therapy_request(deps, s, TherapySchool::CBT, Submodule::C1_AutoThoughts, "g", "m"));
    CHECK_THROWS_AS(consolidation_request(deps, s, Submodule::RelapsePrevention, "g", "m"), PreconditionError);
}

TEST_CASE("offline backend replies are a pure function of seed and request") {
    SessionState s;
    s.profile = profile();
    s.transcript = {turn(0, Speaker::Client)};
    auto a = offline(11), b = offline(11), c = offline(12);
    auto ask = [&](Gateway& gw) {
        return exploration_turn({gw, prompts()}, s, Submodule::MoodCheck, "check mood", "I feel flat");
    };
    const auto first = ask(*a);
    CHECK_FALSE(first.empty());
    CHECK(ask(*a) == first);
    CHECK(ask(*b) == first);
    (void)ask(*c);  // a different seed may or may not differ; it must still answer
}

TEST_CASE("summarization windows end on agent turns") {
    std::vector<DialogueTurn> t = {turn(0, Speaker::Client), turn(1, Speaker::Agent), turn(2, Speaker::Client),
                                   turn(3, Speaker::Client), turn(4, Speaker::Agent), turn(5, Speaker::Client)};
    auto w = summarization_windows(t);
    REQUIRE(w.size() == 3);
    CHECK(w[0].size() == 2);
    CHECK(w[1].size() == 3);
    CHECK(w[2].size() == 1);
    std::size_t total = 0;
    for (const auto& x : w) total += x.size();
    CHECK(total == t.size());
    CHECK(summarization_windows({}).empty());
}

TEST_CASE("atomize stores one unit per window and re-asks on an unknown topic") {
    auto backend = std::make_shared<ScriptedBackend>(16);
    backend->script("atomize", {R"({"info":"a","topics":["weather"]})", R"({"info":"a","topics":["emotion"],"keywords":["k"]})",
                                R"({"info":"b","topics":["goal"]})"});
    Gateway gw(backend);
    MemoryStore store("client-1");
    Recorder rec(gw, prompts(), store);
    std::vector<DialogueTurn> t = {turn(0, Speaker::Client), turn(1, Speaker::Agent), turn(2, Speaker::Client),
                                   turn(3, Speaker::Agent)};
    auto units = rec.atomize(t, ArtifactKind::CaseForm, "s1", ProblemCategory::StressAdaptation, 5);
    REQUIRE(units.size() == 2);
    CHECK(units[0].topics == std::vector<Topic>{Topic::Emotion});
    CHECK(units[0].source_turns == std::vector<int>{0, 1});
    CHECK(units[1].source_turns == std::vector<int>{2, 3});
    CHECK(store.size() == 2);
    CHECK(backend->requests()[1].messages.back().content.find("weather") != std::string::npos);
}

TEST_CASE("therapeutic record rejects interventions from another school") {
    auto backend = std::make_shared<ScriptedBackend>(16);
    const std::string bad = R"({"interventions":[{"submodule":"M2_Acceptance","summary":"x"}]})";
    backend->script("therapeutic_record", {bad, bad});
    Gateway gw(backend);
    MemoryStore store("client-1");
    Recorder rec(gw, prompts(), store);
    MemoryUnit u;
    u.id = 1;
    u.structured_info = "note";
    CHECK_THROWS_AS(rec.compile_therapeutic_record({u}, TherapySchool::SFBT, {}, 1), ValidationError);

    backend->script("therapeutic_record",
                    {R"({"interventions":[{"submodule":"S2_ScalingQuestion","summary":"scaled"}],"evidence_of_change":["up"]})"});
    auto r = rec.compile_therapeutic_record({u}, TherapySchool::SFBT, {}, 1);
    CHECK(r.source_memory_ids == std::vector<std::uint64_t>{1});
    CHECK(validate_therapeutic_record(r).empty());
}

TEST_CASE("relapse plan compilation requires the earlier artifacts") {
    Gateway gw(std::make_shared<ScriptedBackend>(16));
    MemoryStore store("client-1");
    Recorder rec(gw, prompts(), store);
    MemoryUnit u;
    u.id = 1;
    CHECK_THROWS_AS(rec.compile_relapse_plan({u}, std::nullopt, TherapeuticRecord{}, 1), PreconditionError);
    CHECK_THROWS_AS(rec.compile_relapse_plan({u}, form(), std::nullopt, 1), PreconditionError);
    CHECK_THROWS_AS(rec.compile_relapse_plan({}, form(), TherapeuticRecord{}, 1), PreconditionError);
}
