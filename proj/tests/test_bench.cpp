#include <chrono>
#include <map>
#include <thread>

#include "counselflow/bench.hpp"
#include "counselflow/errors.hpp"
#include "support.hpp"

using namespace cft;

namespace {

std::string case_line(const std::string& id, const std::string& school = "CBT") {
    Json j{{"client_id", id},
           {"age", 40},
           {"gender", "male"},
           {"occupation", "nurse"},
           {"problem_category", "emotion"},
           {"chief_complaint", "I feel low most days"},
           {"background", "Night shifts for three years"},
           {"ground_truth_school", school},
           {"narrative_seed", "Low since the shift change"}};
    return j.dump();
}

std::string error_of(const std::string& content) {
    try {
        parse_bench(content, "cases.jsonl");
    } catch (const ValidationError& e) {
        return e.what();
    }
    return "";
}

BatchResult batch(const std::vector<BenchCase>& cases, BatchConfig cfg = {}, std::uint64_t seed = 21,
                  std::map<std::string, std::vector<std::string>> scripts = {}) {
    auto agents = offline(seed);
    auto judge = offline(seed + 1);
    return run_batch(cases, cfg, {*agents, *judge, prompts(), rubrics(), std::move(scripts)});
}

const BatchResult& full_batch() {
    static const BatchResult r = batch(sample_cases());
    return r;
}

}  // namespace

TEST_CASE("case files: blank lines skipped, errors carry the line number") {
    auto cases = parse_bench(case_line("a") + "\n\n" + case_line("b", "MBCT") + "\n");
    REQUIRE(cases.size() == 2);
    CHECK(cases[1].profile.ground_truth_school == TherapySchool::MBCT);
    CHECK(parse_bench("").empty());

    CHECK(error_of(case_line("a") + "\n{oops\n").find("cases.jsonl:2: not a JSON document") == 0);
    CHECK(error_of(case_line("a") + "\n" + case_line("a")).find("cases.jsonl:2: duplicate client_id 'a' (first on line 1)") ==
          0);
    CHECK(error_of(case_line("a", "DBT")).find("cases.jsonl:1") == 0);

    Json missing = Json::parse(case_line("a"));
    missing.erase("ground_truth_school");
    CHECK(error_of(missing.dump()).find("ground_truth_school is required") != std::string::npos);
    Json extra = Json::parse(case_line("a"));
    extra["mood"] = "bad";
    CHECK(error_of(extra.dump()).find("unknown field 'mood'") != std::string::npos);
    Json blank_seed = Json::parse(case_line("a"));
    blank_seed["narrative_seed"] = " ";
    CHECK(error_of(blank_seed.dump()).find("narrative_seed") != std::string::npos);
    CHECK_THROWS_AS(load_bench("/no/such/file.jsonl"), PreconditionError);
}

TEST_CASE("bench cases round-trip through JSON") {
    for (const auto& c : sample_cases()) {
        Json j = c;
        CHECK(j.get<BenchCase>() == c);
    }
}

TEST_CASE("the sample file has twelve cases, four per school") {
    const auto& cases = sample_cases();
    CHECK(cases.size() == 12);
    std::map<TherapySchool, int> per;
    for (const auto& c : cases) ++per[*c.profile.ground_truth_school];
    for (auto s : kAllSchools) CHECK(per[s] == 4);
}

TEST_CASE("scripted clients replay their lines and then run dry") {
    SimulatedClient c(sample_cases()[0], {"one", "two"});
    CHECK(c.reply({}) == "one");
    CHECK(c.reply({}) == "two");
    CHECK_THROWS_AS(c.reply({}), ScriptExhausted);
    CHECK_THROWS_AS(c.persona_request({}), PreconditionError);
}

TEST_CASE("persona prompts carry the narrative but not the ground truth") {
    auto gw = offline();
    SimulatedClient c(sample_cases()[0], *gw, prompts());
    auto req = c.persona_request({});
    std::string all;
    for (const auto& m : req.messages) all += m.content;
    CHECK(all.find(sample_cases()[0].narrative_seed) != std::string::npos);
    CHECK(all.find("ground_truth") == std::string::npos);
    CHECK_FALSE(c.reply({}).empty());
}

TEST_CASE("an offline batch completes every case with three artifacts and two scores") {
    const auto& r = full_batch();
    REQUIRE(r.cases.size() == 12);
    CHECK(r.all_completed_and_scored(true));
    int artifacts = 0;
    for (const auto& c : r.cases) {
        CAPTURE(c.client_id);
        CHECK(c.status == SessionStatus::Completed);
        CHECK(c.violations.empty());
        artifacts += static_cast<int>(c.state.artifacts.count());
        REQUIRE(c.scores.size() == 2);
        CHECK(c.scores[0].rubric == case_rubric(c));
        CHECK(c.scores[1].rubric == RubricName::HPEC);
        CHECK(c.pair_count * 2 == c.message_count);
    }
    CHECK(artifacts == 36);
    REQUIRE(r.routing);
    CHECK(r.routing->total == 12);
    CHECK(r.summary["completed"] == 12);
    CHECK(r.label == "full");
}

TEST_CASE("strata partition the batch") {
    const auto& r = full_batch();
    int total = 0;
    for (const auto& [school, s] : r.summary["strata"].items()) total += s["count"].get<int>();
    CHECK(total == 12);
}

TEST_CASE("batches are deterministic and independent of parallelism") {
    std::vector<BenchCase> some(sample_cases().begin(), sample_cases().begin() + 6);
    BatchConfig serial;
    serial.parallelism = 1;
    BatchConfig wide;
    wide.parallelism = 4;
    auto a = batch(some, serial);
    auto b = batch(some, wide);
    CHECK(canonical(a.summary) == canonical(b.summary));
    for (std::size_t i = 0; i < a.cases.size(); ++i) CHECK(a.cases[i].events == b.cases[i].events);
}

TEST_CASE("one case's failure does not touch the others") {
    std::vector<BenchCase> some(sample_cases().begin(), sample_cases().begin() + 3);
    const std::string victim = some[1].profile.client_id;
    auto r = batch(some, {}, 21, {{victim, {"just one line"}}});
    for (const auto& c : r.cases) {
        CAPTURE(c.client_id);
        if (c.client_id == victim) {
            CHECK(c.status == SessionStatus::Aborted);
            CHECK(c.scores.empty());
        } else {
            CHECK(c.status == SessionStatus::Completed);
            CHECK(c.scores.size() == 2);
        }
    }
    CHECK_FALSE(r.all_completed_and_scored(true));
    CHECK(r.summary["aborted"] == 1);
}

TEST_CASE("ablation switches are visible in the batch") {
    std::vector<BenchCase> some(sample_cases().begin(), sample_cases().begin() + 3);
    SUBCASE("removing Insight routes nothing and scores against ground truth") {
        BatchConfig cfg;
        cfg.engine.ablation.remove_stage = StageId::Insight;
        auto r = batch(some, cfg);
        CHECK(r.label == "w/o Stage 2");
        CHECK_FALSE(r.routing);
        for (const auto& c : r.cases) {
            CHECK(c.status == SessionStatus::Completed);
            CHECK_FALSE(c.state.routing);
            CHECK(case_rubric(c) == rubric_for(c.truth));
            CHECK(c.state.artifacts.therapeutic_record->meta.provenance == Provenance::StageRemoved);
        }
    }
    SUBCASE("without the recorder, artifacts are plain summaries") {
        BatchConfig cfg;
        cfg.engine.ablation.disable_recorder = true;
        auto r = batch(some, cfg);
        CHECK(r.label == "w/o Recorder");
        for (const auto& c : r.cases) {
            CHECK(c.state.artifacts.case_form->meta.provenance == Provenance::PlainSummary);
            for (const auto& e : c.events) CHECK(e.type != EventType::MemoryAdded);
        }
    }
}

TEST_CASE("an output directory receives logs, artifacts, scores, memory and reports") {
    TempDir dir("bench");
    std::vector<BenchCase> some(sample_cases().begin(), sample_cases().begin() + 2);
    BatchConfig cfg;
    cfg.out_dir = dir.path();
    auto r = batch(some, cfg);
    for (const char* f : {"report.json", "report.txt", "report.csv", "report.hpec.csv"}) CHECK(fs::exists(dir / f));
    for (const auto& c : some) {
        const auto id = c.profile.client_id;
        CHECK(fs::exists(dir / ("logs/" + id + ".events.jsonl")));
        CHECK(fs::exists(dir / ("artifacts/" + id + ".json")));
        CHECK(fs::exists(dir / ("scores/" + id + ".json")));
        CHECK(fs::exists(dir / ("memory/" + id + ".jsonl")));
    }
    auto log = load_event_log(dir / ("logs/" + some[0].profile.client_id + ".events.jsonl"));
    CHECK(log.events == r.cases[0].events);
    CHECK(Json::parse(slurp(dir / "report.json")) == r.summary);

    // A rerun into the same directory reproduces the report byte for byte.
    const auto before = slurp(dir / "report.json");
    batch(some, cfg);
    CHECK(slurp(dir / "report.json") == before);
}

TEST_CASE("a per-case timeout aborts only that case") {
    std::vector<BenchCase> one(sample_cases().begin(), sample_cases().begin() + 1);
    BatchConfig cfg;
    cfg.case_timeout_ms = 1;
    auto agents = std::make_shared<ScriptedBackend>();
    agents->fallback(std::make_shared<OfflineBackend>(21));
    // Slow the client down so the budget runs out after the first message.
    agents->respond("client", [](const ChatRequest&) {
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        return std::string("still here");
    });
    Gateway gw(agents);
    auto judge = offline(22);
    auto r = run_batch(one, cfg, {gw, *judge, prompts(), rubrics(), {}});
    CHECK(r.cases[0].status == SessionStatus::Aborted);
    CHECK(r.cases[0].state.transcript.size() <= 2);
}
