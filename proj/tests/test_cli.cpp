#include <sstream>

#include "cli.hpp"
#include "counselflow/events.hpp"
#include "support.hpp"

using namespace cft;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run call(std::vector<std::string> args, const std::string& input = "") {
    std::istringstream in(input);
    std::ostringstream out, err;
    int code = counselflow::cli::run(args, in, out, err);
    return {code, out.str(), err.str()};
}

std::string sample() { return (data_dir() / "sample.cases.jsonl").string(); }

// A profile file holding one bench case.
fs::path case_file(const TempDir& dir, std::size_t i = 0) {
    auto p = dir / "case.json";
    write_text(p, Json(sample_cases()[i]).dump());
    return p;
}

bool contains(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

}  // namespace

TEST_CASE("help and usage errors") {
    auto h = call({"--help"});
    CHECK(h.code == 0);
    CHECK(contains(h.out, "bench"));
    CHECK(call({}).code == 2);
    CHECK(call({"frobnicate"}).code == 2);
    CHECK(call({"bench"}).code == 2);  // --cases is required
    auto bad = call({"--mock", "--ablation", "remove-stage=9", "bench", "--cases", sample()});
    CHECK(bad.code == 2);
}

TEST_CASE("a missing case file or config is a usage error") {
    CHECK(call({"--mock", "bench", "--cases", "/no/such.jsonl"}).code == 2);
    CHECK(call({"--config", "/no/such.json", "--mock", "bench", "--cases", sample()}).code == 2);
}

TEST_CASE("config files reject unknown keys") {
    TempDir dir("cli-config");
    write_text(dir / "c.json", R"({"backend":{"kind":"offline","flavour":"x"}})");
    auto r = call({"--config", (dir / "c.json").string(), "bench", "--cases", sample(), "--out", (dir / "o").string()});
    CHECK(r.code == 2);
    CHECK(contains(r.err, "flavour"));
}

TEST_CASE("without --mock or a configured endpoint nothing runs") {
    TempDir dir("cli-nobackend");
    auto r = call({"session", "--profile", case_file(dir).string()}, "hello\n");
    CHECK(r.code == 2);
    CHECK(contains(r.err, "usage error"));
}

TEST_CASE("bench over the sample with a mock backend") {
    TempDir dir("cli-bench");
    const auto out = dir / "out";
    auto r = call({"--mock", "--json", "bench", "--cases", sample(), "--out", out.string(), "--mock-judge", "all5"});
    CHECK(r.code == 0);
    auto doc = Json::parse(r.out);
    CHECK(doc["completed"] == 12);
    for (const char* f : {"report.json", "report.txt", "report.csv"}) CHECK(fs::exists(out / f));
    CHECK(fs::exists(out / "logs"));
    // Fixed judge: every HPEC item 5 except Safe, which is clamped to 1.
    CHECK(doc["aggregate"]["rubrics"]["HPEC"]["total_mean"] == 31.0);

    auto again = call({"--mock", "--json", "bench", "--cases", sample(), "--out", out.string(), "--mock-judge", "all5"});
    CHECK(again.out == r.out);
}

TEST_CASE("bench under an ablation labels its report") {
    TempDir dir("cli-ablation");
    auto r = call({"--mock", "--json", "--ablation", "remove-stage=2", "bench", "--cases", sample(), "--out",
                  (dir / "o").string(), "--no-score"});
    CHECK(r.code == 0);
    CHECK(Json::parse(r.out)["label"] == "w/o Stage 2");
}

TEST_CASE("bench exits 1 and names the case when a session fails") {
    TempDir dir("cli-bench-fail");
    write_text(dir / "scripts.json", Json{{sample_cases()[0].profile.client_id, {"only one line"}}}.dump());
    auto r = call({"--mock", "bench", "--cases", sample(), "--out", (dir / "o").string(), "--scripts",
                  (dir / "scripts.json").string(), "--no-score"});
    CHECK(r.code == 1);
    CHECK(contains(r.err, sample_cases()[0].profile.client_id));
}

TEST_CASE("session: scripted, piped and simulated clients") {
    TempDir dir("cli-session");
    const auto profile_path = case_file(dir).string();
    SUBCASE("stdin until EOF aborts cleanly") {
        auto r = call({"--mock", "session", "--profile", profile_path}, "hello\nI sleep badly\n");
        CHECK(r.code == 0);
        CHECK(contains(r.out, "counselor: "));
        CHECK(contains(r.out, "status aborted"));
    }
    SUBCASE("simulated client runs to completion and writes its log") {
        const auto out = dir / "run";
        auto r = call({"--mock", "--json", "session", "--profile", profile_path, "--simulate", "--out", out.string()});
        CHECK(r.code == 0);
        auto doc = Json::parse(r.out);
        CHECK(doc["status"] == "completed");
        auto log = load_event_log(out / "events.jsonl");
        CHECK(audit_log(log.events).empty());
        CHECK(fs::exists(out / "artifacts.json"));
    }
    SUBCASE("script file") {
        write_text(dir / "lines.txt", "first\nsecond\nthird\n");
        auto r = call({"--mock", "session", "--profile", profile_path, "--script", (dir / "lines.txt").string()});
        CHECK(r.code == 0);
        CHECK(contains(r.out, "client: second"));
    }
}

TEST_CASE("score, validate and their failure modes") {
    TempDir dir("cli-score");
    const auto run = dir / "run";
    REQUIRE(call({"--mock", "session", "--profile", case_file(dir).string(), "--simulate", "--out", run.string()}).code ==
            0);
    const auto log = (run / "events.jsonl").string();

    auto fit = call({"score", log, "--rubric", "fit", "--mock-judge", "all7"});
    CHECK(fit.code == 0);
    CHECK(contains(fit.out, "total 91/91"));

    auto bad = call({"score", log, "--rubric", "bdi", "--mock-judge", "all7"});
    CHECK(bad.code == 2);
    CHECK(contains(bad.err, "FIT, CTSR, MBCTAS, HPEC, auto"));

    const auto out = dir / "scores";
    auto both = call({"score", log, "--rubric", "auto", "--rubric", "hpec", "--mock-judge", "all0", "--out", out.string()});
    CHECK(both.code == 0);
    CHECK(fs::exists(out / "report.json"));
    CHECK(fs::exists(out / "report.hpec.csv"));

    // repeated flags before the positional must not swallow it
    auto flags_first = call({"score", "--rubric", "fit", "--rubric", "hpec", log, "--mock-judge", "all7"});
    CHECK(flags_first.code == 0);
    CHECK(contains(flags_first.out, "total 91/91"));
    auto mem_first = call({"validate", "--memory", (run / "no-journal").string(), run.string()});
    CHECK(mem_first.code == 2);
    CHECK(contains(mem_first.err, "memory path not found"));

    CHECK(call({"validate", run.string()}).code == 0);
    CHECK(call({"validate", sample()}).code == 0);

    // Damage the log: move a later stage entry before an earlier one.
    auto events = load_event_log(run / "events.jsonl").events;
    std::size_t first = 0, second = 0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (events[i].type != EventType::StageEntered) continue;
        if (!first) first = i;
        else if (!second) second = i;
    }
    REQUIRE(second > first);
    events[second].payload = events[first].payload;
    std::string broken;
    for (const auto& e : events) broken += canonical(Json(e)) + "\n";
    write_text(dir / "broken" / "events.jsonl", broken);
    auto v = call({"validate", (dir / "broken" / "events.jsonl").string()});
    CHECK(v.code == 1);
    CHECK(contains(v.out, "event " + std::to_string(second)));

    write_text(dir / "junk.json", R"({"hello":"world"})");
    CHECK(call({"validate", (dir / "junk.json").string()}).code == 1);
}

TEST_CASE("serve rejects a malformed listen address") {
    auto r = call({"--mock", "serve", "--listen", "no-port-here"});
    CHECK(r.code == 2);
}
