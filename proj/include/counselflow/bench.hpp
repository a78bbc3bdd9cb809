#pragma once

// Bench cases, simulated clients and batch runs over a case file.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "counselflow/evaluator.hpp"
#include "counselflow/orchestrator.hpp"

namespace counselflow {

struct BenchCase {
    ClientProfile profile;  // ground_truth_school is required here
    std::string narrative_seed;
    std::map<std::string, std::string> tags;

    bool operator==(const BenchCase&) const = default;
};

void to_json(Json& j, const BenchCase& c);
void from_json(const Json& j, BenchCase& c);

// One case document per line; blank lines are skipped. Errors name the
// source and line; duplicate client_ids are rejected.
std::vector<BenchCase> parse_bench(const std::string& content, const std::string& source = "<input>");
std::vector<BenchCase> load_bench(const std::filesystem::path& path);

struct ClientStyle {
    double verbosity = 0.5;
    double disclosure = 0.5;
};

class SimulatedClient : public ClientChannel {
public:
    // Persona mode: replies come from the "client" task on `gateway`.
    SimulatedClient(BenchCase persona, Gateway& gateway, const PromptLibrary& prompts, ClientStyle style = {});
    // Scripted mode: replies are consumed in order and never improvised.
    SimulatedClient(BenchCase persona, std::vector<std::string> script);

    // Throws ScriptExhausted when a script runs out.
    std::string reply(const std::vector<DialogueTurn>& history);
    std::string next(const SessionState& state) override { return reply(state.transcript); }

    ChatRequest persona_request(const std::vector<DialogueTurn>& history) const;
    const BenchCase& persona() const { return persona_; }

private:
    BenchCase persona_;
    Gateway* gateway_ = nullptr;
    const PromptLibrary* prompts_ = nullptr;
    ClientStyle style_;
    std::optional<std::vector<std::string>> script_;
    std::size_t pos_ = 0;
};

struct BatchConfig {
    EngineConfig engine;
    // Cases run concurrently; 0 uses the OpenMP default.
    int parallelism = 1;
    bool score = true;
    ClientStyle style;
    // Wall-clock budget per case; an overrun aborts that session only. 0 = none.
    long case_timeout_ms = 0;
    // When set, logs/, artifacts/, scores/, memory/ and report.* go here.
    std::optional<std::filesystem::path> out_dir;
};

struct BatchDeps {
    Gateway& agents;
    Gateway& judge;
    const PromptLibrary& prompts;
    const RubricLibrary& rubrics;
    // Scripted client lines per client_id; cases without an entry use persona mode.
    std::map<std::string, std::vector<std::string>> scripts;
};

struct CaseResult {
    std::string client_id;
    std::string session_id;
    TherapySchool truth = TherapySchool::CBT;
    SessionStatus status = SessionStatus::Aborted;
    std::string error;
    SessionState state;
    std::vector<Event> events;
    std::vector<RubricScore> scores;
    std::vector<Violation> violations;
    int message_count = 0;
    int pair_count = 0;
};

struct BatchResult {
    std::string label;
    std::vector<CaseResult> cases;  // sorted by client_id
    std::optional<RoutingMetrics> routing;
    Report report;
    Json summary;

    bool all_completed_and_scored(bool scored) const;
};

// Rubric used for a case: the routed school's scale, else the ground truth's
// (when Insight was removed and nothing was routed).
RubricName case_rubric(const CaseResult& r);

BatchResult run_batch(const std::vector<BenchCase>& cases, const BatchConfig& config, BatchDeps deps);

}  // namespace counselflow
