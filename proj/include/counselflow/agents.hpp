#pragma once

// Dialogue-facing policies: planning (Reason), exploration, routing,
// school-conditioned therapy and consolidation. Each policy is a prompt built
// from assets plus a parse of the reply; the request builders are exposed so
// prompt assembly can be pinned by golden files.

#include <optional>
#include <string>
#include <vector>

#include "counselflow/domain.hpp"
#include "counselflow/gateway.hpp"
#include "counselflow/memory.hpp"
#include "counselflow/prompts.hpp"

namespace counselflow {

struct AgentDeps {
    Gateway& gateway;
    const PromptLibrary& prompts;
    // Per-client store; null when structured recording is off.
    const MemoryStore* memory = nullptr;
    double temperature = kAgentTemperature;
    std::size_t k = kDefaultRetrievalK;
};

inline constexpr std::size_t kRecentTurns = 8;

// Argmax over suitability with ties resolved CBT, then MBCT, then SFBT.
TherapySchool select_school(const std::array<double, 3>& suitability);

ChatRequest route_request(const PromptLibrary& prompts, const CaseConceptualizationForm& form);
// One temperature-0 judge call. Scores outside [0,1] get one repair re-ask,
// then ValidationError. The local argmax wins over the judge's own pick.
RoutingDecision route(AgentDeps deps, const CaseConceptualizationForm& form, const std::string& case_form_id);

struct ReasonProposal {
    std::string goal;
    // Empty when the reply named no known submodule; raw_submodule keeps it.
    std::optional<Submodule> submodule;
    std::string raw_submodule;
    std::vector<Submodule> alternatives;
    bool stage_complete = false;
};

ChatRequest reason_request(AgentDeps deps, const SessionState& state, const std::string& client_msg,
                           const std::vector<Submodule>& available);
// Runs the request and parses the plan. The reply text is appended to
// req.messages as an assistant message so a re-ask can follow.
ReasonProposal run_reason(AgentDeps deps, ChatRequest& req);

ChatRequest exploration_request(AgentDeps deps, const SessionState& state, Submodule submodule,
                                const std::string& goal, const std::string& client_msg);
ChatRequest therapy_request(AgentDeps deps, const SessionState& state, TherapySchool school,
                            Submodule submodule, const std::string& goal, const std::string& client_msg);
ChatRequest consolidation_request(AgentDeps deps, const SessionState& state, Submodule submodule,
                                  const std::string& goal, const std::string& client_msg);
ChatRequest prompt_stage_request(AgentDeps deps, const SessionState& state, StageId stage,
                                 const std::string& client_msg);

std::string exploration_turn(AgentDeps deps, const SessionState& state, Submodule submodule,
                             const std::string& goal, const std::string& client_msg);
std::string therapy_turn(AgentDeps deps, const SessionState& state, TherapySchool school, Submodule submodule,
                         const std::string& goal, const std::string& client_msg);
std::string consolidation_turn(AgentDeps deps, const SessionState& state, Submodule submodule,
                               const std::string& goal, const std::string& client_msg);
std::string prompt_stage_turn(AgentDeps deps, const SessionState& state, StageId stage,
                              const std::string& client_msg);

}  // namespace counselflow
