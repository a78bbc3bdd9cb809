#pragma once

// The recording agent: compresses dialogue windows into memory units and
// compiles the three standardized artifacts from them.

#include <optional>
#include <string>
#include <vector>

#include "counselflow/domain.hpp"
#include "counselflow/gateway.hpp"
#include "counselflow/memory.hpp"
#include "counselflow/prompts.hpp"

namespace counselflow {

// Splits turns into windows that each end with an agent turn (a trailing
// run without an agent reply forms its own window).
std::vector<std::vector<DialogueTurn>> summarization_windows(const std::vector<DialogueTurn>& turns);

class Recorder {
public:
    Recorder(Gateway& gateway, const PromptLibrary& prompts, MemoryStore& memory);

    // One unit per window, embedded and stored.
    std::vector<MemoryUnit> atomize(const std::vector<DialogueTurn>& turns, ArtifactKind kind,
                                    const std::string& session_id, ProblemCategory category,
                                    Instant now);

    CaseConceptualizationForm compile_case_form(const std::vector<MemoryUnit>& units,
                                                const ClientProfile& profile, Instant now);
    // Used when the Exploration stage is removed: built from the profile alone.
    CaseConceptualizationForm compile_intake_form(const ClientProfile& profile, Instant now);
    TherapeuticRecord compile_therapeutic_record(const std::vector<MemoryUnit>& units,
                                                 TherapySchool school,
                                                 const std::vector<Submodule>& executed, Instant now);
    RelapsePreventionPlan compile_relapse_plan(const std::vector<MemoryUnit>& units,
                                               const std::optional<CaseConceptualizationForm>& case_form,
                                               const std::optional<TherapeuticRecord>& record,
                                               Instant now);

    // Placeholder summary used when structured recording is switched off.
    std::string plain_summary(StageId stage, const std::vector<DialogueTurn>& turns);

private:
    Json units_context(const std::vector<MemoryUnit>& units) const;

    Gateway& gateway_;
    const PromptLibrary& prompts_;
    MemoryStore& memory_;
};

Json turns_context(const std::vector<DialogueTurn>& turns);

}  // namespace counselflow
