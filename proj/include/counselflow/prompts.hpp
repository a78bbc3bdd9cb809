#pragma once

// Prompt templates are versioned text assets (assets/prompts) listed in a
// manifest. Each template has a system part and a user part; the user part
// ends with a fenced JSON context block that carries the structured inputs.

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "counselflow/domain.hpp"
#include "counselflow/gateway.hpp"

namespace counselflow {

struct PromptTemplate {
    std::string task;
    std::string file;
    std::string system;
    std::string user;
};

// Everything a dialogue-facing policy needs about its role.
struct PolicyPromptProfile {
    std::string agent;  // exploration, therapy_sfbt, therapy_cbt, therapy_mbct, consolidate
    std::string system_preamble;
    std::map<Submodule, std::string> submodule_descriptions;
    std::string output_contract;
};

class PromptLibrary {
public:
    // Reads manifest.json and everything it lists. Throws ValidationError on
    // a missing file, a template without both parts, or a submodule without a
    // description.
    static PromptLibrary load(const std::filesystem::path& dir);
    // COUNSELFLOW_ASSETS env var, else the compiled-in asset directory.
    static PromptLibrary load_default();
    static std::filesystem::path default_asset_root();

    const PromptTemplate& get(const std::string& task) const;
    bool has(const std::string& task) const;
    const std::string& text(const std::string& name) const;
    const std::string& description(Submodule m) const;
    const std::string& stage_intent(StageId s) const;
    const std::string& version() const { return version_; }

    PolicyPromptProfile profile_for(SubmoduleGroup g) const;

    // Substitutes {{name}} placeholders in both parts; `context` fills the
    // {{context}} placeholder as pretty-printed JSON.
    ChatRequest build(const std::string& task, const std::map<std::string, std::string>& vars,
                      const Json& context, double temperature, ResponseFormat format) const;

private:
    std::string version_;
    std::map<std::string, PromptTemplate> templates_;
    std::map<std::string, std::string> texts_;
    std::map<Submodule, std::string> descriptions_;
    std::map<StageId, std::string> stage_intents_;
};

// Replaces every {{key}} with vars[key]. Throws PreconditionError when a
// placeholder has no value.
std::string render_template(const std::string& text, const std::map<std::string, std::string>& vars);

// Profile fields a prompt may see (never the ground-truth school).
Json profile_context(const ClientProfile& p);

// Short plain-text renderings handed to agents as context.
std::string render_digest(const CaseConceptualizationForm& f);
std::string render_digest(const TherapeuticRecord& r);
std::string render_digest(const RelapsePreventionPlan& p);

}  // namespace counselflow
