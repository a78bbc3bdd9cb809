#include "counselflow/prompts.hpp"

#include <cstdlib>
#include <sstream>

#include "counselflow/errors.hpp"
#include "counselflow/storage.hpp"

#ifndef COUNSELFLOW_ASSET_DIR
#define COUNSELFLOW_ASSET_DIR "assets"
#endif

namespace counselflow {
namespace {

constexpr std::string_view kUserMarker = "\n=== user ===\n";

Json read_json(const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) throw ValidationError("missing prompt asset " + p.string());
    Json doc = Json::parse(read_file(p), nullptr, false);
    if (doc.is_discarded()) throw ValidationError("prompt asset is not JSON: " + p.string());
    return doc;
}

std::string read_asset(const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) throw ValidationError("missing prompt asset " + p.string());
    return read_file(p);
}

std::string trim_trailing(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == ' ')) s.pop_back();
    return s;
}

void list(std::ostringstream& os, const char* label, const std::vector<std::string>& items) {
    os << label << ":";
    if (items.empty()) {
        os << " (none)\n";
        return;
    }
    os << "\n";
    for (const auto& i : items) os << "  - " << i << "\n";
}

}  // namespace

std::filesystem::path PromptLibrary::default_asset_root() {
    if (const char* env = std::getenv("COUNSELFLOW_ASSETS"); env && *env) return env;
    return COUNSELFLOW_ASSET_DIR;
}

PromptLibrary PromptLibrary::load_default() { return load(default_asset_root() / "prompts"); }

PromptLibrary PromptLibrary::load(const std::filesystem::path& dir) {
    PromptLibrary lib;
    const Json manifest = read_json(dir / "manifest.json");
    lib.version_ = manifest.value("version", "0");

    for (const auto& [task, entry] : manifest.at("templates").items()) {
        PromptTemplate t;
        t.task = task;
        t.file = entry.get<std::string>();
        const std::string raw = read_asset(dir / t.file);
        auto cut = raw.find(kUserMarker);
        if (cut == std::string::npos) {
            throw ValidationError("template " + t.file + " lacks a '=== user ===' section");
        }
        t.system = trim_trailing(raw.substr(0, cut));
        t.user = trim_trailing(raw.substr(cut + kUserMarker.size()));
        if (t.system.empty() || t.user.empty()) {
            throw ValidationError("template " + t.file + " has an empty part");
        }
        lib.templates_.emplace(task, std::move(t));
    }
    for (const auto& [name, file] : manifest.at("texts").items()) {
        lib.texts_.emplace(name, trim_trailing(read_asset(dir / file.get<std::string>())));
    }

    const Json subs = read_json(dir / manifest.at("submodules").get<std::string>());
    for (auto m : all_submodules()) {
        auto it = subs.find(std::string(to_string(m)));
        if (it == subs.end() || !it->is_string() || it->get<std::string>().empty()) {
            throw ValidationError("no description for submodule " + std::string(to_string(m)));
        }
        lib.descriptions_.emplace(m, it->get<std::string>());
    }
    const Json intents = read_json(dir / manifest.at("stage_intents").get<std::string>());
    for (auto s : kAllStages) {
        auto it = intents.find(std::string(to_string(s)));
        if (it == intents.end() || !it->is_string()) {
            throw ValidationError("no intent text for stage " + std::string(to_string(s)));
        }
        lib.stage_intents_.emplace(s, it->get<std::string>());
    }
    return lib;
}

const PromptTemplate& PromptLibrary::get(const std::string& task) const {
    auto it = templates_.find(task);
    if (it == templates_.end()) throw PreconditionError("no prompt template for task '" + task + "'");
    return it->second;
}

bool PromptLibrary::has(const std::string& task) const { return templates_.count(task) != 0; }

const std::string& PromptLibrary::text(const std::string& name) const {
    auto it = texts_.find(name);
    if (it == texts_.end()) throw PreconditionError("no prompt text named '" + name + "'");
    return it->second;
}

const std::string& PromptLibrary::description(Submodule m) const { return descriptions_.at(m); }

const std::string& PromptLibrary::stage_intent(StageId s) const { return stage_intents_.at(s); }

PolicyPromptProfile PromptLibrary::profile_for(SubmoduleGroup g) const {
    PolicyPromptProfile p;
    switch (g) {
        case SubmoduleGroup::Exploration: p.agent = "explore"; break;
        case SubmoduleGroup::SFBT: p.agent = "therapy_sfbt"; break;
        case SubmoduleGroup::CBT: p.agent = "therapy_cbt"; break;
        case SubmoduleGroup::MBCT: p.agent = "therapy_mbct"; break;
        case SubmoduleGroup::Consolidation: p.agent = "consolidate"; break;
    }
    const auto& t = get(p.agent);
    p.system_preamble = t.system;
    for (auto m : submodules_of(g)) p.submodule_descriptions.emplace(m, description(m));
    p.output_contract = "free_text";
    return p;
}

ChatRequest PromptLibrary::build(const std::string& task, const std::map<std::string, std::string>& vars,
                                 const Json& context, double temperature, ResponseFormat format) const {
    const auto& t = get(task);
    auto all = vars;
    all["context"] = context.dump(2);
    ChatRequest req;
    req.task = task;
    req.temperature = temperature;
    req.response_format = format;
    req.messages.push_back({Role::System, render_template(t.system, all)});
    req.messages.push_back({Role::User, render_template(t.user, all)});
    return req;
}

std::string render_template(const std::string& text, const std::map<std::string, std::string>& vars) {
    std::string out;
    out.reserve(text.size());
    std::size_t pos = 0;
    while (true) {
        auto open = text.find("{{", pos);
        if (open == std::string::npos) {
            out.append(text, pos, std::string::npos);
            return out;
        }
        auto close = text.find("}}", open + 2);
        if (close == std::string::npos) throw PreconditionError("unterminated placeholder in template");
        out.append(text, pos, open - pos);
        const std::string key = text.substr(open + 2, close - open - 2);
        auto it = vars.find(key);
        if (it == vars.end()) throw PreconditionError("template placeholder {{" + key + "}} has no value");
        out += it->second;
        pos = close + 2;
    }
}

Json profile_context(const ClientProfile& p) {
    // The ground-truth school is bench metadata and never reaches a prompt.
    return Json{{"client_id", p.client_id},
                {"age", p.age},
                {"gender", p.gender},
                {"occupation", p.occupation},
                {"problem_category", p.problem_category},
                {"chief_complaint", p.chief_complaint},
                {"background", p.background}};
}

std::string render_digest(const CaseConceptualizationForm& f) {
    std::ostringstream os;
    os << "Case conceptualization";
    if (f.meta.provenance != Provenance::Standard) os << " [" << to_string(f.meta.provenance) << "]";
    os << "\n";
    if (f.meta.provenance == Provenance::PlainSummary) {
        os << f.meta.plain_summary << "\n";
        return os.str();
    }
    list(os, "Presenting problems", f.presenting_problems);
    os << "Personal history: " << f.personal_history << "\n";
    os << "Emotional state: " << f.emotional_state << "\n";
    list(os, "Goals", f.goals);
    list(os, "Hypotheses", f.preliminary_hypotheses);
    return os.str();
}

std::string render_digest(const TherapeuticRecord& r) {
    std::ostringstream os;
    os << "Therapeutic record";
    if (r.meta.provenance != Provenance::Standard) os << " [" << to_string(r.meta.provenance) << "]";
    os << "\n";
    if (r.meta.provenance == Provenance::PlainSummary) {
        os << r.meta.plain_summary << "\n";
        return os.str();
    }
    os << "School: " << (r.school ? std::string(to_string(*r.school)) : std::string("none")) << "\n";
    std::vector<std::string> ivs;
    for (const auto& iv : r.interventions) ivs.push_back(std::string(to_string(iv.submodule)) + ": " + iv.summary);
    list(os, "Interventions", ivs);
    list(os, "Patterns", r.cognitive_emotional_patterns);
    list(os, "Evidence of change", r.evidence_of_change);
    return os.str();
}

std::string render_digest(const RelapsePreventionPlan& p) {
    std::ostringstream os;
    os << "Relapse prevention plan";
    if (p.meta.provenance != Provenance::Standard) os << " [" << to_string(p.meta.provenance) << "]";
    os << "\n";
    if (p.meta.provenance == Provenance::PlainSummary) {
        os << p.meta.plain_summary << "\n";
        return os.str();
    }
    list(os, "High-risk situations", p.high_risk_situations);
    list(os, "Early warning signs", p.early_warning_signs);
    list(os, "Maintenance strategies", p.maintenance_strategies);
    os << "Action plan: " << p.action_plan << "\n";
    return os.str();
}

}  // namespace counselflow
