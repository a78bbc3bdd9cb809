#include "counselflow/recorder.hpp"

#include <algorithm>

#include "counselflow/errors.hpp"

namespace counselflow {
namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Nonblank strings from a JSON array; anything else yields an empty list.
std::vector<std::string> string_list(const Json& doc, const char* key) {
    std::vector<std::string> out;
    auto it = doc.find(key);
    if (it == doc.end() || !it->is_array()) return out;
    for (const auto& v : *it) {
        if (!v.is_string()) continue;
        auto s = trim(v.get<std::string>());
        if (!s.empty()) out.push_back(std::move(s));
    }
    return out;
}

std::string string_field(const Json& doc, const char* key) {
    auto it = doc.find(key);
    if (it == doc.end() || !it->is_string()) return {};
    return trim(it->get<std::string>());
}

std::vector<std::string> topic_names() {
    std::vector<std::string> out;
    for (auto t : all_topics()) out.emplace_back(to_string(t));
    return out;
}

std::string form_problem(const Json& doc) {
    if (doc.is_discarded()) return "not a JSON document";
    if (string_list(doc, "presenting_problems").empty()) return "presenting_problems is empty";
    return {};
}

CaseConceptualizationForm form_from(const Json& doc) {
    CaseConceptualizationForm f;
    f.presenting_problems = string_list(doc, "presenting_problems");
    f.personal_history = string_field(doc, "personal_history");
    f.emotional_state = string_field(doc, "emotional_state");
    f.goals = string_list(doc, "goals");
    f.preliminary_hypotheses = string_list(doc, "preliminary_hypotheses");
    return f;
}

}  // namespace

Json turns_context(const std::vector<DialogueTurn>& turns) {
    Json out = Json::array();
    for (const auto& t : turns) {
        Json j{{"turn_index", t.turn_index}, {"speaker", t.speaker}, {"content", t.content}};
        if (t.submodule) j["submodule"] = *t.submodule;
        out.push_back(std::move(j));
    }
    return out;
}

std::vector<std::vector<DialogueTurn>> summarization_windows(const std::vector<DialogueTurn>& turns) {
    std::vector<std::vector<DialogueTurn>> out;
    std::vector<DialogueTurn> cur;
    for (const auto& t : turns) {
        cur.push_back(t);
        if (t.speaker == Speaker::Agent) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

Recorder::Recorder(Gateway& gateway, const PromptLibrary& prompts, MemoryStore& memory)
    : gateway_(gateway), prompts_(prompts), memory_(memory) {}

Json Recorder::units_context(const std::vector<MemoryUnit>& units) const {
    Json out = Json::array();
    for (const auto& u : units) {
        out.push_back({{"id", u.id}, {"info", u.structured_info}, {"topics", u.topics}, {"keywords", u.keywords}});
    }
    return out;
}

std::vector<MemoryUnit> Recorder::atomize(const std::vector<DialogueTurn>& turns, ArtifactKind kind,
                                          const std::string& session_id, ProblemCategory category,
                                          Instant now) {
    if (turns.empty()) throw PreconditionError("atomize: no turns");
    const auto vocabulary = topic_names();
    std::string vocab_text;
    for (const auto& v : vocabulary) vocab_text += (vocab_text.empty() ? "" : ", ") + v;

    std::vector<MemoryUnit> created;
    for (const auto& window : summarization_windows(turns)) {
        Json context{{"stage", window.front().stage},
                     {"problem_category", category},
                     {"topic_vocabulary", vocabulary},
                     {"turns", turns_context(window)}};
        auto req = prompts_.build("atomize", {}, context, kJudgeTemperature, ResponseFormat::StructuredDocument);
        std::vector<Topic> topics;
        auto check = [&topics](const Json& doc) -> std::string {
            if (doc.is_discarded()) return "not a JSON document";
            if (string_field(doc, "info").empty()) return "info is empty";
            topics.clear();
            auto it = doc.find("topics");
            if (it == doc.end() || !it->is_array()) return "topics missing";
            for (const auto& t : *it) {
                auto parsed = t.is_string() ? parse_topic(t.get<std::string>()) : std::nullopt;
                if (!parsed) return "topic " + t.dump() + " is outside the vocabulary";
                topics.push_back(*parsed);
            }
            if (topics.empty()) return "no topics";
            return {};
        };
        auto reask = [&](const std::string& problem) {
            return render_template(prompts_.text("reask_atomize"), {{"problem", problem}, {"vocabulary", vocab_text}});
        };
        auto outcome = chat_with_repair(gateway_, req, check, reask);
        if (!outcome.problem.empty()) throw MalformedOutputError("atomize: " + outcome.problem);

        MemoryDraft draft;
        draft.session_id = session_id;
        draft.structured_info = string_field(outcome.doc, "info");
        draft.topics = topics;
        draft.keywords = string_list(outcome.doc, "keywords");
        for (const auto& t : window) draft.source_turns.push_back(t.turn_index);
        draft.artifact_kind = kind;
        created.push_back(memory_.add(std::move(draft), gateway_, now));
    }
    return created;
}

CaseConceptualizationForm Recorder::compile_case_form(const std::vector<MemoryUnit>& units,
                                                      const ClientProfile& profile, Instant now) {
    if (units.empty()) throw PreconditionError("compile_case_form: no Exploration memory units");
    Json context{{"profile", profile_context(profile)}, {"units", units_context(units)}};
    auto req = prompts_.build("case_form", {}, context, kJudgeTemperature, ResponseFormat::StructuredDocument);
    auto reask = [&](const std::string& p) { return render_template(prompts_.text("reask_form"), {{"problem", p}}); };
    auto outcome = chat_with_repair(gateway_, req, form_problem, reask);
    if (!outcome.problem.empty()) throw ValidationError("case form: " + outcome.problem);
    auto form = form_from(outcome.doc);
    for (const auto& u : units) form.source_memory_ids.push_back(u.id);
    form.meta.compiled_at = now;
    return form;
}

CaseConceptualizationForm Recorder::compile_intake_form(const ClientProfile& profile, Instant now) {
    Json context{{"profile", profile_context(profile)}};
    auto req = prompts_.build("intake_form", {}, context, kJudgeTemperature, ResponseFormat::StructuredDocument);
    auto reask = [&](const std::string& p) { return render_template(prompts_.text("reask_form"), {{"problem", p}}); };
    auto outcome = chat_with_repair(gateway_, req, form_problem, reask);
    if (!outcome.problem.empty()) throw ValidationError("intake form: " + outcome.problem);
    auto form = form_from(outcome.doc);
    form.meta.provenance = Provenance::StageRemoved;
    form.meta.compiled_at = now;
    return form;
}

TherapeuticRecord Recorder::compile_therapeutic_record(const std::vector<MemoryUnit>& units,
                                                       TherapySchool school,
                                                       const std::vector<Submodule>& executed, Instant now) {
    if (units.empty()) throw PreconditionError("compile_therapeutic_record: no Insight memory units");
    Json allowed = Json::array();
    std::string allowed_text;
    for (auto m : submodules_of(group_for(school))) {
        allowed.push_back(m);
        allowed_text += (allowed_text.empty() ? "" : ", ") + std::string(to_string(m));
    }
    Json context{{"school", school},
                 {"allowed_submodules", allowed},
                 {"executed_submodules", executed},
                 {"units", units_context(units)}};
    auto req = prompts_.build("therapeutic_record", {{"school", std::string(to_string(school))}}, context,
                              kJudgeTemperature, ResponseFormat::StructuredDocument);

    std::vector<Intervention> interventions;
    auto check = [&](const Json& doc) -> std::string {
        if (doc.is_discarded()) return "not a JSON document";
        interventions.clear();
        auto it = doc.find("interventions");
        if (it == doc.end() || !it->is_array()) return "interventions missing";
        for (const auto& iv : *it) {
            if (!iv.is_object()) return "intervention is not an object";
            auto name = iv.value("submodule", std::string{});
            auto m = parse_submodule(name);
            if (!m) return "unknown submodule '" + name + "'";
            if (!belongs_to(*m, school)) {
                return name + " is not a " + std::string(to_string(school)) + " submodule";
            }
            interventions.push_back({*m, string_field(iv, "summary")});
        }
        return {};
    };
    auto reask = [&](const std::string& p) {
        return render_template(prompts_.text("reask_record"),
                               {{"school", std::string(to_string(school))}, {"allowed", allowed_text}, {"problem", p}});
    };
    auto outcome = chat_with_repair(gateway_, req, check, reask);
    if (!outcome.problem.empty()) throw ValidationError("therapeutic record: " + outcome.problem);

    TherapeuticRecord rec;
    rec.school = school;
    rec.interventions = std::move(interventions);
    rec.cognitive_emotional_patterns = string_list(outcome.doc, "cognitive_emotional_patterns");
    rec.evidence_of_change = string_list(outcome.doc, "evidence_of_change");
    for (const auto& u : units) rec.source_memory_ids.push_back(u.id);
    rec.meta.compiled_at = now;
    return rec;
}

RelapsePreventionPlan Recorder::compile_relapse_plan(const std::vector<MemoryUnit>& units,
                                                     const std::optional<CaseConceptualizationForm>& case_form,
                                                     const std::optional<TherapeuticRecord>& record,
                                                     Instant now) {
    if (!case_form) throw PreconditionError("compile_relapse_plan: F_case is missing");
    if (!record) throw PreconditionError("compile_relapse_plan: O_ther is missing");
    if (units.empty()) throw PreconditionError("compile_relapse_plan: no Action memory units");
    Json context{{"units", units_context(units)}};
    auto req = prompts_.build("relapse_plan",
                              {{"case_form", render_digest(*case_form)},
                               {"therapeutic_record", render_digest(*record)}},
                              context, kJudgeTemperature, ResponseFormat::StructuredDocument);
    auto check = [](const Json& doc) -> std::string {
        if (doc.is_discarded()) return "not a JSON document";
        std::string missing;
        for (const char* key : {"high_risk_situations", "early_warning_signs", "maintenance_strategies"}) {
            if (string_list(doc, key).empty()) missing += (missing.empty() ? "" : ", ") + std::string(key);
        }
        if (string_field(doc, "action_plan").empty()) missing += (missing.empty() ? "" : ", ") + std::string("action_plan");
        return missing;
    };
    auto reask = [&](const std::string& p) { return render_template(prompts_.text("reask_plan"), {{"missing", p}}); };
    auto outcome = chat_with_repair(gateway_, req, check, reask);
    if (!outcome.problem.empty()) throw ValidationError("relapse plan: empty fields: " + outcome.problem);

    RelapsePreventionPlan plan;
    plan.high_risk_situations = string_list(outcome.doc, "high_risk_situations");
    plan.early_warning_signs = string_list(outcome.doc, "early_warning_signs");
    plan.maintenance_strategies = string_list(outcome.doc, "maintenance_strategies");
    plan.action_plan = string_field(outcome.doc, "action_plan");
    for (const auto& u : units) plan.source_memory_ids.push_back(u.id);
    plan.meta.compiled_at = now;
    return plan;
}

std::string Recorder::plain_summary(StageId stage, const std::vector<DialogueTurn>& turns) {
    Json context{{"stage", stage}, {"turns", turns_context(turns)}};
    auto req = prompts_.build("plain_summary", {{"stage", std::string(to_string(stage))}}, context,
                              kJudgeTemperature, ResponseFormat::FreeText);
    auto text = trim(gateway_.chat(req));
    if (text.empty()) throw MalformedOutputError("plain_summary: empty reply");
    return text;
}

}  // namespace counselflow
