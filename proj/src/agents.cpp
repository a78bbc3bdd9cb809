#include "counselflow/agents.hpp"

#include <sstream>

#include "counselflow/errors.hpp"
#include "counselflow/recorder.hpp"

namespace counselflow {
namespace {

constexpr std::array<TherapySchool, 3> kTieOrder = {TherapySchool::CBT, TherapySchool::MBCT, TherapySchool::SFBT};

std::string profile_text(const ClientProfile& p) {
    std::ostringstream os;
    os << "Age: " << p.age << "\n"
       << "Gender: " << p.gender << "\n"
       << "Occupation: " << p.occupation << "\n"
       << "Problem category: " << to_string(p.problem_category) << "\n"
       << "Chief complaint: " << p.chief_complaint << "\n"
       << "Background: " << p.background;
    return os.str();
}

std::vector<DialogueTurn> recent(const SessionState& s) {
    const auto& t = s.transcript;
    auto n = std::min(t.size(), kRecentTurns);
    return {t.end() - static_cast<std::ptrdiff_t>(n), t.end()};
}

// Retrieved notes rendered for a prompt, plus their ids for the context.
std::pair<std::string, Json> memories(const AgentDeps& deps, const std::string& query, Topic topic) {
    Json ids = Json::array();
    if (!deps.memory || query.empty()) return {"(none)", ids};
    auto result = deps.memory->retrieve({query, topic, deps.k}, deps.gateway);
    if (result.hits.empty()) return {"(none)", ids};
    std::ostringstream os;
    for (std::size_t i = 0; i < result.hits.size(); ++i) {
        const auto& u = result.hits[i].unit;
        if (i) os << "\n";
        os << "- [" << u.id << "] " << u.structured_info;
        ids.push_back(u.id);
    }
    return {os.str(), ids};
}

std::vector<Submodule> executed_in_stage(const SessionState& s) {
    std::vector<Submodule> out;
    for (const auto& t : s.transcript) {
        if (t.stage == s.stage && t.speaker == Speaker::Agent && t.submodule) out.push_back(*t.submodule);
    }
    return out;
}

std::string therapy_task(TherapySchool s) {
    switch (s) {
        case TherapySchool::SFBT: return "therapy_sfbt";
        case TherapySchool::CBT: return "therapy_cbt";
        case TherapySchool::MBCT: return "therapy_mbct";
    }
    return "therapy_cbt";
}

std::string query_text(const std::string& client_msg, const std::string& goal) {
    if (goal.empty()) return client_msg;
    if (client_msg.empty()) return goal;
    return client_msg + " " + goal;
}

}  // namespace

TherapySchool select_school(const std::array<double, 3>& suitability) {
    TherapySchool best = kTieOrder[0];
    for (auto s : kTieOrder) {
        if (suitability[static_cast<std::size_t>(s)] > suitability[static_cast<std::size_t>(best)]) best = s;
    }
    return best;
}

ChatRequest route_request(const PromptLibrary& prompts, const CaseConceptualizationForm& form) {
    Json context{{"case_form", form}};
    return prompts.build("route", {}, context, kJudgeTemperature, ResponseFormat::StructuredDocument);
}

RoutingDecision route(AgentDeps deps, const CaseConceptualizationForm& form, const std::string& case_form_id) {
    auto problems = validate_case_form(form);
    if (!problems.empty()) throw PreconditionError("route: invalid case form: " + describe(problems));

    std::array<double, 3> scores{};
    auto check = [&scores](const Json& doc) -> std::string {
        if (doc.is_discarded()) return "not a JSON document";
        auto it = doc.find("scores");
        if (it == doc.end() || !it->is_object()) return "scores missing";
        for (auto s : kAllSchools) {
            auto v = it->find(std::string(to_string(s)));
            if (v == it->end() || !v->is_number()) return "score for " + std::string(to_string(s)) + " missing";
            double x = v->get<double>();
            if (!(x >= 0.0 && x <= 1.0)) return "score for " + std::string(to_string(s)) + " outside [0,1]";
            scores[static_cast<std::size_t>(s)] = x;
        }
        return {};
    };
    auto reask = [&](const std::string&) { return deps.prompts.text("reask_routing"); };
    auto outcome = chat_with_repair(deps.gateway, route_request(deps.prompts, form), check, reask);
    if (!outcome.problem.empty()) throw ValidationError("routing: " + outcome.problem + " after repair");

    RoutingDecision d;
    d.suitability = scores;
    d.selected = select_school(scores);
    d.case_form_id = case_form_id;
    d.rationale = outcome.doc.value("rationale", std::string{});
    if (auto it = outcome.doc.find("selected"); it != outcome.doc.end() && it->is_string()) {
        auto claimed = parse_school(it->get<std::string>());
        if (claimed && *claimed != d.selected) {
            d.rationale += (d.rationale.empty() ? "" : " ") + std::string("[judge selected ") +
                           std::string(to_string(*claimed)) + " but its scores favour " +
                           std::string(to_string(d.selected)) + "]";
        }
    }
    return d;
}

ChatRequest reason_request(AgentDeps deps, const SessionState& state, const std::string& client_msg,
                           const std::vector<Submodule>& available) {
    SubmoduleGroup group = SubmoduleGroup::Exploration;
    if (state.stage == StageId::Insight) {
        if (!state.routing) throw PreconditionError("reason: Insight without routing");
        group = group_for(state.routing->selected);
    } else if (state.stage == StageId::Action) {
        group = SubmoduleGroup::Consolidation;
    }
    Json subs = Json::object();
    for (auto m : submodules_of(group)) subs[std::string(to_string(m))] = deps.prompts.description(m);
    Json consecutive = Json::object();
    if (state.consecutive.submodule) consecutive["submodule"] = *state.consecutive.submodule;
    consecutive["count"] = state.consecutive.count;

    Json context{{"session_id", state.session_id},
                 {"client_id", state.profile.client_id},
                 {"stage", state.stage},
                 {"submodules", subs},
                 {"available_submodules", available},
                 {"executed_submodules", executed_in_stage(state)},
                 {"stage_pairs", state.stage_pairs},
                 {"exploration_turn_pairs", state.exploration_turn_pairs},
                 {"consecutive", consecutive},
                 {"recent_turns", turns_context(recent(state))},
                 {"client_message", client_msg}};
    if (state.routing) context["school"] = state.routing->selected;
    return deps.prompts.build("reason",
                              {{"stage", std::string(to_string(state.stage))},
                               {"stage_intent", deps.prompts.stage_intent(state.stage)}},
                              context, deps.temperature, ResponseFormat::StructuredDocument);
}

ReasonProposal run_reason(AgentDeps deps, ChatRequest& req) {
    const std::string text = deps.gateway.chat(req);
    req.messages.push_back({Role::Assistant, text});
    const Json doc = parse_document(text);
    ReasonProposal p;
    p.goal = doc.value("goal", std::string{});
    if (auto it = doc.find("submodule"); it != doc.end() && it->is_string()) {
        p.raw_submodule = it->get<std::string>();
        p.submodule = parse_submodule(p.raw_submodule);
    }
    if (auto it = doc.find("alternatives"); it != doc.end() && it->is_array()) {
        for (const auto& a : *it) {
            if (!a.is_string()) continue;
            if (auto m = parse_submodule(a.get<std::string>())) p.alternatives.push_back(*m);
        }
    }
    if (auto it = doc.find("stage_complete"); it != doc.end() && it->is_boolean()) p.stage_complete = it->get<bool>();
    return p;
}

ChatRequest exploration_request(AgentDeps deps, const SessionState& state, Submodule submodule,
                                const std::string& goal, const std::string& client_msg) {
    if (group_of(submodule) != SubmoduleGroup::Exploration) {
        throw PreconditionError(std::string(to_string(submodule)) + " is not an Exploration submodule");
    }
    Json context{{"submodule", submodule},
                 {"recent_turns", turns_context(recent(state))},
                 {"client_message", client_msg},
                 {"chief_complaint", state.profile.chief_complaint}};
    return deps.prompts.build("explore",
                              {{"submodule", std::string(to_string(submodule))},
                               {"description", deps.prompts.description(submodule)},
                               {"goal", goal},
                               {"profile", profile_text(state.profile)}},
                              context, deps.temperature, ResponseFormat::FreeText);
}

ChatRequest therapy_request(AgentDeps deps, const SessionState& state, TherapySchool school,
                            Submodule submodule, const std::string& goal, const std::string& client_msg) {
    if (!state.routing || state.routing->selected != school) {
        throw PreconditionError("therapy turn for a school other than the routed one");
    }
    if (!belongs_to(submodule, school)) {
        throw PreconditionError(std::string(to_string(submodule)) + " is not a " +
                                std::string(to_string(school)) + " submodule");
    }
    if (!state.artifacts.case_form) throw PreconditionError("therapy turn without F_case");
    auto [notes, ids] = memories(deps, query_text(client_msg, goal), Topic::Intervention);
    Json context{{"school", school},
                 {"submodule", submodule},
                 {"memory_ids", ids},
                 {"recent_turns", turns_context(recent(state))},
                 {"client_message", client_msg}};
    return deps.prompts.build(therapy_task(school),
                              {{"submodule", std::string(to_string(submodule))},
                               {"description", deps.prompts.description(submodule)},
                               {"goal", goal},
                               {"case_form", render_digest(*state.artifacts.case_form)},
                               {"memories", notes}},
                              context, deps.temperature, ResponseFormat::FreeText);
}

ChatRequest consolidation_request(AgentDeps deps, const SessionState& state, Submodule submodule,
                                  const std::string& goal, const std::string& client_msg) {
    if (group_of(submodule) != SubmoduleGroup::Consolidation) {
        throw PreconditionError(std::string(to_string(submodule)) + " is not a consolidation submodule");
    }
    if (!state.artifacts.case_form) throw PreconditionError("consolidation turn without F_case");
    if (!state.artifacts.therapeutic_record) throw PreconditionError("consolidation turn without O_ther");
    auto [notes, ids] = memories(deps, query_text(client_msg, goal), Topic::Progress);
    Json context{{"submodule", submodule},
                 {"memory_ids", ids},
                 {"recent_turns", turns_context(recent(state))},
                 {"client_message", client_msg}};
    return deps.prompts.build("consolidate",
                              {{"submodule", std::string(to_string(submodule))},
                               {"description", deps.prompts.description(submodule)},
                               {"goal", goal},
                               {"case_form", render_digest(*state.artifacts.case_form)},
                               {"therapeutic_record", render_digest(*state.artifacts.therapeutic_record)},
                               {"memories", notes}},
                              context, deps.temperature, ResponseFormat::FreeText);
}

ChatRequest prompt_stage_request(AgentDeps deps, const SessionState& state, StageId stage,
                                 const std::string& client_msg) {
    std::string records;
    if (state.artifacts.case_form) records += render_digest(*state.artifacts.case_form);
    if (state.artifacts.therapeutic_record) records += render_digest(*state.artifacts.therapeutic_record);
    if (records.empty()) records = "(none)";
    Json context{{"stage", stage}, {"recent_turns", turns_context(recent(state))}, {"client_message", client_msg}};
    if (state.routing) context["school"] = state.routing->selected;
    return deps.prompts.build("stage_prompt",
                              {{"stage", std::string(to_string(stage))},
                               {"stage_intent", deps.prompts.stage_intent(stage)},
                               {"profile", profile_text(state.profile)},
                               {"records", records}},
                              context, deps.temperature, ResponseFormat::FreeText);
}

std::string exploration_turn(AgentDeps deps, const SessionState& state, Submodule submodule,
                             const std::string& goal, const std::string& client_msg) {
    return deps.gateway.chat(exploration_request(deps, state, submodule, goal, client_msg));
}

std::string therapy_turn(AgentDeps deps, const SessionState& state, TherapySchool school, Submodule submodule,
                         const std::string& goal, const std::string& client_msg) {
    return deps.gateway.chat(therapy_request(deps, state, school, submodule, goal, client_msg));
}

std::string consolidation_turn(AgentDeps deps, const SessionState& state, Submodule submodule,
                               const std::string& goal, const std::string& client_msg) {
    return deps.gateway.chat(consolidation_request(deps, state, submodule, goal, client_msg));
}

std::string prompt_stage_turn(AgentDeps deps, const SessionState& state, StageId stage,
                              const std::string& client_msg) {
    return deps.gateway.chat(prompt_stage_request(deps, state, stage, client_msg));
}

}  // namespace counselflow
