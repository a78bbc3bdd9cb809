#include "counselflow/domain.hpp"

#include <algorithm>
#include <sstream>

#include "counselflow/errors.hpp"

namespace counselflow {
namespace {

template <typename E, std::size_t N>
struct EnumTable {
    std::array<std::pair<E, std::string_view>, N> entries;

    std::string_view name(E v) const {
        for (const auto& [e, s] : entries) {
            if (e == v) return s;
        }
        return "?";
    }
    std::optional<E> parse(std::string_view s) const {
        for (const auto& [e, n] : entries) {
            if (n == s) return e;
        }
        return std::nullopt;
    }
};

constexpr EnumTable<TherapySchool, 3> kSchoolNames{{{
    {TherapySchool::SFBT, "SFBT"},
    {TherapySchool::CBT, "CBT"},
    {TherapySchool::MBCT, "MBCT"},
}}};

constexpr EnumTable<StageId, 3> kStageNames{{{
    {StageId::Exploration, "Exploration"},
    {StageId::Insight, "Insight"},
    {StageId::Action, "Action"},
}}};

constexpr EnumTable<Submodule, kSubmoduleCount> kSubmoduleNames{{{
    {Submodule::MoodCheck, "MoodCheck"},
    {Submodule::PsychoEdu, "PsychoEdu"},
    {Submodule::GoalSet, "GoalSet"},
    {Submodule::CognitiveCoach, "CognitiveCoach"},
    {Submodule::BehaviorActivate, "BehaviorActivate"},
    {Submodule::S1_ExploreException, "S1_ExploreException"},
    {Submodule::S2_ScalingQuestion, "S2_ScalingQuestion"},
    {Submodule::S3_MiracleQuestion, "S3_MiracleQuestion"},
    {Submodule::S4_AmplifyStrength, "S4_AmplifyStrength"},
    {Submodule::C1_AutoThoughts, "C1_AutoThoughts"},
    {Submodule::C2_ExtractInterBelief, "C2_ExtractInterBelief"},
    {Submodule::C3_ReorganizeInterBelief, "C3_ReorganizeInterBelief"},
    {Submodule::C4_InferCoreBelief, "C4_InferCoreBelief"},
    {Submodule::C5_RebuildCoreBelief, "C5_RebuildCoreBelief"},
    {Submodule::M1_PresentAwareness, "M1_PresentAwareness"},
    {Submodule::M2_Acceptance, "M2_Acceptance"},
    {Submodule::M3_CognitiveDefusion, "M3_CognitiveDefusion"},
    {Submodule::M4_MindfulAction, "M4_MindfulAction"},
    {Submodule::ReviewAssessment, "ReviewAssessment"},
    {Submodule::SkillIntegration, "SkillIntegration"},
    {Submodule::RelapsePrevention, "RelapsePrevention"},
}}};

constexpr EnumTable<SubmoduleGroup, 5> kGroupNames{{{
    {SubmoduleGroup::Exploration, "Exploration"},
    {SubmoduleGroup::SFBT, "SFBT"},
    {SubmoduleGroup::CBT, "CBT"},
    {SubmoduleGroup::MBCT, "MBCT"},
    {SubmoduleGroup::Consolidation, "Consolidation"},
}}};

constexpr EnumTable<ProblemCategory, 5> kCategoryNames{{{
    {ProblemCategory::StressAdaptation, "stress_adaptation"},
    {ProblemCategory::Emotion, "emotion"},
    {ProblemCategory::Family, "family"},
    {ProblemCategory::Somatic, "somatic"},
    {ProblemCategory::Other, "other"},
}}};

constexpr EnumTable<Topic, 9> kTopicNames{{{
    {Topic::StressAdaptation, "stress_adaptation"},
    {Topic::Emotion, "emotion"},
    {Topic::Family, "family"},
    {Topic::Somatic, "somatic"},
    {Topic::Other, "other"},
    {Topic::Goal, "goal"},
    {Topic::Intervention, "intervention"},
    {Topic::Progress, "progress"},
    {Topic::Risk, "risk"},
}}};

constexpr EnumTable<Speaker, 2> kSpeakerNames{{{
    {Speaker::Agent, "agent"},
    {Speaker::Client, "client"},
}}};

constexpr EnumTable<TurnKind, 4> kTurnKindNames{{{
    {TurnKind::Standard, "standard"},
    {TurnKind::Closing, "closing"},
    {TurnKind::Referral, "referral"},
    {TurnKind::StagePrompt, "stage_prompt"},
}}};

constexpr EnumTable<SessionStatus, 3> kStatusNames{{{
    {SessionStatus::Active, "active"},
    {SessionStatus::Completed, "completed"},
    {SessionStatus::Aborted, "aborted"},
}}};

constexpr EnumTable<ArtifactKind, 3> kKindNames{{{
    {ArtifactKind::CaseForm, "F_case"},
    {ArtifactKind::TherapeuticRecord, "O_ther"},
    {ArtifactKind::RelapsePlan, "P_rel"},
}}};

constexpr EnumTable<Provenance, 4> kProvenanceNames{{{
    {Provenance::Standard, "standard"},
    {Provenance::PlainSummary, "plain_summary"},
    {Provenance::PromptStage, "prompt_stage"},
    {Provenance::StageRemoved, "stage_removed"},
}}};

constexpr std::array<Submodule, 5> kExplorationSet = {
    Submodule::MoodCheck, Submodule::PsychoEdu, Submodule::GoalSet,
    Submodule::CognitiveCoach, Submodule::BehaviorActivate};
constexpr std::array<Submodule, 4> kSfbtSet = {
    Submodule::S1_ExploreException, Submodule::S2_ScalingQuestion,
    Submodule::S3_MiracleQuestion, Submodule::S4_AmplifyStrength};
constexpr std::array<Submodule, 5> kCbtSet = {
    Submodule::C1_AutoThoughts, Submodule::C2_ExtractInterBelief,
    Submodule::C3_ReorganizeInterBelief, Submodule::C4_InferCoreBelief,
    Submodule::C5_RebuildCoreBelief};
constexpr std::array<Submodule, 4> kMbctSet = {
    Submodule::M1_PresentAwareness, Submodule::M2_Acceptance,
    Submodule::M3_CognitiveDefusion, Submodule::M4_MindfulAction};
constexpr std::array<Submodule, 3> kConsolidationSet = {
    Submodule::ReviewAssessment, Submodule::SkillIntegration, Submodule::RelapsePrevention};

constexpr std::array<Submodule, kSubmoduleCount> kAllSubmodules = [] {
    std::array<Submodule, kSubmoduleCount> out{};
    for (std::size_t i = 0; i < kSubmoduleCount; ++i) out[i] = static_cast<Submodule>(i);
    return out;
}();

constexpr std::array<Topic, 9> kAllTopics = {
    Topic::StressAdaptation, Topic::Emotion, Topic::Family, Topic::Somatic, Topic::Other,
    Topic::Goal, Topic::Intervention, Topic::Progress, Topic::Risk};

template <typename E, std::size_t N>
void enum_to_json(Json& j, const EnumTable<E, N>& table, E v) {
    j = std::string(table.name(v));
}

template <typename E, std::size_t N>
void enum_from_json(const Json& j, const EnumTable<E, N>& table, E& v, const char* what) {
    if (!j.is_string()) {
        throw ValidationError(std::string("expected string for ") + what);
    }
    auto parsed = table.parse(j.get_ref<const std::string&>());
    if (!parsed) {
        throw ValidationError(std::string("unknown ") + what + " '" +
                              j.get<std::string>() + "'");
    }
    v = *parsed;
}

const Json& require(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) {
        throw ValidationError(std::string("missing field '") + key + "'");
    }
    return j.at(key);
}

template <typename T>
T field(const Json& j, const char* key) {
    try {
        return require(j, key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad field '") + key + "': " + e.what());
    }
}

template <typename T>
T field_or(const Json& j, const char* key, T fallback) {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad field '") + key + "': " + e.what());
    }
}

template <typename T>
std::optional<T> optional_field(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return field<T>(j, key);
}

template <typename T>
void put_optional(Json& j, const char* key, const std::optional<T>& v) {
    if (v) {
        j[key] = *v;
    } else {
        j[key] = nullptr;
    }
}

void meta_to_json(Json& j, const ArtifactMeta& m, ArtifactKind kind) {
    j["kind"] = kind;
    j["schema_version"] = m.schema_version;
    j["provenance"] = m.provenance;
    j["plain_summary"] = m.plain_summary;
    j["compiled_at"] = m.compiled_at;
}

ArtifactMeta meta_from_json(const Json& j, ArtifactKind kind) {
    ArtifactMeta m;
    m.schema_version = field<int>(j, "schema_version");
    if (m.schema_version < 1 || m.schema_version > kSchemaVersion) {
        throw ValidationError("unsupported schema_version " + std::to_string(m.schema_version));
    }
    if (j.contains("kind") && field<ArtifactKind>(j, "kind") != kind) {
        throw ValidationError("artifact kind mismatch, expected " + std::string(to_string(kind)));
    }
    m.provenance = field_or<Provenance>(j, "provenance", Provenance::Standard);
    m.plain_summary = field_or<std::string>(j, "plain_summary", "");
    m.compiled_at = field_or<Instant>(j, "compiled_at", 0);
    return m;
}

bool all_nonblank(const std::vector<std::string>& v) {
    return std::all_of(v.begin(), v.end(), [](const std::string& s) {
        return s.find_first_not_of(" \t\r\n") != std::string::npos;
    });
}

}  // namespace

std::string_view to_string(TherapySchool v) { return kSchoolNames.name(v); }
std::string_view to_string(StageId v) { return kStageNames.name(v); }
std::string_view to_string(Submodule v) { return kSubmoduleNames.name(v); }
std::string_view to_string(SubmoduleGroup v) { return kGroupNames.name(v); }
std::string_view to_string(ProblemCategory v) { return kCategoryNames.name(v); }
std::string_view to_string(Topic v) { return kTopicNames.name(v); }
std::string_view to_string(Speaker v) { return kSpeakerNames.name(v); }
std::string_view to_string(TurnKind v) { return kTurnKindNames.name(v); }
std::string_view to_string(SessionStatus v) { return kStatusNames.name(v); }
std::string_view to_string(ArtifactKind v) { return kKindNames.name(v); }
std::string_view to_string(Provenance v) { return kProvenanceNames.name(v); }

std::optional<TherapySchool> parse_school(std::string_view s) { return kSchoolNames.parse(s); }
std::optional<StageId> parse_stage(std::string_view s) { return kStageNames.parse(s); }
std::optional<Submodule> parse_submodule(std::string_view s) { return kSubmoduleNames.parse(s); }
std::optional<ProblemCategory> parse_problem_category(std::string_view s) {
    return kCategoryNames.parse(s);
}
std::optional<Topic> parse_topic(std::string_view s) { return kTopicNames.parse(s); }
std::optional<Speaker> parse_speaker(std::string_view s) { return kSpeakerNames.parse(s); }
std::optional<TurnKind> parse_turn_kind(std::string_view s) { return kTurnKindNames.parse(s); }
std::optional<SessionStatus> parse_status(std::string_view s) { return kStatusNames.parse(s); }
std::optional<ArtifactKind> parse_artifact_kind(std::string_view s) { return kKindNames.parse(s); }
std::optional<Provenance> parse_provenance(std::string_view s) {
    return kProvenanceNames.parse(s);
}

Topic topic_for(ProblemCategory c) {
    switch (c) {
        case ProblemCategory::StressAdaptation: return Topic::StressAdaptation;
        case ProblemCategory::Emotion: return Topic::Emotion;
        case ProblemCategory::Family: return Topic::Family;
        case ProblemCategory::Somatic: return Topic::Somatic;
        case ProblemCategory::Other: return Topic::Other;
    }
    return Topic::Other;
}

SubmoduleGroup group_of(Submodule m) {
    const auto i = static_cast<int>(m);
    if (i <= static_cast<int>(Submodule::BehaviorActivate)) return SubmoduleGroup::Exploration;
    if (i <= static_cast<int>(Submodule::S4_AmplifyStrength)) return SubmoduleGroup::SFBT;
    if (i <= static_cast<int>(Submodule::C5_RebuildCoreBelief)) return SubmoduleGroup::CBT;
    if (i <= static_cast<int>(Submodule::M4_MindfulAction)) return SubmoduleGroup::MBCT;
    return SubmoduleGroup::Consolidation;
}

std::span<const Submodule> submodules_of(SubmoduleGroup g) {
    switch (g) {
        case SubmoduleGroup::Exploration: return kExplorationSet;
        case SubmoduleGroup::SFBT: return kSfbtSet;
        case SubmoduleGroup::CBT: return kCbtSet;
        case SubmoduleGroup::MBCT: return kMbctSet;
        case SubmoduleGroup::Consolidation: return kConsolidationSet;
    }
    return {};
}

SubmoduleGroup group_for(TherapySchool s) {
    switch (s) {
        case TherapySchool::SFBT: return SubmoduleGroup::SFBT;
        case TherapySchool::CBT: return SubmoduleGroup::CBT;
        case TherapySchool::MBCT: return SubmoduleGroup::MBCT;
    }
    return SubmoduleGroup::CBT;
}

StageId stage_of(SubmoduleGroup g) {
    switch (g) {
        case SubmoduleGroup::Exploration: return StageId::Exploration;
        case SubmoduleGroup::Consolidation: return StageId::Action;
        default: return StageId::Insight;
    }
}

bool belongs_to(Submodule m, TherapySchool s) { return group_of(m) == group_for(s); }

std::span<const Submodule> all_submodules() { return kAllSubmodules; }
std::span<const Topic> all_topics() { return kAllTopics; }

std::optional<int> cbt_rank(Submodule m) {
    if (group_of(m) != SubmoduleGroup::CBT) return std::nullopt;
    return static_cast<int>(m) - static_cast<int>(Submodule::C1_AutoThoughts);
}

std::string AblationConfig::label() const {
    std::vector<std::string> parts;
    if (prompt_stage) {
        parts.push_back("Prompt Stage " + std::to_string(static_cast<int>(*prompt_stage) + 1));
    }
    if (remove_stage) {
        parts.push_back("w/o Stage " + std::to_string(static_cast<int>(*remove_stage) + 1));
    }
    if (disable_recorder) parts.push_back("w/o Recorder");
    if (parts.empty()) return "full";
    std::string out = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) out += ", " + parts[i];
    return out;
}

std::vector<Violation> validate_profile(const ClientProfile& p) {
    std::vector<Violation> out;
    if (p.client_id.empty()) out.push_back({"profile.client_id", "client_id must be nonempty"});
    if (p.age <= 0) out.push_back({"profile.age", "age must be > 0"});
    if (p.chief_complaint.find_first_not_of(" \t\r\n") == std::string::npos) {
        out.push_back({"profile.chief_complaint", "chief_complaint must be nonempty"});
    }
    return out;
}

std::vector<Violation> validate_case_form(const CaseConceptualizationForm& f) {
    std::vector<Violation> out;
    if (f.meta.provenance == Provenance::PlainSummary) {
        if (f.meta.plain_summary.empty()) {
            out.push_back({"F_case.plain_summary", "placeholder form carries no summary"});
        }
        return out;
    }
    if (f.presenting_problems.empty() || !all_nonblank(f.presenting_problems)) {
        out.push_back({"F_case.presenting_problems", "at least one nonblank presenting problem"});
    }
    return out;
}

std::vector<Violation> validate_therapeutic_record(const TherapeuticRecord& r) {
    std::vector<Violation> out;
    if (!r.school) {
        if (r.meta.provenance != Provenance::StageRemoved) {
            out.push_back({"O_ther.school", "school is required"});
        }
        if (!r.interventions.empty()) {
            out.push_back({"O_ther.interventions", "interventions without a school"});
        }
        return out;
    }
    for (const auto& iv : r.interventions) {
        if (!belongs_to(iv.submodule, *r.school)) {
            out.push_back({"O_ther.intervention-school",
                           std::string(to_string(iv.submodule)) + " is not a " +
                               std::string(to_string(*r.school)) + " submodule"});
        }
    }
    return out;
}

std::vector<Violation> validate_relapse_plan(const RelapsePreventionPlan& p, bool completed) {
    std::vector<Violation> out;
    if (!completed || p.meta.provenance != Provenance::Standard) return out;
    if (p.high_risk_situations.empty() || !all_nonblank(p.high_risk_situations)) {
        out.push_back({"P_rel.high_risk_situations", "must be nonempty"});
    }
    if (p.early_warning_signs.empty() || !all_nonblank(p.early_warning_signs)) {
        out.push_back({"P_rel.early_warning_signs", "must be nonempty"});
    }
    if (p.maintenance_strategies.empty() || !all_nonblank(p.maintenance_strategies)) {
        out.push_back({"P_rel.maintenance_strategies", "must be nonempty"});
    }
    if (p.action_plan.find_first_not_of(" \t\r\n") == std::string::npos) {
        out.push_back({"P_rel.action_plan", "must be nonempty"});
    }
    return out;
}

std::vector<Violation> validate_bundle_order(const ArtifactBundle& b) {
    std::vector<Violation> out;
    if (b.therapeutic_record && !b.case_form) {
        out.push_back({"artifact-order", "O_ther present without F_case"});
    }
    if (b.relapse_plan && !(b.case_form && b.therapeutic_record)) {
        out.push_back({"artifact-order", "P_rel present without F_case and O_ther"});
    }
    return out;
}

std::vector<Violation> validate_session(const SessionState& s) {
    std::vector<Violation> out;
    auto append = [&out](std::vector<Violation> v) {
        out.insert(out.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
    };
    append(validate_profile(s.profile));

    if (s.exploration_turn_pairs > kExplorationPairCap) {
        out.push_back({"turn-cap", "exploration_turn_pairs " + std::to_string(s.exploration_turn_pairs) +
                                       " exceeds " + std::to_string(kExplorationPairCap)});
    }
    if (s.consecutive.count > kConsecutiveSubmoduleCap) {
        out.push_back({"consecutive-cap", "consecutive submodule count " +
                                              std::to_string(s.consecutive.count) + " exceeds " +
                                              std::to_string(kConsecutiveSubmoduleCap)});
    }
    if (s.exploration_turn_pairs < 0 || s.consecutive.count < 0 || s.stage_pairs < 0) {
        out.push_back({"counter-range", "negative counter"});
    }

    const bool insight_removed = s.ablation.remove_stage == StageId::Insight;
    if (s.stage == StageId::Exploration && s.routing) {
        out.push_back({"routing-presence", "routing decided before Insight"});
    }
    if (s.stage >= StageId::Insight && !s.routing && !insight_removed) {
        out.push_back({"routing-presence", "routing missing from Insight onward"});
    }
    if (s.stage >= StageId::Insight && !s.artifacts.case_form) {
        out.push_back({"artifact-order", "F_case missing at or after Insight"});
    }
    if (s.stage >= StageId::Action && !s.artifacts.therapeutic_record) {
        out.push_back({"artifact-order", "O_ther missing at Action"});
    }
    append(validate_bundle_order(s.artifacts));
    if (s.artifacts.case_form) append(validate_case_form(*s.artifacts.case_form));
    if (s.artifacts.therapeutic_record) {
        append(validate_therapeutic_record(*s.artifacts.therapeutic_record));
        if (s.routing && s.artifacts.therapeutic_record->school &&
            *s.artifacts.therapeutic_record->school != s.routing->selected) {
            out.push_back({"O_ther.school", "record school differs from routed school"});
        }
    }
    const bool completed = s.status == SessionStatus::Completed;
    if (s.artifacts.relapse_plan) append(validate_relapse_plan(*s.artifacts.relapse_plan, completed));
    if (completed && s.ablation.remove_stage != StageId::Action) {
        if (!s.artifacts.relapse_plan) {
            out.push_back({"artifact-order", "completed session lacks P_rel"});
        }
        if (s.stage != StageId::Action) {
            out.push_back({"stage-order", "completed session did not reach Action"});
        }
    }

    if (s.routing) {
        const auto& r = *s.routing;
        for (double v : r.suitability) {
            if (!(v >= 0.0 && v <= 1.0)) {
                out.push_back({"routing.range", "suitability outside [0,1]"});
                break;
            }
        }
    }

    int last_index = -1;
    StageId last_stage = StageId::Exploration;
    for (std::size_t i = 0; i < s.transcript.size(); ++i) {
        const auto& t = s.transcript[i];
        if (t.turn_index <= last_index) {
            out.push_back({"turn-order", "turn_index not strictly increasing at position " +
                                             std::to_string(i)});
        }
        last_index = t.turn_index;
        if (t.stage < last_stage) {
            out.push_back({"stage-order", "transcript stage regresses at position " + std::to_string(i)});
        }
        last_stage = t.stage;
        if (t.stage > s.stage) {
            out.push_back({"stage-order", "turn tagged with a stage not yet reached"});
        }
        if (t.speaker == Speaker::Client && t.submodule) {
            out.push_back({"turn-submodule", "client turn carries a submodule"});
        }
        if (t.speaker != Speaker::Agent || !t.submodule) {
            const bool exempt = t.kind != TurnKind::Standard;
            if (t.speaker == Speaker::Agent && t.stage == StageId::Insight && !exempt) {
                out.push_back({"turn-submodule", "Insight agent turn without submodule at position " +
                                                     std::to_string(i)});
            }
            continue;
        }
        const auto g = group_of(*t.submodule);
        if (stage_of(g) != t.stage) {
            out.push_back({"turn-submodule", std::string(to_string(*t.submodule)) +
                                                 " used outside its stage at position " +
                                                 std::to_string(i)});
        }
        if (t.stage == StageId::Insight && s.routing && !belongs_to(*t.submodule, s.routing->selected)) {
            out.push_back({"turn-submodule", std::string(to_string(*t.submodule)) +
                                                 " does not belong to the routed school"});
        }
    }
    return out;
}

std::string describe(const std::vector<Violation>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << "; ";
        os << v[i].code << ": " << v[i].message;
    }
    return os.str();
}

void to_json(Json& j, TherapySchool v) { enum_to_json(j, kSchoolNames, v); }
void from_json(const Json& j, TherapySchool& v) { enum_from_json(j, kSchoolNames, v, "therapy school"); }
void to_json(Json& j, StageId v) { enum_to_json(j, kStageNames, v); }
void from_json(const Json& j, StageId& v) { enum_from_json(j, kStageNames, v, "stage"); }
void to_json(Json& j, Submodule v) { enum_to_json(j, kSubmoduleNames, v); }
void from_json(const Json& j, Submodule& v) { enum_from_json(j, kSubmoduleNames, v, "submodule"); }
void to_json(Json& j, ProblemCategory v) { enum_to_json(j, kCategoryNames, v); }
void from_json(const Json& j, ProblemCategory& v) {
    enum_from_json(j, kCategoryNames, v, "problem category");
}
void to_json(Json& j, Topic v) { enum_to_json(j, kTopicNames, v); }
void from_json(const Json& j, Topic& v) { enum_from_json(j, kTopicNames, v, "topic"); }
void to_json(Json& j, Speaker v) { enum_to_json(j, kSpeakerNames, v); }
void from_json(const Json& j, Speaker& v) { enum_from_json(j, kSpeakerNames, v, "speaker"); }
void to_json(Json& j, TurnKind v) { enum_to_json(j, kTurnKindNames, v); }
void from_json(const Json& j, TurnKind& v) { enum_from_json(j, kTurnKindNames, v, "turn kind"); }
void to_json(Json& j, SessionStatus v) { enum_to_json(j, kStatusNames, v); }
void from_json(const Json& j, SessionStatus& v) { enum_from_json(j, kStatusNames, v, "status"); }
void to_json(Json& j, ArtifactKind v) { enum_to_json(j, kKindNames, v); }
void from_json(const Json& j, ArtifactKind& v) { enum_from_json(j, kKindNames, v, "artifact kind"); }
void to_json(Json& j, Provenance v) { enum_to_json(j, kProvenanceNames, v); }
void from_json(const Json& j, Provenance& v) { enum_from_json(j, kProvenanceNames, v, "provenance"); }

void to_json(Json& j, const ClientProfile& v) {
    j = Json::object();
    j["client_id"] = v.client_id;
    j["age"] = v.age;
    j["occupation"] = v.occupation;
    j["gender"] = v.gender;
    j["chief_complaint"] = v.chief_complaint;
    j["background"] = v.background;
    j["problem_category"] = v.problem_category;
    put_optional(j, "ground_truth_school", v.ground_truth_school);
}

void from_json(const Json& j, ClientProfile& v) {
    v.client_id = field<std::string>(j, "client_id");
    v.age = field<int>(j, "age");
    v.occupation = field_or<std::string>(j, "occupation", "");
    v.gender = field_or<std::string>(j, "gender", "");
    v.chief_complaint = field<std::string>(j, "chief_complaint");
    v.background = field_or<std::string>(j, "background", "");
    v.problem_category = field_or<ProblemCategory>(j, "problem_category", ProblemCategory::Other);
    v.ground_truth_school = optional_field<TherapySchool>(j, "ground_truth_school");
}

void to_json(Json& j, const DialogueTurn& v) {
    j = Json::object();
    j["turn_index"] = v.turn_index;
    j["speaker"] = v.speaker;
    j["content"] = v.content;
    j["timestamp"] = v.timestamp;
    j["stage"] = v.stage;
    put_optional(j, "submodule", v.submodule);
    j["kind"] = v.kind;
}

void from_json(const Json& j, DialogueTurn& v) {
    v.turn_index = field<int>(j, "turn_index");
    v.speaker = field<Speaker>(j, "speaker");
    v.content = field<std::string>(j, "content");
    v.timestamp = field<Instant>(j, "timestamp");
    v.stage = field<StageId>(j, "stage");
    v.submodule = optional_field<Submodule>(j, "submodule");
    v.kind = field_or<TurnKind>(j, "kind", TurnKind::Standard);
}

void to_json(Json& j, const RoutingDecision& v) {
    j = Json::object();
    Json scores = Json::object();
    for (auto s : kAllSchools) scores[std::string(to_string(s))] = v.score(s);
    j["suitability"] = std::move(scores);
    j["selected"] = v.selected;
    j["rationale"] = v.rationale;
    j["case_form_id"] = v.case_form_id;
}

void from_json(const Json& j, RoutingDecision& v) {
    const auto& scores = require(j, "suitability");
    if (!scores.is_object() || scores.size() != 3) {
        throw ValidationError("suitability must map exactly three schools");
    }
    for (auto s : kAllSchools) {
        v.suitability[static_cast<std::size_t>(s)] = field<double>(scores, std::string(to_string(s)).c_str());
    }
    v.selected = field<TherapySchool>(j, "selected");
    v.rationale = field_or<std::string>(j, "rationale", "");
    v.case_form_id = field_or<std::string>(j, "case_form_id", "");
}

void to_json(Json& j, const CaseConceptualizationForm& v) {
    j = Json::object();
    meta_to_json(j, v.meta, ArtifactKind::CaseForm);
    j["presenting_problems"] = v.presenting_problems;
    j["personal_history"] = v.personal_history;
    j["emotional_state"] = v.emotional_state;
    j["goals"] = v.goals;
    j["preliminary_hypotheses"] = v.preliminary_hypotheses;
    j["source_memory_ids"] = v.source_memory_ids;
}

void from_json(const Json& j, CaseConceptualizationForm& v) {
    v.meta = meta_from_json(j, ArtifactKind::CaseForm);
    v.presenting_problems = field<std::vector<std::string>>(j, "presenting_problems");
    v.personal_history = field_or<std::string>(j, "personal_history", "");
    v.emotional_state = field_or<std::string>(j, "emotional_state", "");
    v.goals = field_or<std::vector<std::string>>(j, "goals", {});
    v.preliminary_hypotheses = field_or<std::vector<std::string>>(j, "preliminary_hypotheses", {});
    v.source_memory_ids = field_or<std::vector<std::uint64_t>>(j, "source_memory_ids", {});
}

void to_json(Json& j, const Intervention& v) {
    j = Json{{"submodule", v.submodule}, {"summary", v.summary}};
}

void from_json(const Json& j, Intervention& v) {
    v.submodule = field<Submodule>(j, "submodule");
    v.summary = field_or<std::string>(j, "summary", "");
}

void to_json(Json& j, const TherapeuticRecord& v) {
    j = Json::object();
    meta_to_json(j, v.meta, ArtifactKind::TherapeuticRecord);
    put_optional(j, "school", v.school);
    j["interventions"] = v.interventions;
    j["cognitive_emotional_patterns"] = v.cognitive_emotional_patterns;
    j["evidence_of_change"] = v.evidence_of_change;
    j["source_memory_ids"] = v.source_memory_ids;
}

void from_json(const Json& j, TherapeuticRecord& v) {
    v.meta = meta_from_json(j, ArtifactKind::TherapeuticRecord);
    v.school = optional_field<TherapySchool>(j, "school");
    v.interventions = field_or<std::vector<Intervention>>(j, "interventions", {});
    v.cognitive_emotional_patterns =
        field_or<std::vector<std::string>>(j, "cognitive_emotional_patterns", {});
    v.evidence_of_change = field_or<std::vector<std::string>>(j, "evidence_of_change", {});
    v.source_memory_ids = field_or<std::vector<std::uint64_t>>(j, "source_memory_ids", {});
}

void to_json(Json& j, const RelapsePreventionPlan& v) {
    j = Json::object();
    meta_to_json(j, v.meta, ArtifactKind::RelapsePlan);
    j["high_risk_situations"] = v.high_risk_situations;
    j["early_warning_signs"] = v.early_warning_signs;
    j["maintenance_strategies"] = v.maintenance_strategies;
    j["action_plan"] = v.action_plan;
    j["source_memory_ids"] = v.source_memory_ids;
}

void from_json(const Json& j, RelapsePreventionPlan& v) {
    v.meta = meta_from_json(j, ArtifactKind::RelapsePlan);
    v.high_risk_situations = field_or<std::vector<std::string>>(j, "high_risk_situations", {});
    v.early_warning_signs = field_or<std::vector<std::string>>(j, "early_warning_signs", {});
    v.maintenance_strategies = field_or<std::vector<std::string>>(j, "maintenance_strategies", {});
    v.action_plan = field_or<std::string>(j, "action_plan", "");
    v.source_memory_ids = field_or<std::vector<std::uint64_t>>(j, "source_memory_ids", {});
}

void to_json(Json& j, const ArtifactBundle& v) {
    j = Json::object();
    put_optional(j, "F_case", v.case_form);
    put_optional(j, "O_ther", v.therapeutic_record);
    put_optional(j, "P_rel", v.relapse_plan);
}

void from_json(const Json& j, ArtifactBundle& v) {
    v.case_form = optional_field<CaseConceptualizationForm>(j, "F_case");
    v.therapeutic_record = optional_field<TherapeuticRecord>(j, "O_ther");
    v.relapse_plan = optional_field<RelapsePreventionPlan>(j, "P_rel");
}

void to_json(Json& j, const AblationConfig& v) {
    j = Json::object();
    put_optional(j, "prompt_stage", v.prompt_stage);
    put_optional(j, "remove_stage", v.remove_stage);
    j["disable_recorder"] = v.disable_recorder;
}

void from_json(const Json& j, AblationConfig& v) {
    v.prompt_stage = optional_field<StageId>(j, "prompt_stage");
    v.remove_stage = optional_field<StageId>(j, "remove_stage");
    v.disable_recorder = field_or<bool>(j, "disable_recorder", false);
}

void to_json(Json& j, const SessionState& v) {
    j = Json::object();
    j["schema_version"] = kSchemaVersion;
    j["session_id"] = v.session_id;
    j["profile"] = v.profile;
    j["stage"] = v.stage;
    j["transcript"] = v.transcript;
    put_optional(j, "routing", v.routing);
    j["artifacts"] = v.artifacts;
    j["exploration_turn_pairs"] = v.exploration_turn_pairs;
    j["stage_pairs"] = v.stage_pairs;
    Json run = Json::object();
    put_optional(run, "submodule", v.consecutive.submodule);
    run["count"] = v.consecutive.count;
    j["consecutive_submodule"] = std::move(run);
    j["status"] = v.status;
    j["ablation"] = v.ablation;
}

void from_json(const Json& j, SessionState& v) {
    v.session_id = field<std::string>(j, "session_id");
    v.profile = field<ClientProfile>(j, "profile");
    v.stage = field<StageId>(j, "stage");
    v.transcript = field_or<std::vector<DialogueTurn>>(j, "transcript", {});
    v.routing = optional_field<RoutingDecision>(j, "routing");
    v.artifacts = field_or<ArtifactBundle>(j, "artifacts", {});
    v.exploration_turn_pairs = field<int>(j, "exploration_turn_pairs");
    v.stage_pairs = field_or<int>(j, "stage_pairs", 0);
    const auto& run = require(j, "consecutive_submodule");
    v.consecutive.submodule = optional_field<Submodule>(run, "submodule");
    v.consecutive.count = field<int>(run, "count");
    v.status = field<SessionStatus>(j, "status");
    v.ablation = field_or<AblationConfig>(j, "ablation", {});
}

void to_json(Json& j, const Violation& v) { j = Json{{"code", v.code}, {"message", v.message}}; }

std::string canonical(const Json& j) { return j.dump(); }

}  // namespace counselflow
