#pragma once

// Shared domain vocabulary: therapy schools, stages, submodules, the session
// record and the three standardized artifacts. No I/O lives here.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace counselflow {

using Json = nlohmann::json;

// Milliseconds since the Unix epoch (or since the logical clock origin).
using Instant = std::int64_t;

inline constexpr int kSchemaVersion = 1;
inline constexpr int kExplorationPairCap = 15;
inline constexpr int kConsecutiveSubmoduleCap = 6;

enum class TherapySchool { SFBT, CBT, MBCT };
inline constexpr std::array<TherapySchool, 3> kAllSchools = {
    TherapySchool::SFBT, TherapySchool::CBT, TherapySchool::MBCT};

enum class StageId { Exploration, Insight, Action };
inline constexpr std::array<StageId, 3> kAllStages = {
    StageId::Exploration, StageId::Insight, StageId::Action};

enum class Submodule {
    MoodCheck,
    PsychoEdu,
    GoalSet,
    CognitiveCoach,
    BehaviorActivate,
    S1_ExploreException,
    S2_ScalingQuestion,
    S3_MiracleQuestion,
    S4_AmplifyStrength,
    C1_AutoThoughts,
    C2_ExtractInterBelief,
    C3_ReorganizeInterBelief,
    C4_InferCoreBelief,
    C5_RebuildCoreBelief,
    M1_PresentAwareness,
    M2_Acceptance,
    M3_CognitiveDefusion,
    M4_MindfulAction,
    ReviewAssessment,
    SkillIntegration,
    RelapsePrevention,
};
inline constexpr std::size_t kSubmoduleCount = 21;

// The five disjoint submodule sets.
enum class SubmoduleGroup { Exploration, SFBT, CBT, MBCT, Consolidation };

enum class ProblemCategory { StressAdaptation, Emotion, Family, Somatic, Other };

// Closed topic vocabulary for memory units: problem categories plus the
// counseling topics used by downstream queries.
enum class Topic {
    StressAdaptation,
    Emotion,
    Family,
    Somatic,
    Other,
    Goal,
    Intervention,
    Progress,
    Risk,
};

enum class Speaker { Agent, Client };

// Agent turns that do not run a submodule: the session's closing reply, a
// referral issued by the keyword screen, or a collapsed-stage instruction turn.
enum class TurnKind { Standard, Closing, Referral, StagePrompt };
enum class SessionStatus { Active, Completed, Aborted };
enum class ArtifactKind { CaseForm, TherapeuticRecord, RelapsePlan };

// How an artifact came to exist. Anything other than Standard marks an
// ablation condition and relaxes content invariants.
enum class Provenance { Standard, PlainSummary, PromptStage, StageRemoved };

std::string_view to_string(TherapySchool v);
std::string_view to_string(StageId v);
std::string_view to_string(Submodule v);
std::string_view to_string(SubmoduleGroup v);
std::string_view to_string(ProblemCategory v);
std::string_view to_string(Topic v);
std::string_view to_string(Speaker v);
std::string_view to_string(TurnKind v);
std::string_view to_string(SessionStatus v);
std::string_view to_string(ArtifactKind v);
std::string_view to_string(Provenance v);

std::optional<TherapySchool> parse_school(std::string_view s);
std::optional<StageId> parse_stage(std::string_view s);
std::optional<Submodule> parse_submodule(std::string_view s);
std::optional<ProblemCategory> parse_problem_category(std::string_view s);
std::optional<Topic> parse_topic(std::string_view s);
std::optional<Speaker> parse_speaker(std::string_view s);
std::optional<TurnKind> parse_turn_kind(std::string_view s);
std::optional<SessionStatus> parse_status(std::string_view s);
std::optional<ArtifactKind> parse_artifact_kind(std::string_view s);
std::optional<Provenance> parse_provenance(std::string_view s);

// Topic tag that mirrors a problem category.
Topic topic_for(ProblemCategory c);

SubmoduleGroup group_of(Submodule m);
std::span<const Submodule> submodules_of(SubmoduleGroup g);
SubmoduleGroup group_for(TherapySchool s);
// Stage in which a group's submodules run.
StageId stage_of(SubmoduleGroup g);
bool belongs_to(Submodule m, TherapySchool s);
std::span<const Submodule> all_submodules();

// Position of a CBT submodule in the C1..C5 progression, 0-based.
std::optional<int> cbt_rank(Submodule m);

std::span<const Topic> all_topics();

struct ClientProfile {
    std::string client_id;
    int age = 0;
    std::string occupation;
    std::string gender;
    std::string chief_complaint;
    std::string background;
    ProblemCategory problem_category = ProblemCategory::Other;
    std::optional<TherapySchool> ground_truth_school;

    bool operator==(const ClientProfile&) const = default;
};

struct DialogueTurn {
    int turn_index = 0;
    Speaker speaker = Speaker::Client;
    std::string content;
    Instant timestamp = 0;
    StageId stage = StageId::Exploration;
    std::optional<Submodule> submodule;
    TurnKind kind = TurnKind::Standard;

    bool operator==(const DialogueTurn&) const = default;
};

struct RoutingDecision {
    // Indexed by TherapySchool.
    std::array<double, 3> suitability{};
    TherapySchool selected = TherapySchool::CBT;
    std::string rationale;
    std::string case_form_id;

    double score(TherapySchool s) const { return suitability[static_cast<std::size_t>(s)]; }
    bool operator==(const RoutingDecision&) const = default;
};

struct ArtifactMeta {
    int schema_version = kSchemaVersion;
    Provenance provenance = Provenance::Standard;
    std::string plain_summary;
    Instant compiled_at = 0;

    bool operator==(const ArtifactMeta&) const = default;
};

struct CaseConceptualizationForm {
    ArtifactMeta meta;
    std::vector<std::string> presenting_problems;
    std::string personal_history;
    std::string emotional_state;
    std::vector<std::string> goals;
    std::vector<std::string> preliminary_hypotheses;
    std::vector<std::uint64_t> source_memory_ids;

    bool operator==(const CaseConceptualizationForm&) const = default;
};

struct Intervention {
    Submodule submodule = Submodule::C1_AutoThoughts;
    std::string summary;

    bool operator==(const Intervention&) const = default;
};

struct TherapeuticRecord {
    ArtifactMeta meta;
    // Absent only when the Insight stage was removed.
    std::optional<TherapySchool> school;
    std::vector<Intervention> interventions;
    std::vector<std::string> cognitive_emotional_patterns;
    std::vector<std::string> evidence_of_change;
    std::vector<std::uint64_t> source_memory_ids;

    bool operator==(const TherapeuticRecord&) const = default;
};

struct RelapsePreventionPlan {
    ArtifactMeta meta;
    std::vector<std::string> high_risk_situations;
    std::vector<std::string> early_warning_signs;
    std::vector<std::string> maintenance_strategies;
    std::string action_plan;
    std::vector<std::uint64_t> source_memory_ids;

    bool operator==(const RelapsePreventionPlan&) const = default;
};

struct ArtifactBundle {
    std::optional<CaseConceptualizationForm> case_form;
    std::optional<TherapeuticRecord> therapeutic_record;
    std::optional<RelapsePreventionPlan> relapse_plan;

    std::size_t count() const {
        return (case_form ? 1 : 0) + (therapeutic_record ? 1 : 0) + (relapse_plan ? 1 : 0);
    }
    bool operator==(const ArtifactBundle&) const = default;
};

struct AblationConfig {
    // The stage collapsed into a single instruction-driven agent turn.
    std::optional<StageId> prompt_stage;
    std::optional<StageId> remove_stage;
    bool disable_recorder = false;

    bool any() const { return prompt_stage || remove_stage || disable_recorder; }
    // Report label for the condition, e.g. "w/o Stage 2" or "full".
    std::string label() const;
    bool operator==(const AblationConfig&) const = default;
};

struct ConsecutiveRun {
    std::optional<Submodule> submodule;
    int count = 0;

    bool operator==(const ConsecutiveRun&) const = default;
};

struct SessionState {
    std::string session_id;
    ClientProfile profile;
    StageId stage = StageId::Exploration;
    std::vector<DialogueTurn> transcript;
    std::optional<RoutingDecision> routing;
    ArtifactBundle artifacts;
    int exploration_turn_pairs = 0;
    // Completed turn pairs in the current stage.
    int stage_pairs = 0;
    ConsecutiveRun consecutive;
    SessionStatus status = SessionStatus::Active;
    AblationConfig ablation;

    bool operator==(const SessionState&) const = default;
};

struct Violation {
    std::string code;
    std::string message;

    bool operator==(const Violation&) const = default;
};

std::vector<Violation> validate_profile(const ClientProfile& p);
std::vector<Violation> validate_case_form(const CaseConceptualizationForm& f);
std::vector<Violation> validate_therapeutic_record(const TherapeuticRecord& r);
// `completed` demands all four content fields on a standard plan.
std::vector<Violation> validate_relapse_plan(const RelapsePreventionPlan& p, bool completed);
std::vector<Violation> validate_bundle_order(const ArtifactBundle& b);

// Empty iff every SessionState invariant holds.
std::vector<Violation> validate_session(const SessionState& state);

std::string describe(const std::vector<Violation>& v);

// JSON mapping (canonical document format). from_json throws
// ValidationError on unknown enum tags or missing required fields.
void to_json(Json& j, TherapySchool v);
void from_json(const Json& j, TherapySchool& v);
void to_json(Json& j, StageId v);
void from_json(const Json& j, StageId& v);
void to_json(Json& j, Submodule v);
void from_json(const Json& j, Submodule& v);
void to_json(Json& j, ProblemCategory v);
void from_json(const Json& j, ProblemCategory& v);
void to_json(Json& j, Topic v);
void from_json(const Json& j, Topic& v);
void to_json(Json& j, Speaker v);
void from_json(const Json& j, Speaker& v);
void to_json(Json& j, TurnKind v);
void from_json(const Json& j, TurnKind& v);
void to_json(Json& j, SessionStatus v);
void from_json(const Json& j, SessionStatus& v);
void to_json(Json& j, ArtifactKind v);
void from_json(const Json& j, ArtifactKind& v);
void to_json(Json& j, Provenance v);
void from_json(const Json& j, Provenance& v);

void to_json(Json& j, const ClientProfile& v);
void from_json(const Json& j, ClientProfile& v);
void to_json(Json& j, const DialogueTurn& v);
void from_json(const Json& j, DialogueTurn& v);
void to_json(Json& j, const RoutingDecision& v);
void from_json(const Json& j, RoutingDecision& v);
void to_json(Json& j, const CaseConceptualizationForm& v);
void from_json(const Json& j, CaseConceptualizationForm& v);
void to_json(Json& j, const Intervention& v);
void from_json(const Json& j, Intervention& v);
void to_json(Json& j, const TherapeuticRecord& v);
void from_json(const Json& j, TherapeuticRecord& v);
void to_json(Json& j, const RelapsePreventionPlan& v);
void from_json(const Json& j, RelapsePreventionPlan& v);
void to_json(Json& j, const ArtifactBundle& v);
void from_json(const Json& j, ArtifactBundle& v);
void to_json(Json& j, const AblationConfig& v);
void from_json(const Json& j, AblationConfig& v);
void to_json(Json& j, const SessionState& v);
void from_json(const Json& j, SessionState& v);
void to_json(Json& j, const Violation& v);

// Canonical single-line rendering: sorted keys, no whitespace.
std::string canonical(const Json& j);

}  // namespace counselflow
