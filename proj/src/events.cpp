#include "counselflow/events.hpp"

#include <array>

#include "counselflow/errors.hpp"
#include "counselflow/memory.hpp"

namespace counselflow {

namespace {

constexpr std::array<std::pair<EventType, std::string_view>, 12> kEventNames = {{
    {EventType::SessionStarted, "session_started"},
    {EventType::StageEntered, "stage_entered"},
    {EventType::Turn, "turn"},
    {EventType::Reason, "reason"},
    {EventType::MemoryAdded, "memory_added"},
    {EventType::ArtifactCompiled, "artifact_compiled"},
    {EventType::Routed, "routed"},
    {EventType::IterationCommitted, "iteration_committed"},
    {EventType::SafetyScreen, "safety_screen"},
    {EventType::SessionCompleted, "session_completed"},
    {EventType::SessionAborted, "session_aborted"},
    {EventType::Recovered, "recovered"},
}};

bool counts_as_pair(const DialogueTurn& t) {
    return t.speaker == Speaker::Agent && (t.kind == TurnKind::Standard || t.kind == TurnKind::StagePrompt);
}

template <class T>
T payload_as(const Event& e, const char* key) {
    try {
        return e.payload.at(key).get<T>();
    } catch (const Error&) {
        throw;
    } catch (const std::exception& ex) {
        throw ValidationError("event " + std::to_string(e.seq) + " (" + std::string(to_string(e.type)) +
                              "): bad payload field '" + key + "': " + ex.what());
    }
}

}  // namespace

std::string_view to_string(EventType t) {
    for (const auto& [v, n] : kEventNames)
        if (v == t) return n;
    return "unknown";
}

std::optional<EventType> parse_event_type(std::string_view s) {
    for (const auto& [v, n] : kEventNames)
        if (n == s) return v;
    return std::nullopt;
}

void to_json(Json& j, const Event& e) {
    j = Json{{"seq", e.seq}, {"type", to_string(e.type)}, {"at", e.at}, {"payload", e.payload}};
    if (e.stage) j["stage"] = *e.stage;
}

void from_json(const Json& j, Event& e) {
    try {
        e.seq = j.at("seq").get<std::uint64_t>();
        auto t = parse_event_type(j.at("type").get<std::string>());
        if (!t) throw ValidationError("unknown event type " + j.at("type").dump());
        e.type = *t;
        e.at = j.at("at").get<Instant>();
        e.payload = j.value("payload", Json::object());
        e.stage.reset();
        if (j.contains("stage") && !j["stage"].is_null()) e.stage = j["stage"].get<StageId>();
    } catch (const Error&) {
        throw;
    } catch (const std::exception& ex) {
        throw ValidationError(std::string("malformed event: ") + ex.what());
    }
}

void apply(SessionState& s, const Event& e) {
    switch (e.type) {
        case EventType::SessionStarted: {
            SessionState fresh;
            fresh.session_id = payload_as<std::string>(e, "session_id");
            fresh.profile = payload_as<ClientProfile>(e, "profile");
            if (e.payload.contains("ablation")) fresh.ablation = payload_as<AblationConfig>(e, "ablation");
            s = std::move(fresh);
            break;
        }
        case EventType::StageEntered:
            s.stage = payload_as<StageId>(e, "stage");
            s.stage_pairs = 0;
            s.consecutive = {};
            break;
        case EventType::Turn: {
            auto t = payload_as<DialogueTurn>(e, "turn");
            if (counts_as_pair(t)) {
                ++s.stage_pairs;
                if (t.stage == StageId::Exploration) ++s.exploration_turn_pairs;
                if (t.kind == TurnKind::StagePrompt || !t.submodule) {
                    s.consecutive = {};
                } else if (s.consecutive.submodule == t.submodule) {
                    ++s.consecutive.count;
                } else {
                    s.consecutive = {t.submodule, 1};
                }
            }
            s.transcript.push_back(std::move(t));
            break;
        }
        case EventType::ArtifactCompiled: {
            auto kind = payload_as<ArtifactKind>(e, "kind");
            switch (kind) {
                case ArtifactKind::CaseForm:
                    s.artifacts.case_form = payload_as<CaseConceptualizationForm>(e, "artifact");
                    break;
                case ArtifactKind::TherapeuticRecord:
                    s.artifacts.therapeutic_record = payload_as<TherapeuticRecord>(e, "artifact");
                    break;
                case ArtifactKind::RelapsePlan:
                    s.artifacts.relapse_plan = payload_as<RelapsePreventionPlan>(e, "artifact");
                    break;
            }
            break;
        }
        case EventType::Routed:
            s.routing = payload_as<RoutingDecision>(e, "decision");
            break;
        case EventType::SessionCompleted:
            s.status = SessionStatus::Completed;
            break;
        case EventType::SessionAborted:
            s.status = SessionStatus::Aborted;
            break;
        case EventType::Reason:
        case EventType::MemoryAdded:
        case EventType::IterationCommitted:
        case EventType::SafetyScreen:
        case EventType::Recovered:
            break;
    }
}

SessionState replay(const std::vector<Event>& events) {
    SessionState s;
    for (const auto& e : events) apply(s, e);
    return s;
}

std::vector<Violation> audit_log(const std::vector<Event>& events) {
    std::vector<Violation> out;
    auto add = [&](std::size_t i, std::string code, std::string msg) {
        out.push_back({std::move(code), "event " + std::to_string(i) + ": " + msg});
    };
    if (events.empty()) return out;
    if (events.front().type != EventType::SessionStarted)
        add(0, "log.first_event", "log must open with session_started");

    SessionState s;
    std::optional<int> last_stage;
    std::optional<int> cbt_high;  // highest CBT rank reached
    bool terminal = false;
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        if (e.seq != i) add(i, "log.seq", "sequence " + std::to_string(e.seq) + " out of place");
        if (i > 0 && e.at <= events[i - 1].at) add(i, "log.time", "timestamp not strictly increasing");
        if (terminal && e.type != EventType::Recovered)
            add(i, "log.after_terminal", std::string(to_string(e.type)) + " after the session ended");
        if (i > 0 && e.type == EventType::SessionStarted) add(i, "log.restart", "second session_started");

        // Payloads that fail to parse are reported once, by the apply below.
        try {
            if (e.type == EventType::StageEntered) {
                int st = static_cast<int>(e.payload.value("stage", Json()).is_string()
                                              ? payload_as<StageId>(e, "stage")
                                              : StageId::Exploration);
                if (last_stage && st <= *last_stage) add(i, "log.stage_regression", "stage did not advance");
                last_stage = st;
            }
            if (e.type == EventType::Turn) {
                auto t = payload_as<DialogueTurn>(e, "turn");
                if (t.kind == TurnKind::Standard && t.speaker == Speaker::Agent && t.submodule) {
                    if (auto r = cbt_rank(*t.submodule)) {
                        int have = cbt_high.value_or(-1);
                        if (*r > have + 1)
                            add(i, "log.cbt_order",
                                std::string(to_string(*t.submodule)) + " before its predecessor ran");
                        cbt_high = std::max(have, *r);
                    }
                }
            }
        } catch (const ValidationError&) {
        }
        try {
            apply(s, e);
        } catch (const ValidationError& ex) {
            add(i, "log.payload", ex.what());
            continue;
        }
        if (s.exploration_turn_pairs > kExplorationPairCap)
            add(i, "log.exploration_cap", "exploration exceeded " + std::to_string(kExplorationPairCap) + " pairs");
        if (s.consecutive.count > kConsecutiveSubmoduleCap)
            add(i, "log.consecutive_cap", "submodule ran more than " +
                                              std::to_string(kConsecutiveSubmoduleCap) + " times in a row");
        if (e.type == EventType::ArtifactCompiled) {
            auto order = validate_bundle_order(s.artifacts);
            for (auto& v : order) add(i, v.code, v.message);
        }
        if (e.type == EventType::SessionCompleted || e.type == EventType::SessionAborted) terminal = true;
    }
    for (auto& v : validate_session(s)) out.push_back({v.code, "final state: " + v.message});
    return out;
}

FileSink::FileSink(std::filesystem::path path, FaultInjector* faults) : file_(std::move(path), faults) {}

void FileSink::append(const Event& e) {
    Json j = e;
    file_.append_line(canonical(j));
}

EventLogRead load_event_log(const std::filesystem::path& path) {
    EventLogRead out;
    if (!std::filesystem::exists(path)) return out;
    auto lines = read_lines(path);
    out.torn_tail = lines.torn_tail;
    out.events.reserve(lines.lines.size());
    for (std::size_t i = 0; i < lines.lines.size(); ++i) {
        if (lines.lines[i].empty()) continue;
        Json j;
        try {
            j = Json::parse(lines.lines[i]);
        } catch (const std::exception& ex) {
            throw ValidationError(path.string() + ":" + std::to_string(i + 1) + ": " + ex.what());
        }
        out.events.push_back(j.get<Event>());
    }
    return out;
}

std::size_t committed_prefix(const std::vector<Event>& events) {
    for (std::size_t i = events.size(); i > 0; --i) {
        auto t = events[i - 1].type;
        if (t == EventType::IterationCommitted || t == EventType::SessionCompleted ||
            t == EventType::SessionAborted || t == EventType::Recovered)
            return i;
    }
    return 0;
}

}  // namespace counselflow
