#pragma once

// Drives one session through Exploration, Insight and Action. Each client
// message runs one Reason-Intervene-Reflect iteration; every state change is
// emitted as an event and the state is the fold of those events.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "counselflow/agents.hpp"
#include "counselflow/clock.hpp"
#include "counselflow/events.hpp"
#include "counselflow/memory.hpp"
#include "counselflow/prompts.hpp"

namespace counselflow {

struct EngineConfig {
    AblationConfig ablation;
    std::size_t k = kDefaultRetrievalK;
    // Backstop for stages whose policy never signals completion.
    int max_pairs_per_stage = 30;
    int max_messages = 120;
    std::vector<std::string> refusal_keywords;
    double agent_temperature = kAgentTemperature;
};

// "1".."3", a stage name, or "none" (nullopt). Throws ValidationError.
std::optional<StageId> parse_stage_ref(std::string_view s);

void to_json(Json& j, const EngineConfig& c);
// Missing keys keep their defaults.
void from_json(const Json& j, EngineConfig& c);

struct EngineDeps {
    Gateway& gateway;
    const PromptLibrary& prompts;
    // Per-client store; the engine makes a private in-memory one when null.
    std::shared_ptr<MemoryStore> memory;
    Clock& clock;
    EventSink* sink = nullptr;
};

enum class RirPhase { Reason, Intervene, Reflect };

struct RIRStep {
    RirPhase phase = RirPhase::Reason;
    StageId stage = StageId::Exploration;
    std::optional<Submodule> chosen_submodule;
    bool stage_complete_signal = false;
    std::string goal;
    std::string notes;
};

enum class Legality { Legal, WrongSet, OutOfOrder, Capped };
std::string_view to_string(Legality l);

// Submodule set the current stage draws from (routed school during Insight).
std::vector<Submodule> stage_submodules(const SessionState& s);
Legality check_submodule(const SessionState& s, Submodule m);
// Stage set minus anything capped or out of CBT order, in listed order.
std::vector<Submodule> legal_submodules(const SessionState& s);

// Stages that run under `a`, in order.
std::vector<StageId> active_stages(const AblationConfig& a);

struct AdvanceResult {
    std::string reply;
    // Events emitted while handling this message.
    std::vector<Event> events;
    SessionStatus status = SessionStatus::Active;
};

class SessionEngine {
public:
    SessionEngine(EngineDeps deps, EngineConfig config);

    // Emits session_started, enters the first active stage and commits.
    std::vector<Event> start(const std::string& session_id, const ClientProfile& profile);
    // Rebuilds from a committed event prefix (no events are emitted).
    void restore(std::vector<Event> events);

    AdvanceResult advance(const std::string& client_msg);
    // The planning step alone. Emits the reason event.
    RIRStep reason(const std::string& client_msg);
    void abort(const std::string& reason);
    // Emits a recovered event carrying `detail`.
    void mark_recovered(const Json& detail);

    const SessionState& state() const { return state_; }
    const std::vector<Event>& events() const { return events_; }
    const EngineConfig& config() const { return config_; }
    MemoryStore& memory() { return *memory_; }

private:
    const Event& emit(EventType type, Json payload, std::optional<Instant> at = std::nullopt);
    void emit_turn(DialogueTurn turn);
    Instant stamp();
    AgentDeps agent_deps();
    void commit();
    void enter_stage(StageId stage);
    // Compiles the current stage's artifact and moves on. Returns false when
    // no stage follows.
    bool close_stage();
    void emit_artifact(ArtifactKind kind, const Json& artifact);
    void emit_stub(StageId removed);
    DialogueTurn make_turn(Speaker who, std::string content, std::optional<Submodule> m, TurnKind kind);
    void reflect(const std::vector<DialogueTurn>& pair);
    std::optional<std::string> refusal_hit(const std::string& msg) const;
    std::vector<DialogueTurn> stage_turns(StageId s) const;
    AdvanceResult finish_result(std::size_t first_event, std::string reply);

    EngineDeps deps_;
    EngineConfig config_;
    std::shared_ptr<MemoryStore> memory_;
    SessionState state_;
    std::vector<Event> events_;
    int iteration_ = 0;
    bool started_ = false;
    // Stage tag carried by new events; unset until the first stage is entered.
    std::optional<StageId> tag_;
};

// Source of client messages for a whole session. `next` is called once per
// iteration; throwing ClientClosed ends the session as aborted.
class ClientChannel {
public:
    virtual ~ClientChannel() = default;
    virtual std::string next(const SessionState& state) = 0;
};

class ScriptedChannel : public ClientChannel {
public:
    explicit ScriptedChannel(std::vector<std::string> lines) : lines_(std::move(lines)) {}
    std::string next(const SessionState& state) override;
    std::size_t consumed() const { return pos_; }

private:
    std::vector<std::string> lines_;
    std::size_t pos_ = 0;
};

// Runs until the session leaves Active. Gateway and validation failures
// abort the session and are rethrown.
void drive_session(SessionEngine& engine, ClientChannel& client);

struct SessionRun {
    SessionState state;
    std::vector<Event> events;
};

SessionRun run_session(EngineDeps deps, const EngineConfig& config, const std::string& session_id,
                       const ClientProfile& profile, ClientChannel& client);

}  // namespace counselflow
