#pragma once

// The append-only session log. Every state change of a session is an event;
// SessionState is the fold of `apply` over the log.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "counselflow/domain.hpp"
#include "counselflow/storage.hpp"

namespace counselflow {

enum class EventType {
    SessionStarted,
    StageEntered,
    Turn,
    Reason,
    MemoryAdded,
    ArtifactCompiled,
    Routed,
    IterationCommitted,
    SafetyScreen,
    SessionCompleted,
    SessionAborted,
    Recovered,
};

std::string_view to_string(EventType t);
std::optional<EventType> parse_event_type(std::string_view s);

struct Event {
    std::uint64_t seq = 0;
    EventType type = EventType::SessionStarted;
    // Absent before the first stage is entered.
    std::optional<StageId> stage;
    Instant at = 0;
    Json payload = Json::object();

    bool operator==(const Event&) const = default;
};

void to_json(Json& j, const Event& e);
void from_json(const Json& j, Event& e);

// Folds one event into the state. Throws ValidationError on a payload that
// does not parse.
void apply(SessionState& state, const Event& e);
SessionState replay(const std::vector<Event>& events);

// Problems found while replaying a log: sequence gaps, stage regressions,
// counter overruns, artifact causality. Each message names the event index.
std::vector<Violation> audit_log(const std::vector<Event>& events);

class EventSink {
public:
    virtual ~EventSink() = default;
    virtual void append(const Event& e) = 0;
};

class MemorySink : public EventSink {
public:
    void append(const Event& e) override { events.push_back(e); }
    std::vector<Event> events;
};

class FileSink : public EventSink {
public:
    explicit FileSink(std::filesystem::path path, FaultInjector* faults = nullptr);
    void append(const Event& e) override;
    const std::filesystem::path& path() const { return file_.path(); }

private:
    AppendFile file_;
};

struct EventLogRead {
    std::vector<Event> events;
    bool torn_tail = false;
};

// Reads a log file; a torn final line is reported and skipped.
EventLogRead load_event_log(const std::filesystem::path& path);

// Index one past the last iteration_committed event (0 when there is none).
std::size_t committed_prefix(const std::vector<Event>& events);

}  // namespace counselflow
