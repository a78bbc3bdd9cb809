#include "counselflow/orchestrator.hpp"

#include <algorithm>
#include <cctype>

#include "counselflow/errors.hpp"
#include "counselflow/recorder.hpp"

namespace counselflow {

namespace {

ArtifactKind kind_for(StageId s) {
    switch (s) {
        case StageId::Exploration: return ArtifactKind::CaseForm;
        case StageId::Insight: return ArtifactKind::TherapeuticRecord;
        case StageId::Action: return ArtifactKind::RelapsePlan;
    }
    return ArtifactKind::CaseForm;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

bool cbt_predecessor_ran(const SessionState& s, int rank) {
    if (rank == 0) return true;
    for (const auto& t : s.transcript) {
        if (t.speaker != Speaker::Agent || !t.submodule) continue;
        if (auto r = cbt_rank(*t.submodule); r && *r == rank - 1) return true;
    }
    return false;
}

std::string join_names(const std::vector<Submodule>& v) {
    std::string out;
    for (auto m : v) {
        if (!out.empty()) out += ", ";
        out += to_string(m);
    }
    return out;
}

}  // namespace

std::string_view to_string(Legality l) {
    switch (l) {
        case Legality::Legal: return "legal";
        case Legality::WrongSet: return "not in the current stage's set";
        case Legality::OutOfOrder: return "its CBT predecessor has not run yet";
        case Legality::Capped: return "it already ran 6 times in a row";
    }
    return "unknown";
}

std::optional<StageId> parse_stage_ref(std::string_view s) {
    if (s == "none" || s.empty()) return std::nullopt;
    if (s == "1") return StageId::Exploration;
    if (s == "2") return StageId::Insight;
    if (s == "3") return StageId::Action;
    if (auto st = parse_stage(s)) return st;
    throw ValidationError("unknown stage '" + std::string(s) + "' (expected 1, 2, 3, a stage name or none)");
}

namespace {

std::optional<StageId> stage_ref(const Json& j) {
    if (j.is_null()) return std::nullopt;
    if (j.is_number_integer()) return parse_stage_ref(std::to_string(j.get<int>()));
    if (j.is_string()) return parse_stage_ref(j.get<std::string>());
    throw ValidationError("stage reference must be 1, 2, 3, a stage name or none");
}

}  // namespace

void to_json(Json& j, const EngineConfig& c) {
    j = Json{{"ablation", c.ablation},
             {"k", c.k},
             {"max_pairs_per_stage", c.max_pairs_per_stage},
             {"max_messages", c.max_messages},
             {"refusal_keywords", c.refusal_keywords},
             {"agent_temperature", c.agent_temperature}};
}

void from_json(const Json& j, EngineConfig& c) {
    try {
        if (auto it = j.find("ablation"); it != j.end()) {
            if (it->contains("prompt_stage")) c.ablation.prompt_stage = stage_ref(it->at("prompt_stage"));
            if (it->contains("remove_stage")) c.ablation.remove_stage = stage_ref(it->at("remove_stage"));
            c.ablation.disable_recorder = it->value("disable_recorder", c.ablation.disable_recorder);
        }
        c.k = j.value("k", c.k);
        c.max_pairs_per_stage = j.value("max_pairs_per_stage", c.max_pairs_per_stage);
        c.max_messages = j.value("max_messages", c.max_messages);
        c.refusal_keywords = j.value("refusal_keywords", c.refusal_keywords);
        c.agent_temperature = j.value("agent_temperature", c.agent_temperature);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw ValidationError(std::string("engine config: ") + e.what());
    }
    if (c.k < 1) throw ValidationError("engine config: k must be >= 1");
    if (c.max_pairs_per_stage < 1) throw ValidationError("engine config: max_pairs_per_stage must be >= 1");
    if (c.max_messages < 2) throw ValidationError("engine config: max_messages must be >= 2");
}

std::vector<Submodule> stage_submodules(const SessionState& s) {
    SubmoduleGroup g = SubmoduleGroup::Exploration;
    if (s.stage == StageId::Insight) {
        if (!s.routing) return {};
        g = group_for(s.routing->selected);
    } else if (s.stage == StageId::Action) {
        g = SubmoduleGroup::Consolidation;
    }
    auto span = submodules_of(g);
    return {span.begin(), span.end()};
}

Legality check_submodule(const SessionState& s, Submodule m) {
    auto set = stage_submodules(s);
    if (std::find(set.begin(), set.end(), m) == set.end()) return Legality::WrongSet;
    if (auto r = cbt_rank(m); r && !cbt_predecessor_ran(s, *r)) return Legality::OutOfOrder;
    if (s.consecutive.submodule == m && s.consecutive.count >= kConsecutiveSubmoduleCap) return Legality::Capped;
    return Legality::Legal;
}

std::vector<Submodule> legal_submodules(const SessionState& s) {
    std::vector<Submodule> out;
    for (auto m : stage_submodules(s)) {
        if (check_submodule(s, m) == Legality::Legal) out.push_back(m);
    }
    return out;
}

std::vector<StageId> active_stages(const AblationConfig& a) {
    std::vector<StageId> out;
    for (auto s : kAllStages) {
        if (a.remove_stage != s) out.push_back(s);
    }
    return out;
}

SessionEngine::SessionEngine(EngineDeps deps, EngineConfig config)
    : deps_(deps), config_(std::move(config)), memory_(deps.memory) {
    if (config_.ablation.prompt_stage && config_.ablation.prompt_stage == config_.ablation.remove_stage) {
        throw PreconditionError("a stage cannot be both removed and collapsed into a prompt");
    }
    if (config_.k < 1) throw PreconditionError("k must be >= 1");
}

Instant SessionEngine::stamp() {
    Instant t = deps_.clock.now();
    if (!events_.empty() && t <= events_.back().at) t = events_.back().at + 1;
    return t;
}

const Event& SessionEngine::emit(EventType type, Json payload, std::optional<Instant> at) {
    if (type == EventType::StageEntered) tag_ = payload.at("stage").get<StageId>();
    Event e;
    e.seq = events_.size();
    e.type = type;
    e.stage = tag_;
    e.at = at ? *at : stamp();
    e.payload = std::move(payload);
    // The sink goes first: a crash here leaves memory and disk agreeing.
    if (deps_.sink) deps_.sink->append(e);
    apply(state_, e);
    events_.push_back(std::move(e));
    return events_.back();
}

void SessionEngine::emit_turn(DialogueTurn turn) {
    Instant at = stamp();
    turn.timestamp = at;
    emit(EventType::Turn, Json{{"turn", turn}}, at);
}

AgentDeps SessionEngine::agent_deps() {
    const MemoryStore* mem = config_.ablation.disable_recorder ? nullptr : memory_.get();
    return AgentDeps{deps_.gateway, deps_.prompts, mem, config_.agent_temperature, config_.k};
}

void SessionEngine::commit() {
    emit(EventType::IterationCommitted,
         Json{{"memory_high_water", memory_->high_water()}, {"iteration", ++iteration_}});
}

DialogueTurn SessionEngine::make_turn(Speaker who, std::string content, std::optional<Submodule> m,
                                      TurnKind kind) {
    DialogueTurn t;
    t.turn_index = static_cast<int>(state_.transcript.size());
    t.speaker = who;
    t.content = std::move(content);
    t.stage = state_.stage;
    t.submodule = m;
    t.kind = kind;
    return t;
}

std::vector<Event> SessionEngine::start(const std::string& session_id, const ClientProfile& profile) {
    if (started_) throw PreconditionError("session already started");
    if (session_id.empty()) throw PreconditionError("session_id must be nonempty");
    auto problems = validate_profile(profile);
    if (!problems.empty()) throw ValidationError("invalid profile: " + describe(problems));
    if (!memory_) memory_ = std::make_shared<MemoryStore>(profile.client_id);
    if (memory_->client_id() != profile.client_id) {
        throw PreconditionError("memory store belongs to a different client");
    }
    started_ = true;

    emit(EventType::SessionStarted,
         Json{{"session_id", session_id}, {"profile", profile}, {"ablation", config_.ablation}});
    if (config_.ablation.remove_stage == StageId::Exploration) {
        Recorder rec(deps_.gateway, deps_.prompts, *memory_);
        emit_artifact(ArtifactKind::CaseForm, rec.compile_intake_form(profile, stamp()));
    }
    enter_stage(active_stages(config_.ablation).front());
    commit();
    return events_;
}

void SessionEngine::restore(std::vector<Event> events) {
    if (events.empty() || events.front().type != EventType::SessionStarted) {
        throw ValidationError("restore: log does not open with session_started");
    }
    state_ = replay(events);
    events_ = std::move(events);
    config_.ablation = state_.ablation;
    tag_.reset();
    iteration_ = 0;
    for (const auto& e : events_) {
        if (e.type == EventType::StageEntered) tag_ = e.payload.at("stage").get<StageId>();
        if (e.type == EventType::IterationCommitted) iteration_ = e.payload.value("iteration", iteration_);
    }
    if (!memory_) memory_ = std::make_shared<MemoryStore>(state_.profile.client_id);
    started_ = true;
}

void SessionEngine::enter_stage(StageId stage) {
    emit(EventType::StageEntered, Json{{"stage", stage}});
    if (stage == StageId::Insight && !state_.routing) {
        if (!state_.artifacts.case_form) throw PreconditionError("Insight entered without F_case");
        auto decision = route(agent_deps(), *state_.artifacts.case_form, state_.session_id + "#F_case");
        emit(EventType::Routed, Json{{"decision", decision}});
    }
}

void SessionEngine::emit_artifact(ArtifactKind kind, const Json& artifact) {
    emit(EventType::ArtifactCompiled, Json{{"kind", kind}, {"artifact", artifact}});
}

void SessionEngine::emit_stub(StageId removed) {
    ArtifactMeta meta;
    meta.provenance = Provenance::StageRemoved;
    meta.compiled_at = stamp();
    switch (removed) {
        case StageId::Exploration: {
            CaseConceptualizationForm f;
            f.meta = meta;
            emit_artifact(ArtifactKind::CaseForm, f);
            break;
        }
        case StageId::Insight: {
            TherapeuticRecord r;
            r.meta = meta;
            emit_artifact(ArtifactKind::TherapeuticRecord, r);
            break;
        }
        case StageId::Action: {
            RelapsePreventionPlan p;
            p.meta = meta;
            emit_artifact(ArtifactKind::RelapsePlan, p);
            break;
        }
    }
}

std::vector<DialogueTurn> SessionEngine::stage_turns(StageId s) const {
    std::vector<DialogueTurn> out;
    for (const auto& t : state_.transcript) {
        if (t.stage == s) out.push_back(t);
    }
    return out;
}

bool SessionEngine::close_stage() {
    const StageId s = state_.stage;
    const ArtifactKind kind = kind_for(s);
    Recorder rec(deps_.gateway, deps_.prompts, *memory_);
    const bool prompt_stage = config_.ablation.prompt_stage == s;

    if (config_.ablation.disable_recorder) {
        ArtifactMeta meta;
        meta.provenance = Provenance::PlainSummary;
        meta.plain_summary = rec.plain_summary(s, stage_turns(s));
        meta.compiled_at = stamp();
        switch (kind) {
            case ArtifactKind::CaseForm: {
                CaseConceptualizationForm f;
                f.meta = meta;
                emit_artifact(kind, f);
                break;
            }
            case ArtifactKind::TherapeuticRecord: {
                TherapeuticRecord r;
                r.meta = meta;
                if (state_.routing) r.school = state_.routing->selected;
                emit_artifact(kind, r);
                break;
            }
            case ArtifactKind::RelapsePlan: {
                RelapsePreventionPlan p;
                p.meta = meta;
                emit_artifact(kind, p);
                break;
            }
        }
    } else {
        auto units = memory_->units_for(state_.session_id, kind);
        switch (kind) {
            case ArtifactKind::CaseForm: {
                auto f = rec.compile_case_form(units, state_.profile, stamp());
                if (prompt_stage) f.meta.provenance = Provenance::PromptStage;
                emit_artifact(kind, f);
                break;
            }
            case ArtifactKind::TherapeuticRecord: {
                if (!state_.routing) throw PreconditionError("closing Insight without routing");
                std::vector<Submodule> executed;
                for (const auto& t : state_.transcript) {
                    if (t.stage == s && t.speaker == Speaker::Agent && t.kind == TurnKind::Standard && t.submodule)
                        executed.push_back(*t.submodule);
                }
                auto r = rec.compile_therapeutic_record(units, state_.routing->selected, executed, stamp());
                if (prompt_stage) r.meta.provenance = Provenance::PromptStage;
                emit_artifact(kind, r);
                break;
            }
            case ArtifactKind::RelapsePlan: {
                auto p = rec.compile_relapse_plan(units, state_.artifacts.case_form,
                                                  state_.artifacts.therapeutic_record, stamp());
                if (prompt_stage) p.meta.provenance = Provenance::PromptStage;
                emit_artifact(kind, p);
                break;
            }
        }
    }

    std::optional<StageId> next;
    for (auto st : active_stages(config_.ablation)) {
        if (st > s) {
            next = st;
            break;
        }
    }
    for (auto st : kAllStages) {
        if (st > s && (!next || st < *next) && config_.ablation.remove_stage == st) emit_stub(st);
    }
    if (!next) return false;
    enter_stage(*next);
    return true;
}

std::optional<std::string> SessionEngine::refusal_hit(const std::string& msg) const {
    const std::string m = lower(msg);
    for (const auto& kw : config_.refusal_keywords) {
        if (!kw.empty() && m.find(lower(kw)) != std::string::npos) return kw;
    }
    return std::nullopt;
}

RIRStep SessionEngine::reason(const std::string& client_msg) {
    if (state_.status != SessionStatus::Active) throw PreconditionError("reason: session is not active");
    RIRStep step;
    step.phase = RirPhase::Reason;
    step.stage = state_.stage;
    Json payload{{"reasked", false}};

    auto finish = [&](RIRStep& st) {
        payload["goal"] = st.goal;
        payload["chosen"] = st.chosen_submodule ? Json(*st.chosen_submodule) : Json();
        payload["stage_complete"] = st.stage_complete_signal;
        payload["note"] = st.notes;
        emit(EventType::Reason, std::move(payload));
        return st;
    };

    if (config_.ablation.prompt_stage == state_.stage) {
        step.notes = "prompt stage";
        return finish(step);
    }
    if (state_.stage == StageId::Exploration && state_.exploration_turn_pairs >= kExplorationPairCap) {
        step.stage_complete_signal = true;
        step.notes = "exploration cap reached";
        return finish(step);
    }
    if (state_.stage_pairs >= config_.max_pairs_per_stage) {
        step.stage_complete_signal = true;
        step.notes = "per-stage backstop reached";
        return finish(step);
    }

    const auto available = legal_submodules(state_);
    if (available.empty()) throw PreconditionError("no legal submodule in stage " + std::string(to_string(state_.stage)));
    AgentDeps deps = agent_deps();
    ChatRequest req = reason_request(deps, state_, client_msg, available);
    ReasonProposal p = run_reason(deps, req);
    step.goal = p.goal;
    payload["proposed"] = p.raw_submodule;

    if (p.stage_complete && state_.stage_pairs >= 1) {
        step.stage_complete_signal = true;
        return finish(step);
    }

    Legality l = p.submodule ? check_submodule(state_, *p.submodule) : Legality::WrongSet;
    if (l == Legality::Legal) {
        step.chosen_submodule = p.submodule;
    } else if (l == Legality::Capped) {
        for (auto alt : p.alternatives) {
            if (check_submodule(state_, alt) == Legality::Legal) {
                step.chosen_submodule = alt;
                break;
            }
        }
        if (!step.chosen_submodule) step.chosen_submodule = available.front();
        step.notes = p.raw_submodule + " capped; using " + std::string(to_string(*step.chosen_submodule));
    } else {
        const std::string why = p.submodule ? std::string(to_string(l))
                                            : (p.raw_submodule.empty() ? "no submodule was named"
                                                                       : "it is not a known submodule");
        req.messages.push_back({Role::User, render_template(deps_.prompts.text("reask_submodule"),
                                                            {{"proposed", p.raw_submodule.empty() ? "(none)" : p.raw_submodule},
                                                             {"reason", why},
                                                             {"available", join_names(available)}})});
        payload["reasked"] = true;
        ReasonProposal again = run_reason(deps, req);
        if (!again.goal.empty()) step.goal = again.goal;
        if (again.submodule && check_submodule(state_, *again.submodule) == Legality::Legal) {
            step.chosen_submodule = again.submodule;
            step.notes = p.raw_submodule + " rejected (" + why + "); re-ask chose " + again.raw_submodule;
        } else {
            step.chosen_submodule = available.front();
            step.notes = p.raw_submodule + " rejected (" + why + "); re-ask gave " +
                         (again.raw_submodule.empty() ? "(none)" : again.raw_submodule) + "; fallback " +
                         std::string(to_string(*step.chosen_submodule));
        }
    }
    return finish(step);
}

void SessionEngine::reflect(const std::vector<DialogueTurn>& pair) {
    if (config_.ablation.disable_recorder) return;
    Recorder rec(deps_.gateway, deps_.prompts, *memory_);
    auto units = rec.atomize(pair, kind_for(state_.stage), state_.session_id, state_.profile.problem_category,
                             stamp());
    for (auto& u : units) {
        Json j = u;
        j.erase("embedding");
        emit(EventType::MemoryAdded, Json{{"unit", j}});
    }
}

AdvanceResult SessionEngine::finish_result(std::size_t first_event, std::string reply) {
    AdvanceResult r;
    r.reply = std::move(reply);
    r.events.assign(events_.begin() + static_cast<std::ptrdiff_t>(first_event), events_.end());
    r.status = state_.status;
    return r;
}

AdvanceResult SessionEngine::advance(const std::string& client_msg) {
    if (!started_) throw PreconditionError("session not started");
    if (state_.status != SessionStatus::Active) throw PreconditionError("session is not active");
    if (blank(client_msg)) throw PreconditionError("client message must be nonblank");
    const std::size_t first = events_.size();

    if (static_cast<int>(state_.transcript.size()) + 2 > config_.max_messages) {
        abort("message limit of " + std::to_string(config_.max_messages) + " reached");
        return finish_result(first, "");
    }

    if (auto kw = refusal_hit(client_msg)) {
        emit_turn(make_turn(Speaker::Client, client_msg, std::nullopt, TurnKind::Standard));
        emit(EventType::SafetyScreen, Json{{"keyword", *kw}});
        const std::string& text = deps_.prompts.text("referral");
        emit_turn(make_turn(Speaker::Agent, text, std::nullopt, TurnKind::Referral));
        commit();
        return finish_result(first, text);
    }

    RIRStep step = reason(client_msg);
    while (step.stage_complete_signal) {
        if (!close_stage()) {
            emit_turn(make_turn(Speaker::Client, client_msg, std::nullopt, TurnKind::Standard));
            const std::string& text = deps_.prompts.text("closing");
            emit_turn(make_turn(Speaker::Agent, text, std::nullopt, TurnKind::Closing));
            emit(EventType::SessionCompleted, Json::object());
            return finish_result(first, text);
        }
        step = reason(client_msg);
    }

    // Intervene. The reply is generated before either turn is logged so a
    // gateway failure leaves no half pair behind.
    AgentDeps deps = agent_deps();
    std::string reply;
    TurnKind kind = TurnKind::Standard;
    if (config_.ablation.prompt_stage == state_.stage) {
        reply = prompt_stage_turn(deps, state_, state_.stage, client_msg);
        kind = TurnKind::StagePrompt;
    } else {
        const Submodule m = *step.chosen_submodule;
        switch (state_.stage) {
            case StageId::Exploration: reply = exploration_turn(deps, state_, m, step.goal, client_msg); break;
            case StageId::Insight:
                reply = therapy_turn(deps, state_, state_.routing->selected, m, step.goal, client_msg);
                break;
            case StageId::Action: reply = consolidation_turn(deps, state_, m, step.goal, client_msg); break;
        }
    }
    auto client_turn = make_turn(Speaker::Client, client_msg, std::nullopt, TurnKind::Standard);
    emit_turn(client_turn);
    auto agent_turn = make_turn(Speaker::Agent, reply,
                                kind == TurnKind::StagePrompt ? std::nullopt : step.chosen_submodule, kind);
    emit_turn(agent_turn);

    // Reflect.
    reflect({state_.transcript[state_.transcript.size() - 2], state_.transcript.back()});
    const bool close = (state_.stage == StageId::Exploration && state_.exploration_turn_pairs >= kExplorationPairCap) ||
                       state_.stage_pairs >= config_.max_pairs_per_stage ||
                       config_.ablation.prompt_stage == state_.stage;
    if (close && !close_stage()) {
        emit(EventType::SessionCompleted, Json::object());
        return finish_result(first, reply);
    }
    commit();
    return finish_result(first, reply);
}

void SessionEngine::abort(const std::string& reason) {
    if (!started_ || state_.status != SessionStatus::Active) return;
    emit(EventType::SessionAborted, Json{{"reason", reason}});
}

void SessionEngine::mark_recovered(const Json& detail) { emit(EventType::Recovered, detail); }

std::string ScriptedChannel::next(const SessionState&) {
    if (pos_ >= lines_.size()) throw ClientClosed("client script exhausted after " + std::to_string(pos_) + " lines");
    return lines_[pos_++];
}

void drive_session(SessionEngine& engine, ClientChannel& client) {
    while (engine.state().status == SessionStatus::Active) {
        std::string msg;
        try {
            msg = client.next(engine.state());
        } catch (const ClientClosed& e) {
            engine.abort(std::string("client channel closed: ") + e.what());
            return;
        } catch (const Error& e) {
            engine.abort(std::string("client failure: ") + e.what());
            throw;
        }
        try {
            engine.advance(msg);
        } catch (const Error& e) {
            engine.abort(e.what());
            throw;
        }
    }
}

SessionRun run_session(EngineDeps deps, const EngineConfig& config, const std::string& session_id,
                       const ClientProfile& profile, ClientChannel& client) {
    SessionEngine engine(deps, config);
    engine.start(session_id, profile);
    drive_session(engine, client);
    return {engine.state(), engine.events()};
}

}  // namespace counselflow
