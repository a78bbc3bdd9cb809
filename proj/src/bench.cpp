#include "counselflow/bench.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <sstream>

#include <omp.h>

#include "counselflow/errors.hpp"
#include "counselflow/storage.hpp"

namespace counselflow {

namespace {

const std::set<std::string> kCaseKeys = {"client_id",       "age",        "occupation",          "gender",
                                         "chief_complaint", "background", "problem_category",    "ground_truth_school",
                                         "narrative_seed",  "tags"};

std::string stem_of(const std::string& id) { return safe_file_stem(id); }

std::string sentence_safe(const std::string& s) { return s.empty() ? "(none)" : s; }

}  // namespace

void to_json(Json& j, const BenchCase& c) {
    j = c.profile;
    j["narrative_seed"] = c.narrative_seed;
    j["tags"] = c.tags;
}

void from_json(const Json& j, BenchCase& c) {
    if (!j.is_object()) throw ValidationError("case is not an object");
    for (const auto& [k, v] : j.items()) {
        if (!kCaseKeys.count(k)) throw ValidationError("unknown field '" + k + "'");
    }
    c.profile = j.get<ClientProfile>();
    try {
        c.narrative_seed = j.at("narrative_seed").get<std::string>();
        c.tags = j.value("tags", std::map<std::string, std::string>{});
    } catch (const std::exception& e) {
        throw ValidationError(std::string("case: ") + e.what());
    }
}

std::vector<BenchCase> parse_bench(const std::string& content, const std::string& source) {
    std::vector<BenchCase> out;
    std::map<std::string, int> first_line;
    std::istringstream in(content);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = source + ":" + std::to_string(n);
        Json j;
        try {
            j = Json::parse(line);
        } catch (const std::exception& e) {
            throw ValidationError(where + ": not a JSON document: " + e.what());
        }
        BenchCase c;
        try {
            c = j.get<BenchCase>();
        } catch (const Error& e) {
            throw ValidationError(where + ": " + e.what());
        }
        std::vector<Violation> v = validate_profile(c.profile);
        if (!c.profile.ground_truth_school) v.push_back({"case.ground_truth_school", "ground_truth_school is required"});
        if (c.narrative_seed.find_first_not_of(" \t\r\n") == std::string::npos) {
            v.push_back({"case.narrative_seed", "narrative_seed must be nonempty"});
        }
        if (!v.empty()) throw ValidationError(where + ": case '" + c.profile.client_id + "': " + describe(v));
        auto [it, fresh] = first_line.emplace(c.profile.client_id, n);
        if (!fresh) {
            throw ValidationError(where + ": duplicate client_id '" + c.profile.client_id + "' (first on line " +
                                  std::to_string(it->second) + ")");
        }
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<BenchCase> load_bench(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) throw PreconditionError("case file not found: " + path.string());
    return parse_bench(read_file(path), path.string());
}

SimulatedClient::SimulatedClient(BenchCase persona, Gateway& gateway, const PromptLibrary& prompts, ClientStyle style)
    : persona_(std::move(persona)), gateway_(&gateway), prompts_(&prompts), style_(style) {}

SimulatedClient::SimulatedClient(BenchCase persona, std::vector<std::string> script)
    : persona_(std::move(persona)), script_(std::move(script)) {}

ChatRequest SimulatedClient::persona_request(const std::vector<DialogueTurn>& history) const {
    if (!prompts_) throw PreconditionError("scripted client has no persona prompt");
    std::string agent_msg;
    int client_turns = 0;
    for (const auto& t : history) {
        if (t.speaker == Speaker::Agent) agent_msg = t.content;
        else ++client_turns;
    }
    Json persona = profile_context(persona_.profile);
    persona["narrative_seed"] = persona_.narrative_seed;
    Json recent = Json::array();
    auto from = history.size() > 6 ? history.size() - 6 : 0;
    for (auto i = from; i < history.size(); ++i) {
        recent.push_back({{"speaker", history[i].speaker}, {"content", history[i].content}});
    }
    Json context{{"persona", persona}, {"agent_message", agent_msg}, {"turn_number", client_turns},
                 {"recent_turns", recent}};
    std::ostringstream who;
    who << persona_.profile.age << "-year-old " << persona_.profile.occupation << ". "
        << sentence_safe(persona_.profile.background) << " " << persona_.narrative_seed;
    auto level = [](double v) { return v < 0.34 ? std::string("low") : v < 0.67 ? "medium" : "high"; };
    return prompts_->build("client",
                           {{"persona", who.str()},
                            {"verbosity", level(style_.verbosity)},
                            {"disclosure", level(style_.disclosure)}},
                           context, kAgentTemperature, ResponseFormat::FreeText);
}

std::string SimulatedClient::reply(const std::vector<DialogueTurn>& history) {
    if (script_) {
        if (pos_ >= script_->size()) {
            throw ScriptExhausted("client script for " + persona_.profile.client_id + " exhausted after " +
                                  std::to_string(pos_) + " lines");
        }
        return (*script_)[pos_++];
    }
    return gateway_->chat(persona_request(history));
}

bool BatchResult::all_completed_and_scored(bool scored) const {
    for (const auto& c : cases) {
        if (c.status != SessionStatus::Completed || !c.error.empty()) return false;
        if (scored && c.scores.size() != 2) return false;
    }
    return true;
}

RubricName case_rubric(const CaseResult& r) {
    if (r.state.routing) return rubric_for(r.state.routing->selected);
    return rubric_for(r.truth);
}

namespace {

class DeadlineChannel : public ClientChannel {
public:
    DeadlineChannel(ClientChannel& inner, long timeout_ms)
        : inner_(inner), timeout_ms_(timeout_ms), start_(std::chrono::steady_clock::now()) {}
    std::string next(const SessionState& state) override {
        if (timeout_ms_ > 0) {
            auto spent = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start_);
            if (spent.count() > timeout_ms_)
                throw ClientClosed("case timeout after " + std::to_string(spent.count()) + " ms");
        }
        return inner_.next(state);
    }

private:
    ClientChannel& inner_;
    long timeout_ms_;
    std::chrono::steady_clock::time_point start_;
};

CaseResult run_case(const BenchCase& bc, const BatchConfig& config, const BatchDeps& deps, MemoryRegistry& registry) {
    CaseResult r;
    r.client_id = bc.profile.client_id;
    r.session_id = "bench-" + bc.profile.client_id;
    r.truth = *bc.profile.ground_truth_school;

    std::optional<SimulatedClient> client;
    if (auto it = deps.scripts.find(r.client_id); it != deps.scripts.end()) {
        client.emplace(bc, it->second);
    } else {
        client.emplace(bc, deps.agents, deps.prompts, config.style);
    }

    // Per-case clock: timestamps do not depend on scheduling.
    LogicalClock clock;
    std::unique_ptr<FileSink> file;
    MemorySink mem;
    EventSink* sink = &mem;
    if (config.out_dir) {
        auto path = *config.out_dir / "logs" / (stem_of(r.client_id) + ".events.jsonl");
        std::filesystem::remove(path);
        file = std::make_unique<FileSink>(path);
        sink = file.get();
    }
    SessionEngine engine(EngineDeps{deps.agents, deps.prompts, registry.store_for(r.client_id), clock, sink},
                         config.engine);
    try {
        engine.start(r.session_id, bc.profile);
        DeadlineChannel channel(*client, config.case_timeout_ms);
        drive_session(engine, channel);
    } catch (const std::exception& e) {
        r.error = e.what();
    }
    r.state = engine.state();
    r.events = engine.events();
    r.status = r.state.status;
    r.message_count = static_cast<int>(r.state.transcript.size());
    for (const auto& t : r.state.transcript) {
        if (t.speaker == Speaker::Agent) ++r.pair_count;
    }
    r.violations = audit_log(r.events);

    if (config.score && r.status == SessionStatus::Completed && r.error.empty()) {
        try {
            for (auto name : {case_rubric(r), RubricName::HPEC}) {
                r.scores.push_back(
                    score_transcript(deps.judge, deps.prompts, deps.rubrics.get(name), r.state.transcript, r.session_id));
            }
        } catch (const std::exception& e) {
            r.error = std::string("scoring: ") + e.what();
        }
    }

    if (config.out_dir) {
        const auto stem = stem_of(r.client_id);
        write_file_atomic(*config.out_dir / "artifacts" / (stem + ".json"), Json(r.state.artifacts).dump(2) + "\n");
        Json scores = r.scores;
        write_file_atomic(*config.out_dir / "scores" / (stem + ".json"), scores.dump(2) + "\n");
    }
    return r;
}

Json case_summary(const CaseResult& r) {
    Json j{{"client_id", r.client_id},
           {"session_id", r.session_id},
           {"status", r.status},
           {"ground_truth_school", r.truth},
           {"messages", r.message_count},
           {"turn_pairs", r.pair_count},
           {"exploration_turn_pairs", r.state.exploration_turn_pairs},
           {"violations", r.violations.size()}};
    if (!r.error.empty()) j["error"] = r.error;
    if (r.state.routing) {
        j["routed_school"] = r.state.routing->selected;
        j["suitability"] = Json(*r.state.routing)["suitability"];
    } else {
        j["routed_school"] = nullptr;
    }
    Json arts = Json::object();
    const auto& b = r.state.artifacts;
    arts["F_case"] = b.case_form ? Json(b.case_form->meta.provenance) : Json();
    arts["O_ther"] = b.therapeutic_record ? Json(b.therapeutic_record->meta.provenance) : Json();
    arts["P_rel"] = b.relapse_plan ? Json(b.relapse_plan->meta.provenance) : Json();
    j["artifacts"] = arts;
    Json totals = Json::object();
    for (const auto& s : r.scores) totals[std::string(to_string(s.rubric))] = s.total;
    j["scores"] = totals;
    return j;
}

}  // namespace

BatchResult run_batch(const std::vector<BenchCase>& cases, const BatchConfig& config, BatchDeps deps) {
    BatchResult out;
    out.label = config.engine.ablation.label();
    std::unique_ptr<MemoryRegistry> registry;
    if (config.out_dir) {
        for (const char* d : {"logs", "artifacts", "scores", "memory"}) {
            std::filesystem::create_directories(*config.out_dir / d);
        }
        // Journals are rebuilt for each run so reruns stay identical.
        for (const auto& c : cases) {
            std::filesystem::remove(*config.out_dir / "memory" / (safe_file_stem(c.profile.client_id) + ".jsonl"));
        }
        registry = std::make_unique<MemoryRegistry>(*config.out_dir / "memory");
    } else {
        registry = std::make_unique<MemoryRegistry>();
    }

    std::vector<CaseResult> results(cases.size());
    const int width = config.parallelism > 0 ? config.parallelism : omp_get_max_threads();
    const long n = static_cast<long>(cases.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(width)
    for (long i = 0; i < n; ++i) {
        try {
            results[static_cast<std::size_t>(i)] = run_case(cases[static_cast<std::size_t>(i)], config, deps, *registry);
        } catch (...) {
            auto& r = results[static_cast<std::size_t>(i)];
            r.client_id = cases[static_cast<std::size_t>(i)].profile.client_id;
            r.truth = *cases[static_cast<std::size_t>(i)].profile.ground_truth_school;
            r.error = "case failed outside the session";
        }
    }
    std::sort(results.begin(), results.end(),
              [](const CaseResult& a, const CaseResult& b) { return a.client_id < b.client_id; });
    out.cases = std::move(results);

    std::vector<RoutedCase> routed;
    std::vector<RubricScore> scores;
    for (const auto& r : out.cases) {
        if (r.state.routing) routed.push_back({r.state.routing->selected, r.truth});
        scores.insert(scores.end(), r.scores.begin(), r.scores.end());
    }
    if (!routed.empty()) out.routing = routing_metrics(routed);

    Json summary{{"label", out.label}, {"ablation", config.engine.ablation}, {"case_count", out.cases.size()}};
    Json list = Json::array();
    int completed = 0, aborted = 0, failed = 0;
    double messages = 0, pairs = 0;
    // Strata: each case counts toward the school it was routed to (or its
    // ground truth when nothing was routed), so strata partition the batch.
    std::map<TherapySchool, std::vector<const CaseResult*>> strata;
    for (const auto& r : out.cases) {
        list.push_back(case_summary(r));
        if (r.status == SessionStatus::Completed) ++completed;
        else ++aborted;
        if (!r.error.empty()) ++failed;
        messages += r.message_count;
        pairs += r.pair_count;
        strata[r.state.routing ? r.state.routing->selected : r.truth].push_back(&r);
    }
    summary["cases"] = list;
    summary["completed"] = completed;
    summary["aborted"] = aborted;
    summary["failed"] = failed;
    const double nc = out.cases.empty() ? 1.0 : static_cast<double>(out.cases.size());
    summary["avg_messages"] = messages / nc;
    summary["avg_turn_pairs"] = pairs / nc;

    Json strata_doc = Json::object();
    for (const auto& [school, members] : strata) {
        Json s{{"count", members.size()}};
        std::map<std::string, std::pair<double, int>> sums;
        for (const auto* r : members) {
            for (const auto& sc : r->scores) {
                auto& acc = sums[std::string(to_string(sc.rubric))];
                acc.first += sc.total;
                ++acc.second;
            }
        }
        Json means = Json::object();
        for (const auto& [k, v] : sums) means[k] = v.first / v.second;
        s["total_means"] = means;
        strata_doc[std::string(to_string(school))] = s;
    }
    summary["strata"] = strata_doc;

    if (!scores.empty() || out.routing) {
        out.report = aggregate_report(scores, out.routing);
        summary["aggregate"] = out.report.document;
    }
    out.summary = summary;

    if (config.out_dir) {
        const auto& dir = *config.out_dir;
        write_file_atomic(dir / "report.json", summary.dump(2) + "\n");
        std::ostringstream txt;
        txt << "Condition: " << out.label << "\n"
            << "Cases: " << out.cases.size() << " (completed " << completed << ", aborted " << aborted << ", failed "
            << failed << ")\n"
            << "Avg messages per session: " << summary["avg_messages"].get<double>() << "\n"
            << "Avg turn pairs per session: " << summary["avg_turn_pairs"].get<double>() << "\n\n"
            << out.report.text;
        write_file_atomic(dir / "report.txt", txt.str());
        std::ostringstream csv;
        csv << "client_id,status,ground_truth_school,routed_school,messages,turn_pairs,rubric,rubric_total,hpec_total\n";
        for (const auto& r : out.cases) {
            csv << r.client_id << "," << to_string(r.status) << "," << to_string(r.truth) << ","
                << (r.state.routing ? std::string(to_string(r.state.routing->selected)) : "") << "," << r.message_count
                << "," << r.pair_count << ",";
            std::string rubric, total, hpec;
            for (const auto& s : r.scores) {
                std::ostringstream v;
                v << s.total;
                if (s.rubric == RubricName::HPEC) {
                    hpec = v.str();
                } else {
                    rubric = std::string(to_string(s.rubric));
                    total = v.str();
                }
            }
            csv << rubric << "," << total << "," << hpec << "\n";
        }
        write_file_atomic(dir / "report.csv", csv.str());
        for (const auto& [name, body] : out.report.csv) {
            std::string lower = name;
            std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
            write_file_atomic(dir / ("report." + lower + ".csv"), body);
        }
    }
    return out;
}

}  // namespace counselflow
