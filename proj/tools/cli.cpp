#include "cli.hpp"

#include <csignal>
#include <pthread.h>

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "counselflow/backends.hpp"
#include "counselflow/bench.hpp"
#include "counselflow/errors.hpp"
#include "counselflow/evaluator.hpp"
#include "counselflow/service.hpp"

namespace counselflow::cli {

namespace fs = std::filesystem;

namespace {

// Bad flags, paths or config: exit 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BackendSettings {
    std::string kind;  // "offline" or "http"; empty = decide from base_url
    std::uint64_t seed = 0;
    std::string base_url;
    std::string api_key_env = "COUNSELFLOW_API_KEY";
    std::string chat_model;
    std::string embed_model;
    int timeout_ms = 60000;
    int max_in_flight = 16;
    int max_retries = 2;
};

struct FileConfig {
    BackendSettings backend;
    std::optional<BackendSettings> judge;
    EngineConfig engine;
    int parallelism = 1;
    bool score = true;
    long case_timeout_ms = 0;
    std::optional<fs::path> out_dir;
    std::string listen = "127.0.0.1:8080";
    std::optional<fs::path> unix_socket;
    fs::path storage_root = "counselflow-data";
    std::size_t max_page = 1000;
};

void reject_unknown(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw UsageError(where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) throw UsageError(where + ": unknown key '" + it.key() + "'");
    }
}

BackendSettings parse_backend(const Json& j, BackendSettings b, const std::string& where) {
    reject_unknown(j,
                   {"kind", "seed", "base_url", "api_key_env", "chat_model", "embed_model", "timeout_ms",
                    "max_in_flight", "max_retries"},
                   where);
    b.kind = j.value("kind", b.kind);
    if (!b.kind.empty() && b.kind != "offline" && b.kind != "http")
        throw UsageError(where + ".kind must be \"offline\" or \"http\"");
    b.seed = j.value("seed", b.seed);
    b.base_url = j.value("base_url", b.base_url);
    b.api_key_env = j.value("api_key_env", b.api_key_env);
    b.chat_model = j.value("chat_model", b.chat_model);
    b.embed_model = j.value("embed_model", b.embed_model);
    b.timeout_ms = j.value("timeout_ms", b.timeout_ms);
    b.max_in_flight = j.value("max_in_flight", b.max_in_flight);
    b.max_retries = j.value("max_retries", b.max_retries);
    if (b.max_in_flight < 1 || b.max_retries < 0 || b.timeout_ms < 1)
        throw UsageError(where + ": max_in_flight >= 1, max_retries >= 0, timeout_ms >= 1");
    return b;
}

FileConfig load_config(const std::string& path) {
    FileConfig c;
    if (const char* v = std::getenv("COUNSELFLOW_BASE_URL")) c.backend.base_url = v;
    if (const char* v = std::getenv("COUNSELFLOW_CHAT_MODEL")) c.backend.chat_model = v;
    if (const char* v = std::getenv("COUNSELFLOW_EMBED_MODEL")) c.backend.embed_model = v;
    if (path.empty()) return c;
    if (!fs::exists(path)) throw UsageError("config file not found: " + path);
    Json j;
    try {
        j = Json::parse(read_file(path));
    } catch (const Json::exception& e) {
        throw UsageError("config " + path + ": " + e.what());
    }
    try {
        reject_unknown(j, {"backend", "judge", "engine", "bench", "service"}, "config");
        if (j.contains("backend")) c.backend = parse_backend(j.at("backend"), c.backend, "backend");
        if (j.contains("judge")) c.judge = parse_backend(j.at("judge"), c.backend, "judge");
        if (j.contains("engine")) {
            reject_unknown(j.at("engine"),
                           {"ablation", "k", "max_pairs_per_stage", "max_messages", "refusal_keywords",
                            "agent_temperature"},
                           "engine");
            c.engine = j.at("engine").get<EngineConfig>();
        }
        if (j.contains("bench")) {
            const auto& b = j.at("bench");
            reject_unknown(b, {"parallelism", "score", "case_timeout_ms", "out_dir"}, "bench");
            c.parallelism = b.value("parallelism", c.parallelism);
            c.score = b.value("score", c.score);
            c.case_timeout_ms = b.value("case_timeout_ms", c.case_timeout_ms);
            if (b.contains("out_dir")) c.out_dir = b.at("out_dir").get<std::string>();
        }
        if (j.contains("service")) {
            const auto& s = j.at("service");
            reject_unknown(s, {"listen", "unix_socket", "storage_root", "max_page"}, "service");
            c.listen = s.value("listen", c.listen);
            if (s.contains("unix_socket") && !s.at("unix_socket").is_null())
                c.unix_socket = s.at("unix_socket").get<std::string>();
            if (s.contains("storage_root")) c.storage_root = s.at("storage_root").get<std::string>();
            c.max_page = s.value("max_page", c.max_page);
        }
    } catch (const Json::exception& e) {
        throw UsageError("config " + path + ": " + e.what());
    } catch (const ValidationError& e) {
        throw UsageError("config " + path + ": " + e.what());
    }
    return c;
}

std::shared_ptr<Backend> make_backend(const BackendSettings& b, bool mock, std::uint64_t seed_override,
                                      bool seed_given) {
    if (mock || b.kind == "offline") return std::make_shared<OfflineBackend>(seed_given ? seed_override : b.seed);
    if (b.base_url.empty())
        throw UsageError("no model backend configured: pass --mock, or set backend.base_url (or COUNSELFLOW_BASE_URL)");
    HttpBackendConfig h;
    h.base_url = b.base_url;
    if (const char* key = std::getenv(b.api_key_env.c_str())) h.api_key = key;
    h.chat_model = b.chat_model;
    h.embed_model = b.embed_model;
    h.timeout_ms = b.timeout_ms;
    return std::make_shared<HttpBackend>(h);
}

GatewayOptions gateway_options(const BackendSettings& b) {
    GatewayOptions o;
    o.max_in_flight = b.max_in_flight;
    o.max_retries = b.max_retries;
    return o;
}

// "all7" -> a judge that gives every item 7.
std::shared_ptr<Backend> fixed_judge(const std::string& spec) {
    if (spec.rfind("all", 0) != 0 || spec.size() == 3) throw UsageError("--mock-judge expects allN, e.g. all7");
    double value = 0;
    try {
        std::size_t used = 0;
        value = std::stod(spec.substr(3), &used);
        if (used != spec.size() - 3) throw std::invalid_argument(spec);
    } catch (const std::exception&) {
        throw UsageError("--mock-judge expects allN, e.g. all7");
    }
    auto backend = std::make_shared<ScriptedBackend>();
    backend->respond("judge", [value](const ChatRequest& req) {
        Json ctx = extract_context(req);
        Json items = Json::object();
        for (const auto& it : ctx.at("rubric").at("items"))
            items[it.at("id").get<std::string>()] = {{"score", value}, {"rationale", "fixed mock score"}};
        return Json{{"items", items}}.dump();
    });
    return backend;
}

AblationConfig parse_ablation(const std::vector<std::string>& flags) {
    AblationConfig a;
    for (const auto& f : flags) {
        auto eq = f.find('=');
        std::string key = f.substr(0, eq);
        std::string val = eq == std::string::npos ? "" : f.substr(eq + 1);
        try {
            if (key == "none") {
                a = {};
            } else if (key == "remove-stage") {
                a.remove_stage = parse_stage_ref(val);
            } else if (key == "prompt-stage") {
                a.prompt_stage = parse_stage_ref(val);
            } else if (key == "disable-recorder" || key == "no-recorder") {
                a.disable_recorder = true;
            } else {
                throw UsageError("unknown ablation '" + f +
                                 "' (use remove-stage=N, prompt-stage=N, disable-recorder or none)");
            }
        } catch (const ValidationError& e) {
            throw UsageError("--ablation " + f + ": " + e.what());
        }
    }
    if (a.remove_stage && a.prompt_stage && *a.remove_stage == *a.prompt_stage)
        throw UsageError("--ablation: a stage cannot be both removed and prompted");
    return a;
}

std::string fixed(double v, int digits) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << v;
    return os.str();
}

std::string stem_for(const fs::path& p) {
    std::string name = p.filename().string();
    for (const char* suffix : {".events.jsonl", ".jsonl", ".json", ".log"}) {
        std::string s(suffix);
        if (name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0)
            return name.substr(0, name.size() - s.size());
    }
    return name;
}

// ---------------------------------------------------------------- options

struct Common {
    std::string config_path;
    bool json = false;
    bool mock = false;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::vector<std::string> ablation;
    std::optional<std::size_t> k;
};

struct Context {
    Common common;
    FileConfig config;
    std::istream& in;
    std::ostream& out;
    std::ostream& err;
};

EngineConfig engine_config(const Context& cx) {
    EngineConfig e = cx.config.engine;
    if (!cx.common.ablation.empty()) e.ablation = parse_ablation(cx.common.ablation);
    if (cx.common.k) {
        if (*cx.common.k == 0) throw UsageError("--k must be at least 1");
        e.k = *cx.common.k;
    }
    return e;
}

std::shared_ptr<Gateway> agent_gateway(const Context& cx) {
    const auto& b = cx.config.backend;
    return std::make_shared<Gateway>(make_backend(b, cx.common.mock, cx.common.seed, cx.common.seed_given),
                                     gateway_options(b));
}

std::shared_ptr<Gateway> judge_gateway(const Context& cx, const std::string& mock_judge) {
    const auto& b = cx.config.judge ? *cx.config.judge : cx.config.backend;
    if (!mock_judge.empty()) return std::make_shared<Gateway>(fixed_judge(mock_judge), gateway_options(b));
    return std::make_shared<Gateway>(make_backend(b, cx.common.mock, cx.common.seed, cx.common.seed_given),
                                      gateway_options(b));
}

// ---------------------------------------------------------------- session

struct SessionArgs {
    std::string profile;
    std::string script;
    std::string out;
    bool simulate = false;
};

int cmd_session(Context& cx, const SessionArgs& a) {
    if (!fs::exists(a.profile)) throw UsageError("profile file not found: " + a.profile);
    Json pj;
    try {
        pj = Json::parse(read_file(a.profile));
    } catch (const Json::exception& e) {
        throw UsageError("profile " + a.profile + ": " + e.what());
    }
    std::optional<BenchCase> persona;
    ClientProfile profile;
    try {
        if (pj.contains("narrative_seed")) {
            persona = pj.get<BenchCase>();
            profile = persona->profile;
        } else {
            profile = pj.get<ClientProfile>();
        }
    } catch (const Error& e) {
        throw UsageError("profile " + a.profile + ": " + e.what());
    } catch (const Json::exception& e) {
        throw UsageError("profile " + a.profile + ": " + e.what());
    }
    if (auto v = validate_profile(profile); !v.empty()) throw UsageError("profile " + a.profile + ": " + describe(v));
    if (a.simulate && !persona) throw UsageError("--simulate needs a bench case (with narrative_seed) as --profile");

    std::optional<std::vector<std::string>> script;
    if (!a.script.empty()) {
        if (!fs::exists(a.script)) throw UsageError("script file not found: " + a.script);
        auto lines = read_lines(a.script).lines;
        lines.erase(std::remove_if(lines.begin(), lines.end(), [](const std::string& l) { return l.empty(); }),
                    lines.end());
        script = std::move(lines);
    }

    auto config = engine_config(cx);
    auto gateway = agent_gateway(cx);
    auto prompts = PromptLibrary::load_default();
    SystemClock clock;
    std::unique_ptr<FileSink> file;
    if (!a.out.empty()) {
        fs::create_directories(a.out);
        fs::remove(fs::path(a.out) / "events.jsonl");
        file = std::make_unique<FileSink>(fs::path(a.out) / "events.jsonl");
    }
    SessionEngine engine(EngineDeps{*gateway, prompts, nullptr, clock, file.get()}, config);
    const std::string session_id = "cli-" + profile.client_id;

    std::optional<SimulatedClient> sim;
    if (a.simulate) sim.emplace(*persona, *gateway, prompts);
    std::size_t script_pos = 0;
    const bool chatty = !cx.common.json;
    int code = kExitOk;
    std::string error;
    try {
        engine.start(session_id, profile);
        if (chatty) cx.out << "session " << session_id << " (" << config.ablation.label() << "); stage "
                           << to_string(engine.state().stage) << "\n";
        while (engine.state().status == SessionStatus::Active) {
            std::string msg;
            if (script) {
                if (script_pos >= script->size()) {
                    engine.abort("client script exhausted");
                    break;
                }
                msg = (*script)[script_pos++];
            } else if (sim) {
                msg = sim->next(engine.state());
            } else {
                if (chatty) cx.out << "you> " << std::flush;
                if (!std::getline(cx.in, msg)) {
                    engine.abort("client left the session");
                    break;
                }
                if (msg.find_first_not_of(" \t\r") == std::string::npos) continue;
            }
            if (chatty && (script || sim)) cx.out << "client: " << msg << "\n";
            const auto before = engine.state().stage;
            auto res = engine.advance(msg);
            if (chatty) {
                cx.out << "counselor: " << res.reply << "\n";
                if (engine.state().stage != before) cx.out << "-- stage " << to_string(engine.state().stage) << "\n";
            }
        }
    } catch (const Error& e) {
        engine.abort(e.what());
        error = e.what();
        code = kExitFailure;
    }
    const auto& st = engine.state();
    if (!a.out.empty()) write_file_atomic(fs::path(a.out) / "artifacts.json", Json(st.artifacts).dump(2) + "\n");
    if (cx.common.json) {
        Json doc = session_view(st, engine.events().size());
        doc["artifact_documents"] = st.artifacts;
        if (!error.empty()) doc["error"] = error;
        cx.out << doc.dump(2) << "\n";
    } else {
        cx.out << "status " << to_string(st.status) << ", " << st.transcript.size() << " messages, "
               << st.artifacts.count() << " artifacts";
        if (st.routing) cx.out << ", routed to " << to_string(st.routing->selected);
        cx.out << "\n";
        if (!error.empty()) cx.err << "error: " << error << "\n";
    }
    return code;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
    std::string cases;
    std::string out;
    std::optional<int> parallel;
    bool no_score = false;
    std::string mock_judge;
    std::optional<long> timeout_ms;
    std::string scripts;
};

int cmd_bench(Context& cx, const BenchArgs& a) {
    if (!fs::exists(a.cases)) throw UsageError("case file not found: " + a.cases);
    std::vector<BenchCase> cases;
    try {
        cases = load_bench(a.cases);
    } catch (const ValidationError& e) {
        throw UsageError(e.what());
    }
    BatchConfig bc;
    bc.engine = engine_config(cx);
    bc.parallelism = a.parallel.value_or(cx.config.parallelism);
    if (bc.parallelism < 0) throw UsageError("--parallel must be >= 0");
    bc.score = !a.no_score && cx.config.score;
    bc.case_timeout_ms = a.timeout_ms.value_or(cx.config.case_timeout_ms);
    if (!a.out.empty()) {
        bc.out_dir = fs::path(a.out);
    } else if (cx.config.out_dir) {
        bc.out_dir = cx.config.out_dir;
    } else {
        bc.out_dir = fs::path("bench-out");
    }

    std::map<std::string, std::vector<std::string>> scripts;
    if (!a.scripts.empty()) {
        if (!fs::exists(a.scripts)) throw UsageError("script file not found: " + a.scripts);
        try {
            scripts = Json::parse(read_file(a.scripts)).get<std::map<std::string, std::vector<std::string>>>();
        } catch (const Json::exception& e) {
            throw UsageError("scripts " + a.scripts + ": expected {client_id: [lines]}: " + e.what());
        }
    }

    auto agents = agent_gateway(cx);
    auto judge = judge_gateway(cx, a.mock_judge);
    auto prompts = PromptLibrary::load_default();
    auto rubrics = RubricLibrary::load_default();
    auto result = run_batch(cases, bc, BatchDeps{*agents, *judge, prompts, rubrics, scripts});
    const bool ok = result.all_completed_and_scored(bc.score);

    if (cx.common.json) {
        Json doc = result.summary;
        doc["out_dir"] = bc.out_dir->string();
        doc["ok"] = ok;
        cx.out << doc.dump(2) << "\n";
    } else {
        cx.out << result.report.text;
        cx.out << "output: " << bc.out_dir->string() << "\n";
        for (const auto& c : result.cases) {
            if (c.status == SessionStatus::Completed && c.error.empty() && c.violations.empty() &&
                (!bc.score || !c.scores.empty()))
                continue;
            cx.err << "case " << c.client_id << ": " << to_string(c.status);
            if (!c.error.empty()) cx.err << ": " << c.error;
            if (!c.violations.empty()) cx.err << "; " << describe(c.violations);
            cx.err << "\n";
        }
    }
    return ok ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------- score

struct ScoreArgs {
    std::vector<std::string> logs;
    std::vector<std::string> rubrics{"auto"};
    std::string mock_judge;
    std::string out;
};

std::string rubric_choices() {
    std::string s;
    for (auto r : kAllRubrics) s += (s.empty() ? "" : ", ") + std::string(to_string(r));
    return s + ", auto";
}

int cmd_score(Context& cx, const ScoreArgs& a) {
    std::vector<std::optional<RubricName>> wanted;  // nullopt = auto
    for (const auto& r : a.rubrics) {
        if (r == "auto") {
            wanted.push_back(std::nullopt);
            continue;
        }
        auto n = parse_rubric_name(r);
        if (!n) throw UsageError("unknown rubric '" + r + "'; valid rubrics: " + rubric_choices());
        wanted.push_back(*n);
    }
    for (const auto& p : a.logs)
        if (!fs::exists(p)) throw UsageError("transcript log not found: " + p);

    auto judge = judge_gateway(cx, a.mock_judge);
    auto prompts = PromptLibrary::load_default();
    auto rubrics = RubricLibrary::load_default();

    std::vector<RubricScore> scores;
    Json docs = Json::array();
    std::vector<std::string> failures;
    for (const auto& p : a.logs) {
        SessionState st;
        try {
            auto log = load_event_log(p);
            st = replay(log.events);
        } catch (const Error& e) {
            failures.push_back(p + ": " + e.what());
            continue;
        }
        const std::string tid = st.session_id.empty() ? stem_for(p) : st.session_id;
        for (const auto& w : wanted) {
            std::optional<RubricName> name = w;
            if (!name) {
                if (st.routing) {
                    name = rubric_for(st.routing->selected);
                } else if (st.profile.ground_truth_school) {
                    name = rubric_for(*st.profile.ground_truth_school);
                } else {
                    failures.push_back(p + ": no routing decision to pick a rubric from; pass --rubric");
                    continue;
                }
            }
            try {
                auto s = score_transcript(*judge, prompts, rubrics.get(*name), st.transcript, tid);
                Json d = s;
                d["source"] = p;
                docs.push_back(d);
                if (!a.out.empty()) {
                    write_file_atomic(fs::path(a.out) / "scores" / (stem_for(p) + "." + std::string(to_string(*name)) + ".json"),
                                      d.dump(2) + "\n");
                }
                if (!cx.common.json) {
                    cx.out << p << " " << to_string(*name) << " total " << fixed(s.total, 0) << "/"
                           << fixed(rubrics.get(*name).total_max, 0);
                    if (!s.flags.empty()) cx.out << " (" << s.flags.size() << " flags)";
                    cx.out << "\n";
                }
                scores.push_back(std::move(s));
            } catch (const Error& e) {
                failures.push_back(p + " " + std::string(to_string(*name)) + ": " + e.what());
            }
        }
    }

    Json doc{{"scores", docs}};
    if (!scores.empty()) {
        auto report = aggregate_report(scores, std::nullopt);
        doc["aggregate"] = report.document;
        if (!a.out.empty()) {
            write_file_atomic(fs::path(a.out) / "report.json", report.document.dump(2) + "\n");
            write_file_atomic(fs::path(a.out) / "report.txt", report.text);
            // Same file names as a bench run writes.
            for (const auto& [key, csv] : report.csv) {
                std::string rubric = key;
                std::transform(rubric.begin(), rubric.end(), rubric.begin(),
                               [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
                write_file_atomic(fs::path(a.out) / ("report." + rubric + ".csv"), csv);
            }
        }
        if (!cx.common.json) {
            for (const auto& [rubric, csv] : report.csv) cx.out << "\n" << rubric << "\n" << csv;
        }
    }
    if (!failures.empty()) doc["failures"] = failures;
    if (cx.common.json) cx.out << doc.dump(2) << "\n";
    for (const auto& f : failures) cx.err << "error: " << f << "\n";
    return failures.empty() ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------- validate

struct ValidateArgs {
    std::vector<std::string> paths;
    std::vector<std::string> memory;
};

struct Finding {
    std::string path;
    std::string kind;
    std::vector<std::string> problems;
};

std::map<std::uint64_t, std::string> read_journal(const fs::path& p, std::vector<std::string>& problems) {
    std::map<std::uint64_t, std::string> ids;  // id -> session
    auto lines = read_lines(p);
    if (lines.torn_tail) problems.push_back(p.string() + ": torn final line");
    for (std::size_t i = 0; i < lines.lines.size(); ++i) {
        try {
            auto u = Json::parse(lines.lines[i]).get<MemoryUnit>();
            ids[u.id] = u.session_id;
        } catch (const std::exception& e) {
            problems.push_back(p.string() + ":" + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return ids;
}

void check_ids(const std::string& label, const std::vector<std::uint64_t>& ids,
               const std::optional<std::map<std::uint64_t, std::string>>& journal, std::vector<std::string>& out) {
    if (!journal) return;
    for (auto id : ids)
        if (!journal->count(id)) out.push_back(label + " cites memory unit " + std::to_string(id) + " which does not exist");
}

void check_bundle_ids(const std::string& where, const ArtifactBundle& b,
                      const std::optional<std::map<std::uint64_t, std::string>>& journal, std::vector<std::string>& out) {
    if (b.case_form) check_ids(where + "F_case", b.case_form->source_memory_ids, journal, out);
    if (b.therapeutic_record) check_ids(where + "O_ther", b.therapeutic_record->source_memory_ids, journal, out);
    if (b.relapse_plan) check_ids(where + "P_rel", b.relapse_plan->source_memory_ids, journal, out);
}

std::vector<std::string> texts(const std::vector<Violation>& v) {
    std::vector<std::string> out;
    for (const auto& x : v) out.push_back(x.code + ": " + x.message);
    return out;
}

// Journal for a client: explicit --memory entries first, then the layouts
// the bench runner and the service write.
std::optional<fs::path> find_journal(const fs::path& file, const std::string& client_id,
                                     const std::vector<std::string>& memory) {
    const std::string name = safe_file_stem(client_id) + ".jsonl";
    for (const auto& m : memory) {
        fs::path p(m);
        if (fs::is_directory(p) && fs::exists(p / name)) return p / name;
        if (fs::is_regular_file(p)) return p;
    }
    fs::path dir = fs::absolute(file).parent_path();
    for (int up = 0; up < 3 && !dir.empty(); ++up, dir = dir.parent_path()) {
        if (fs::exists(dir / "memory" / name)) return dir / "memory" / name;
    }
    return std::nullopt;
}

Finding validate_log(const fs::path& p, const std::vector<std::string>& memory) {
    Finding f{p.string(), "event log", {}};
    EventLogRead log;
    try {
        log = load_event_log(p);
    } catch (const Error& e) {
        f.problems.push_back(e.what());
        return f;
    }
    if (log.torn_tail) f.problems.push_back("torn final line (uncommitted write)");
    for (const auto& v : audit_log(log.events)) f.problems.push_back(v.code + ": " + v.message);
    if (log.events.empty()) return f;
    std::string client;
    try {
        client = log.events.front().payload.at("profile").at("client_id").get<std::string>();
    } catch (const std::exception&) {
        return f;
    }
    std::optional<std::map<std::uint64_t, std::string>> journal;
    if (auto jp = find_journal(p, client, memory)) journal = read_journal(*jp, f.problems);
    if (!journal) return f;
    for (std::size_t i = 0; i < log.events.size(); ++i) {
        const auto& e = log.events[i];
        const std::string at = "event " + std::to_string(i) + ": ";
        if (e.type == EventType::MemoryAdded) {
            auto id = e.payload.value("unit", Json::object()).value("id", std::uint64_t{0});
            if (!journal->count(id)) f.problems.push_back(at + "memory unit " + std::to_string(id) + " is not in the journal");
        }
        if (e.type == EventType::ArtifactCompiled) {
            std::vector<std::uint64_t> ids;
            try {
                ids = e.payload.at("artifact").value("source_memory_ids", std::vector<std::uint64_t>{});
            } catch (const std::exception&) {
            }
            check_ids(at + e.payload.value("kind", std::string("artifact")), ids, journal, f.problems);
        }
    }
    return f;
}

Finding validate_json_doc(const fs::path& p, const std::vector<std::string>& memory) {
    Finding f{p.string(), "document", {}};
    Json j;
    try {
        j = Json::parse(read_file(p));
    } catch (const Json::exception& e) {
        f.problems.push_back(e.what());
        return f;
    }
    std::optional<std::map<std::uint64_t, std::string>> journal;
    auto merge = [&](const fs::path& jp) {
        auto ids = read_journal(jp, f.problems);
        if (!journal) journal.emplace();
        journal->insert(ids.begin(), ids.end());
    };
    for (const auto& m : memory) {
        if (fs::is_regular_file(m)) {
            merge(m);
        } else if (fs::is_directory(m)) {
            for (const auto& e : fs::directory_iterator(m))
                if (e.is_regular_file() && e.path().extension() == ".jsonl") merge(e.path());
        }
    }
    // Bench output names artifacts after the client, next to memory/.
    if (memory.empty()) {
        if (auto jp = find_journal(p, stem_for(p), {})) merge(*jp);
    }
    try {
        if (j.contains("presenting_problems")) {
            f.kind = "F_case";
            auto a = j.get<CaseConceptualizationForm>();
            if (a.meta.provenance == Provenance::Standard) f.problems = texts(validate_case_form(a));
            check_ids("F_case", a.source_memory_ids, journal, f.problems);
        } else if (j.contains("interventions")) {
            f.kind = "O_ther";
            auto a = j.get<TherapeuticRecord>();
            if (a.meta.provenance == Provenance::Standard) f.problems = texts(validate_therapeutic_record(a));
            check_ids("O_ther", a.source_memory_ids, journal, f.problems);
        } else if (j.contains("high_risk_situations")) {
            f.kind = "P_rel";
            auto a = j.get<RelapsePreventionPlan>();
            if (a.meta.provenance == Provenance::Standard) f.problems = texts(validate_relapse_plan(a, true));
            check_ids("P_rel", a.source_memory_ids, journal, f.problems);
        } else if (j.contains("F_case") || j.contains("O_ther") || j.contains("P_rel")) {
            f.kind = "artifact bundle";
            auto b = j.get<ArtifactBundle>();
            f.problems = texts(validate_bundle_order(b));
            check_bundle_ids("", b, journal, f.problems);
        } else if (j.contains("items") && j.contains("total_max")) {
            f.kind = "rubric";
            (void)j.get<RubricDefinition>();
        } else if (j.contains("transcript") && j.contains("session_id")) {
            f.kind = "session state";
            f.problems = texts(validate_session(j.get<SessionState>()));
        } else if (j.contains("state") && j.contains("event_count")) {
            f.kind = "snapshot";
            f.problems = texts(validate_session(j.at("state").get<SessionState>()));
        } else {
            f.kind = "unknown";
            f.problems.push_back("not a recognized document (artifact, bundle, rubric, session state)");
        }
    } catch (const Error& e) {
        f.problems.push_back(e.what());
    } catch (const Json::exception& e) {
        f.problems.push_back(e.what());
    }
    return f;
}

Finding validate_path(const fs::path& p, const std::vector<std::string>& memory) {
    const std::string name = p.filename().string();
    auto ends = [&name](const std::string& s) {
        return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends(".jsonl")) {
        // Case files, event logs and memory journals share the extension.
        auto lines = read_lines(p);
        Json first;
        for (const auto& l : lines.lines) {
            if (l.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                first = Json::parse(l);
            } catch (const Json::exception&) {
            }
            break;
        }
        if (first.is_object() && first.contains("seq") && first.contains("type")) return validate_log(p, memory);
        if (first.is_object() && first.contains("structured_info")) {
            Finding f{p.string(), "memory journal", {}};
            read_journal(p, f.problems);
            return f;
        }
        Finding f{p.string(), "case file", {}};
        try {
            auto cases = parse_bench(read_file(p), p.string());
            f.kind = "case file (" + std::to_string(cases.size()) + " cases)";
        } catch (const Error& e) {
            f.problems.push_back(e.what());
        }
        return f;
    }
    return validate_json_doc(p, memory);
}

int cmd_validate(Context& cx, const ValidateArgs& a) {
    std::vector<fs::path> files;
    for (const auto& p : a.paths) {
        if (!fs::exists(p)) throw UsageError("path not found: " + p);
        if (fs::is_directory(p)) {
            std::vector<fs::path> found;
            for (const auto& e : fs::recursive_directory_iterator(p)) {
                if (!e.is_regular_file()) continue;
                const auto ext = e.path().extension().string();
                const auto parent = e.path().parent_path().filename().string();
                // Memory journals are checked through the logs that cite them.
                if ((ext == ".jsonl" || ext == ".json") && parent != "memory" && parent != "scores" &&
                    e.path().filename() != "report.json" && e.path().filename() != "meta.json")
                    found.push_back(e.path());
            }
            std::sort(found.begin(), found.end());
            files.insert(files.end(), found.begin(), found.end());
        } else {
            files.push_back(p);
        }
    }
    for (const auto& m : a.memory)
        if (!fs::exists(m)) throw UsageError("memory path not found: " + m);

    std::vector<Finding> findings;
    for (const auto& f : files) findings.push_back(validate_path(f, a.memory));
    bool clean = true;
    Json docs = Json::array();
    for (const auto& f : findings) {
        clean = clean && f.problems.empty();
        docs.push_back({{"path", f.path}, {"kind", f.kind}, {"ok", f.problems.empty()}, {"problems", f.problems}});
        if (!cx.common.json) {
            cx.out << (f.problems.empty() ? "OK   " : "FAIL ") << f.path << " (" << f.kind << ")\n";
            for (const auto& p : f.problems) cx.out << "     " << p << "\n";
        }
    }
    if (cx.common.json) cx.out << Json{{"ok", clean}, {"files", docs}}.dump(2) << "\n";
    return clean ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------- serve

struct ServeArgs {
    std::string listen;
    std::string unix_socket;
    std::string root;
};

int cmd_serve(Context& cx, const ServeArgs& a) {
    ServiceConfig sc;
    sc.engine = engine_config(cx);
    sc.storage_root = a.root.empty() ? cx.config.storage_root : fs::path(a.root);
    sc.max_page = cx.config.max_page;
    std::shared_ptr<Gateway> gateway;
    try {
        gateway = agent_gateway(cx);
    } catch (const UsageError& e) {
        // Still serves stored sessions; creation answers 503.
        cx.err << "warning: " << e.what() << "\n";
    }
    auto prompts = PromptLibrary::load_default();
    SystemClock clock;
    SessionService service(gateway, prompts, clock, sc);
    for (const auto& r : service.recovered())
        cx.err << "recovered " << r.session_id << ": discarded " << r.discarded_events << " events, "
               << r.discarded_units << " memory units" << (r.aborted ? ", aborted" : "") << "\n";

    HttpFrontend frontend(service);
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&set, &sig);
        frontend.stop();
    });

    const std::string unix_socket = !a.unix_socket.empty()
                                        ? a.unix_socket
                                        : (cx.config.unix_socket ? cx.config.unix_socket->string() : std::string{});
    bool ok = false;
    if (!unix_socket.empty()) {
        cx.err << "listening on unix:" << unix_socket << "\n";
        ok = frontend.listen_unix(unix_socket);
    } else {
        const std::string listen = a.listen.empty() ? cx.config.listen : a.listen;
        auto colon = listen.rfind(':');
        if (colon == std::string::npos) {
            pthread_kill(waiter.native_handle(), SIGTERM);
            waiter.join();
            throw UsageError("--listen expects host:port");
        }
        int port = 0;
        try {
            port = std::stoi(listen.substr(colon + 1));
        } catch (const std::exception&) {
            port = -1;
        }
        if (port <= 0 || port > 65535) {
            pthread_kill(waiter.native_handle(), SIGTERM);
            waiter.join();
            throw UsageError("--listen: bad port in '" + listen + "'");
        }
        cx.err << "listening on http://" << listen << "\n";
        ok = frontend.listen(listen.substr(0, colon), port);
    }
    if (!ok) {
        pthread_kill(waiter.native_handle(), SIGTERM);
        waiter.join();
        cx.err << "error: could not bind listener\n";
        return kExitFailure;
    }
    waiter.join();
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
    CLI::App app{"counselflow: staged counseling sessions, batch benchmarks and rubric scoring", "counselflow"};
    app.require_subcommand(1, 1);
    app.fallthrough();

    Common common;
    app.add_option("--config", common.config_path, "JSON config file (see docs/config.md)");
    app.add_flag("--json", common.json, "Machine-readable output");
    app.add_flag("--mock", common.mock, "Use the deterministic offline backend (no network)");
    auto* seed_opt = app.add_option("--seed", common.seed, "Seed for the offline backend");
    app.add_option("--ablation", common.ablation,
                   "remove-stage=N, prompt-stage=N, disable-recorder or none (repeatable)")
        ->allow_extra_args(false);
    std::size_t k = 0;
    auto* k_opt = app.add_option("--k", k, "Memory units retrieved per query");

    SessionArgs sa;
    auto* session = app.add_subcommand("session", "Run one session in the terminal");
    session->add_option("--profile", sa.profile, "Client profile or bench case (JSON)")->required();
    session->add_option("--script", sa.script, "Client lines, one per line, instead of stdin");
    session->add_flag("--simulate", sa.simulate, "Let the simulated client answer (needs a bench case)");
    session->add_option("--out", sa.out, "Directory for events.jsonl and artifacts.json");

    BenchArgs ba;
    auto* bench = app.add_subcommand("bench", "Run a batch of bench cases");
    bench->add_option("--cases", ba.cases, "Line-delimited case file")->required();
    bench->add_option("--out", ba.out, "Output directory (default bench-out)");
    bench->add_option("--parallel", ba.parallel, "Cases run concurrently (0 = OpenMP default)");
    bench->add_flag("--no-score", ba.no_score, "Skip rubric scoring");
    bench->add_option("--mock-judge", ba.mock_judge, "Fixed judge: allN scores every item N");
    bench->add_option("--timeout-ms", ba.timeout_ms, "Per-case wall-clock budget");
    bench->add_option("--scripts", ba.scripts, "JSON map client_id -> scripted client lines");

    ScoreArgs sca;
    auto* score = app.add_subcommand("score", "Score stored session logs against a rubric");
    score->add_option("logs", sca.logs, "Event logs (events.jsonl)")->required();
    score->add_option("--rubric", sca.rubrics, "fit, ctsr, mbctas, hpec or auto (repeatable)")
        ->allow_extra_args(false);
    score->add_option("--mock-judge", sca.mock_judge, "Fixed judge: allN scores every item N");
    score->add_option("--out", sca.out, "Directory for score documents and report.*");

    ValidateArgs va;
    auto* validate = app.add_subcommand("validate", "Check case files, logs and artifacts");
    validate->add_option("paths", va.paths, "Files or directories")->required();
    validate->add_option("--memory", va.memory, "Memory journal file or directory (repeatable)")
        ->allow_extra_args(false);

    ServeArgs sva;
    auto* serve = app.add_subcommand("serve", "Run the HTTP session service");
    serve->add_option("--listen", sva.listen, "host:port (default 127.0.0.1:8080)");
    serve->add_option("--unix", sva.unix_socket, "Listen on a Unix socket instead");
    serve->add_option("--root", sva.root, "Storage root");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n" << "run with --help for usage\n";
        return kExitUsage;
    }
    common.seed_given = seed_opt->count() > 0;
    if (k_opt->count() > 0) common.k = k;

    try {
        Context cx{common, load_config(common.config_path), in, out, err};
        if (session->parsed()) return cmd_session(cx, sa);
        if (bench->parsed()) return cmd_bench(cx, ba);
        if (score->parsed()) return cmd_score(cx, sca);
        if (validate->parsed()) return cmd_validate(cx, va);
        if (serve->parsed()) return cmd_serve(cx, sva);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace counselflow::cli
