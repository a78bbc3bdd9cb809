#include <algorithm>
#include <cmath>
#include <cctype>
#include <sstream>

#include "counselflow/backends.hpp"
#include "counselflow/errors.hpp"

namespace counselflow {
namespace {

// Uniform double in [0,1) from a hash.
double unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

std::uint64_t mix(std::uint64_t seed, std::string_view a, std::string_view b = {}) {
    return fnv1a(b, fnv1a(a, seed ^ 0x9e3779b97f4a7c15ULL));
}

std::string snippet(const std::string& s, std::size_t n = 90) {
    std::string out = s.substr(0, n);
    if (s.size() > n) {
        auto sp = out.find_last_of(' ');
        if (sp != std::string::npos && sp > n / 2) out.resize(sp);
        out += "...";
    }
    return out;
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

// Longest distinct alphabetic words, as keyword candidates.
std::vector<std::string> keywords_of(const std::string& text, std::size_t n) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text + " ") {
        if (std::isalpha(static_cast<unsigned char>(c))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else {
            if (cur.size() >= 5 && std::find(words.begin(), words.end(), cur) == words.end()) words.push_back(cur);
            cur.clear();
        }
    }
    std::stable_sort(words.begin(), words.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });
    if (words.size() > n) words.resize(n);
    return words;
}

std::vector<std::string> sentences(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        cur.push_back(c);
        if (c == '.' || c == '!' || c == '?') {
            auto b = cur.find_first_not_of(' ');
            if (b != std::string::npos) out.push_back(cur.substr(b));
            cur.clear();
        }
    }
    auto b = cur.find_first_not_of(' ');
    if (b != std::string::npos) out.push_back(cur.substr(b));
    return out;
}

const char* question_for(Submodule m) {
    switch (m) {
        case Submodule::MoodCheck: return "How has your mood been over the past few days?";
        case Submodule::PsychoEdu: return "Stress reactions like this are common and understandable; what have you heard about them before?";
        case Submodule::GoalSet: return "What would you most like to be different by the end of our conversations?";
        case Submodule::CognitiveCoach: return "What thought went through your mind just then, and how sure are you of it?";
        case Submodule::BehaviorActivate: return "Which small activity used to give you some energy that we could bring back this week?";
        case Submodule::S1_ExploreException: return "When was a recent time this problem was a little less intense, and what was different?";
        case Submodule::S2_ScalingQuestion: return "On a scale from 0 to 10, where are you today, and what would one point higher look like?";
        case Submodule::S3_MiracleQuestion: return "If the problem disappeared overnight, what is the first thing you would notice tomorrow?";
        case Submodule::S4_AmplifyStrength: return "You have handled hard things before; which of your strengths helped most?";
        case Submodule::C1_AutoThoughts: return "In that moment, what went through your mind automatically?";
        case Submodule::C2_ExtractInterBelief: return "If that thought were true, what rule about yourself would it follow from?";
        case Submodule::C3_ReorganizeInterBelief: return "What evidence supports that rule, and what might a more flexible version sound like?";
        case Submodule::C4_InferCoreBelief: return "And if that were true, what would it say about you as a person?";
        case Submodule::C5_RebuildCoreBelief: return "What balanced belief could you start practising in place of the old one?";
        case Submodule::M1_PresentAwareness: return "Let's pause and notice your breath for a moment; what do you notice in your body right now?";
        case Submodule::M2_Acceptance: return "Can you let that feeling be here for a few breaths without pushing it away?";
        case Submodule::M3_CognitiveDefusion: return "Try saying 'I am having the thought that...' before it; how does that change it?";
        case Submodule::M4_MindfulAction: return "What is one valued step you could take this week with full attention?";
        case Submodule::ReviewAssessment: return "Looking back, what has changed in how you feel, think and act?";
        case Submodule::SkillIntegration: return "Which coping skill has helped most, and where in your week could you use it?";
        case Submodule::RelapsePrevention: return "Which situations might bring the old pattern back, and what would be your first sign?";
    }
    return "Could you tell me more?";
}

SubmoduleGroup group_from_context(const Json& ctx) {
    auto stage = ctx.at("stage").get<StageId>();
    if (stage == StageId::Exploration) return SubmoduleGroup::Exploration;
    if (stage == StageId::Action) return SubmoduleGroup::Consolidation;
    return group_for(ctx.at("school").get<TherapySchool>());
}

Json units_of(const Json& ctx) {
    auto it = ctx.find("units");
    return it != ctx.end() && it->is_array() ? *it : Json::array();
}

std::vector<std::string> unit_infos(const Json& ctx, std::size_t n) {
    std::vector<std::string> out;
    for (const auto& u : units_of(ctx)) {
        if (out.size() == n) break;
        out.push_back(snippet(u.value("info", std::string{}), 140));
    }
    return out;
}

const std::vector<std::string>& lexicon(TherapySchool s) {
    static const std::vector<std::string> sfbt = {"goal", "solution", "future", "practical", "decide", "career",
                                                  "improve", "want to", "plan", "change", "next step", "motivat"};
    static const std::vector<std::string> cbt = {"thought", "belief", "believe", "failure", "worthless", "should",
                                                 "criticis", "always", "never", "fault", "judge", "stupid"};
    static const std::vector<std::string> mbct = {"ruminat", "racing", "body", "tension", "sleep", "pain",
                                                  "recurr", "overwhelm", "present", "breath", "tight", "low mood"};
    switch (s) {
        case TherapySchool::SFBT: return sfbt;
        case TherapySchool::CBT: return cbt;
        case TherapySchool::MBCT: return mbct;
    }
    return cbt;
}

// String values only; key names would otherwise count as lexicon hits.
void collect_strings(const Json& j, std::string& out) {
    if (j.is_string()) {
        out += j.get<std::string>();
        out += ' ';
    } else if (j.is_structured()) {
        for (const auto& v : j) collect_strings(v, out);
    }
}

class Responder {
public:
    Responder(std::uint64_t seed, const ChatRequest& req) : seed_(seed), req_(req), ctx_(extract_context(req)) {
        if (ctx_.is_discarded()) throw BackendRejected("offline backend: request carries no context block");
        h_ = mix(seed_, req_.task, ctx_.dump() + "#" + std::to_string(req_.messages.size()));
    }

    std::string reply() {
        const auto& t = req_.task;
        if (t == "reason") return reason();
        if (t == "explore" || t.rfind("therapy_", 0) == 0 || t == "consolidate") return agent_turn();
        if (t == "stage_prompt") return stage_prompt();
        if (t == "route") return route();
        if (t == "atomize") return atomize();
        if (t == "case_form" || t == "intake_form") return case_form();
        if (t == "therapeutic_record") return therapeutic_record();
        if (t == "relapse_plan") return relapse_plan();
        if (t == "plain_summary") return plain_summary();
        if (t == "judge") return judge();
        if (t == "client") return client();
        throw BackendRejected("offline backend: unknown task '" + t + "'");
    }

private:
    std::string reason() {
        const auto group = group_from_context(ctx_);
        const auto stage = ctx_.at("stage").get<StageId>();
        auto set = submodules_of(group);
        std::vector<Submodule> available = ctx_.at("available_submodules").get<std::vector<Submodule>>();

        const std::uint64_t th = mix(seed_, ctx_.value("session_id", std::string{}) + "|" + ctx_.value("client_id", ""),
                                     std::string(to_string(stage)));
        int target = 3;
        switch (stage) {
            case StageId::Exploration: target = 2 + static_cast<int>(th % 16); break;
            case StageId::Insight: target = 3 + static_cast<int>(th % 10); break;
            case StageId::Action: target = 3 + static_cast<int>(th % 5); break;
        }
        const int pairs = ctx_.value("stage_pairs", 0);
        const bool reask = req_.messages.size() > 2;
        const double r = unit(h_);

        Submodule pick = set.front();
        if (reask && !available.empty()) {
            pick = available[h_ % available.size()];
        } else if (r < 0.05) {
            // Occasionally stray outside the allowed set.
            std::vector<Submodule> foreign;
            for (auto m : all_submodules()) {
                if (group_of(m) != group) foreign.push_back(m);
            }
            pick = foreign[(h_ >> 8) % foreign.size()];
        } else {
            std::optional<Submodule> last;
            const auto& run = ctx_.at("consecutive");
            if (run.contains("submodule")) last = run.at("submodule").get<Submodule>();
            if (last && group_of(*last) == group && r < 0.60) {
                pick = *last;
            } else {
                pick = set[(h_ >> 16) % set.size()];
            }
        }
        Json alternatives = Json::array();
        for (std::size_t i = 0; i < available.size(); ++i) {
            auto m = available[(i + (h_ >> 24)) % available.size()];
            if (m != pick) alternatives.push_back(m);
        }
        Json out{{"goal", "Use " + std::string(to_string(pick)) + " to respond to what the client just shared"},
                 {"submodule", pick},
                 {"alternatives", alternatives},
                 {"stage_complete", pairs >= target}};
        return out.dump();
    }

    std::string agent_turn() {
        auto m = ctx_.at("submodule").get<Submodule>();
        const auto msg = ctx_.value("client_message", std::string{});
        static const char* openers[] = {"Thank you for sharing that.", "I hear you.",
                                        "That sounds really difficult.", "I appreciate you telling me this."};
        std::ostringstream os;
        os << "[" << to_string(m) << "] " << openers[h_ % 4];
        if (!msg.empty()) os << " You mentioned: \"" << snippet(msg, 60) << "\".";
        os << " " << question_for(m);
        return os.str();
    }

    std::string stage_prompt() {
        auto stage = ctx_.at("stage").get<StageId>();
        std::ostringstream os;
        os << "[stage:" << to_string(stage) << "] ";
        switch (stage) {
            case StageId::Exploration:
                os << "Let's get a picture of what brings you here, how you have been feeling, and what you hope will change.";
                break;
            case StageId::Insight:
                os << "Let's look at the patterns behind these difficulties and try one new way of responding to them.";
                break;
            case StageId::Action:
                os << "Let's review what has helped, choose the skills to keep using, and plan for difficult moments.";
                break;
        }
        os << " What feels most important to you right now?";
        return os.str();
    }

    std::string route() {
        const auto& form = ctx_.at("case_form");
        std::string text;
        collect_strings(form, text);
        text = lower(text);
        Json scores = Json::object();
        std::array<double, 3> raw{};
        for (auto s : kAllSchools) {
            int hits = 0;
            for (const auto& w : lexicon(s)) {
                for (auto pos = text.find(w); pos != std::string::npos; pos = text.find(w, pos + 1)) ++hits;
            }
            double noise = unit(mix(h_, std::string(to_string(s)))) * 0.08;
            double v = std::min(1.0, 0.15 + 0.12 * hits + noise);
            raw[static_cast<std::size_t>(s)] = v;
            scores[std::string(to_string(s))] = std::round(v * 1000.0) / 1000.0;
        }
        std::size_t best = 0;
        for (std::size_t i = 1; i < 3; ++i) {
            if (raw[i] > raw[best]) best = i;
        }
        auto selected = kAllSchools[best];
        // Now and then the judge's own pick disagrees with its scores.
        if (unit(h_ >> 3) < 0.1) selected = kAllSchools[(best + 1) % 3];
        Json out{{"scores", scores},
                 {"selected", selected},
                 {"rationale", "Scores reflect how strongly the case themes match each school."}};
        return out.dump();
    }

    std::string atomize() {
        const auto& turns = ctx_.at("turns");
        std::string client_text, agent_sub;
        for (const auto& t : turns) {
            if (t.at("speaker") == "client") client_text += t.value("content", std::string{}) + " ";
            if (t.contains("submodule")) agent_sub = t.at("submodule").get<std::string>();
        }
        const auto stage = ctx_.at("stage").get<StageId>();
        std::vector<std::string> topics;
        topics.push_back(ctx_.value("problem_category", std::string("other")));
        switch (stage) {
            case StageId::Exploration: topics.push_back(h_ % 2 ? "emotion" : "goal"); break;
            case StageId::Insight: topics.push_back("intervention"); break;
            case StageId::Action: topics.push_back(h_ % 3 ? "progress" : "risk"); break;
        }
        if (unit(h_ >> 5) < 0.3) topics.push_back("progress");
        std::string info = "Client (" + std::string(to_string(stage)) + "): " + snippet(client_text, 120);
        if (!agent_sub.empty()) info += " Agent applied " + agent_sub + ".";
        Json out{{"info", info}, {"topics", topics}, {"keywords", keywords_of(client_text, 4)}};
        return out.dump();
    }

    std::string case_form() {
        const auto& p = ctx_.at("profile");
        std::vector<std::string> problems = {p.value("chief_complaint", std::string{})};
        for (auto& i : unit_infos(ctx_, 2)) problems.push_back(i);
        Json out{{"presenting_problems", problems},
                 {"personal_history", p.value("background", std::string{})},
                 {"emotional_state", "Reports " + p.value("problem_category", std::string("other")) +
                                         "-related distress affecting daily functioning."},
                 {"goals", {"Understand and reduce the main difficulty", "Build coping strategies for daily life"}},
                 {"preliminary_hypotheses",
                  {"Current stressors interact with the client's habitual ways of thinking and coping."}}};
        return out.dump();
    }

    std::string therapeutic_record() {
        auto executed = ctx_.value("executed_submodules", std::vector<std::string>{});
        Json interventions = Json::array();
        std::string last;
        for (const auto& m : executed) {
            if (m == last) continue;
            last = m;
            interventions.push_back({{"submodule", m}, {"summary", "Worked through " + m + " with the client."}});
        }
        auto infos = unit_infos(ctx_, 2);
        Json out{{"interventions", interventions},
                 {"cognitive_emotional_patterns", infos.empty() ? std::vector<std::string>{"No pattern recorded"} : infos},
                 {"evidence_of_change", {"Client engaged with the exercises and reflected on their effect."}}};
        return out.dump();
    }

    std::string relapse_plan() {
        auto infos = unit_infos(ctx_, 1);
        Json out{{"high_risk_situations", {"Periods of high workload or conflict", infos.empty() ? "Unexpected setbacks" : infos[0]}},
                 {"early_warning_signs", {"Poor sleep for several nights", "Withdrawing from usual activities"}},
                 {"maintenance_strategies", {"Keep practising the coping skills reviewed in counseling",
                                             "Schedule one restorative activity each day"}},
                 {"action_plan", "Notice the warning signs early, use the agreed skills, and reach out for support if they persist for a week."}};
        return out.dump();
    }

    std::string plain_summary() {
        const auto& turns = ctx_.at("turns");
        std::string client_text;
        for (const auto& t : turns) {
            if (t.at("speaker") == "client") client_text += t.value("content", std::string{}) + " ";
        }
        return "During the " + ctx_.at("stage").get<std::string>() + " stage (" + std::to_string(turns.size()) +
               " turns) the client talked about: " + snippet(client_text, 200);
    }

    std::string judge() {
        Json items = Json::object();
        for (const auto& it : ctx_.at("rubric").at("items")) {
            const auto id = it.at("id").get<std::string>();
            const double lo = it.at("min").get<double>(), hi = it.at("max").get<double>();
            const auto span = static_cast<std::uint64_t>(hi - lo);
            auto h = mix(h_, id);
            // Skewed toward the top of the range.
            double score = hi - static_cast<double>(h % (span / 2 + 1));
            // Synthetic transcripts carry no identifying details.
            if (id == "Safe") score = lo;
            items[id] = {{"score", score}, {"rationale", "Observed consistently across the transcript."}};
        }
        return Json{{"items", items}}.dump();
    }

    std::string client() {
        const auto& persona = ctx_.at("persona");
        const auto agent_msg = ctx_.value("agent_message", std::string{});
        const int turn = ctx_.value("turn_number", 0);
        if (agent_msg.empty()) return persona.value("chief_complaint", std::string("I am not sure where to start."));
        auto lines = sentences(persona.value("narrative_seed", std::string{}));
        static const char* fillers[] = {"I guess that makes sense.", "I have not thought about it that way.",
                                        "It is hard to say.", "Maybe, yes.", "I will try that."};
        std::string out;
        if (!lines.empty()) out = lines[static_cast<std::size_t>(turn) % lines.size()] + " ";
        out += fillers[h_ % 5];
        return out;
    }

    std::uint64_t seed_;
    const ChatRequest& req_;
    Json ctx_;
    std::uint64_t h_ = 0;
};

}  // namespace

OfflineBackend::OfflineBackend(std::uint64_t seed, std::size_t embed_dimension)
    : seed_(seed), embed_dimension_(embed_dimension) {}

std::string OfflineBackend::complete(const ChatRequest& req) { return Responder(seed_, req).reply(); }

EmbeddingVector OfflineBackend::embed(std::string_view text) { return hash_embedding(text, embed_dimension_); }

}  // namespace counselflow
