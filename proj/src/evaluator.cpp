#include "counselflow/evaluator.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "counselflow/errors.hpp"
#include "counselflow/storage.hpp"

namespace counselflow {

namespace {

constexpr std::array<std::pair<RubricName, std::string_view>, 4> kRubricNames = {{
    {RubricName::FIT, "FIT"},
    {RubricName::CTSR, "CTSR"},
    {RubricName::MBCTAS, "MBCTAS"},
    {RubricName::HPEC, "HPEC"},
}};

std::string rubric_file(RubricName n) {
    std::string s(to_string(n));
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s + ".json";
}

double ratio(double num, double den) { return den == 0 ? 0.0 : num / den; }

std::string fmt(double v, int prec = 2) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

// Judge replies come as {"items": {id: {score, rationale}}} or as an array of
// {id, score, rationale}; the array form can express duplicates.
struct RawItem {
    std::string id;
    Json score;
    std::string rationale;
};

std::optional<std::vector<RawItem>> raw_items(const Json& doc) {
    if (!doc.is_object()) return std::nullopt;
    auto it = doc.find("items");
    if (it == doc.end()) return std::nullopt;
    std::vector<RawItem> out;
    auto entry = [](const std::string& id, const Json& v) {
        RawItem r;
        r.id = id;
        if (v.is_object()) {
            r.score = v.value("score", Json());
            r.rationale = v.value("rationale", std::string{});
        } else {
            r.score = v;
        }
        return r;
    };
    if (it->is_object()) {
        for (const auto& [id, v] : it->items()) out.push_back(entry(id, v));
    } else if (it->is_array()) {
        for (const auto& v : *it) {
            if (!v.is_object() || !v.contains("id") || !v["id"].is_string()) return std::nullopt;
            out.push_back(entry(v["id"].get<std::string>(), v));
        }
    } else {
        return std::nullopt;
    }
    return out;
}

bool on_step(double v, const RubricItem& item) {
    double k = (v - item.min) / item.step;
    return std::fabs(k - std::round(k)) < 1e-9;
}

}  // namespace

std::string_view to_string(RubricName r) {
    for (const auto& [v, n] : kRubricNames)
        if (v == r) return n;
    return "unknown";
}

std::optional<RubricName> parse_rubric_name(std::string_view s) {
    std::string k;
    for (char c : s) {
        if (c == '-' || c == '_') continue;
        k.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    for (const auto& [v, n] : kRubricNames)
        if (n == k) return v;
    return std::nullopt;
}

RubricName rubric_for(TherapySchool s) {
    switch (s) {
        case TherapySchool::SFBT: return RubricName::FIT;
        case TherapySchool::CBT: return RubricName::CTSR;
        case TherapySchool::MBCT: return RubricName::MBCTAS;
    }
    return RubricName::CTSR;
}

const RubricItem* RubricDefinition::find(const std::string& id) const {
    for (const auto& it : items)
        if (it.id == id) return &it;
    return nullptr;
}

void to_json(Json& j, const RubricDefinition& r) {
    Json items = Json::array();
    for (const auto& it : r.items) {
        items.push_back({{"id", it.id},
                         {"title", it.title},
                         {"description", it.description},
                         {"min", it.min},
                         {"max", it.max},
                         {"step", it.step}});
    }
    j = Json{{"name", to_string(r.name)}, {"label", r.label}, {"version", r.version}, {"items", items},
             {"total_max", r.total_max}};
}

void from_json(const Json& j, RubricDefinition& r) {
    try {
        auto name = parse_rubric_name(j.at("name").get<std::string>());
        if (!name) throw ValidationError("unknown rubric name " + j.at("name").dump());
        r.name = *name;
        r.label = j.value("label", std::string(to_string(*name)));
        r.version = j.value("version", "0");
        r.items.clear();
        for (const auto& it : j.at("items")) {
            RubricItem item;
            item.id = it.at("id").get<std::string>();
            item.title = it.value("title", item.id);
            item.description = it.value("description", std::string{});
            item.min = it.at("min").get<double>();
            item.max = it.at("max").get<double>();
            item.step = it.value("step", 1.0);
            r.items.push_back(std::move(item));
        }
        r.total_max = j.at("total_max").get<double>();
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw ValidationError(std::string("rubric: ") + e.what());
    }
    if (r.items.empty()) throw ValidationError("rubric " + std::string(to_string(r.name)) + " has no items");
    std::set<std::string> ids;
    double sum = 0;
    for (const auto& it : r.items) {
        if (!ids.insert(it.id).second) throw ValidationError("rubric item id '" + it.id + "' repeated");
        if (!(it.min < it.max) || !(it.step > 0)) throw ValidationError("rubric item '" + it.id + "' has a bad range");
        sum += it.max;
    }
    if (std::fabs(sum - r.total_max) > 1e-9) {
        throw ValidationError("rubric " + std::string(to_string(r.name)) + ": total_max " + fmt(r.total_max) +
                              " differs from item maxima sum " + fmt(sum));
    }
}

RubricLibrary RubricLibrary::load(const std::filesystem::path& dir) {
    RubricLibrary lib;
    for (auto n : kAllRubrics) {
        auto path = dir / rubric_file(n);
        Json j;
        try {
            j = Json::parse(read_file(path));
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw ValidationError(path.string() + ": " + e.what());
        }
        auto def = j.get<RubricDefinition>();
        if (def.name != n) throw ValidationError(path.string() + ": names rubric " + std::string(to_string(def.name)));
        lib.rubrics_[n] = std::move(def);
    }
    return lib;
}

RubricLibrary RubricLibrary::load_default() { return load(PromptLibrary::default_asset_root() / "rubrics"); }

const RubricDefinition& RubricLibrary::get(RubricName n) const { return rubrics_.at(n); }

std::optional<double> RubricScore::item(const std::string& id) const {
    for (const auto& it : items)
        if (it.id == id) return it.score;
    return std::nullopt;
}

void to_json(Json& j, const RubricScore& s) {
    Json items = Json::array();
    for (const auto& it : s.items) {
        Json e{{"id", it.id}, {"score", it.score}, {"rationale", it.rationale}};
        if (it.clamped) {
            e["clamped"] = true;
            e["raw"] = it.raw;
        }
        items.push_back(std::move(e));
    }
    j = Json{{"rubric", to_string(s.rubric)}, {"transcript_id", s.transcript_id}, {"items", items},
             {"total", s.total}, {"repairs", s.repairs}, {"flags", s.flags}};
}

void from_json(const Json& j, RubricScore& s) {
    try {
        auto n = parse_rubric_name(j.at("rubric").get<std::string>());
        if (!n) throw ValidationError("unknown rubric " + j.at("rubric").dump());
        s.rubric = *n;
        s.transcript_id = j.value("transcript_id", std::string{});
        s.items.clear();
        for (const auto& e : j.at("items")) {
            ItemScore it;
            it.id = e.at("id").get<std::string>();
            it.score = e.at("score").get<double>();
            it.rationale = e.value("rationale", std::string{});
            it.clamped = e.value("clamped", false);
            it.raw = e.value("raw", it.score);
            s.items.push_back(std::move(it));
        }
        s.total = j.at("total").get<double>();
        s.repairs = j.value("repairs", 0);
        s.flags = j.value("flags", std::vector<std::string>{});
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw ValidationError(std::string("rubric score: ") + e.what());
    }
}

ChatRequest judge_request(const PromptLibrary& prompts, const RubricDefinition& rubric,
                          const std::vector<DialogueTurn>& transcript) {
    Json turns = Json::array();
    for (const auto& t : transcript) {
        turns.push_back({{"speaker", t.speaker}, {"stage", t.stage}, {"content", t.content}});
    }
    Json context{{"rubric", rubric}, {"transcript", turns}};
    return prompts.build("judge", {{"rubric", rubric.label}}, context, kJudgeTemperature,
                         ResponseFormat::StructuredDocument);
}

std::vector<std::string> judge_problems(const Json& doc, const RubricDefinition& rubric) {
    std::vector<std::string> out;
    auto raw = raw_items(doc);
    if (!raw) return {"no items collection"};
    std::map<std::string, int> seen;
    for (const auto& r : *raw) {
        const RubricItem* item = rubric.find(r.id);
        if (!item) {
            out.push_back("unknown item " + r.id);
            continue;
        }
        if (++seen[r.id] == 2) out.push_back(r.id + " scored more than once");
        if (!r.score.is_number()) {
            out.push_back(r.id + " has no numeric score");
            continue;
        }
        double v = r.score.get<double>();
        if (v < item->min || v > item->max) {
            out.push_back(r.id + " = " + fmt(v, 3) + " outside [" + fmt(item->min, 0) + "," + fmt(item->max, 0) + "]");
        } else if (!on_step(v, *item)) {
            out.push_back(r.id + " = " + fmt(v, 3) + " is not a whole step");
        }
    }
    for (const auto& it : rubric.items) {
        if (!seen.count(it.id)) out.push_back(it.id + " missing");
    }
    return out;
}

double clamp_to_item(double v, const RubricItem& item) {
    double k = std::round((v - item.min) / item.step);
    double s = item.min + k * item.step;
    return std::clamp(s, item.min, item.max);
}

RubricScore score_transcript(Gateway& gateway, const PromptLibrary& prompts, const RubricDefinition& rubric,
                             const std::vector<DialogueTurn>& transcript, const std::string& transcript_id) {
    if (transcript.empty()) throw PreconditionError("score_transcript: empty transcript");
    auto check = [&rubric](const Json& doc) -> std::string {
        auto p = judge_problems(doc, rubric);
        std::string s;
        for (const auto& x : p) s += (s.empty() ? "" : "; ") + x;
        return s;
    };
    auto reask = [&prompts](const std::string& problem) {
        return render_template(prompts.text("reask_judge"), {{"problems", problem}});
    };
    auto outcome = chat_with_repair(gateway, judge_request(prompts, rubric, transcript), check, reask);

    auto raw = raw_items(outcome.doc);
    if (!raw) throw MalformedOutputError("judge returned no items collection after repair");
    std::map<std::string, const RawItem*> by_id;
    std::set<std::string> dup;
    for (const auto& r : *raw) {
        if (by_id.count(r.id)) dup.insert(r.id);
        by_id[r.id] = &r;
    }
    RubricScore s;
    s.rubric = rubric.name;
    s.transcript_id = transcript_id;
    s.repairs = outcome.repairs;
    for (const auto& item : rubric.items) {
        auto it = by_id.find(item.id);
        if (it == by_id.end() || !it->second->score.is_number()) {
            throw MalformedOutputError("judge left " + item.id + " unscored after repair");
        }
        if (dup.count(item.id)) throw MalformedOutputError("judge scored " + item.id + " more than once after repair");
        ItemScore is;
        is.id = item.id;
        is.raw = it->second->score.get<double>();
        is.score = clamp_to_item(is.raw, item);
        is.rationale = it->second->rationale;
        if (is.score != is.raw) {
            is.clamped = true;
            s.flags.push_back(item.id + " clamped from " + fmt(is.raw, 3) + " to " + fmt(is.score, 0));
        }
        s.total += is.score;
        s.items.push_back(std::move(is));
    }
    for (const auto& r : *raw) {
        if (!rubric.find(r.id)) s.flags.push_back("ignored unknown item " + r.id);
    }
    return s;
}

RoutingMetrics routing_metrics(const std::vector<RoutedCase>& cases) {
    if (cases.empty()) throw PreconditionError("routing_metrics: no cases");
    RoutingMetrics m;
    m.total = static_cast<int>(cases.size());
    for (const auto& c : cases) {
        ++m.confusion[static_cast<std::size_t>(c.truth)][static_cast<std::size_t>(c.predicted)];
    }
    int correct = 0, pooled_fp = 0, pooled_fn = 0;
    double f1_sum = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        int tp = m.confusion[k][k], fp = 0, fn = 0;
        for (std::size_t o = 0; o < 3; ++o) {
            if (o == k) continue;
            fp += m.confusion[o][k];
            fn += m.confusion[k][o];
        }
        auto& c = m.per_school[k];
        c.support = tp + fn;
        c.precision = ratio(tp, tp + fp);
        c.recall = ratio(tp, tp + fn);
        c.f1 = ratio(2 * c.precision * c.recall, c.precision + c.recall);
        correct += tp;
        pooled_fp += fp;
        pooled_fn += fn;
        f1_sum += c.f1;
    }
    m.accuracy = ratio(correct, m.total);
    m.micro_precision = ratio(correct, correct + pooled_fp);
    m.micro_recall = ratio(correct, correct + pooled_fn);
    m.micro_f1 = ratio(2 * m.micro_precision * m.micro_recall, m.micro_precision + m.micro_recall);
    m.macro_f1 = f1_sum / 3.0;
    return m;
}

void to_json(Json& j, const RoutingMetrics& m) {
    Json per = Json::object();
    Json conf = Json::object();
    for (auto s : kAllSchools) {
        const auto& c = m.of(s);
        per[std::string(to_string(s))] = {
            {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}};
        Json row = Json::object();
        for (auto p : kAllSchools) {
            row[std::string(to_string(p))] = m.confusion[static_cast<std::size_t>(s)][static_cast<std::size_t>(p)];
        }
        conf[std::string(to_string(s))] = row;
    }
    j = Json{{"per_school", per},         {"confusion", conf},           {"total", m.total},
             {"accuracy", m.accuracy},    {"micro_precision", m.micro_precision},
             {"micro_recall", m.micro_recall}, {"micro_f1", m.micro_f1}, {"macro_f1", m.macro_f1}};
}

Report aggregate_report(const std::vector<RubricScore>& scores, const std::optional<RoutingMetrics>& metrics) {
    if (scores.empty() && !metrics) throw PreconditionError("aggregate_report: nothing to report");
    Report rep;
    rep.document = Json::object();
    Json rubrics = Json::object();
    std::ostringstream text;

    for (auto name : kAllRubrics) {
        std::vector<const RubricScore*> group;
        for (const auto& s : scores)
            if (s.rubric == name) group.push_back(&s);
        if (group.empty()) continue;

        // Item order follows the first score; all scores of a rubric share it.
        std::vector<std::string> ids;
        for (const auto& it : group.front()->items) ids.push_back(it.id);
        std::vector<double> sums(ids.size(), 0.0);
        double total_sum = 0;
        for (const auto* s : group) {
            for (std::size_t i = 0; i < ids.size(); ++i) {
                auto v = s->item(ids[i]);
                if (!v) throw PreconditionError("aggregate_report: score for " + s->transcript_id + " lacks " + ids[i]);
                sums[i] += *v;
            }
            total_sum += s->total;
        }
        const double n = static_cast<double>(group.size());
        Json items = Json::object();
        Json order = Json::array();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            items[ids[i]] = sums[i] / n;
            order.push_back(ids[i]);
        }
        const std::string key(to_string(name));
        rubrics[key] = {{"count", group.size()}, {"item_order", order}, {"item_means", items},
                        {"total_mean", total_sum / n}};

        text << key << " (n=" << group.size() << ")\n";
        std::size_t w = 5;
        for (const auto& id : ids) w = std::max(w, id.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            text << "  " << std::left << std::setw(static_cast<int>(w)) << ids[i] << "  " << std::right
                 << std::setw(8) << fmt(sums[i] / n) << "\n";
        }
        text << "  " << std::left << std::setw(static_cast<int>(w)) << "Total" << "  " << std::right << std::setw(8)
             << fmt(total_sum / n) << "\n\n";

        std::ostringstream csv;
        csv << "transcript_id";
        for (const auto& id : ids) csv << "," << id;
        csv << ",total\n";
        for (const auto* s : group) {
            csv << s->transcript_id;
            for (const auto& id : ids) csv << "," << *s->item(id);
            csv << "," << s->total << "\n";
        }
        csv << "mean";
        for (std::size_t i = 0; i < ids.size(); ++i) csv << "," << fmt(sums[i] / n, 4);
        csv << "," << fmt(total_sum / n, 4) << "\n";
        rep.csv[key] = csv.str();
    }
    rep.document["rubrics"] = rubrics;

    if (metrics) {
        rep.document["routing"] = *metrics;
        text << "Routing (n=" << metrics->total << ", accuracy " << fmt(metrics->accuracy, 4) << ")\n";
        text << "  school  precision  recall      f1  support\n";
        for (auto s : kAllSchools) {
            const auto& c = metrics->of(s);
            text << "  " << std::left << std::setw(6) << to_string(s) << std::right << std::setw(11) << fmt(c.precision)
                 << std::setw(8) << fmt(c.recall) << std::setw(8) << fmt(c.f1) << std::setw(9) << c.support << "\n";
        }
        text << "  confusion (rows = truth, columns = predicted: SFBT CBT MBCT)\n";
        for (auto s : kAllSchools) {
            text << "  " << std::left << std::setw(6) << to_string(s) << std::right;
            for (auto p : kAllSchools) {
                text << std::setw(5) << metrics->confusion[static_cast<std::size_t>(s)][static_cast<std::size_t>(p)];
            }
            text << "\n";
        }
    }
    rep.text = text.str();
    return rep;
}

}  // namespace counselflow
