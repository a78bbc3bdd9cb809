#pragma once

// Rubric scoring of finished transcripts by a temperature-0 judge, routing
// accuracy metrics, and report aggregation.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "counselflow/domain.hpp"
#include "counselflow/gateway.hpp"
#include "counselflow/prompts.hpp"

namespace counselflow {

enum class RubricName { FIT, CTSR, MBCTAS, HPEC };
inline constexpr std::array<RubricName, 4> kAllRubrics = {RubricName::FIT, RubricName::CTSR, RubricName::MBCTAS,
                                                          RubricName::HPEC};

std::string_view to_string(RubricName r);
// Accepts fit, ctsr, cts-r, mbctas, mbct-as, hpec in any case.
std::optional<RubricName> parse_rubric_name(std::string_view s);
// School-matched professional scale.
RubricName rubric_for(TherapySchool s);

struct RubricItem {
    std::string id;
    std::string title;
    std::string description;
    double min = 0;
    double max = 0;
    double step = 1;
};

struct RubricDefinition {
    RubricName name = RubricName::FIT;
    std::string label;
    std::string version;
    std::vector<RubricItem> items;
    double total_max = 0;

    const RubricItem* find(const std::string& id) const;
};

void to_json(Json& j, const RubricDefinition& r);
// Throws ValidationError unless ids are unique, ranges are sane and
// total_max equals the sum of item maxima.
void from_json(const Json& j, RubricDefinition& r);

class RubricLibrary {
public:
    static RubricLibrary load(const std::filesystem::path& dir);
    // <asset root>/rubrics
    static RubricLibrary load_default();
    const RubricDefinition& get(RubricName n) const;

private:
    std::map<RubricName, RubricDefinition> rubrics_;
};

struct ItemScore {
    std::string id;
    double score = 0;
    std::string rationale;
    // The judge's value was outside the range or off-step and was clamped.
    bool clamped = false;
    double raw = 0;
};

struct RubricScore {
    RubricName rubric = RubricName::FIT;
    std::string transcript_id;
    // In rubric item order.
    std::vector<ItemScore> items;
    double total = 0;
    int repairs = 0;
    std::vector<std::string> flags;

    std::optional<double> item(const std::string& id) const;
};

void to_json(Json& j, const RubricScore& s);
void from_json(const Json& j, RubricScore& s);

ChatRequest judge_request(const PromptLibrary& prompts, const RubricDefinition& rubric,
                          const std::vector<DialogueTurn>& transcript);

// Problems with a judge document: missing, duplicated, unknown, non-numeric,
// out-of-range and off-step items. Empty when the document is clean.
std::vector<std::string> judge_problems(const Json& doc, const RubricDefinition& rubric);

// One judge call over all items. Any problem triggers one repair re-ask;
// afterwards out-of-range values are clamped and flagged, and a document
// still missing items raises MalformedOutputError.
RubricScore score_transcript(Gateway& gateway, const PromptLibrary& prompts, const RubricDefinition& rubric,
                             const std::vector<DialogueTurn>& transcript, const std::string& transcript_id);

// Nearest step inside [min, max].
double clamp_to_item(double v, const RubricItem& item);

struct ClassMetrics {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    int support = 0;
};

struct RoutingMetrics {
    // confusion[truth][predicted], indexed by TherapySchool.
    std::array<std::array<int, 3>, 3> confusion{};
    std::array<ClassMetrics, 3> per_school{};
    int total = 0;
    double accuracy = 0;
    double micro_precision = 0;
    double micro_recall = 0;
    double micro_f1 = 0;
    double macro_f1 = 0;

    const ClassMetrics& of(TherapySchool s) const { return per_school[static_cast<std::size_t>(s)]; }
};

struct RoutedCase {
    TherapySchool predicted;
    TherapySchool truth;
};

// One-vs-rest precision/recall/F1 per school. A ratio with a zero
// denominator is 0. Throws PreconditionError on empty input.
RoutingMetrics routing_metrics(const std::vector<RoutedCase>& cases);
void to_json(Json& j, const RoutingMetrics& m);

struct Report {
    Json document;
    std::string text;
    // One CSV per rubric present, keyed by rubric name.
    std::map<std::string, std::string> csv;
};

// Per-item means and mean total for every rubric present, plus routing
// metrics when given. Throws PreconditionError when there is nothing to report.
Report aggregate_report(const std::vector<RubricScore>& scores, const std::optional<RoutingMetrics>& metrics);

}  // namespace counselflow
