#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvscan/assessment.hpp"

namespace pvscan {

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;

    std::int64_t total() const { return tp + fp + fn + tn; }
    /// The same outcomes seen with "No Solar" as the positive class.
    ConfusionCounts swapped() const { return {tn, fn, fp, tp}; }
    bool operator==(const ConfusionCounts&) const = default;
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double accuracy = 0.0;  // recall on the class's own subset
    std::int64_t support = 0;
    bool degenerate = false;  // a zero denominator was hit

    bool operator==(const ClassMetrics&) const = default;
};

/// A prediction paired with its ground truth (both keyed by tile id).
struct EvalPair {
    std::string tile_id;
    PvAssessment prediction;
    GroundTruthLabel truth;
};

/// Pairs predictions with truths position by position. Throws
/// Error(alignment_error) on a length or tile id mismatch.
std::vector<EvalPair> align(const std::vector<std::pair<std::string, PvAssessment>>& preds,
                            const std::vector<GroundTruthLabel>& truths);

ConfusionCounts confusion(std::span<const EvalPair> pairs);
ConfusionCounts confusion(const std::vector<std::pair<std::string, PvAssessment>>& preds,
                          const std::vector<GroundTruthLabel>& truths);

/// 2PR / (P + R), 0 when P + R = 0.
double f1_score(double precision, double recall);

ClassMetrics class_metrics(const ConfusionCounts& c);

/// Support-weighted metrics computed exactly from the counts, each value
/// rounded once. Throws Error(empty_evaluation) on zero pairs.
ClassMetrics weighted_from_counts(const ConfusionCounts& c);

/// Builds metrics from externally reported rates (support 0 unless given).
ClassMetrics class_metrics_from_rates(double precision, double recall, std::int64_t support = 0);

/// Support-weighted mean of the two classes. Throws Error(empty_evaluation)
/// when both supports are zero.
ClassMetrics weighted_average(const ClassMetrics& solar, const ClassMetrics& no_solar);

enum class MatchField { location, quantity };
enum class MatchSubset { solar_only, all };

/// Fraction of identical enum values. Throws Error(empty_subset).
double exact_match_accuracy(MatchField field, std::span<const EvalPair> pairs, MatchSubset subset);

inline constexpr double kBceEpsilon = 1e-12;

/// Mean binary cross-entropy with predictions clamped to [eps, 1 - eps].
/// Throws Error(length_mismatch) on unequal or empty inputs.
double bce_loss(std::span<const double> probs, std::span<const int> labels);

struct MetricsReport {
    std::string region;
    ClassMetrics solar;
    ClassMetrics no_solar;
    ClassMetrics weighted;
    std::optional<double> location_accuracy_solar;
    std::optional<double> location_accuracy_all;
    std::optional<double> quantity_accuracy_solar;
    std::optional<double> quantity_accuracy_all;
    double calibration_bce = 0.0;
    ConfusionCounts counts;
    std::int64_t excluded_rejected = 0;
};

/// All metrics for one set of pairs.
MetricsReport build_report(const std::string& region, std::span<const EvalPair> pairs,
                           std::int64_t excluded_rejected = 0);

enum class ReportFormat { csv, json };

inline constexpr const char* kReportCsvHeader = "region,class,precision,recall,f1,accuracy";

/// CSV rows Solar / No Solar / Weighted Average in percent with two decimals,
/// or JSON mirroring MetricsReport.
std::string render_report(const MetricsReport& report, ReportFormat format);

nlohmann::json to_json(const MetricsReport& report);

struct CsvRow {
    std::string region;
    std::string cls;
    double precision, recall, f1, accuracy;  // percent
};
std::vector<CsvRow> parse_report_csv(const std::string& text);

std::string format_percent(double fraction);

}  // namespace pvscan
