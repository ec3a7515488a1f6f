#pragma once

#include <cstddef>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvscan/assessment.hpp"
#include "pvscan/inference.hpp"
#include "pvscan/store.hpp"

namespace pvscan {

struct TriageConfig {
    double confidence_threshold = 0.8;
    double likelihood_margin = 0.1;
    static constexpr double kDecisionBoundary = 0.5;
};

/// Throws Error(invalid_argument) unless 0 <= threshold <= 1 and 0 <= margin < 0.5.
void validate(const TriageConfig& cfg);
nlohmann::json to_json(const TriageConfig& cfg);
TriageConfig triage_config_from_json(const nlohmann::json& j, const TriageConfig& base = {});

enum class TriageDecision { auto_accept, review };

/// Review iff confidence < threshold or |likelihood - 0.5| < margin (with
/// 1e-9 slack so a likelihood exactly on the margin edge is not reviewed).
TriageDecision triage(const PvAssessment& a, const TriageConfig& cfg);

enum class ReviewStatus { pending, corrected, confirmed };
std::string_view to_string(ReviewStatus s);

struct ReviewItem {
    std::string tile_id;
    std::optional<PvAssessment> prediction;  // absent for rejected parses
    ReviewStatus status = ReviewStatus::pending;
    std::optional<GroundTruthLabel> correction;
    std::optional<std::string> reviewer;
    std::string updated_at;
    std::string reason;
};

nlohmann::json to_json(const ReviewItem& item);
ReviewItem review_item_from_json(const nlohmann::json& j);

struct TriageResult {
    std::vector<GroundTruthLabel> accepted;  // annotator "auto"
    std::vector<ReviewItem> queue;           // ascending confidence, rejected parses first
};

/// Exhaustive, exclusive split of the records.
TriageResult triage_batch(const std::vector<InferenceRecord>& records, const TriageConfig& cfg);

struct KdeGrid {
    std::vector<double> x;
    std::vector<double> density;
    double bandwidth = 0.0;
    std::size_t samples = 0;
};

inline constexpr std::size_t kKdeGridPoints = 201;

/// Silverman's rule; degenerate spreads fall back to 0.05. Floored at 0.01.
double silverman_bandwidth(std::span<const double> samples);

/// Gaussian KDE on an evenly spaced grid over [0, 1], with reflection at both
/// ends so no mass leaks outside the unit interval. Empty input -> empty grid.
KdeGrid gaussian_kde(std::span<const double> samples, std::size_t points = kKdeGridPoints);

double trapezoid_integral(const KdeGrid& grid);
double median(std::vector<double> values);

struct DistributionSummary {
    double median_likelihood_true = 0.0;
    double median_likelihood_false = 0.0;
    std::size_t count_true = 0;
    std::size_t count_false = 0;
    KdeGrid kde_true_positive;   // confidence of true positives
    KdeGrid kde_false_negative;  // confidence of false negatives
};

/// Throws Error(empty_class) when either ground-truth class has no usable record.
DistributionSummary likelihood_summary(const std::vector<InferenceRecord>& records,
                                       const std::map<std::string, GroundTruthLabel>& truths);

nlohmann::json to_json(const DistributionSummary& s);

/// File-backed review queue. Corrections are serialized through one mutex and
/// appended to the ground-truth manifest before the queue is rewritten.
class ReviewStore {
public:
    explicit ReviewStore(DataDir dir);

    std::vector<ReviewItem> pending(std::optional<std::size_t> limit = std::nullopt) const;
    std::vector<ReviewItem> all() const;
    std::optional<ReviewItem> find(const std::string& tile_id) const;

    /// Replaces pending items with `queue`, keeping resolved ones untouched.
    void merge_queue(const std::vector<ReviewItem>& queue);

    /// Throws Error(not_found) or Error(already_resolved).
    /// The correction's tile_id, annotator and timestamp are filled in here.
    ReviewItem apply_correction(const std::string& item_id, GroundTruthLabel correction, const std::string& reviewer);

private:
    std::vector<ReviewItem> load() const;
    void save(const std::vector<ReviewItem>& items) const;

    DataDir dir_;
    mutable std::mutex mu_;
};

}  // namespace pvscan
