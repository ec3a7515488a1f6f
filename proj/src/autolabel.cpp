#include "pvscan/autolabel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pvscan/error.hpp"

namespace pvscan {

using nlohmann::json;

void validate(const TriageConfig& cfg) {
    if (!(cfg.confidence_threshold >= 0.0 && cfg.confidence_threshold <= 1.0)) {
        throw Error(Errc::invalid_argument, "confidence_threshold must lie in [0, 1]");
    }
    if (!(cfg.likelihood_margin >= 0.0 && cfg.likelihood_margin < 0.5)) {
        throw Error(Errc::invalid_argument, "likelihood_margin must lie in [0, 0.5)");
    }
}

json to_json(const TriageConfig& cfg) {
    return json{{"confidence_threshold", cfg.confidence_threshold},
                {"likelihood_margin", cfg.likelihood_margin},
                {"decision_boundary", TriageConfig::kDecisionBoundary}};
}

TriageConfig triage_config_from_json(const json& j, const TriageConfig& base) {
    if (!j.is_object()) throw Error(Errc::invalid_argument, "triage config must be a JSON object");
    TriageConfig cfg = base;
    auto number = [&](const char* key, double& dst) {
        if (!j.contains(key)) return;
        if (!j[key].is_number()) throw Error(Errc::invalid_argument, std::string(key) + " must be a number");
        dst = j[key].get<double>();
    };
    number("confidence_threshold", cfg.confidence_threshold);
    number("likelihood_margin", cfg.likelihood_margin);
    if (j.contains("decision_boundary") &&
        (!j["decision_boundary"].is_number() || j["decision_boundary"].get<double>() != TriageConfig::kDecisionBoundary)) {
        throw Error(Errc::invalid_argument, "decision_boundary is fixed at 0.5");
    }
    validate(cfg);
    return cfg;
}

TriageDecision triage(const PvAssessment& a, const TriageConfig& cfg) {
    if (a.confidence < cfg.confidence_threshold) return TriageDecision::review;
    // Two-decimal likelihoods sit exactly on the margin edge, so compare with
    // a small slack to keep 0.40 and 0.60 outside a 0.1 margin.
    const double distance = std::abs(a.likelihood - TriageConfig::kDecisionBoundary);
    if (cfg.likelihood_margin - distance > 1e-9) return TriageDecision::review;
    return TriageDecision::auto_accept;
}

std::string_view to_string(ReviewStatus s) {
    switch (s) {
        case ReviewStatus::pending: return "pending";
        case ReviewStatus::corrected: return "corrected";
        case ReviewStatus::confirmed: return "confirmed";
    }
    return "pending";
}

json to_json(const ReviewItem& item) {
    json j{{"tile_id", item.tile_id},
           {"status", std::string(to_string(item.status))},
           {"prediction", item.prediction ? assessment_to_json(*item.prediction) : json(nullptr)},
           {"confidence", item.prediction ? json(item.prediction->confidence) : json(nullptr)},
           {"likelihood", item.prediction ? json(item.prediction->likelihood) : json(nullptr)},
           {"correction", item.correction ? to_json(*item.correction) : json(nullptr)},
           {"reviewer", item.reviewer ? json(*item.reviewer) : json(nullptr)},
           {"updated_at", item.updated_at},
           {"reason", item.reason}};
    return j;
}

ReviewItem review_item_from_json(const json& j) {
    ReviewItem item;
    item.tile_id = j.at("tile_id").get<std::string>();
    const std::string status = j.value("status", std::string("pending"));
    if (status == "pending") item.status = ReviewStatus::pending;
    else if (status == "corrected") item.status = ReviewStatus::corrected;
    else if (status == "confirmed") item.status = ReviewStatus::confirmed;
    else throw Error(Errc::invalid_argument, "unknown review status '" + status + "'");
    if (j.contains("prediction") && !j["prediction"].is_null()) {
        auto outcome = parse_model_response(j["prediction"].dump(), ParseMode::strict);
        if (!outcome.assessment) throw Error(Errc::invalid_argument, "stored prediction invalid: " + outcome.diagnostic);
        item.prediction = outcome.assessment;
    }
    if (j.contains("correction") && !j["correction"].is_null()) item.correction = label_from_json(j["correction"]);
    if (j.contains("reviewer") && j["reviewer"].is_string()) item.reviewer = j["reviewer"].get<std::string>();
    item.updated_at = j.value("updated_at", std::string());
    item.reason = j.value("reason", std::string());
    if (item.status == ReviewStatus::corrected && !item.correction) {
        throw Error(Errc::invalid_argument, "corrected review item lacks its correction");
    }
    return item;
}

namespace {

// Rejected parses sort ahead of everything, then ascending confidence.
bool queue_order(const ReviewItem& a, const ReviewItem& b) {
    double ca = a.prediction ? a.prediction->confidence : -1.0;
    double cb = b.prediction ? b.prediction->confidence : -1.0;
    if (ca != cb) return ca < cb;
    return a.tile_id < b.tile_id;
}

}  // namespace

TriageResult triage_batch(const std::vector<InferenceRecord>& records, const TriageConfig& cfg) {
    validate(cfg);
    TriageResult out;
    const std::string now = utc_now_iso();
    for (const auto& r : records) {
        if (!r.outcome.usable() || !r.outcome.assessment) {
            ReviewItem item;
            item.tile_id = r.tile_id;
            item.updated_at = now;
            item.reason = r.error.empty() ? "rejected parse: " + r.outcome.diagnostic : r.error;
            out.queue.push_back(std::move(item));
            continue;
        }
        const PvAssessment& a = *r.outcome.assessment;
        if (triage(a, cfg) == TriageDecision::auto_accept) {
            out.accepted.push_back(label_from_assessment(r.tile_id, a, "auto", now));
            continue;
        }
        ReviewItem item;
        item.tile_id = r.tile_id;
        item.prediction = a;
        item.updated_at = now;
        item.reason = a.confidence < cfg.confidence_threshold ? "low confidence" : "likelihood near decision boundary";
        out.queue.push_back(std::move(item));
    }
    std::stable_sort(out.queue.begin(), out.queue.end(), queue_order);
    return out;
}

namespace {

double quantile_sorted(const std::vector<double>& v, double q) {
    if (v.empty()) return 0.0;
    double pos = q * static_cast<double>(v.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    auto hi = std::min(lo + 1, v.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return v[lo] + frac * (v[hi] - v[lo]);
}

constexpr double kFallbackBandwidth = 0.05;
constexpr double kMinBandwidth = 0.01;

}  // namespace

double median(std::vector<double> values) {
    if (values.empty()) throw Error(Errc::empty_class, "median of an empty set");
    std::sort(values.begin(), values.end());
    return quantile_sorted(values, 0.5);
}

double silverman_bandwidth(std::span<const double> samples) {
    const std::size_t n = samples.size();
    if (n < 2) return kFallbackBandwidth;
    if (std::all_of(samples.begin(), samples.end(), [&](double v) { return v == samples[0]; })) return kFallbackBandwidth;
    double mean = 0.0;
    for (double v : samples) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : samples) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    double spread = std::min(sd, iqr / 1.34);
    if (spread <= 0.0) spread = std::max(sd, iqr / 1.34);
    if (spread <= 0.0) return kFallbackBandwidth;
    return std::max(kMinBandwidth, 0.9 * spread * std::pow(static_cast<double>(n), -0.2));
}

KdeGrid gaussian_kde(std::span<const double> samples, std::size_t points) {
    KdeGrid grid;
    if (samples.empty() || points < 2) return grid;
    grid.samples = samples.size();
    grid.bandwidth = silverman_bandwidth(samples);
    const double h = grid.bandwidth;
    const double norm = 1.0 / (static_cast<double>(samples.size()) * h * std::sqrt(2.0 * std::numbers::pi));
    grid.x.resize(points);
    grid.density.assign(points, 0.0);
    for (std::size_t g = 0; g < points; ++g) {
        const double x = static_cast<double>(g) / static_cast<double>(points - 1);
        grid.x[g] = x;
        double acc = 0.0;
        for (double raw : samples) {
            const double s = std::clamp(raw, 0.0, 1.0);
            // Mirror images 2k +/- s fold the tails back into [0, 1].
            for (int k = -2; k <= 2; ++k) {
                for (double image : {2.0 * k + s, 2.0 * k - s}) {
                    const double z = (x - image) / h;
                    acc += std::exp(-0.5 * z * z);
                }
            }
        }
        grid.density[g] = acc * norm;
    }
    return grid;
}

double trapezoid_integral(const KdeGrid& grid) {
    double total = 0.0;
    for (std::size_t i = 1; i < grid.x.size(); ++i) {
        total += 0.5 * (grid.density[i] + grid.density[i - 1]) * (grid.x[i] - grid.x[i - 1]);
    }
    return total;
}

DistributionSummary likelihood_summary(const std::vector<InferenceRecord>& records,
                                       const std::map<std::string, GroundTruthLabel>& truths) {
    std::vector<double> like_true, like_false, conf_tp, conf_fn;
    for (const auto& r : records) {
        if (!r.outcome.assessment) continue;
        auto it = truths.find(r.tile_id);
        if (it == truths.end()) continue;
        const PvAssessment& a = *r.outcome.assessment;
        if (it->second.present) {
            like_true.push_back(a.likelihood);
            (a.present ? conf_tp : conf_fn).push_back(a.confidence);
        } else {
            like_false.push_back(a.likelihood);
        }
    }
    if (like_true.empty()) throw Error(Errc::empty_class, "no usable predictions for the Solar class");
    if (like_false.empty()) throw Error(Errc::empty_class, "no usable predictions for the No Solar class");
    DistributionSummary s;
    s.count_true = like_true.size();
    s.count_false = like_false.size();
    s.median_likelihood_true = median(like_true);
    s.median_likelihood_false = median(like_false);
    s.kde_true_positive = gaussian_kde(conf_tp);
    s.kde_false_negative = gaussian_kde(conf_fn);
    return s;
}

namespace {

json kde_json(const KdeGrid& g) {
    json pts = json::array();
    for (std::size_t i = 0; i < g.x.size(); ++i) pts.push_back({g.x[i], g.density[i]});
    return json{{"bandwidth", g.bandwidth}, {"samples", g.samples}, {"grid", std::move(pts)}};
}

}  // namespace

json to_json(const DistributionSummary& s) {
    return json{{"median_likelihood_true", s.median_likelihood_true},
                {"median_likelihood_false", s.median_likelihood_false},
                {"count_true", s.count_true},
                {"count_false", s.count_false},
                {"decision_boundary", TriageConfig::kDecisionBoundary},
                {"kde_confidence_true_positive", kde_json(s.kde_true_positive)},
                {"kde_confidence_false_negative", kde_json(s.kde_false_negative)}};
}

ReviewStore::ReviewStore(DataDir dir) : dir_(std::move(dir)) {}

std::vector<ReviewItem> ReviewStore::load() const {
    std::vector<ReviewItem> items;
    if (!fs::exists(dir_.review_queue())) return items;
    json doc = json::parse(read_text(dir_.review_queue()), nullptr, false);
    if (doc.is_discarded() || !doc.contains("items")) throw Error(Errc::io_error, "review queue file is corrupt");
    for (const auto& j : doc["items"]) items.push_back(review_item_from_json(j));
    return items;
}

void ReviewStore::save(const std::vector<ReviewItem>& items) const {
    json arr = json::array();
    for (const auto& i : items) arr.push_back(to_json(i));
    write_text_atomic(dir_.review_queue(), json{{"items", std::move(arr)}}.dump(1) + "\n");
}

std::vector<ReviewItem> ReviewStore::all() const {
    std::lock_guard<std::mutex> lock(mu_);
    return load();
}

std::vector<ReviewItem> ReviewStore::pending(std::optional<std::size_t> limit) const {
    std::vector<ReviewItem> out;
    {
        std::lock_guard<std::mutex> lock(mu_);
        for (auto& i : load()) {
            if (i.status == ReviewStatus::pending) out.push_back(std::move(i));
        }
    }
    std::stable_sort(out.begin(), out.end(), queue_order);
    if (limit && out.size() > *limit) out.resize(*limit);
    return out;
}

std::optional<ReviewItem> ReviewStore::find(const std::string& tile_id) const {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& i : load()) {
        if (i.tile_id == tile_id) return i;
    }
    return std::nullopt;
}

void ReviewStore::merge_queue(const std::vector<ReviewItem>& queue) {
    std::lock_guard<std::mutex> lock(mu_);
    FileLock file_lock(dir_.review_lock(), true);
    std::vector<ReviewItem> merged;
    std::map<std::string, bool> resolved;
    for (auto& i : load()) {
        if (i.status != ReviewStatus::pending) {
            resolved[i.tile_id] = true;
            merged.push_back(std::move(i));
        }
    }
    for (const auto& i : queue) {
        if (!resolved.count(i.tile_id)) merged.push_back(i);
    }
    save(merged);
}

ReviewItem ReviewStore::apply_correction(const std::string& item_id, GroundTruthLabel correction,
                                         const std::string& reviewer) {
    if (auto v = label_violation(correction.present, correction.location, correction.quantity)) {
        throw Error(Errc::invalid_argument, *v);
    }
    std::lock_guard<std::mutex> lock(mu_);
    FileLock file_lock(dir_.review_lock(), true);
    auto items = load();
    auto it = std::find_if(items.begin(), items.end(), [&](const ReviewItem& i) { return i.tile_id == item_id; });
    if (it == items.end()) throw Error(Errc::not_found, "no review item '" + item_id + "'");
    if (it->status != ReviewStatus::pending) throw Error(Errc::already_resolved, "review item '" + item_id + "' is already resolved");

    const std::string now = utc_now_iso();
    correction.tile_id = item_id;
    correction.annotator = reviewer.empty() ? "reviewer" : reviewer;
    correction.annotated_at = now;

    bool confirmed = false;
    if (it->prediction) {
        confirmed = same_label(correction, label_from_assessment(item_id, *it->prediction, "", ""));
    }
    append_jsonl(dir_.labels(), to_json(correction));

    it->status = confirmed ? ReviewStatus::confirmed : ReviewStatus::corrected;
    it->correction = correction;
    it->reviewer = correction.annotator;
    it->updated_at = now;
    ReviewItem updated = *it;
    save(items);
    return updated;
}

}  // namespace pvscan
