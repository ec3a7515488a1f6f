#include "pvscan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "pvscan/error.hpp"

namespace pvscan {

using nlohmann::json;

std::vector<EvalPair> align(const std::vector<std::pair<std::string, PvAssessment>>& preds,
                            const std::vector<GroundTruthLabel>& truths) {
    if (preds.size() != truths.size()) {
        throw Error(Errc::alignment_error, "prediction and truth lists differ in length (" +
                                               std::to_string(preds.size()) + " vs " + std::to_string(truths.size()) +
                                               ")");
    }
    std::vector<EvalPair> out;
    out.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].first != truths[i].tile_id) {
            throw Error(Errc::alignment_error, "tile id mismatch at position " + std::to_string(i) + ": '" +
                                                   preds[i].first + "' vs '" + truths[i].tile_id + "'");
        }
        out.push_back({preds[i].first, preds[i].second, truths[i]});
    }
    return out;
}

ConfusionCounts confusion(std::span<const EvalPair> pairs) {
    ConfusionCounts c;
    for (const auto& p : pairs) {
        const bool pred = p.prediction.present;
        const bool truth = p.truth.present;
        if (pred && truth) ++c.tp;
        else if (pred && !truth) ++c.fp;
        else if (!pred && truth) ++c.fn;
        else ++c.tn;
    }
    return c;
}

ConfusionCounts confusion(const std::vector<std::pair<std::string, PvAssessment>>& preds,
                          const std::vector<GroundTruthLabel>& truths) {
    auto pairs = align(preds, truths);
    return confusion(std::span<const EvalPair>(pairs));
}

double f1_score(double precision, double recall) {
    double denom = precision + recall;
    return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

namespace {

// An exact ratio of counts; den == 0 marks an undefined metric.
struct Ratio {
    __int128 num = 0;
    __int128 den = 0;
};

// Rounds num/den once. Both operands are exact doubles below 2^53, which
// covers any realistic evaluation; larger values fall back to long double.
double to_double(const Ratio& r) {
    if (r.den == 0) return 0.0;
    constexpr __int128 kExact = __int128{1} << 53;
    if (r.num < kExact && r.den < kExact) return static_cast<double>(r.num) / static_cast<double>(r.den);
    return static_cast<double>(static_cast<long double>(r.num) / static_cast<long double>(r.den));
}

Ratio weighted(const Ratio& a, std::int64_t wa, const Ratio& b, std::int64_t wb) {
    Ratio x = a.den == 0 ? Ratio{0, 1} : a;
    Ratio y = b.den == 0 ? Ratio{0, 1} : b;
    return {wa * x.num * y.den + wb * y.num * x.den, x.den * y.den * (wa + wb)};
}

struct ClassRatios {
    Ratio precision, recall, f1;
};

ClassRatios class_ratios(const ConfusionCounts& c) {
    // F1 = 2PR / (P + R) = 2tp / (2tp + fp + fn) whenever P + R > 0.
    Ratio f1 = c.tp > 0 ? Ratio{2 * c.tp, 2 * c.tp + c.fp + c.fn} : Ratio{0, 1};
    return {{c.tp, c.tp + c.fp}, {c.tp, c.tp + c.fn}, f1};
}

}  // namespace

ClassMetrics class_metrics(const ConfusionCounts& c) {
    ClassRatios r = class_ratios(c);
    ClassMetrics m;
    m.precision = to_double(r.precision);
    m.recall = to_double(r.recall);
    m.f1 = to_double(r.f1);
    m.accuracy = m.recall;
    m.support = c.tp + c.fn;
    m.degenerate = r.precision.den == 0 || r.recall.den == 0;
    return m;
}

ClassMetrics weighted_from_counts(const ConfusionCounts& c) {
    const std::int64_t ws = c.tp + c.fn;
    const std::int64_t wn = c.tn + c.fp;
    if (ws + wn == 0) throw Error(Errc::empty_evaluation, "both classes have zero support");
    ClassRatios s = class_ratios(c);
    ClassRatios n = class_ratios(c.swapped());
    ClassMetrics m;
    m.precision = to_double(weighted(s.precision, ws, n.precision, wn));
    m.recall = to_double(weighted(s.recall, ws, n.recall, wn));
    m.f1 = to_double(weighted(s.f1, ws, n.f1, wn));
    m.accuracy = m.recall;
    m.support = ws + wn;
    m.degenerate = (ws > 0 && class_metrics(c).degenerate) || (wn > 0 && class_metrics(c.swapped()).degenerate);
    return m;
}

ClassMetrics class_metrics_from_rates(double precision, double recall, std::int64_t support) {
    ClassMetrics m;
    m.precision = precision;
    m.recall = recall;
    m.f1 = f1_score(precision, recall);
    m.accuracy = recall;
    m.support = support;
    return m;
}

ClassMetrics weighted_average(const ClassMetrics& solar, const ClassMetrics& no_solar) {
    if (solar.support < 0 || no_solar.support < 0) throw Error(Errc::invalid_argument, "negative support");
    const std::int64_t total = solar.support + no_solar.support;
    if (total == 0) throw Error(Errc::empty_evaluation, "both classes have zero support");
    const double ws = static_cast<double>(solar.support) / static_cast<double>(total);
    const double wn = static_cast<double>(no_solar.support) / static_cast<double>(total);
    auto mix = [&](double a, double b) {
        if (a == b) return a;
        return ws * a + wn * b;
    };
    ClassMetrics m;
    m.precision = mix(solar.precision, no_solar.precision);
    m.recall = mix(solar.recall, no_solar.recall);
    m.f1 = mix(solar.f1, no_solar.f1);
    m.accuracy = mix(solar.accuracy, no_solar.accuracy);
    m.support = total;
    m.degenerate = (solar.support > 0 && solar.degenerate) || (no_solar.support > 0 && no_solar.degenerate);
    return m;
}

double exact_match_accuracy(MatchField field, std::span<const EvalPair> pairs, MatchSubset subset) {
    std::int64_t considered = 0, correct = 0;
    for (const auto& p : pairs) {
        if (subset == MatchSubset::solar_only && !p.truth.present) continue;
        ++considered;
        bool same = field == MatchField::location ? p.prediction.location == p.truth.location
                                                  : p.prediction.quantity == p.truth.quantity;
        if (same) ++correct;
    }
    if (considered == 0) throw Error(Errc::empty_subset, "no pairs in the requested subset");
    return static_cast<double>(correct) / static_cast<double>(considered);
}

double bce_loss(std::span<const double> probs, std::span<const int> labels) {
    if (probs.size() != labels.size() || probs.empty()) {
        throw Error(Errc::length_mismatch, "bce_loss needs equal, non-empty inputs (" + std::to_string(probs.size()) +
                                               " vs " + std::to_string(labels.size()) + ")");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = std::clamp(probs[i], kBceEpsilon, 1.0 - kBceEpsilon);
        const double y = labels[i] != 0 ? 1.0 : 0.0;
        total += y * std::log(p) + (1.0 - y) * std::log1p(-p);
    }
    return -total / static_cast<double>(probs.size());
}

namespace {

std::optional<double> try_accuracy(MatchField f, std::span<const EvalPair> pairs, MatchSubset s) {
    try {
        return exact_match_accuracy(f, pairs, s);
    } catch (const Error&) {
        return std::nullopt;
    }
}

json metrics_json(const ClassMetrics& m) {
    return json{{"precision", m.precision}, {"recall", m.recall},   {"f1", m.f1},
                {"accuracy", m.accuracy},   {"support", m.support}, {"degenerate", m.degenerate}};
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

MetricsReport build_report(const std::string& region, std::span<const EvalPair> pairs, std::int64_t excluded_rejected) {
    if (pairs.empty()) throw Error(Errc::empty_evaluation, "no evaluated pairs for region '" + region + "'");
    MetricsReport r;
    r.region = region;
    r.counts = confusion(pairs);
    r.solar = class_metrics(r.counts);
    r.no_solar = class_metrics(r.counts.swapped());
    r.weighted = weighted_from_counts(r.counts);
    r.location_accuracy_solar = try_accuracy(MatchField::location, pairs, MatchSubset::solar_only);
    r.location_accuracy_all = try_accuracy(MatchField::location, pairs, MatchSubset::all);
    r.quantity_accuracy_solar = try_accuracy(MatchField::quantity, pairs, MatchSubset::solar_only);
    r.quantity_accuracy_all = try_accuracy(MatchField::quantity, pairs, MatchSubset::all);
    std::vector<double> probs;
    std::vector<int> labels;
    for (const auto& p : pairs) {
        probs.push_back(p.prediction.likelihood);
        labels.push_back(p.truth.present ? 1 : 0);
    }
    r.calibration_bce = bce_loss(probs, labels);
    r.excluded_rejected = excluded_rejected;
    return r;
}

std::string format_percent(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
    return buf;
}

json to_json(const MetricsReport& r) {
    return json{{"region", r.region},
                {"solar", metrics_json(r.solar)},
                {"no_solar", metrics_json(r.no_solar)},
                {"weighted", metrics_json(r.weighted)},
                {"location_accuracy_solar", opt(r.location_accuracy_solar)},
                {"location_accuracy_all", opt(r.location_accuracy_all)},
                {"quantity_accuracy_solar", opt(r.quantity_accuracy_solar)},
                {"quantity_accuracy_all", opt(r.quantity_accuracy_all)},
                {"calibration_bce", r.calibration_bce},
                {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}, {"tn", r.counts.tn}}},
                {"excluded_rejected", r.excluded_rejected}};
}

std::string render_report(const MetricsReport& report, ReportFormat format) {
    if (format == ReportFormat::json) return to_json(report).dump(2) + "\n";
    std::string out = std::string(kReportCsvHeader) + "\n";
    auto row = [&](const char* cls, const ClassMetrics& m) {
        out += csv_field(report.region) + "," + cls + "," + format_percent(m.precision) + "," +
               format_percent(m.recall) + "," + format_percent(m.f1) + "," + format_percent(m.accuracy) + "\n";
    };
    row("Solar", report.solar);
    row("No Solar", report.no_solar);
    row("Weighted Average", report.weighted);
    return out;
}

std::vector<CsvRow> parse_report_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<CsvRow> rows;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (header) {
            header = false;
            if (line.rfind("region,", 0) == 0) continue;
        }
        auto f = split_csv_line(line);
        if (f.size() != 6) throw Error(Errc::invalid_argument, "report CSV row needs 6 fields: " + line);
        rows.push_back({f[0], f[1], std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5])});
    }
    return rows;
}

}  // namespace pvscan
