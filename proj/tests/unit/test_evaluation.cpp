#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

#include "eval_oracle.hpp"
#include "pvscan/error.hpp"
#include "pvscan/evaluation.hpp"

using namespace pvscan;
using nlohmann::json;

namespace {

Errc code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return Errc::precondition;
}

EvalPair make_pair(const std::string& id, PvAssessment pred, bool present, Location loc, Quantity q) {
    return {id, pred, GroundTruthLabel{id, present, loc, q, "test", ""}};
}

}  // namespace

TEST_CASE("class metrics on small counts") {
    ConfusionCounts c{3, 1, 0, 0};
    ClassMetrics m = class_metrics(c);
    CHECK(m.precision == 0.75);
    CHECK(m.recall == 1.0);
    CHECK(m.f1 == doctest::Approx(6.0 / 7.0).epsilon(1e-15));
    CHECK_FALSE(m.degenerate);
    CHECK(m.support == 3);

    ClassMetrics z = class_metrics(ConfusionCounts{0, 0, 0, 5});
    CHECK(z.precision == 0.0);
    CHECK(z.recall == 0.0);
    CHECK(z.f1 == 0.0);
    CHECK(z.degenerate);
    CHECK(f1_score(0.0, 0.0) == 0.0);
}

TEST_CASE("reference prompt and fine-tuned F1 values follow from P and R") {
    CHECK(std::abs(class_metrics_from_rates(0.6648, 0.9098).f1 - 0.7682) <= 1e-4);
    CHECK(std::abs(class_metrics_from_rates(0.7118, 0.9915).f1 - 0.8287) <= 1e-4);
    CHECK(std::abs(class_metrics_from_rates(0.9860, 0.9329).f1 - 0.9587) <= 1e-4);
    CHECK(std::abs(class_metrics_from_rates(0.9986, 0.9391).f1 - 0.9679) <= 1e-4);
}

TEST_CASE("reference fine-tuned weighted row is consistent with a single support split") {
    // A solar share of about 13.17% reproduces the weighted row from the two
    // class rows; the row carries no counts of its own.
    ClassMetrics solar = class_metrics_from_rates(0.7118, 0.9915, 1317);
    ClassMetrics none = class_metrics_from_rates(0.9986, 0.9391, 8683);
    solar.f1 = 0.8287;
    none.f1 = 0.9679;
    ClassMetrics w = weighted_average(solar, none);
    CHECK(std::abs(w.precision - 0.9608) <= 1e-4);
    CHECK(std::abs(w.recall - 0.9460) <= 1e-4);
    CHECK(std::abs(w.f1 - 0.9496) <= 1e-4);
}

TEST_CASE("weighted average of two classes") {
    ClassMetrics a = class_metrics_from_rates(0.9, 0.9, 90);
    ClassMetrics b = class_metrics_from_rates(0.5, 0.5, 10);
    ClassMetrics w = weighted_average(a, b);
    CHECK(w.precision == doctest::Approx(0.86).epsilon(1e-12));
    CHECK(w.support == 100);
    ClassMetrics same = weighted_average(class_metrics_from_rates(0.3, 0.7, 3), class_metrics_from_rates(0.3, 0.7, 11));
    CHECK(same.precision == 0.3);
    CHECK(same.recall == 0.7);
    CHECK(code_of([] { weighted_average(ClassMetrics{}, ClassMetrics{}); }) == Errc::empty_evaluation);
    CHECK(code_of([] { weighted_from_counts(ConfusionCounts{}); }) == Errc::empty_evaluation);
}

TEST_CASE("exact match accuracy") {
    PvAssessment left{true, Location::left, Quantity::one_to_five, 0.9, 0.9};
    std::vector<EvalPair> one = {make_pair("a", left, true, Location::top_left, Quantity::one_to_five)};
    CHECK(exact_match_accuracy(MatchField::location, one, MatchSubset::solar_only) == 0.0);
    CHECK(exact_match_accuracy(MatchField::quantity, one, MatchSubset::solar_only) == 1.0);

    PvAssessment tl{true, Location::top_left, Quantity::one_to_five, 0.9, 0.9};
    std::vector<EvalPair> four = {make_pair("a", tl, true, Location::top_left, Quantity::one_to_five),
                                  make_pair("b", tl, true, Location::top_left, Quantity::one_to_five),
                                  make_pair("c", tl, true, Location::top_left, Quantity::one_to_five),
                                  make_pair("d", tl, true, Location::right, Quantity::one_to_five)};
    CHECK(exact_match_accuracy(MatchField::location, four, MatchSubset::solar_only) == 0.75);

    PvAssessment no{false, Location::na, Quantity::na, 0.1, 0.9};
    std::vector<EvalPair> empty = {make_pair("a", no, false, Location::na, Quantity::na),
                                   make_pair("b", no, false, Location::na, Quantity::na)};
    CHECK(exact_match_accuracy(MatchField::location, empty, MatchSubset::all) == 1.0);
    CHECK(code_of([&] { exact_match_accuracy(MatchField::location, empty, MatchSubset::solar_only); }) ==
          Errc::empty_subset);
}

TEST_CASE("bce loss values") {
    std::vector<double> half = {0.5};
    std::vector<int> one = {1};
    CHECK(std::abs(bce_loss(half, one) - std::log(2.0)) <= 1e-9);
    std::vector<double> perfect = {1.0, 0.0};
    std::vector<int> labels = {1, 0};
    CHECK(bce_loss(perfect, labels) <= 1e-11);
    std::vector<double> wrong = {0.0};
    CHECK(bce_loss(wrong, one) == doctest::Approx(-std::log(1e-12)).epsilon(1e-9));
    CHECK(std::isfinite(bce_loss(wrong, one)));

    // For a constant prediction the loss is minimized at the label mean.
    std::vector<int> mixed = {1, 1, 1, 0};
    double best_p = 0, best = 1e9;
    for (int i = 1; i < 1000; ++i) {
        double p = i / 1000.0;
        std::vector<double> probs(4, p);
        double l = bce_loss(probs, mixed);
        if (l < best) best = l, best_p = p;
    }
    CHECK(best_p == doctest::Approx(0.75).epsilon(1e-9));

    std::vector<double> two = {0.1, 0.2};
    CHECK(code_of([&] { bce_loss(two, one); }) == Errc::length_mismatch);
    CHECK(code_of([] { bce_loss({}, {}); }) == Errc::length_mismatch);
}

TEST_CASE("align rejects length and id mismatches") {
    PvAssessment a{};
    std::vector<std::pair<std::string, PvAssessment>> preds = {{"x", a}, {"y", a}};
    std::vector<GroundTruthLabel> truths = {{"x"}, {"y"}};
    CHECK(align(preds, truths).size() == 2);
    truths.pop_back();
    CHECK(code_of([&] { align(preds, truths); }) == Errc::alignment_error);
    truths.push_back({"z"});
    CHECK(code_of([&] { confusion(preds, truths); }) == Errc::alignment_error);
}

TEST_CASE("random sets agree exactly with the brute-force oracle") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        auto pairs = oracle::random_pairs(rng, 1 + rng() % 1000);
        auto want = oracle::expected(pairs);
        MetricsReport r = build_report("r", pairs);
        CHECK(r.counts == ConfusionCounts{want.tp, want.fp, want.fn, want.tn});
        CHECK(r.weighted.precision == want.weighted_precision);
        CHECK(r.weighted.recall == want.weighted_recall);
        CHECK(r.weighted.f1 == want.weighted_f1);
        CHECK(r.location_accuracy_solar == want.loc_solar);
        CHECK(r.location_accuracy_all == want.loc_all);
        CHECK(r.quantity_accuracy_solar == want.qty_solar);
        CHECK(r.quantity_accuracy_all == want.qty_all);
    }
}

TEST_CASE("metric invariants over random sets") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 300; ++trial) {
        auto pairs = oracle::random_pairs(rng, 1 + rng() % 200);
        MetricsReport r = build_report("r", pairs);
        CHECK(r.counts.total() == static_cast<std::int64_t>(pairs.size()));
        for (const ClassMetrics* m : {&r.solar, &r.no_solar, &r.weighted}) {
            CHECK(m->precision >= 0.0);
            CHECK(m->precision <= 1.0);
            CHECK(m->recall >= 0.0);
            CHECK(m->recall <= 1.0);
            CHECK(m->f1 >= 0.0);
            CHECK(m->f1 <= 1.0);
        }
        for (const ClassMetrics* m : {&r.solar, &r.no_solar}) {
            CHECK(m->f1 <= std::max(m->precision, m->recall) + 1e-12);
            CHECK(m->f1 >= std::min(m->precision, m->recall) - 1e-12);
        }
        // Swapping the positive class swaps the per-class rows.
        ConfusionCounts s = r.counts.swapped();
        CHECK(class_metrics(s) == r.no_solar);
        CHECK(class_metrics(s.swapped()) == r.solar);
        CHECK(weighted_from_counts(s).f1 == doctest::Approx(r.weighted.f1).epsilon(1e-12));
        CHECK(r.calibration_bce >= 0.0);
    }
}

TEST_CASE("report CSV renders percent rows and parses back") {
    MetricsReport r;
    r.region = "Santa Ana, CA";
    r.solar = class_metrics_from_rates(0.7118, 0.9915);
    r.solar.f1 = 0.8287;
    r.no_solar = class_metrics_from_rates(0.9986, 0.9391);
    r.no_solar.f1 = 0.9679;
    r.weighted = ClassMetrics{0.9608, 0.9460, 0.9496, 0.9460, 0, false};
    std::string csv = render_report(r, ReportFormat::csv);
    CHECK(csv.rfind(std::string(kReportCsvHeader) + "\n", 0) == 0);
    CHECK(csv.find("\"Santa Ana, CA\",Weighted Average,96.08,94.60,94.96,94.60\n") != std::string::npos);
    auto rows = parse_report_csv(csv);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].region == "Santa Ana, CA");
    CHECK(rows[0].cls == "Solar");
    CHECK(rows[0].precision == 71.18);
    CHECK(rows[1].recall == 93.91);
    CHECK(rows[2].f1 == 94.96);
    CHECK(format_percent(0.99155) == "99.16");
    CHECK(code_of([] { parse_report_csv("a,b\n1,2\n"); }) == Errc::invalid_argument);
}

TEST_CASE("report JSON carries exactly the schema's keys") {
    std::ifstream in(std::filesystem::path(PVSCAN_TEST_DATA_DIR) / "report.schema.json");
    json schema = json::parse(in);
    std::mt19937_64 rng(5);
    auto pairs = oracle::random_pairs(rng, 50);
    json j = json::parse(render_report(build_report("r", pairs, 2), ReportFormat::json));
    for (const auto& k : schema["required"]) CHECK(j.contains(k.get<std::string>()));
    for (const auto& [k, v] : j.items()) CHECK(schema["properties"].contains(k));
    const json& cm = schema["$defs"]["class_metrics"];
    for (const char* cls : {"solar", "no_solar", "weighted"}) {
        for (const auto& k : cm["required"]) CHECK(j[cls].contains(k.get<std::string>()));
        CHECK(j[cls].size() == cm["required"].size());
    }
    CHECK(j["excluded_rejected"] == 2);
    CHECK(j["counts"]["tp"].get<int>() + j["counts"]["fp"].get<int>() + j["counts"]["fn"].get<int>() +
              j["counts"]["tn"].get<int>() ==
          50);
}
