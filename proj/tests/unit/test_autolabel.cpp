#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <set>

#include "pvscan/autolabel.hpp"
#include "pvscan/error.hpp"
#include "pvscan/prompting.hpp"

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

InferenceRecord record(const std::string& id, std::optional<PvAssessment> a) {
    InferenceRecord r;
    r.tile_id = id;
    if (a) {
        r.outcome.status = ParseStatus::ok;
        r.outcome.assessment = a;
    } else {
        r.outcome.status = ParseStatus::rejected;
        r.outcome.diagnostic = "no JSON object found";
    }
    return r;
}

PvAssessment random_assessment(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    PvAssessment a;
    a.present = unit(rng) < 0.5;
    a.location = a.present ? kAllLocations[rng() % 9] : Location::na;
    a.quantity = a.present ? kAllQuantities[rng() % 4] : Quantity::na;
    a.likelihood = std::round(unit(rng) * 100) / 100;
    a.confidence = std::round(unit(rng) * 100) / 100;
    return a;
}

std::vector<InferenceRecord> random_records(std::mt19937_64& rng, int n) {
    std::vector<InferenceRecord> out;
    for (int i = 0; i < n; ++i) {
        bool rejected = rng() % 10 == 0;
        out.push_back(record("t" + std::to_string(i), rejected ? std::nullopt : std::optional(random_assessment(rng))));
    }
    return out;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("triage rule under defaults") {
    TriageConfig cfg;
    CHECK(triage({true, Location::top, Quantity::zero_to_one, 0.95, 0.92}, cfg) == TriageDecision::auto_accept);
    CHECK(triage({true, Location::top, Quantity::zero_to_one, 0.95, 0.79}, cfg) == TriageDecision::review);
    CHECK(triage({true, Location::top, Quantity::zero_to_one, 0.55, 0.95}, cfg) == TriageDecision::review);
    CHECK(triage({false, Location::na, Quantity::na, 0.40, 0.80}, cfg) == TriageDecision::auto_accept);
    CHECK(triage({true, Location::top, Quantity::zero_to_one, 0.60, 0.80}, cfg) == TriageDecision::auto_accept);
    CHECK(triage({true, Location::top, Quantity::zero_to_one, 0.59, 0.80}, cfg) == TriageDecision::review);
    // The two canonical examples route to auto-accept.
    auto bank = default_example_bank();
    CHECK(triage(bank[0].assessment, cfg) == TriageDecision::auto_accept);
    CHECK(triage(bank[1].assessment, cfg) == TriageDecision::auto_accept);
}

TEST_CASE("triage config validation and parsing") {
    CHECK_NOTHROW(validate(TriageConfig{}));
    CHECK(code_of([] { validate(TriageConfig{1.1, 0.1}); }) == Errc::invalid_argument);
    CHECK(code_of([] { validate(TriageConfig{0.8, 0.5}); }) == Errc::invalid_argument);
    TriageConfig c = triage_config_from_json(json{{"confidence_threshold", 0.9}});
    CHECK(c.confidence_threshold == 0.9);
    CHECK(c.likelihood_margin == 0.1);
    CHECK(triage_config_from_json(to_json(c)).confidence_threshold == 0.9);
    CHECK(code_of([] { triage_config_from_json(json{{"decision_boundary", 0.6}}); }) == Errc::invalid_argument);
    CHECK(code_of([] { triage_config_from_json(json{{"likelihood_margin", "x"}}); }) == Errc::invalid_argument);
}

TEST_CASE("triage_batch partitions records exhaustively and exclusively") {
    std::mt19937_64 rng(11);
    auto records = random_records(rng, 400);
    TriageResult r = triage_batch(records, TriageConfig{});
    CHECK(r.accepted.size() + r.queue.size() == records.size());
    std::set<std::string> ids;
    for (const auto& l : r.accepted) {
        CHECK(l.annotator == "auto");
        ids.insert(l.tile_id);
    }
    for (const auto& q : r.queue) ids.insert(q.tile_id);
    CHECK(ids.size() == records.size());

    // Rejected parses first, then ascending confidence.
    bool seen_prediction = false;
    double last = -1.0;
    for (const auto& q : r.queue) {
        CHECK(q.status == ReviewStatus::pending);
        if (!q.prediction) {
            CHECK_FALSE(seen_prediction);
            continue;
        }
        seen_prediction = true;
        CHECK(q.prediction->confidence >= last);
        last = q.prediction->confidence;
    }
}

TEST_CASE("raising the confidence threshold never shrinks the queue") {
    std::mt19937_64 rng(12);
    auto records = random_records(rng, 300);
    std::set<std::string> prev;
    for (int step = 0; step <= 20; ++step) {
        TriageConfig cfg;
        cfg.confidence_threshold = step / 20.0;
        std::set<std::string> queued;
        for (const auto& q : triage_batch(records, cfg).queue) queued.insert(q.tile_id);
        for (const auto& id : prev) CHECK(queued.count(id) == 1);
        prev = std::move(queued);
    }
    TriageConfig all;
    all.confidence_threshold = 1.0;
    all.likelihood_margin = 0.49;
    CHECK(triage_batch(records, all).queue.size() >= prev.size());
}

TEST_CASE("silverman bandwidth and KDE mass") {
    std::vector<double> none;
    CHECK(gaussian_kde(none).x.empty());
    std::vector<double> one = {0.7};
    CHECK(silverman_bandwidth(one) == 0.05);
    std::vector<double> same(10, 0.3);
    CHECK(silverman_bandwidth(same) == 0.05);
    std::vector<double> spread = {0.1, 0.2, 0.3, 0.4, 0.5};
    double h = silverman_bandwidth(spread);
    CHECK(h >= 0.01);
    CHECK(h < 0.3);

    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> s(1 + rng() % 60);
        double centre = unit(rng);
        for (auto& v : s) v = std::clamp(centre + 0.2 * (unit(rng) - 0.5), 0.0, 1.0);
        KdeGrid g = gaussian_kde(s);
        REQUIRE(g.x.size() == kKdeGridPoints);
        CHECK(g.x.front() == 0.0);
        CHECK(g.x.back() == 1.0);
        CHECK(std::abs(trapezoid_integral(g) - 1.0) <= 1e-3);
        for (double d : g.density) CHECK(d >= 0.0);
    }
    std::vector<double> edge = {1.0, 1.0, 0.99, 0.98};
    CHECK(std::abs(trapezoid_integral(gaussian_kde(edge)) - 1.0) <= 1e-3);
}

TEST_CASE("median") {
    CHECK(median({3, 1, 2}) == 2);
    CHECK(median({4, 1, 2, 3}) == 2.5);
    CHECK(code_of([] { median({}); }) == Errc::empty_class);
}

TEST_CASE("likelihood summary splits by ground truth") {
    std::vector<InferenceRecord> recs = {
        record("a", PvAssessment{true, Location::top, Quantity::zero_to_one, 0.9, 0.95}),
        record("b", PvAssessment{false, Location::na, Quantity::na, 0.3, 0.6}),
        record("c", PvAssessment{false, Location::na, Quantity::na, 0.1, 0.9}),
        record("d", std::nullopt),
    };
    std::map<std::string, GroundTruthLabel> truths = {
        {"a", {"a", true, Location::top, Quantity::zero_to_one}},
        {"b", {"b", true, Location::left, Quantity::zero_to_one}},
        {"c", {"c", false}},
        {"d", {"d", false}},
    };
    DistributionSummary s = likelihood_summary(recs, truths);
    CHECK(s.count_true == 2);
    CHECK(s.count_false == 1);
    CHECK(s.median_likelihood_true == doctest::Approx(0.6));
    CHECK(s.median_likelihood_false == 0.1);
    CHECK(s.kde_true_positive.samples == 1);
    CHECK(s.kde_false_negative.samples == 1);
    json j = to_json(s);
    CHECK(j["kde_confidence_true_positive"]["grid"].size() == kKdeGridPoints);

    truths.erase("c");
    CHECK(code_of([&] { likelihood_summary(recs, truths); }) == Errc::empty_class);
}

TEST_CASE("review items round-trip through JSON") {
    ReviewItem item;
    item.tile_id = "x_0_1";
    item.prediction = PvAssessment{true, Location::right, Quantity::one_to_five, 0.6, 0.5};
    item.reason = "low confidence";
    ReviewItem back = review_item_from_json(to_json(item));
    CHECK(back.tile_id == item.tile_id);
    CHECK(back.prediction == item.prediction);
    CHECK(back.status == ReviewStatus::pending);
    json bad = to_json(item);
    bad["status"] = "corrected";
    CHECK(code_of([&] { review_item_from_json(bad); }) == Errc::invalid_argument);
}

TEST_CASE("review store corrections, confirmations and conflicts") {
    TempDir tmp("pvscan_review_store");
    DataDir dir(tmp.path);
    ReviewStore store(dir);
    CHECK(store.pending().empty());

    std::vector<InferenceRecord> recs = {
        record("s_0_0", PvAssessment{true, Location::top, Quantity::one_to_five, 0.55, 0.4}),
        record("s_0_1", PvAssessment{false, Location::na, Quantity::na, 0.45, 0.7}),
        record("s_0_2", std::nullopt),
    };
    store.merge_queue(triage_batch(recs, TriageConfig{}).queue);
    auto pending = store.pending();
    REQUIRE(pending.size() == 3);
    CHECK(pending[0].tile_id == "s_0_2");
    CHECK(store.pending(1).size() == 1);

    GroundTruthLabel agree{"", true, Location::top, Quantity::one_to_five};
    ReviewItem confirmed = store.apply_correction("s_0_0", agree, "ana");
    CHECK(confirmed.status == ReviewStatus::confirmed);
    CHECK(confirmed.reviewer == "ana");

    GroundTruthLabel fix{"", true, Location::bottom, Quantity::zero_to_one};
    ReviewItem corrected = store.apply_correction("s_0_1", fix, "");
    CHECK(corrected.status == ReviewStatus::corrected);
    CHECK(corrected.correction->annotator == "reviewer");

    CHECK(code_of([&] { store.apply_correction("s_0_0", agree, "ana"); }) == Errc::already_resolved);
    CHECK(code_of([&] { store.apply_correction("nope", agree, "ana"); }) == Errc::not_found);
    GroundTruthLabel inconsistent{"", false, Location::top, Quantity::na};
    CHECK(code_of([&] { store.apply_correction("s_0_2", inconsistent, "ana"); }) == Errc::invalid_argument);

    auto labels = dir.load_labels();
    REQUIRE(labels.size() == 2);
    CHECK(labels[0].tile_id == "s_0_0");
    CHECK(labels[1].location == Location::bottom);
    CHECK(store.pending().size() == 1);

    // Re-triage keeps resolved items and replaces pending ones.
    store.merge_queue(triage_batch({recs[2]}, TriageConfig{}).queue);
    CHECK(store.all().size() == 3);
    CHECK(store.find("s_0_1")->status == ReviewStatus::corrected);
    store.merge_queue({});
    CHECK(store.pending().empty());
    CHECK(store.all().size() == 2);
}
