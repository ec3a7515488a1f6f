#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>

#include "pvscan/codec.hpp"
#include "pvscan/error.hpp"
#include "pvscan/finetune.hpp"
#include "pvscan/imagery.hpp"
#include "pvscan/raster.hpp"
#include "pvscan/store.hpp"

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

std::vector<GroundTruthLabel> make_labels(int solar, int empty) {
    std::vector<GroundTruthLabel> out;
    for (int i = 0; i < solar; ++i) out.push_back({"s" + std::to_string(i), true, Location::center, Quantity::one_to_five, "h", ""});
    for (int i = 0; i < empty; ++i) out.push_back({"e" + std::to_string(i), false, Location::na, Quantity::na, "h", ""});
    return out;
}

std::size_t count_present(const std::vector<std::string>& ids) {
    return std::count_if(ids.begin(), ids.end(), [](const std::string& id) { return id[0] == 's'; });
}

struct ExportFixture {
    std::vector<std::string> ids;
    std::map<std::string, std::string> payloads;
    std::map<std::string, GroundTruthLabel> truths;
    fs::path dir = fs::temp_directory_path() / "pvscan_export_test";

    ExportFixture() {
        fs::remove_all(dir);
        fs::create_directories(dir);
        for (const auto& l : make_labels(6, 4)) {
            ids.push_back(l.tile_id);
            truths[l.tile_id] = l;
            Raster r(8, 8);
            for (auto& p : r.pixels) p = static_cast<std::uint8_t>(l.tile_id.size() * 31 + l.tile_id.back());
            payloads[l.tile_id] = encode_image_payload(r);
        }
    }
    ~ExportFixture() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE("split sizes, stratification and determinism") {
    auto labels = make_labels(30, 70);
    DatasetSplit s = split_dataset(labels, 0.8, 42);
    CHECK(s.train_ids.size() == 80);
    CHECK(s.test_ids.size() == 20);
    CHECK(count_present(s.train_ids) == 24);
    CHECK(count_present(s.test_ids) == 6);
    CHECK(std::is_sorted(s.train_ids.begin(), s.train_ids.end()));
    std::set<std::string> all(s.train_ids.begin(), s.train_ids.end());
    for (const auto& id : s.test_ids) CHECK(all.insert(id).second);
    CHECK(all.size() == labels.size());

    DatasetSplit again = split_dataset(labels, 0.8, 42);
    CHECK(again.train_ids == s.train_ids);
    CHECK(split_dataset(labels, 0.8, 43).train_ids != s.train_ids);
    CHECK(to_json(s)["train_ids"].size() == 80);
}

TEST_CASE("splits never leave a side empty") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        int solar = static_cast<int>(rng() % 6);
        int empty = static_cast<int>(rng() % 6);
        if (solar + empty < 2) continue;
        double ratio = 0.05 + 0.9 * static_cast<double>(rng() % 1000) / 1000.0;
        for (bool stratified : {true, false}) {
            DatasetSplit s = split_dataset(make_labels(solar, empty), ratio, rng(), stratified);
            CHECK_FALSE(s.train_ids.empty());
            CHECK_FALSE(s.test_ids.empty());
            CHECK(s.train_ids.size() + s.test_ids.size() == static_cast<std::size_t>(solar + empty));
        }
    }
}

TEST_CASE("split preconditions") {
    CHECK(code_of([] { split_dataset(make_labels(1, 0), 0.8, 1); }) == Errc::too_few_labels);
    CHECK(code_of([] { split_dataset(make_labels(2, 2), 1.0, 1); }) == Errc::invalid_argument);
    CHECK(code_of([] { split_dataset(make_labels(2, 2), 0.0, 1); }) == Errc::invalid_argument);
}

TEST_CASE("training targets are canonical") {
    PvAssessment yes = training_target({"a", true, Location::left, Quantity::ten_plus});
    CHECK(yes == PvAssessment{true, Location::left, Quantity::ten_plus, 1.0, 1.0});
    PvAssessment no = training_target({"b", false, Location::na, Quantity::na});
    CHECK(no == PvAssessment{false, Location::na, Quantity::na, 0.0, 1.0});
}

TEST_CASE("export writes valid lines and re-exports byte-identically") {
    ExportFixture fx;
    fs::path a = fx.dir / "a.jsonl";
    fs::path b = fx.dir / "b.jsonl";
    CHECK(export_jsonl(fx.ids, fx.payloads, fx.truths, default_template(), a) == fx.ids.size());
    export_jsonl(fx.ids, fx.payloads, fx.truths, default_template(), b);
    CHECK(read_text(a) == read_text(b));

    ValidationReport v = validate_jsonl(a);
    CHECK(v.lines == fx.ids.size());
    CHECK(v.valid == v.lines);
    CHECK(v.errors.empty());

    auto lines = read_jsonl(a);
    const json& msgs = lines[0]["messages"];
    REQUIRE(msgs.size() == 3);
    CHECK(msgs[0]["role"] == "system");
    CHECK(msgs[1]["role"] == "user");
    CHECK(msgs[2]["role"] == "assistant");
    auto parsed = parse_model_response(msgs[2]["content"].get<std::string>(), ParseMode::strict);
    REQUIRE(parsed.assessment);
    CHECK(*parsed.assessment == training_target(fx.truths.at(fx.ids[0])));

    ExportOptions src;
    src.image_style = ImageStyle::base64_source;
    fs::path c = fx.dir / "c.jsonl";
    export_jsonl(fx.ids, fx.payloads, fx.truths, default_template(), c, src);
    CHECK(validate_jsonl(c).valid == fx.ids.size());
}

TEST_CASE("export reports missing inputs") {
    ExportFixture fx;
    auto payloads = fx.payloads;
    payloads.erase(fx.ids[3]);
    CHECK(code_of([&] { export_jsonl(fx.ids, payloads, fx.truths, default_template(), fx.dir / "x.jsonl"); }) ==
          Errc::missing_tile);
    auto truths = fx.truths;
    truths.erase(fx.ids[2]);
    CHECK(code_of([&] { export_jsonl(fx.ids, fx.payloads, truths, default_template(), fx.dir / "y.jsonl"); }) ==
          Errc::missing_label);
}

TEST_CASE("validation flags corrupted lines and empty files") {
    ExportFixture fx;
    fs::path a = fx.dir / "a.jsonl";
    export_jsonl(fx.ids, fx.payloads, fx.truths, default_template(), a);
    auto lines = read_jsonl(a);

    std::ofstream out(fx.dir / "bad.jsonl");
    out << lines[0].dump() << "\n";
    out << "{not json\n";
    json no_assistant = lines[1];
    no_assistant["messages"].erase(2);
    out << no_assistant.dump() << "\n";
    json bad_target = lines[2];
    bad_target["messages"][2]["content"] = R"({"solar_panels_present": true, "location": "NA"})";
    out << bad_target.dump() << "\n";
    json bad_image = lines[3];
    std::string text = bad_image.dump();
    auto at = text.find("base64,");
    REQUIRE(at != std::string::npos);
    text.replace(at + 7, 8, "!!!!!!!!");
    out << text << "\n";
    out.close();

    ValidationReport v = validate_jsonl(fx.dir / "bad.jsonl");
    CHECK(v.lines == 5);
    CHECK(v.valid == 1);
    CHECK(v.errors["json"] == 1);
    CHECK(v.errors["structure"] == 1);
    CHECK(v.errors["assistant"] == 1);
    CHECK(v.errors["image"] == 1);
    CHECK_FALSE(v.samples.empty());

    std::ofstream(fx.dir / "empty.jsonl").close();
    ValidationReport e = validate_jsonl(fx.dir / "empty.jsonl");
    CHECK(e.lines == 0);
    CHECK(e.valid == 0);
    CHECK(code_of([&] { validate_jsonl(fx.dir / "missing.jsonl"); }) == Errc::io_error);
}
