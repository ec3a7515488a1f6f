#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "pvscan/codec.hpp"
#include "pvscan/error.hpp"
#include "pvscan/imagery.hpp"
#include "pvscan/prompting.hpp"
#include "pvscan/store.hpp"

using namespace pvscan;
using nlohmann::json;

namespace {

const std::filesystem::path kData = PVSCAN_TEST_DATA_DIR;

std::string tiny_payload(std::uint8_t shade) {
    Raster r(4, 4);
    for (auto& p : r.pixels) p = shade;
    return encode_image_payload(r);
}

}  // namespace

TEST_CASE("default template carries the three steps and the full vocabularies") {
    PromptTemplate t = default_template();
    CHECK(t.steps_text.find("Image Analysis") != std::string::npos);
    CHECK(t.steps_text.find("Panel Location") != std::string::npos);
    CHECK(t.steps_text.find("Panel Quantification") != std::string::npos);
    for (Location loc : kAllLocations) CHECK(t.schema_text.find(std::string(to_string(loc))) != std::string::npos);
    for (Quantity q : kAllQuantities) CHECK(t.schema_text.find(std::string(to_string(q))) != std::string::npos);
    for (const char* f : {field::present, field::location, field::quantity, field::likelihood, field::confidence}) {
        CHECK(t.schema_text.find(std::string("\"") + f + "\"") != std::string::npos);
    }
    CHECK(default_template() == t);
    CHECK(t.version == template_version(t.task_text, t.steps_text, t.schema_text));
}

TEST_CASE("template files load and validate") {
    CHECK(load_template(kData / "prompt_template.json") == default_template());
    auto path = std::filesystem::temp_directory_path() / "pvscan_bad_template.json";
    {
        std::ofstream(path) << R"({"task_text": "t", "steps_text": "", "schema_text": "s"})";
    }
    CHECK_THROWS_AS(load_template(path), Error);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(make_template("a", "b", ""), Error);
    CHECK(make_template("a", "b", "c").version != make_template("a", "b", "d").version);
}

TEST_CASE("shipped example bank matches the built-in bank and opens with the two canonical examples") {
    auto bank = default_example_bank();
    REQUIRE(bank.size() == 6);
    CHECK(load_example_bank(kData / "fewshot_examples.jsonl") == bank);
    CHECK(bank[0].label == "Example 1 (Solar)");
    CHECK(bank[0].assessment == PvAssessment{true, Location::top_left, Quantity::zero_to_one, 0.98, 0.90});
    CHECK_FALSE(bank[0].image_payload.has_value());
    CHECK(bank[1].label == "Example 2 (No Solar)");
    CHECK(bank[1].assessment == PvAssessment{false, Location::na, Quantity::na, 0.21, 0.87});
    for (std::size_t i = 2; i < bank.size(); ++i) {
        REQUIRE(bank[i].image_payload.has_value());
        auto png = base64_decode(*bank[i].image_payload);
        REQUIRE(png.has_value());
        CHECK(decode_png(*png).width == 160);
    }
}

TEST_CASE("synthetic example images agree with their stated labels") {
    for (const auto& j : read_jsonl(kData / "fewshot_examples.jsonl")) {
        if (!j.contains("image_synth")) continue;
        const json& spec = j["image_synth"];
        std::vector<std::vector<PanelRect>> layouts(16);
        for (const auto& r : spec["rects"]) layouts[0].push_back(panel_rect_from_json(r));
        SynthOptions opts;
        opts.tile_px = spec.value("tile_px", 160);
        auto synth = synthesize_scene(layouts, spec["seed"].get<std::uint64_t>(), opts);
        const auto& truth = synth.truth.at(tile_id_for(synth.scene.scene_id, 0, 0));
        FewShotExample ex = example_from_json(j);
        CHECK_MESSAGE(truth.location == ex.assessment.location, ex.label);
        CHECK_MESSAGE(truth.quantity == ex.assessment.quantity, ex.label);
        CHECK(ex.assessment.present == (truth.count > 0));
    }
    auto bank = default_example_bank();
    json ex = to_json(bank[2]);
    CHECK(example_from_json(ex) == bank[2]);
    json bad = ex;
    bad["assessment"]["location"] = "NA";
    CHECK_THROWS_AS(example_from_json(bad), Error);
}

TEST_CASE("assemble_prompt takes the first k examples") {
    auto bank = default_example_bank();
    std::string img = tiny_payload(9);
    PromptBundle five = assemble_prompt(default_template(), bank, 5, img);
    CHECK(five.examples.size() == 5);
    CHECK(five.temperature == 0.0);
    CHECK(five.examples.front() == bank.front());
    CHECK(five.examples.back() == bank[4]);
    std::string sys = system_text(five);
    std::size_t blocks = 0;
    for (std::size_t p = sys.find("\n# Example"); p != std::string::npos; p = sys.find("\n# Example", p + 1)) ++blocks;
    CHECK(blocks == 5);

    PromptBundle none = assemble_prompt(default_template(), bank, 0, img);
    CHECK(none.examples.empty());
    CHECK(system_text(none).find("Examples:") == std::string::npos);

    try {
        assemble_prompt(default_template(), bank, 7, img);
        FAIL("expected not_enough_examples");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::not_enough_examples);
    }
}

TEST_CASE("bundle hash is a pure function of the bundle") {
    auto bank = default_example_bank();
    std::string img = tiny_payload(1);
    auto a = assemble_prompt(default_template(), bank, 5, img);
    auto b = assemble_prompt(default_template(), bank, 5, img);
    CHECK(a.bundle_hash == b.bundle_hash);
    CHECK(a.bundle_hash == compute_bundle_hash(a));

    auto tweaked = bank;
    tweaked[1].assessment.likelihood = 0.22;
    CHECK(assemble_prompt(default_template(), tweaked, 5, img).bundle_hash != a.bundle_hash);
    CHECK(assemble_prompt(default_template(), bank, 5, tiny_payload(2)).bundle_hash != a.bundle_hash);
    PromptOptions warm;
    warm.temperature = 0.7;
    CHECK(assemble_prompt(default_template(), bank, 5, img, warm).bundle_hash != a.bundle_hash);
    PromptOptions images;
    images.include_example_images = true;
    CHECK(assemble_prompt(default_template(), bank, 5, img, images).bundle_hash != a.bundle_hash);
}

TEST_CASE("render_messages yields one system and one user message") {
    auto bank = default_example_bank();
    std::string img = tiny_payload(3);
    auto bundle = assemble_prompt(default_template(), bank, 5, img);
    auto msgs = render_messages(bundle);
    REQUIRE(msgs.size() == 2);
    CHECK(msgs[0].role == "system");
    CHECK(msgs[1].role == "user");
    const std::string& sys = msgs[0].content.at(0).text;
    auto schema_at = sys.find(bundle.prompt_template.schema_text);
    auto examples_at = sys.find("Examples:");
    REQUIRE(schema_at != std::string::npos);
    CHECK(examples_at > schema_at);
    CHECK(sys.find(serialize_assessment(bank[0].assessment)) > examples_at);
    REQUIRE(msgs[1].content.size() == 2);
    CHECK(msgs[1].content[0].text == kUserInstruction);
    CHECK(msgs[1].content[1].kind == ContentBlock::Kind::image);
    CHECK(msgs[1].content[1].data == img);
    CHECK(render_messages(bundle) == msgs);
}

TEST_CASE("example images are attached only when requested") {
    auto bank = default_example_bank();
    PromptOptions opts;
    opts.include_example_images = true;
    auto bundle = assemble_prompt(default_template(), bank, 5, tiny_payload(4), opts);
    auto msgs = render_messages(bundle);
    std::size_t images = 0;
    for (const auto& b : msgs[1].content) images += b.kind == ContentBlock::Kind::image;
    CHECK(images == 4);  // examples 3..5 carry images, plus the target
    CHECK(msgs[1].content.back().data == bundle.image_payload);
}

TEST_CASE("messages_to_json spells both image styles") {
    auto bundle = assemble_prompt(default_template(), default_example_bank(), 2, tiny_payload(5));
    auto msgs = render_messages(bundle);
    json d = messages_to_json(msgs, ImageStyle::data_url);
    CHECK(d[0]["content"].is_string());
    CHECK(d[1]["content"][1]["type"] == "image_url");
    CHECK(d[1]["content"][1]["image_url"]["url"].get<std::string>().rfind("data:image/png;base64,", 0) == 0);
    json s = messages_to_json(msgs, ImageStyle::base64_source);
    CHECK(s[1]["content"][1]["type"] == "image");
    CHECK(s[1]["content"][1]["source"]["media_type"] == "image/png");
    CHECK(s[1]["content"][1]["source"]["data"] == bundle.image_payload);
    CHECK(image_style_from("data-url") == ImageStyle::data_url);
    CHECK(image_style_from("base64-source") == ImageStyle::base64_source);
    CHECK_FALSE(image_style_from("url").has_value());
}

TEST_CASE("rendering is injective across hash-distinct bundles of a generated bank") {
    // Temperature is a request parameter rather than message content, so the
    // scan holds it fixed.
    auto bank = default_example_bank();
    std::vector<PromptTemplate> templates = {default_template(), make_template("task", "steps", "schema"),
                                             make_template("task", "steps", "schema2")};
    std::map<std::string, std::string> by_hash;
    std::set<std::string> renders;
    for (const auto& tmpl : templates) {
        for (std::size_t k = 0; k <= bank.size(); ++k) {
            for (std::uint8_t shade : {0, 1, 200}) {
                for (bool with_images : {false, true}) {
                    PromptOptions opts;
                    opts.include_example_images = with_images;
                    auto b = assemble_prompt(tmpl, bank, k, tiny_payload(shade), opts);
                    std::string rendered = messages_to_json(render_messages(b), ImageStyle::data_url).dump();
                    auto [it, fresh] = by_hash.emplace(b.bundle_hash, rendered);
                    if (!fresh) CHECK(it->second == rendered);
                    renders.insert(rendered);
                }
            }
        }
    }
    CHECK(by_hash.size() == templates.size() * (bank.size() + 1) * 3 * 2);
    CHECK(renders.size() == by_hash.size());
}
