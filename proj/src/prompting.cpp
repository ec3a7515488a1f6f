#include "pvscan/prompting.hpp"

#include <cstdio>

#include "pvscan/codec.hpp"
#include "pvscan/error.hpp"
#include "pvscan/imagery.hpp"
#include "pvscan/store.hpp"

namespace pvscan {

using nlohmann::json;

std::string template_version(const std::string& task, const std::string& steps, const std::string& schema) {
    std::string material = task;
    material.push_back('\0');
    material += steps;
    material.push_back('\0');
    material += schema;
    return "tmpl-" + sha256_hex(std::string_view(material)).substr(0, 12);
}

PromptTemplate make_template(std::string task, std::string steps, std::string schema) {
    if (task.empty() || steps.empty() || schema.empty()) {
        throw Error(Errc::invalid_argument, "prompt template sections must be non-empty");
    }
    PromptTemplate t{std::move(task), std::move(steps), std::move(schema), {}};
    t.version = template_version(t.task_text, t.steps_text, t.schema_text);
    return t;
}

PromptTemplate default_template() {
    static const PromptTemplate kDefault = make_template(
        "Identify the presence of solar panels in images of residential rooftops, and determine their locations "
        "and quantity within the images. You will be provided with images that may contain residential rooftop "
        "solar systems. Analyze each image to detect solar panels.",

        "Steps:\n"
        "1. **Image Analysis**: Examine the entire image to identify any objects that appear to be solar panels.\n"
        "2. **Panel Location**: Determine the coordinates or area within the image where the solar panels are "
        "located.\n"
        "3. **Panel Quantification**: Calculate or estimate the number of solar panels based on their appearance "
        "and arrangement.",

        "The output should be in JSON format, structured as follows, with each field restricted to specific "
        "possible values for consistency and accuracy:\n"
        "\"solar_panels_present\": A boolean value indicating if solar panels are detected. "
        "Possible values: [true, false]\n"
        "\"location\": A description or coordinates indicating where the panels are located within the image. "
        "Possible values: [left, right, bottom, top, top-left, top-right, bottom-right, bottom-left, center, NA]\n"
        "\"quantity\": The number of solar panels detected in the image. "
        "Possible values: [0 to 1, 1 to 5, 5 to 10, 10 to inf, NA]\n"
        "\"likelihood_of_solar_panels_present\": A value indicating the probability of solar panels being present. "
        "Possible values: A decimal range from 0.00 to 1.00\n"
        "\"confidence_of_solar_panels_present\": A value indicating the model's confidence in its prediction. "
        "Possible values: A decimal range from 0.00 to 1.00");
    return kDefault;
}

PromptTemplate load_template(const std::filesystem::path& path) {
    json j = json::parse(read_text(path), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(Errc::invalid_argument, "template file is not a JSON object");
    for (const char* key : {"task_text", "steps_text", "schema_text"}) {
        if (!j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty()) {
            throw Error(Errc::invalid_argument, std::string("template file needs a non-empty '") + key + "'");
        }
    }
    return make_template(j["task_text"], j["steps_text"], j["schema_text"]);
}

namespace {

std::string render_synth_example(const json& spec) {
    SynthOptions opts;
    opts.tile_px = spec.value("tile_px", 160);
    opts.shadows = spec.value("shadows", true);
    std::vector<std::vector<PanelRect>> layouts(kTilesPerScene);
    for (const auto& r : spec.value("rects", json::array())) layouts[0].push_back(panel_rect_from_json(r));
    SynthResult synth = synthesize_scene(layouts, spec.value("seed", std::uint64_t{0}), opts);
    return encode_image_payload(slice_scene(synth.scene).front());
}

}  // namespace

FewShotExample example_from_json(const json& j) {
    FewShotExample ex;
    if (!j.contains("label") || !j["label"].is_string()) throw Error(Errc::invalid_argument, "example needs a label");
    ex.label = j["label"].get<std::string>();
    if (!j.contains("assessment")) throw Error(Errc::invalid_argument, "example '" + ex.label + "' lacks assessment");
    auto outcome = parse_model_response(j["assessment"].dump(), ParseMode::strict);
    if (!outcome.assessment) {
        throw Error(Errc::invalid_argument, "example '" + ex.label + "' is invalid: " + outcome.diagnostic);
    }
    ex.assessment = *outcome.assessment;
    if (j.contains("image_payload") && j["image_payload"].is_string()) {
        ex.image_payload = j["image_payload"].get<std::string>();
    } else if (j.contains("image_synth")) {
        ex.image_payload = render_synth_example(j["image_synth"]);
    }
    return ex;
}

json to_json(const FewShotExample& ex) {
    json j{{"label", ex.label}, {"assessment", assessment_to_json(ex.assessment)}};
    if (ex.image_payload) j["image_payload"] = *ex.image_payload;
    return j;
}

std::vector<FewShotExample> load_example_bank(const std::filesystem::path& path) {
    std::vector<FewShotExample> out;
    for (const auto& j : read_jsonl(path)) out.push_back(example_from_json(j));
    return out;
}

std::vector<FewShotExample> default_example_bank() {
    static const std::vector<FewShotExample> kBank = [] {
        const json records = json::parse(R"bank([
  {"label": "Example 1 (Solar)",
   "assessment": {"solar_panels_present": true, "location": "top-left", "quantity": "0 to 1",
                  "likelihood_of_solar_panels_present": 0.98, "confidence_of_solar_panels_present": 0.90}},
  {"label": "Example 2 (No Solar)",
   "assessment": {"solar_panels_present": false, "location": "NA", "quantity": "NA",
                  "likelihood_of_solar_panels_present": 0.21, "confidence_of_solar_panels_present": 0.87}},
  {"label": "Example 3 (Solar)",
   "assessment": {"solar_panels_present": true, "location": "center", "quantity": "1 to 5",
                  "likelihood_of_solar_panels_present": 0.95, "confidence_of_solar_panels_present": 0.92},
   "image_synth": {"seed": 3, "rects": [[0.36, 0.40, 0.48, 0.50], [0.52, 0.40, 0.64, 0.50]]}},
  {"label": "Example 4 (No Solar)",
   "assessment": {"solar_panels_present": false, "location": "NA", "quantity": "NA",
                  "likelihood_of_solar_panels_present": 0.08, "confidence_of_solar_panels_present": 0.94},
   "image_synth": {"seed": 4, "rects": []}},
  {"label": "Example 5 (Solar)",
   "assessment": {"solar_panels_present": true, "location": "bottom-right", "quantity": "5 to 10",
                  "likelihood_of_solar_panels_present": 0.97, "confidence_of_solar_panels_present": 0.88},
   "image_synth": {"seed": 5, "rects": [[0.70, 0.72, 0.78, 0.80], [0.80, 0.72, 0.88, 0.80], [0.90, 0.72, 0.98, 0.80],
                                        [0.70, 0.84, 0.78, 0.92], [0.80, 0.84, 0.88, 0.92], [0.90, 0.84, 0.98, 0.92]]}},
  {"label": "Example 6 (Solar)",
   "assessment": {"solar_panels_present": true, "location": "right", "quantity": "10 to inf",
                  "likelihood_of_solar_panels_present": 0.99, "confidence_of_solar_panels_present": 0.91},
   "image_synth": {"seed": 6, "rects": [[0.70, 0.20, 0.82, 0.27], [0.86, 0.20, 0.98, 0.27],
                                        [0.70, 0.30, 0.82, 0.37], [0.86, 0.30, 0.98, 0.37],
                                        [0.70, 0.40, 0.82, 0.47], [0.86, 0.40, 0.98, 0.47],
                                        [0.70, 0.50, 0.82, 0.57], [0.86, 0.50, 0.98, 0.57],
                                        [0.70, 0.60, 0.82, 0.67], [0.86, 0.60, 0.98, 0.67],
                                        [0.70, 0.70, 0.82, 0.77], [0.86, 0.70, 0.98, 0.77]]}}
])bank");
        std::vector<FewShotExample> bank;
        for (const auto& r : records) bank.push_back(example_from_json(r));
        return bank;
    }();
    return kBank;
}

std::string compute_bundle_hash(const PromptBundle& b) {
    std::string m = "bundle/v1";
    auto field = [&m](const std::string& s) {
        m.push_back('\0');
        m += std::to_string(s.size());
        m.push_back(':');
        m += s;
    };
    field(b.prompt_template.task_text);
    field(b.prompt_template.steps_text);
    field(b.prompt_template.schema_text);
    field(b.prompt_template.version);
    field(std::to_string(b.examples.size()));
    for (const auto& ex : b.examples) {
        field(ex.label);
        field(serialize_assessment(ex.assessment));
        field(ex.image_payload.value_or(""));
    }
    field(b.image_payload);
    char temp[32];
    std::snprintf(temp, sizeof temp, "%.6f", b.temperature);
    field(temp);
    field(b.include_example_images ? "images" : "text");
    return sha256_hex(std::string_view(m));
}

PromptBundle assemble_prompt(const PromptTemplate& tmpl, const std::vector<FewShotExample>& examples, std::size_t k,
                             const std::string& image_payload, const PromptOptions& options) {
    if (k > examples.size()) {
        throw Error(Errc::not_enough_examples, "requested " + std::to_string(k) + " examples but only " +
                                                   std::to_string(examples.size()) + " available");
    }
    PromptBundle b;
    b.prompt_template = tmpl;
    b.examples.assign(examples.begin(), examples.begin() + static_cast<std::ptrdiff_t>(k));
    b.image_payload = image_payload;
    b.temperature = options.temperature;
    b.include_example_images = options.include_example_images;
    b.bundle_hash = compute_bundle_hash(b);
    return b;
}

std::string system_text(const PromptBundle& bundle) {
    const auto& t = bundle.prompt_template;
    std::string text = t.task_text + "\n\n" + t.steps_text + "\n\n" + t.schema_text;
    if (!bundle.examples.empty()) {
        text += "\n\nExamples:";
        for (const auto& ex : bundle.examples) {
            text += "\n# " + ex.label + ":\n" + serialize_assessment(ex.assessment);
        }
    }
    return text;
}

std::vector<Message> render_messages(const PromptBundle& bundle) {
    Message system{"system", {ContentBlock{ContentBlock::Kind::text, system_text(bundle), {}, {}}}};
    Message user{"user", {ContentBlock{ContentBlock::Kind::text, kUserInstruction, {}, {}}}};
    if (bundle.include_example_images) {
        for (const auto& ex : bundle.examples) {
            if (!ex.image_payload) continue;
            user.content.push_back({ContentBlock::Kind::text, "Image for " + ex.label + ":", {}, {}});
            user.content.push_back({ContentBlock::Kind::image, {}, "image/png", *ex.image_payload});
        }
        user.content.push_back({ContentBlock::Kind::text, "Image to analyze:", {}, {}});
    }
    user.content.push_back({ContentBlock::Kind::image, {}, "image/png", bundle.image_payload});
    return {std::move(system), std::move(user)};
}

std::optional<ImageStyle> image_style_from(const std::string& name) {
    if (name == "data-url") return ImageStyle::data_url;
    if (name == "base64-source") return ImageStyle::base64_source;
    return std::nullopt;
}

json messages_to_json(const std::vector<Message>& messages, ImageStyle style) {
    json out = json::array();
    for (const auto& msg : messages) {
        json m{{"role", msg.role}};
        bool text_only = msg.content.size() == 1 && msg.content.front().kind == ContentBlock::Kind::text;
        if (text_only) {
            m["content"] = msg.content.front().text;
        } else {
            json blocks = json::array();
            for (const auto& b : msg.content) {
                if (b.kind == ContentBlock::Kind::text) {
                    blocks.push_back({{"type", "text"}, {"text", b.text}});
                } else if (style == ImageStyle::data_url) {
                    blocks.push_back({{"type", "image_url"},
                                      {"image_url", {{"url", "data:" + b.media_type + ";base64," + b.data}}}});
                } else {
                    blocks.push_back(
                        {{"type", "image"},
                         {"source", {{"type", "base64"}, {"media_type", b.media_type}, {"data", b.data}}}});
                }
            }
            m["content"] = std::move(blocks);
        }
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace pvscan
