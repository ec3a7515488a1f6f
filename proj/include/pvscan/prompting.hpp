#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvscan/assessment.hpp"

namespace pvscan {

struct PromptTemplate {
    std::string task_text;
    std::string steps_text;
    std::string schema_text;
    std::string version;  // digest of the three texts

    bool operator==(const PromptTemplate&) const = default;
};

std::string template_version(const std::string& task, const std::string& steps, const std::string& schema);
PromptTemplate make_template(std::string task, std::string steps, std::string schema);

/// Task description, three decomposition steps and the five-field output schema.
PromptTemplate default_template();

/// JSON object with task_text / steps_text / schema_text. Throws
/// Error(invalid_argument) if a section is missing or empty.
PromptTemplate load_template(const std::filesystem::path& path);

struct FewShotExample {
    std::string label;  // "Example 1 (Solar)"
    PvAssessment assessment;
    std::optional<std::string> image_payload;  // base64 PNG

    bool operator==(const FewShotExample&) const = default;
};

/// Bank records: {"label", "assessment": {...}, optional "image_payload" or
/// "image_synth": {"seed", "tile_px", "rects"}} (rendered into one tile).
std::vector<FewShotExample> load_example_bank(const std::filesystem::path& path);
FewShotExample example_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FewShotExample& ex);

/// The shipped bank: the two canonical examples followed by four
/// synthetic-image-backed ones.
std::vector<FewShotExample> default_example_bank();

struct PromptOptions {
    double temperature = 0.0;
    bool include_example_images = false;
};

struct PromptBundle {
    PromptTemplate prompt_template;
    std::vector<FewShotExample> examples;
    std::string image_payload;
    double temperature = 0.0;
    bool include_example_images = false;
    std::string bundle_hash;
};

std::string compute_bundle_hash(const PromptBundle& bundle);

/// Takes the first k examples. Throws Error(not_enough_examples) if k > examples.size().
PromptBundle assemble_prompt(const PromptTemplate& tmpl, const std::vector<FewShotExample>& examples, std::size_t k,
                             const std::string& image_payload, const PromptOptions& options = {});

struct ContentBlock {
    enum class Kind { text, image } kind = Kind::text;
    std::string text;
    std::string media_type;  // image blocks
    std::string data;        // base64, image blocks

    bool operator==(const ContentBlock&) const = default;
};

struct Message {
    std::string role;
    std::vector<ContentBlock> content;

    bool operator==(const Message&) const = default;
};

inline constexpr const char* kUserInstruction =
    "Analyze the attached image and respond with a single JSON object in the format described above.";

std::string system_text(const PromptBundle& bundle);

/// One system message (task, steps, schema, examples) and one user message
/// (instruction plus image block, optionally preceded by example images).
std::vector<Message> render_messages(const PromptBundle& bundle);

/// How image blocks are spelled on the wire.
enum class ImageStyle {
    data_url,       // {"type":"image_url","image_url":{"url":"data:image/png;base64,..."}}
    base64_source,  // {"type":"image","source":{"type":"base64","media_type":...,"data":...}}
};

std::optional<ImageStyle> image_style_from(const std::string& name);

nlohmann::json messages_to_json(const std::vector<Message>& messages, ImageStyle style);

}  // namespace pvscan
