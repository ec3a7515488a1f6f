#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvscan/assessment.hpp"
#include "pvscan/prompting.hpp"

namespace pvscan {

struct DatasetSplit {
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
    std::uint64_t seed = 0;
    double ratio = 0.8;
    bool stratified = true;
};

/// Deterministic in `seed`. The train size is round(ratio * n) clamped to
/// [1, n-1]; stratified mode splits each present-flag class separately.
/// Output ids are sorted. Throws Error(too_few_labels) for fewer than two
/// labels and Error(invalid_argument) for a ratio outside (0, 1).
DatasetSplit split_dataset(const std::vector<GroundTruthLabel>& labels, double ratio, std::uint64_t seed,
                           bool stratified = true);

nlohmann::json to_json(const DatasetSplit& split);

struct ExportOptions {
    ImageStyle image_style = ImageStyle::data_url;
};

/// Writes one {"messages": [system, user, assistant]} line per id, in the
/// given order. `tile_payloads` maps tile id to base64 PNG. Throws
/// Error(missing_tile), Error(missing_label) or Error(io_error).
std::size_t export_jsonl(const std::vector<std::string>& ids, const std::map<std::string, std::string>& tile_payloads,
                         const std::map<std::string, GroundTruthLabel>& truths, const PromptTemplate& tmpl,
                         const std::filesystem::path& path, const ExportOptions& options = {});

/// Canonical assistant target for a label: present labels get likelihood and
/// confidence 1.00, absent ones likelihood 0.00 and confidence 1.00.
PvAssessment training_target(const GroundTruthLabel& label);

struct ValidationReport {
    std::size_t lines = 0;
    std::size_t valid = 0;
    std::map<std::string, std::size_t> errors;  // json / structure / image / assistant
    std::vector<std::string> samples;           // first few diagnostics, "line N: ..."
};

/// Per-line check of the fine-tune record contract. Only unreadable files throw (io_error).
ValidationReport validate_jsonl(const std::filesystem::path& path);

nlohmann::json to_json(const ValidationReport& report);

}  // namespace pvscan
