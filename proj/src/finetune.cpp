#include "pvscan/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pvscan/codec.hpp"
#include "pvscan/error.hpp"
#include "pvscan/raster.hpp"
#include "pvscan/rng.hpp"
#include "pvscan/store.hpp"

namespace pvscan {

using nlohmann::json;

namespace {

void shuffle(std::vector<std::string>& ids, std::mt19937_64& rng) {
    for (std::size_t i = ids.size(); i > 1; --i) {
        std::swap(ids[i - 1], ids[bounded_draw(rng, i)]);
    }
}

std::size_t train_count(double ratio, std::size_t n) {
    return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
}

}  // namespace

DatasetSplit split_dataset(const std::vector<GroundTruthLabel>& labels, double ratio, std::uint64_t seed,
                           bool stratified) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw Error(Errc::invalid_argument, "split ratio must lie in (0, 1)");
    std::map<std::string, bool> by_id;
    for (const auto& l : labels) by_id[l.tile_id] = l.present;
    if (by_id.size() < 2) {
        throw Error(Errc::too_few_labels, "need at least 2 labeled tiles to split, have " + std::to_string(by_id.size()));
    }

    std::vector<std::vector<std::string>> groups(stratified ? 2 : 1);
    for (const auto& [id, present] : by_id) groups[stratified && present ? 1 : 0].push_back(id);

    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::string>> train(groups.size()), test(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        shuffle(groups[g], rng);
        const std::size_t n_train = train_count(ratio, groups[g].size());
        train[g].assign(groups[g].begin(), groups[g].begin() + static_cast<std::ptrdiff_t>(n_train));
        test[g].assign(groups[g].begin() + static_cast<std::ptrdiff_t>(n_train), groups[g].end());
    }

    // Both sides must be non-empty; move one item from the larger group.
    auto total = [](const std::vector<std::vector<std::string>>& v) {
        std::size_t n = 0;
        for (const auto& g : v) n += g.size();
        return n;
    };
    auto move_one = [](std::vector<std::vector<std::string>>& from, std::vector<std::vector<std::string>>& to) {
        auto it = std::max_element(from.begin(), from.end(),
                                   [](const auto& a, const auto& b) { return a.size() < b.size(); });
        auto g = static_cast<std::size_t>(it - from.begin());
        to[g].push_back(from[g].back());
        from[g].pop_back();
    };
    if (total(test) == 0) move_one(train, test);
    if (total(train) == 0) move_one(test, train);

    DatasetSplit split;
    split.seed = seed;
    split.ratio = ratio;
    split.stratified = stratified;
    for (auto& g : train) split.train_ids.insert(split.train_ids.end(), g.begin(), g.end());
    for (auto& g : test) split.test_ids.insert(split.test_ids.end(), g.begin(), g.end());
    std::sort(split.train_ids.begin(), split.train_ids.end());
    std::sort(split.test_ids.begin(), split.test_ids.end());
    return split;
}

json to_json(const DatasetSplit& split) {
    return json{{"seed", split.seed},
                {"ratio", split.ratio},
                {"stratified", split.stratified},
                {"train_ids", split.train_ids},
                {"test_ids", split.test_ids}};
}

PvAssessment training_target(const GroundTruthLabel& label) {
    PvAssessment a;
    a.present = label.present;
    a.location = label.location;
    a.quantity = label.quantity;
    a.likelihood = label.present ? 1.0 : 0.0;
    a.confidence = 1.0;
    return a;
}

std::size_t export_jsonl(const std::vector<std::string>& ids, const std::map<std::string, std::string>& tile_payloads,
                         const std::map<std::string, GroundTruthLabel>& truths, const PromptTemplate& tmpl,
                         const std::filesystem::path& path, const ExportOptions& options) {
    std::string out;
    for (const auto& id : ids) {
        auto tile = tile_payloads.find(id);
        if (tile == tile_payloads.end()) throw Error(Errc::missing_tile, "no tile image for '" + id + "'");
        auto truth = truths.find(id);
        if (truth == truths.end()) throw Error(Errc::missing_label, "no label for '" + id + "'");

        PromptBundle bundle = assemble_prompt(tmpl, {}, 0, tile->second);
        json messages = messages_to_json(render_messages(bundle), options.image_style);
        messages.push_back({{"role", "assistant"}, {"content", serialize_assessment(training_target(truth->second))}});
        out += json{{"messages", std::move(messages)}}.dump();
        out += '\n';
    }
    try {
        write_text_atomic(path, out);
    } catch (const std::filesystem::filesystem_error& e) {
        throw Error(Errc::io_error, e.what());
    }
    return ids.size();
}

namespace {

struct LineError {
    std::string category;
    std::string message;
};

std::optional<std::string> image_data(const json& block) {
    const std::string type = block.value("type", std::string());
    if (type == "image_url") {
        const auto& img = block.at("image_url");
        std::string url = img.at("url").get<std::string>();
        const std::string prefix = "data:image/png;base64,";
        if (url.rfind(prefix, 0) != 0) return std::nullopt;
        return url.substr(prefix.size());
    }
    if (type == "image") {
        const auto& src = block.at("source");
        if (src.value("media_type", std::string()) != "image/png") return std::nullopt;
        return src.at("data").get<std::string>();
    }
    return std::nullopt;
}

std::optional<LineError> check_line(const std::string& line) {
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded()) return LineError{"json", "not valid JSON"};
    try {
        if (!doc.is_object() || !doc.contains("messages") || !doc["messages"].is_array()) {
            return LineError{"structure", "missing messages array"};
        }
        const json& msgs = doc["messages"];
        if (msgs.size() != 3) return LineError{"structure", "expected 3 messages"};
        const char* roles[] = {"system", "user", "assistant"};
        for (std::size_t i = 0; i < 3; ++i) {
            if (msgs[i].value("role", std::string()) != roles[i]) {
                return LineError{"structure", std::string("message ") + std::to_string(i) + " should be " + roles[i]};
            }
        }
        const json& sys = msgs[0]["content"];
        if (!sys.is_string() || sys.get<std::string>().empty()) return LineError{"structure", "empty system text"};

        const json& user = msgs[1]["content"];
        if (!user.is_array()) return LineError{"structure", "user content must be a block list"};
        bool has_text = false, has_image = false;
        for (const auto& block : user) {
            const std::string type = block.value("type", std::string());
            if (type == "text") {
                has_text = has_text || !block.value("text", std::string()).empty();
                continue;
            }
            auto data = image_data(block);
            if (!data) return LineError{"image", "unsupported image block"};
            auto bytes = base64_decode(*data);
            if (!bytes) return LineError{"image", "image payload is not valid base64"};
            decode_png(*bytes);
            has_image = true;
        }
        if (!has_text) return LineError{"structure", "user message lacks a text block"};
        if (!has_image) return LineError{"image", "user message lacks an image block"};

        const json& asst = msgs[2]["content"];
        if (!asst.is_string()) return LineError{"assistant", "assistant content must be text"};
        auto outcome = parse_model_response(asst.get<std::string>(), ParseMode::strict);
        if (outcome.status != ParseStatus::ok) return LineError{"assistant", outcome.diagnostic};
    } catch (const Error& e) {
        return LineError{e.code() == Errc::decode_error ? "image" : "structure", e.what()};
    } catch (const json::exception& e) {
        return LineError{"structure", e.what()};
    }
    return std::nullopt;
}

}  // namespace

ValidationReport validate_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
    ValidationReport report;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++report.lines;
        if (auto err = check_line(line)) {
            ++report.errors[err->category];
            if (report.samples.size() < 10) {
                report.samples.push_back("line " + std::to_string(report.lines) + ": " + err->message);
            }
        } else {
            ++report.valid;
        }
    }
    return report;
}

json to_json(const ValidationReport& report) {
    return json{{"lines", report.lines}, {"valid", report.valid}, {"errors", report.errors}, {"samples", report.samples}};
}

}  // namespace pvscan
