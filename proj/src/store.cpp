#include "pvscan/store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <atomic>
#include <sstream>

#include "pvscan/error.hpp"

namespace pvscan {

using nlohmann::json;

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Bytes read_binary(const fs::path& path) {
    std::string s = read_text(path);
    return Bytes(s.begin(), s.end());
}

namespace {

fs::path temp_sibling(const fs::path& path) {
    static std::atomic<unsigned> counter{0};
    return path.parent_path() /
           ("." + path.filename().string() + ".tmp" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
}

}  // namespace

void write_text_atomic(const fs::path& path, std::string_view text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = temp_sibling(path);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(Errc::io_error, "cannot write " + tmp.string());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw Error(Errc::io_error, "write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw Error(Errc::io_error, "rename to " + path.string() + " failed: " + ec.message());
}

void write_binary_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
    write_text_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::vector<json> read_jsonl(const fs::path& path, bool tolerate_torn_tail) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        lines.push_back(line);
    }
    std::vector<json> out;
    out.reserve(lines.size());
    for (std::size_t i = 0; i < lines.size(); ++i) {
        json j = json::parse(lines[i], nullptr, false);
        if (j.is_discarded()) {
            if (tolerate_torn_tail && i + 1 == lines.size()) break;
            throw Error(Errc::io_error, path.string() + ": malformed JSON on record " + std::to_string(i + 1));
        }
        out.push_back(std::move(j));
    }
    return out;
}

void write_jsonl_atomic(const fs::path& path, const std::vector<json>& lines) {
    std::string text;
    for (const auto& j : lines) {
        text += j.dump();
        text += '\n';
    }
    write_text_atomic(path, text);
}

void append_jsonl(const fs::path& path, const json& line) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw Error(Errc::io_error, "cannot append to " + path.string());
    out << line.dump() << '\n';
    out.flush();
}

JsonlAppender::JsonlAppender(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw Error(Errc::io_error, "cannot append to " + path.string());
}

void JsonlAppender::append(const json& line) {
    std::string text = line.dump();
    std::lock_guard<std::mutex> lock(mu_);
    out_ << text << '\n';
    out_.flush();
}

FileLock::FileLock(const fs::path& path, bool wait) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw Error(Errc::io_error, "cannot open lock file " + path.string());
    if (::flock(fd_, wait ? LOCK_EX : LOCK_EX | LOCK_NB) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw Error(Errc::locked, "data directory is locked by another pvscan stage: " + path.string());
    }
}

FileLock::~FileLock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

json to_json(const SceneRecord& r) {
    return json{{"scene_id", r.scene_id}, {"lat", r.center.lat},       {"lon", r.center.lon},
                {"zoom", r.zoom},         {"width", r.width},          {"height", r.height},
                {"region", r.region},     {"fetched_at", r.fetched_at}, {"path", r.path}};
}

SceneRecord scene_record_from_json(const json& j) {
    SceneRecord r;
    r.scene_id = j.at("scene_id").get<std::string>();
    r.center = {j.value("lat", 0.0), j.value("lon", 0.0)};
    r.zoom = j.value("zoom", 0);
    r.width = j.at("width").get<int>();
    r.height = j.at("height").get<int>();
    r.region = j.value("region", std::string());
    r.fetched_at = j.value("fetched_at", std::string());
    r.path = j.at("path").get<std::string>();
    return r;
}

json to_json(const TileRecord& r) {
    return json{{"tile_id", r.tile_id}, {"scene_id", r.scene_id}, {"row", r.row},       {"col", r.col},
                {"width", r.width},     {"height", r.height},     {"region", r.region}, {"path", r.path}};
}

TileRecord tile_record_from_json(const json& j) {
    TileRecord r;
    r.tile_id = j.at("tile_id").get<std::string>();
    r.scene_id = j.at("scene_id").get<std::string>();
    r.row = j.at("row").get<int>();
    r.col = j.at("col").get<int>();
    r.width = j.at("width").get<int>();
    r.height = j.at("height").get<int>();
    r.region = j.value("region", std::string());
    r.path = j.at("path").get<std::string>();
    return r;
}

std::vector<SceneRecord> DataDir::load_scenes() const {
    std::vector<SceneRecord> out;
    if (!fs::exists(scene_manifest())) return out;
    for (const auto& j : read_jsonl(scene_manifest())) out.push_back(scene_record_from_json(j));
    return out;
}

std::vector<TileRecord> DataDir::load_tiles() const {
    std::vector<TileRecord> out;
    if (!fs::exists(tile_manifest())) return out;
    for (const auto& j : read_jsonl(tile_manifest())) out.push_back(tile_record_from_json(j));
    return out;
}

std::map<std::string, TileRecord> DataDir::tile_index() const {
    std::map<std::string, TileRecord> out;
    for (auto& t : load_tiles()) out[t.tile_id] = t;
    return out;
}

std::vector<GroundTruthLabel> DataDir::load_labels() const {
    std::vector<GroundTruthLabel> out;
    if (!fs::exists(labels())) return out;
    for (const auto& j : read_jsonl(labels(), true)) out.push_back(label_from_json(j));
    return out;
}

std::map<std::string, GroundTruthLabel> DataDir::effective_labels(bool include_auto) const {
    std::map<std::string, GroundTruthLabel> out;
    for (auto& label : load_labels()) {
        const bool is_auto = label.annotator == "auto";
        if (is_auto && !include_auto) continue;
        auto it = out.find(label.tile_id);
        if (it != out.end() && is_auto && it->second.annotator != "auto") continue;
        out[label.tile_id] = std::move(label);
    }
    return out;
}

}  // namespace pvscan
