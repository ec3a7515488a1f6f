#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvscan/assessment.hpp"
#include "pvscan/codec.hpp"
#include "pvscan/geo.hpp"

namespace pvscan {

namespace fs = std::filesystem;

std::string read_text(const fs::path& path);
Bytes read_binary(const fs::path& path);

// Write to a sibling temp file then rename over the target.
void write_text_atomic(const fs::path& path, std::string_view text);
void write_binary_atomic(const fs::path& path, std::span<const std::uint8_t> bytes);

/// Blank lines are skipped. A malformed line throws Error(io_error) unless
/// `tolerate_torn_tail` is set and it is the final line (an interrupted append).
std::vector<nlohmann::json> read_jsonl(const fs::path& path, bool tolerate_torn_tail = false);
void write_jsonl_atomic(const fs::path& path, const std::vector<nlohmann::json>& lines);
void append_jsonl(const fs::path& path, const nlohmann::json& line);

/// Serialized, flushed-per-line appender shared by concurrent producers.
class JsonlAppender {
public:
    explicit JsonlAppender(const fs::path& path);
    void append(const nlohmann::json& line);

private:
    std::mutex mu_;
    std::ofstream out_;
};

/// Exclusive advisory lock on a file (flock); released on destruction or
/// process exit. Throws Error(locked) when already held elsewhere, unless
/// `wait` is set, in which case it blocks until the holder lets go.
class FileLock {
public:
    explicit FileLock(const fs::path& path, bool wait = false);
    ~FileLock();
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_ = -1;
};

struct SceneRecord {
    std::string scene_id;
    LatLon center;
    int zoom = 0;
    int width = 0;
    int height = 0;
    std::string region;
    std::string fetched_at;
    std::string path;  // relative to the data directory
};

struct TileRecord {
    std::string tile_id;
    std::string scene_id;
    int row = 0;
    int col = 0;
    int width = 0;
    int height = 0;
    std::string region;
    std::string path;
};

nlohmann::json to_json(const SceneRecord& r);
SceneRecord scene_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TileRecord& r);
TileRecord tile_record_from_json(const nlohmann::json& j);

/// On-disk layout of one working directory.
class DataDir {
public:
    explicit DataDir(fs::path root) : root_(std::move(root)) {}

    const fs::path& root() const { return root_; }
    fs::path sites() const { return root_ / "sites.jsonl"; }
    fs::path scenes_dir() const { return root_ / "scenes"; }
    fs::path scene_manifest() const { return root_ / "scenes.jsonl"; }
    fs::path tiles_dir() const { return root_ / "tiles"; }
    fs::path tile_manifest() const { return root_ / "tiles.jsonl"; }
    fs::path labels() const { return root_ / "labels.jsonl"; }
    fs::path journal() const { return root_ / "predictions.jsonl"; }
    fs::path reports_dir() const { return root_ / "reports"; }
    fs::path review_queue() const { return root_ / "review" / "queue.json"; }
    fs::path review_lock() const { return root_ / "review" / ".queue.lock"; }
    fs::path triage_config() const { return root_ / "review" / "triage.json"; }
    fs::path analytics() const { return root_ / "review" / "likelihood_summary.json"; }
    fs::path export_dir() const { return root_ / "finetune"; }
    fs::path runs() const { return root_ / "runs.jsonl"; }
    fs::path lock_file() const { return root_ / ".pvscan.lock"; }
    fs::path map_cache() const { return root_ / "cache" / "maps"; }
    fs::path config() const { return root_ / "pvscan.json"; }

    fs::path scene_png(const std::string& scene_id) const { return scenes_dir() / (scene_id + ".png"); }
    fs::path tile_png(const std::string& scene_id, int row, int col) const {
        return tiles_dir() / scene_id / (std::to_string(row) + "_" + std::to_string(col) + ".png");
    }

    std::vector<SceneRecord> load_scenes() const;
    std::vector<TileRecord> load_tiles() const;
    std::map<std::string, TileRecord> tile_index() const;

    std::vector<GroundTruthLabel> load_labels() const;

    /// Latest record per tile wins; auto labels never override human ones.
    std::map<std::string, GroundTruthLabel> effective_labels(bool include_auto) const;

private:
    fs::path root_;
};

}  // namespace pvscan
