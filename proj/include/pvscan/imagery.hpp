#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pvscan/assessment.hpp"
#include "pvscan/geo.hpp"
#include "pvscan/raster.hpp"

namespace pvscan {

inline constexpr int kGridSize = 4;
inline constexpr int kTilesPerScene = kGridSize * kGridSize;

struct SceneImage {
    std::string scene_id;  // content hash of the pixel data
    LatLon center;
    int zoom = 20;
    Raster raster;
    std::string fetched_at;
    std::string region_name;

    int width_px() const { return raster.width; }
    int height_px() const { return raster.height; }
};

struct Tile {
    std::string tile_id;
    std::string scene_id;
    int row = 0;
    int col = 0;
    Raster raster;

    int width_px() const { return raster.width; }
    int height_px() const { return raster.height; }
};

std::string scene_id_for(const Raster& raster);
std::string tile_id_for(const std::string& scene_id, int row, int col);

/// Row-major index -> (row, col).
std::pair<int, int> tile_position(int index);

/// 16 tiles in row-major order. Throws Error(precondition) unless both
/// dimensions are positive multiples of 4.
std::vector<Tile> slice_scene(const SceneImage& scene);

/// Inverse of slice_scene; tiles may come in any order.
Raster reassemble(const std::vector<Tile>& tiles);

/// Thirds grid over the unit square (y grows downward). Band edges at 1/3 and
/// 2/3 belong to the lower band. Throws Error(out_of_range) outside [0,1]^2.
Location region_for_centroid(double x, double y);

/// Same rule evaluated exactly on integer pixel moments: the centroid is
/// (sum(2x+1) / (2*width*area), sum(2y+1) / (2*height*area)).
Location region_for_moments(std::int64_t sum_2x1, std::int64_t sum_2y1, std::int64_t area, int width,
                            int height);

/// Base64 of the tile's canonical PNG. Throws Error(encode_error) when empty.
std::string encode_image_payload(const Tile& tile);
std::string encode_image_payload(const Raster& raster);

/// Normalized rectangle inside a tile, y downward.
struct PanelRect {
    double x0 = 0.0;
    double y0 = 0.0;
    double x1 = 0.0;
    double y1 = 0.0;

    bool operator==(const PanelRect&) const = default;
};

// Pixel box [x0, x1) x [y0, y1) covered by a rect on a w x h tile.
struct PixelBox {
    int x0, y0, x1, y1;
    std::int64_t area() const { return static_cast<std::int64_t>(x1 - x0) * (y1 - y0); }
};
PixelBox rasterize(const PanelRect& rect, int width, int height);

struct SynthTileTruth {
    int count = 0;
    std::vector<PanelRect> rects;
    Location location = Location::na;
    Quantity quantity = Quantity::na;
};

struct SynthOptions {
    int tile_px = 160;
    LatLon center;
    int zoom = 20;
    std::string region_name = "Synthetic";
    bool shadows = true;
};

struct SynthResult {
    SceneImage scene;
    std::map<std::string, SynthTileTruth> truth;  // keyed by tile_id
};

inline constexpr int kMaxPanelsPerTile = 20;

/// Renders a textured rooftop scene with dark blue-gray panels at the given
/// per-tile rects (row-major, 16 entries, or empty for a panel-free scene).
/// Rects in one tile must not overlap or touch. Deterministic in `seed`.
/// Throws Error(invalid_spec).
SynthResult synthesize_scene(const std::vector<std::vector<PanelRect>>& layouts, std::uint64_t seed,
                             const SynthOptions& options = {});

/// Random non-touching layouts for `tiles` tiles; roughly `empty_fraction`
/// of them carry no panels. Panel sizes stay well above the detection floor.
std::vector<std::vector<PanelRect>> random_layouts(int tiles, double empty_fraction, int max_panels,
                                                   std::uint64_t seed);

nlohmann::json to_json(const PanelRect& r);
PanelRect panel_rect_from_json(const nlohmann::json& j);

}  // namespace pvscan
