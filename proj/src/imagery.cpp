#include "pvscan/imagery.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pvscan/error.hpp"

namespace pvscan {

using nlohmann::json;

// Hashes the decoded pixels rather than the PNG bytes, so the id does not
// depend on encoder settings and costs no compression pass.
std::string scene_id_for(const Raster& raster) {
    std::string material = "rgba8:" + std::to_string(raster.width) + "x" + std::to_string(raster.height) + ":";
    material.append(reinterpret_cast<const char*>(raster.pixels.data()), raster.pixels.size());
    return sha256_hex(std::string_view(material)).substr(0, 16);
}

std::string tile_id_for(const std::string& scene_id, int row, int col) {
    return scene_id + "_" + std::to_string(row) + "_" + std::to_string(col);
}

std::pair<int, int> tile_position(int index) {
    if (index < 0 || index >= kTilesPerScene) throw Error(Errc::out_of_range, "tile index outside 0..15");
    return {index / kGridSize, index % kGridSize};
}

std::vector<Tile> slice_scene(const SceneImage& scene) {
    const Raster& r = scene.raster;
    if (r.empty()) throw Error(Errc::precondition, "scene has no pixel data");
    if (r.width % kGridSize != 0 || r.height % kGridSize != 0) {
        throw Error(Errc::precondition, "scene dimensions must be divisible by 4");
    }
    const int tw = r.width / kGridSize;
    const int th = r.height / kGridSize;
    std::vector<Tile> tiles;
    tiles.reserve(kTilesPerScene);
    for (int i = 0; i < kTilesPerScene; ++i) {
        auto [row, col] = tile_position(i);
        Tile t;
        t.scene_id = scene.scene_id;
        t.row = row;
        t.col = col;
        t.tile_id = tile_id_for(scene.scene_id, row, col);
        t.raster = r.crop(col * tw, row * th, tw, th);
        tiles.push_back(std::move(t));
    }
    return tiles;
}

Raster reassemble(const std::vector<Tile>& tiles) {
    if (tiles.size() != static_cast<std::size_t>(kTilesPerScene)) {
        throw Error(Errc::precondition, "reassembly needs exactly 16 tiles");
    }
    const int tw = tiles.front().raster.width;
    const int th = tiles.front().raster.height;
    Raster out(tw * kGridSize, th * kGridSize);
    std::vector<bool> seen(kTilesPerScene, false);
    for (const auto& t : tiles) {
        if (t.raster.width != tw || t.raster.height != th) throw Error(Errc::precondition, "tile sizes differ");
        if (t.row < 0 || t.row >= kGridSize || t.col < 0 || t.col >= kGridSize) {
            throw Error(Errc::precondition, "tile position outside the 4x4 grid");
        }
        int idx = t.row * kGridSize + t.col;
        if (seen[idx]) throw Error(Errc::precondition, "duplicate tile position");
        seen[idx] = true;
        out.paste(t.raster, t.col * tw, t.row * th);
    }
    return out;
}

namespace {

// 0 = first third, 1 = middle, 2 = last; edges join the lower band.
int band(double v) {
    if (v <= 1.0 / 3.0) return 0;
    if (v <= 2.0 / 3.0) return 1;
    return 2;
}

// Same banding for v = num / den evaluated without rounding.
int band_exact(std::int64_t num, std::int64_t den) {
    if (3 * num <= den) return 0;
    if (3 * num <= 2 * den) return 1;
    return 2;
}

Location compose(int row_band, int col_band) {
    static constexpr Location kGrid[3][3] = {
        {Location::top_left, Location::top, Location::top_right},
        {Location::left, Location::center, Location::right},
        {Location::bottom_left, Location::bottom, Location::bottom_right},
    };
    return kGrid[row_band][col_band];
}

}  // namespace

Location region_for_centroid(double x, double y) {
    if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0)) {
        throw Error(Errc::out_of_range, "centroid outside the unit square");
    }
    return compose(band(y), band(x));
}

Location region_for_moments(std::int64_t sum_2x1, std::int64_t sum_2y1, std::int64_t area, int width,
                            int height) {
    if (area <= 0 || width <= 0 || height <= 0) throw Error(Errc::out_of_range, "empty pixel set");
    return compose(band_exact(sum_2y1, 2LL * height * area), band_exact(sum_2x1, 2LL * width * area));
}

std::string encode_image_payload(const Raster& raster) { return base64_encode(encode_png(raster)); }

std::string encode_image_payload(const Tile& tile) { return encode_image_payload(tile.raster); }

PixelBox rasterize(const PanelRect& rect, int width, int height) {
    return PixelBox{static_cast<int>(std::lround(rect.x0 * width)), static_cast<int>(std::lround(rect.y0 * height)),
                    static_cast<int>(std::lround(rect.x1 * width)), static_cast<int>(std::lround(rect.y1 * height))};
}

namespace {

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

int jitter(std::mt19937_64& rng, int amplitude) {
    return static_cast<int>(rng() % static_cast<std::uint64_t>(2 * amplitude + 1)) - amplitude;
}

std::uint8_t clamp8(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

void put(Raster& r, int x, int y, int red, int green, int blue) {
    std::uint8_t* p = r.at(x, y);
    p[0] = clamp8(red);
    p[1] = clamp8(green);
    p[2] = clamp8(blue);
    p[3] = 255;
}

struct Rgb {
    int r, g, b;
};

// Roof tones. All stay bright enough that the panel detector ignores them,
// including the cool slate tone whose blue channel leads.
constexpr Rgb kRoofPalette[] = {
    {172, 152, 132}, {152, 142, 136}, {186, 168, 142}, {146, 126, 114}, {136, 142, 158},
};

bool touches(const PixelBox& a, const PixelBox& b) {
    return a.x0 - 1 < b.x1 && b.x0 < a.x1 + 1 && a.y0 - 1 < b.y1 && b.y0 < a.y1 + 1;
}

}  // namespace

SynthResult synthesize_scene(const std::vector<std::vector<PanelRect>>& layouts, std::uint64_t seed,
                             const SynthOptions& options) {
    if (!layouts.empty() && layouts.size() != static_cast<std::size_t>(kTilesPerScene)) {
        throw Error(Errc::invalid_spec, "scene layout needs 16 tile entries (or none)");
    }
    if (options.tile_px < 8) throw Error(Errc::invalid_spec, "tile_px must be at least 8");
    const int tp = options.tile_px;

    std::vector<std::vector<PixelBox>> boxes(kTilesPerScene);
    for (std::size_t t = 0; t < layouts.size(); ++t) {
        if (layouts[t].size() > static_cast<std::size_t>(kMaxPanelsPerTile)) {
            throw Error(Errc::invalid_spec, "more than 20 panels in tile " + std::to_string(t));
        }
        for (const auto& rect : layouts[t]) {
            bool in_unit = rect.x0 >= 0.0 && rect.y0 >= 0.0 && rect.x1 <= 1.0 && rect.y1 <= 1.0;
            if (!in_unit || !(rect.x0 < rect.x1) || !(rect.y0 < rect.y1)) {
                throw Error(Errc::invalid_spec, "panel rect must satisfy 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1");
            }
            PixelBox box = rasterize(rect, tp, tp);
            if (box.area() <= 0) throw Error(Errc::invalid_spec, "panel rect covers no pixels");
            for (const auto& other : boxes[t]) {
                if (touches(box, other)) {
                    throw Error(Errc::invalid_spec, "panel rects overlap or touch in tile " + std::to_string(t));
                }
            }
            boxes[t].push_back(box);
        }
    }

    std::mt19937_64 rng(seed);
    Raster canvas(tp * kGridSize, tp * kGridSize);

    for (int t = 0; t < kTilesPerScene; ++t) {
        auto [row, col] = tile_position(t);
        const int ox = col * tp;
        const int oy = row * tp;
        const Rgb roof = kRoofPalette[rng() % std::size(kRoofPalette)];
        const int stripe = 3 + static_cast<int>(rng() % 4);
        for (int y = 0; y < tp; ++y) {
            int shade = (y / stripe) % 2 == 0 ? 0 : -6;
            for (int x = 0; x < tp; ++x) {
                int n = jitter(rng, 10);
                put(canvas, ox + x, oy + y, roof.r + shade + n, roof.g + shade + n, roof.b + shade + n);
            }
        }
        if (options.shadows && unit(rng) < 0.5) {
            // A warm dark strip: low luminance but not blue-leaning.
            int sw = 4 + static_cast<int>(rng() % (tp / 4));
            int sh = 4 + static_cast<int>(rng() % (tp / 4));
            int sx = static_cast<int>(rng() % static_cast<std::uint64_t>(tp - sw));
            int sy = static_cast<int>(rng() % static_cast<std::uint64_t>(tp - sh));
            for (int y = sy; y < sy + sh; ++y) {
                for (int x = sx; x < sx + sw; ++x) {
                    put(canvas, ox + x, oy + y, 64 + jitter(rng, 6), 60 + jitter(rng, 6), 52 + jitter(rng, 6));
                }
            }
        }
        for (const auto& box : boxes[t]) {
            const int cell = 5 + static_cast<int>(rng() % 3);
            for (int y = box.y0; y < box.y1; ++y) {
                for (int x = box.x0; x < box.x1; ++x) {
                    bool grid_line = ((x - box.x0) % cell == cell - 1) || ((y - box.y0) % cell == cell - 1);
                    Rgb base = grid_line ? Rgb{62, 72, 104} : Rgb{38, 48, 80};
                    put(canvas, ox + x, oy + y, base.r + jitter(rng, 6), base.g + jitter(rng, 6),
                        base.b + jitter(rng, 6));
                }
            }
        }
    }

    SynthResult result;
    result.scene.raster = std::move(canvas);
    result.scene.scene_id = scene_id_for(result.scene.raster);
    result.scene.center = options.center;
    result.scene.zoom = options.zoom;
    result.scene.region_name = options.region_name;
    result.scene.fetched_at = "synthetic";

    for (int t = 0; t < kTilesPerScene; ++t) {
        auto [row, col] = tile_position(t);
        SynthTileTruth truth;
        truth.count = static_cast<int>(boxes[t].size());
        if (!layouts.empty()) truth.rects = layouts[t];
        if (truth.count > 0) {
            std::int64_t sx = 0, sy = 0, area = 0;
            for (const auto& b : boxes[t]) {
                // Closed forms for sum(2x+1) over [x0, x1) etc.
                std::int64_t w = b.x1 - b.x0, h = b.y1 - b.y0;
                sx += h * (static_cast<std::int64_t>(b.x1) * b.x1 - static_cast<std::int64_t>(b.x0) * b.x0);
                sy += w * (static_cast<std::int64_t>(b.y1) * b.y1 - static_cast<std::int64_t>(b.y0) * b.y0);
                area += b.area();
            }
            truth.location = region_for_moments(sx, sy, area, tp, tp);
            truth.quantity = bucket_for_count(static_cast<std::uint64_t>(truth.count));
        }
        result.truth.emplace(tile_id_for(result.scene.scene_id, row, col), std::move(truth));
    }
    return result;
}

std::vector<std::vector<PanelRect>> random_layouts(int tiles, double empty_fraction, int max_panels,
                                                   std::uint64_t seed) {
    if (tiles < 0 || max_panels < 1 || max_panels > kMaxPanelsPerTile || empty_fraction < 0.0 ||
        empty_fraction > 1.0) {
        throw Error(Errc::invalid_spec, "bad random layout parameters");
    }
    std::mt19937_64 rng(seed);
    std::vector<std::vector<PanelRect>> out(static_cast<std::size_t>(tiles));
    constexpr double kGap = 0.025;
    for (auto& layout : out) {
        if (unit(rng) < empty_fraction) continue;
        // Skewed toward small counts, with a tail into the larger buckets.
        double u = unit(rng);
        int want = 1 + static_cast<int>(std::floor(u * u * max_panels));
        want = std::min(want, max_panels);
        for (int attempt = 0; attempt < 400 && static_cast<int>(layout.size()) < want; ++attempt) {
            double w = 0.07 + 0.09 * unit(rng);
            double h = 0.05 + 0.07 * unit(rng);
            double x0 = 0.01 + (0.98 - w) * unit(rng);
            double y0 = 0.01 + (0.98 - h) * unit(rng);
            PanelRect cand{x0, y0, x0 + w, y0 + h};
            bool clear = std::none_of(layout.begin(), layout.end(), [&](const PanelRect& r) {
                return cand.x0 < r.x1 + kGap && r.x0 < cand.x1 + kGap && cand.y0 < r.y1 + kGap &&
                       r.y0 < cand.y1 + kGap;
            });
            if (clear) layout.push_back(cand);
        }
    }
    return out;
}

json to_json(const PanelRect& r) { return json::array({r.x0, r.y0, r.x1, r.y1}); }

PanelRect panel_rect_from_json(const json& j) {
    if (j.is_array() && j.size() == 4) {
        return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    }
    if (j.is_object()) {
        return {j.at("x0").get<double>(), j.at("y0").get<double>(), j.at("x1").get<double>(),
                j.at("y1").get<double>()};
    }
    throw Error(Errc::invalid_spec, "panel rect must be [x0,y0,x1,y1] or {x0,y0,x1,y1}");
}

}  // namespace pvscan
