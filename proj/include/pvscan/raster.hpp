#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pvscan/codec.hpp"

namespace pvscan {

// 8-bit RGBA, row-major, no padding.
struct Raster {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    static constexpr int kChannels = 4;

    Raster() = default;
    Raster(int w, int h);

    bool empty() const { return width <= 0 || height <= 0 || pixels.empty(); }
    std::uint8_t* at(int x, int y) { return &pixels[(static_cast<std::size_t>(y) * width + x) * kChannels]; }
    const std::uint8_t* at(int x, int y) const {
        return &pixels[(static_cast<std::size_t>(y) * width + x) * kChannels];
    }

    Raster crop(int x0, int y0, int w, int h) const;
    void paste(const Raster& src, int x0, int y0);

    bool operator==(const Raster&) const = default;
};

/// Lossless PNG (RGBA8). Deterministic for equal rasters.
/// Throws Error(encode_error) on an empty raster.
Bytes encode_png(const Raster& raster);

/// Throws Error(decode_error) when the bytes are not a PNG.
Raster decode_png(std::span<const std::uint8_t> bytes);

bool looks_like_png(std::span<const std::uint8_t> bytes);

}  // namespace pvscan
