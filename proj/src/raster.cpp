#include "pvscan/raster.hpp"

#include <png.h>

#include <algorithm>
#include <cstring>
#include <csetjmp>
#include <string>
#include <vector>

#include "pvscan/error.hpp"

namespace pvscan {

Raster::Raster(int w, int h)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * kChannels, 0) {}

Raster Raster::crop(int x0, int y0, int w, int h) const {
    if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > width || y0 + h > height) {
        throw Error(Errc::precondition, "crop window outside raster");
    }
    Raster out(w, h);
    const std::size_t row_bytes = static_cast<std::size_t>(w) * kChannels;
    for (int y = 0; y < h; ++y) {
        std::memcpy(out.at(0, y), at(x0, y0 + y), row_bytes);
    }
    return out;
}

void Raster::paste(const Raster& src, int x0, int y0) {
    if (x0 < 0 || y0 < 0 || x0 + src.width > width || y0 + src.height > height) {
        throw Error(Errc::precondition, "paste window outside raster");
    }
    const std::size_t row_bytes = static_cast<std::size_t>(src.width) * kChannels;
    for (int y = 0; y < src.height; ++y) {
        std::memcpy(at(x0, y0 + y), src.at(0, y), row_bytes);
    }
}

bool looks_like_png(std::span<const std::uint8_t> bytes) {
    return bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0;
}

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<Bytes*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

void flush_nothing(png_structp) {}

[[noreturn]] void png_fail(png_structp png, png_const_charp message) {
    auto* what = static_cast<std::string*>(png_get_error_ptr(png));
    *what = message;
    png_longjmp(png, 1);
}

}  // namespace

// Single pass through the low-level writer; the simplified API has to
// compress twice when the output size is unknown.
Bytes encode_png(const Raster& raster) {
    if (raster.empty()) throw Error(Errc::encode_error, "cannot encode an empty raster");
    if (raster.pixels.size() != static_cast<std::size_t>(raster.width) * raster.height * Raster::kChannels) {
        throw Error(Errc::encode_error, "raster buffer size does not match its dimensions");
    }
    std::string failure;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &failure, png_fail, nullptr);
    if (png == nullptr) throw Error(Errc::encode_error, "png writer allocation failed");
    png_infop info = png_create_info_struct(png);
    Bytes out;
    out.reserve(raster.pixels.size() / 2);
    std::vector<png_bytep> rows(static_cast<std::size_t>(raster.height));
    for (int y = 0; y < raster.height; ++y) {
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(raster.at(0, y));
    }
    if (info == nullptr || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(Errc::encode_error, "png write failed: " + failure);
    }
    png_set_write_fn(png, &out, append_bytes, flush_nothing);
    png_set_IHDR(png, info, static_cast<png_uint_32>(raster.width), static_cast<png_uint_32>(raster.height), 8,
                 PNG_COLOR_TYPE_RGB_ALPHA, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 3);
    png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_FILTER_SUB);
    png_set_rows(png, info, rows.data());
    png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

Raster decode_png(std::span<const std::uint8_t> bytes) {
    if (!looks_like_png(bytes)) throw Error(Errc::decode_error, "payload is not a PNG image");
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw Error(Errc::decode_error, std::string("png header unreadable: ") + image.message);
    }
    image.format = PNG_FORMAT_RGBA;
    Raster out(static_cast<int>(image.width), static_cast<int>(image.height));
    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&image);
        throw Error(Errc::decode_error, std::string("png decode failed: ") + image.message);
    }
    return out;
}

}  // namespace pvscan
