#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "hsr/rgb_image.hpp"

namespace hsr {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

uint16_t quantize16(float v) {
    v = std::clamp(v, 0.0f, 1.0f);
    return uint16_t(std::lround(double(v) * 65535.0));
}

uint8_t quantize8(float v) {
    v = std::clamp(v, 0.0f, 1.0f);
    return uint8_t(std::lround(double(v) * 255.0));
}

}  // namespace

RgbImage read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw FormatError("png: cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("png: allocation failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("png: failed to decode " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int bit_depth = png_get_bit_depth(png, info);
    int color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (bit_depth == 16) png_set_swap(png);  // LE host
    png_read_update_info(png, info);

    RgbImage im = make_rgb(w, h);
    const size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<unsigned char> row(rowbytes);
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        if (bit_depth == 16) {
            const uint16_t* p = reinterpret_cast<const uint16_t*>(row.data());
            for (png_uint_32 x = 0; x < w; ++x)
                for (size_t c = 0; c < 3; ++c)
                    im.at(x, y, c) = float(p[x * 3 + c]) / 65535.0f;
        } else {
            for (png_uint_32 x = 0; x < w; ++x)
                for (size_t c = 0; c < 3; ++c)
                    im.at(x, y, c) = float(row[x * 3 + c]) / 255.0f;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return im;
}

namespace {

void write_png_impl(const RgbImage& im, const std::string& path, int depth) {
    im.validate();
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw FormatError("png: cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("png: allocation failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("png: failed to encode " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(im.width), png_uint_32(im.height), depth,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    // No timestamp or text chunks: re-encoding identical pixels must yield
    // byte-identical files.
    png_write_info(png, info);
    if (depth == 16) {
        std::vector<uint16_t> row(im.width * 3);
        for (size_t y = 0; y < im.height; ++y) {
            for (size_t x = 0; x < im.width; ++x)
                for (size_t c = 0; c < 3; ++c) {
                    uint16_t v = quantize16(im.at(x, y, c));
                    row[x * 3 + c] = uint16_t((v >> 8) | (v << 8));  // big-endian in file
                }
            png_write_row(png, reinterpret_cast<png_bytep>(row.data()));
        }
    } else {
        std::vector<uint8_t> row(im.width * 3);
        for (size_t y = 0; y < im.height; ++y) {
            for (size_t x = 0; x < im.width; ++x)
                for (size_t c = 0; c < 3; ++c) row[x * 3 + c] = quantize8(im.at(x, y, c));
            png_write_row(png, row.data());
        }
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png8(const RgbImage& im, const std::string& path) { write_png_impl(im, path, 8); }
void write_png16(const RgbImage& im, const std::string& path) { write_png_impl(im, path, 16); }

}  // namespace hsr
