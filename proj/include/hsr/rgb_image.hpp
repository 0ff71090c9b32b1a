#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hsr/errors.hpp"

namespace hsr {

// W x H x 3 image, values in [0,1], interleaved storage (y*W+x)*3+c.
struct RgbImage {
    size_t width = 0;
    size_t height = 0;
    std::vector<float> values;

    float at(size_t x, size_t y, size_t c) const { return values[(y * width + x) * 3 + c]; }
    float& at(size_t x, size_t y, size_t c) { return values[(y * width + x) * 3 + c]; }

    void validate() const {
        if (width == 0 || height == 0) throw ConfigError("rgb image: extents must be positive");
        if (values.size() != width * height * 3)
            throw DimensionError("rgb image: value count does not match extents");
    }
};

inline RgbImage make_rgb(size_t width, size_t height, float fill = 0.0f) {
    RgbImage im;
    im.width = width;
    im.height = height;
    im.values.assign(width * height * 3, fill);
    return im;
}

// PNG I/O (8- or 16-bit RGB). 16-bit is used for simulated images, 8-bit for
// heatmap renders. Reading accepts 8/16-bit gray or RGB(A).
RgbImage read_png(const std::string& path);
void write_png8(const RgbImage& im, const std::string& path);
void write_png16(const RgbImage& im, const std::string& path);

}  // namespace hsr
