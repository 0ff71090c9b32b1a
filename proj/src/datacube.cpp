#include "hsr/datacube.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace hsr {

namespace {

// Index of (x, y, band) in the flat array for a given layout.
size_t flat_index(const Datacube& c, size_t x, size_t y, size_t band) {
    switch (c.layout) {
        case CubeLayout::WHL: return (x * c.height + y) * c.bands + band;
        case CubeLayout::WLH: return (x * c.bands + band) * c.height + y;
        case CubeLayout::LHW: return (band * c.height + y) * c.width + x;
    }
    throw ConfigError("datacube: unsupported layout tag");
}

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                          (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is, const char* field) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(std::string("cube file: truncated payload reading ") + field);
    return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
           (uint32_t(b[3]) << 24);
}

void write_f32(std::ostream& os, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32(os, u);
}

float read_f32(std::istream& is, const char* field) {
    uint32_t u = read_u32(is, field);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

}  // namespace

std::string layout_name(CubeLayout layout) {
    switch (layout) {
        case CubeLayout::WHL: return "WHL";
        case CubeLayout::WLH: return "WLH";
        case CubeLayout::LHW: return "LHW";
    }
    return "?";
}

float Datacube::at(size_t x, size_t y, size_t band) const {
    return values[flat_index(*this, x, y, band)];
}

float& Datacube::at(size_t x, size_t y, size_t band) {
    return values[flat_index(*this, x, y, band)];
}

void Datacube::validate() const {
    if (width == 0 || height == 0 || bands == 0)
        throw ConfigError("datacube: extents must be positive");
    if (values.size() != numel())
        throw DimensionError("datacube: value count " + std::to_string(values.size()) +
                             " does not match extents");
    if (wavelengths.size() != bands)
        throw DimensionError("datacube: wavelength count does not match band count");
    for (size_t i = 1; i < wavelengths.size(); ++i)
        if (!(wavelengths[i] > wavelengths[i - 1]))
            throw FormatError("datacube: wavelengths not strictly increasing at index " +
                              std::to_string(i));
}

Datacube make_cube(size_t width, size_t height, std::vector<float> wavelengths,
                   CubeLayout layout) {
    Datacube c;
    c.width = width;
    c.height = height;
    c.bands = wavelengths.size();
    c.wavelengths = std::move(wavelengths);
    c.layout = layout;
    c.values.assign(c.numel(), 0.0f);
    c.validate();
    return c;
}

Datacube transpose_cube(const Datacube& cube, CubeLayout target_layout) {
    if (cube.layout == target_layout) return cube;
    Datacube out = cube;
    out.layout = target_layout;
    for (size_t b = 0; b < cube.bands; ++b)
        for (size_t y = 0; y < cube.height; ++y)
            for (size_t x = 0; x < cube.width; ++x) out.at(x, y, b) = cube.at(x, y, b);
    return out;
}

std::vector<Datacube> extract_patches(const Datacube& cube, size_t patch_w, size_t patch_h) {
    if (patch_w == 0 || cube.width % patch_w)
        throw ConfigError("extract_patches: patch width " + std::to_string(patch_w) +
                          " does not divide W=" + std::to_string(cube.width));
    if (patch_h == 0 || cube.height % patch_h)
        throw ConfigError("extract_patches: patch height " + std::to_string(patch_h) +
                          " does not divide H=" + std::to_string(cube.height));
    const size_t cols = cube.width / patch_w, rows = cube.height / patch_h;
    std::vector<Datacube> patches;
    patches.reserve(rows * cols);
    for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < cols; ++c) {
            Datacube p = make_cube(patch_w, patch_h, cube.wavelengths, cube.layout);
            for (size_t b = 0; b < cube.bands; ++b)
                for (size_t y = 0; y < patch_h; ++y)
                    for (size_t x = 0; x < patch_w; ++x)
                        p.at(x, y, b) = cube.at(c * patch_w + x, r * patch_h + y, b);
            patches.push_back(std::move(p));
        }
    return patches;
}

Datacube normalize(const Datacube& cube) {
    if (cube.values.empty()) throw ConfigError("normalize: empty cube");
    float mx = *std::max_element(cube.values.begin(), cube.values.end());
    if (!(mx > 0.0f)) throw DegenerateInputError("normalize: cube maximum is not positive");
    Datacube out = cube;
    for (auto& v : out.values) v /= mx;
    return out;
}

Datacube read_cube(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cube file: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "HSC1")
        throw FormatError("cube file: bad magic in " + path);
    Datacube c;
    c.width = read_u32(is, "width");
    c.height = read_u32(is, "height");
    c.bands = read_u32(is, "band count");
    if (c.width == 0 || c.height == 0 || c.bands == 0)
        throw FormatError("cube file: zero extent in header");
    c.wavelengths.resize(c.bands);
    for (size_t i = 0; i < c.bands; ++i) c.wavelengths[i] = read_f32(is, "wavelengths");
    for (size_t i = 1; i < c.bands; ++i)
        if (!(c.wavelengths[i] > c.wavelengths[i - 1]))
            throw FormatError("cube file: wavelengths not strictly increasing at index " +
                              std::to_string(i));
    c.layout = CubeLayout::LHW;
    c.values.resize(c.numel());
    for (size_t i = 0; i < c.values.size(); ++i) c.values[i] = read_f32(is, "values");
    c.validate();
    return c;
}

void write_cube(const Datacube& cube, const std::string& path) {
    cube.validate();
    const Datacube* src = &cube;
    Datacube tmp;
    if (cube.layout != CubeLayout::LHW) {
        tmp = transpose_cube(cube, CubeLayout::LHW);
        src = &tmp;
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cube file: cannot open " + path + " for writing");
    os.write("HSC1", 4);
    write_u32(os, uint32_t(src->width));
    write_u32(os, uint32_t(src->height));
    write_u32(os, uint32_t(src->bands));
    for (float w : src->wavelengths) write_f32(os, w);
    for (float v : src->values) write_f32(os, v);
    if (!os) throw FormatError("cube file: write failed for " + path);
}

}  // namespace hsr
