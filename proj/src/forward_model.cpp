#include "hsr/forward_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace hsr {

namespace {

void check_grids(const Datacube& cube, const CssMatrix& css) {
    if (cube.bands != css.bands())
        throw DimensionError("simulate_rgb: cube has " + std::to_string(cube.bands) +
                             " bands, css has " + std::to_string(css.bands()));
    for (size_t i = 0; i < cube.bands; ++i)
        if (cube.wavelengths[i] != css.wavelengths[i]) {
            char buf[96];
            std::snprintf(buf, sizeof buf,
                          "simulate_rgb: wavelength grids disagree at index %zu (%g vs %g nm)", i,
                          double(cube.wavelengths[i]), double(css.wavelengths[i]));
            throw DimensionError(buf);
        }
}

}  // namespace

SimulatedRgb simulate_rgb_full(const Datacube& cube, const CssMatrix& css) {
    cube.validate();
    css.validate();
    check_grids(cube, css);
    RgbImage im = make_rgb(cube.width, cube.height);
    float mx = 0.0f;
    for (size_t y = 0; y < cube.height; ++y)
        for (size_t x = 0; x < cube.width; ++x)
            for (size_t c = 0; c < 3; ++c) {
                float acc = 0.0f;
                for (size_t b = 0; b < cube.bands; ++b)
                    acc += cube.at(x, y, b) * css.sensitivity[b][c];
                im.at(x, y, c) = acc;
                mx = std::max(mx, acc);
            }
    if (!(mx > 0.0f)) throw DegenerateInputError("simulate_rgb: all-zero product");
    for (auto& v : im.values) v /= mx;
    return {std::move(im), mx};
}

RgbImage crop_rgb(const RgbImage& im, size_t x0, size_t y0, size_t w, size_t h) {
    if (w == 0 || h == 0) throw BoundsError("crop_rgb: empty crop");
    if (x0 + w > im.width || y0 + h > im.height)
        throw BoundsError("crop_rgb: crop outside image bounds");
    RgbImage out = make_rgb(w, h);
    for (size_t y = 0; y < h; ++y)
        for (size_t x = 0; x < w; ++x)
            for (size_t c = 0; c < 3; ++c) out.at(x, y, c) = im.at(x0 + x, y0 + y, c);
    return out;
}

std::vector<PairSample> build_pair_set(const std::vector<Datacube>& cubes, const CssMatrix& css,
                                       size_t patch_w, size_t patch_h) {
    std::vector<PairSample> pairs;
    for (const auto& cube : cubes) {
        auto sim = simulate_rgb_full(cube, css);
        auto hsi_patches = extract_patches(cube, patch_w, patch_h);
        const size_t cols = cube.width / patch_w, rows = cube.height / patch_h;
        size_t idx = 0;
        for (size_t r = 0; r < rows; ++r)
            for (size_t c = 0; c < cols; ++c) {
                PairSample p;
                p.rgb = crop_rgb(sim.image, c * patch_w, r * patch_h, patch_w, patch_h);
                p.hsi = std::move(hsi_patches[idx++]);
                p.norm_constant = sim.norm_constant;
                pairs.push_back(std::move(p));
            }
    }
    return pairs;
}

namespace {

void write_rgb_raw(const RgbImage& im, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("pair set: cannot open " + path + " for writing");
    // band-sequential float32 planes: R, G, B, each row-major
    for (size_t c = 0; c < 3; ++c)
        for (size_t y = 0; y < im.height; ++y)
            for (size_t x = 0; x < im.width; ++x) {
                float v = im.at(x, y, c);
                uint32_t u;
                std::memcpy(&u, &v, 4);
                unsigned char b[4] = {(unsigned char)(u & 0xff), (unsigned char)((u >> 8) & 0xff),
                                      (unsigned char)((u >> 16) & 0xff),
                                      (unsigned char)((u >> 24) & 0xff)};
                os.write(reinterpret_cast<const char*>(b), 4);
            }
    if (!os) throw FormatError("pair set: write failed for " + path);
}

RgbImage read_rgb_raw(const std::string& path, size_t w, size_t h) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("pair set: cannot open " + path);
    RgbImage im = make_rgb(w, h);
    for (size_t c = 0; c < 3; ++c)
        for (size_t y = 0; y < h; ++y)
            for (size_t x = 0; x < w; ++x) {
                unsigned char b[4];
                if (!is.read(reinterpret_cast<char*>(b), 4))
                    throw FormatError("pair set: truncated raw image " + path);
                uint32_t u = uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
                             (uint32_t(b[3]) << 24);
                float v;
                std::memcpy(&v, &u, 4);
                im.at(x, y, c) = v;
            }
    return im;
}

}  // namespace

void write_pair_set(const std::vector<PairSample>& pairs, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream idx(fs::path(dir) / "index.csv");
    if (!idx) throw FormatError("pair set: cannot open index in " + dir);
    idx << "pair_id,rgb_raw,hsi_file,width,height,bands,norm_constant\n";
    char buf[64];
    for (size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        std::snprintf(buf, sizeof buf, "pair_%04zu", i);
        std::string stem = buf;
        write_rgb_raw(p.rgb, (fs::path(dir) / (stem + ".rgb")).string());
        write_png16(p.rgb, (fs::path(dir) / (stem + ".png")).string());
        write_cube(p.hsi, (fs::path(dir) / (stem + ".hsc")).string());
        std::snprintf(buf, sizeof buf, "%.9g", double(p.norm_constant));
        idx << stem << "," << stem << ".rgb," << stem << ".hsc," << p.rgb.width << ","
            << p.rgb.height << "," << p.hsi.bands << "," << buf << "\n";
    }
    if (!idx) throw FormatError("pair set: index write failed in " + dir);
}

std::vector<PairSample> read_pair_set(const std::string& dir) {
    std::ifstream idx(fs::path(dir) / "index.csv");
    if (!idx) throw FormatError("pair set: cannot open index in " + dir);
    std::string line;
    if (!std::getline(idx, line) ||
        line != "pair_id,rgb_raw,hsi_file,width,height,bands,norm_constant")
        throw FormatError("pair set: bad or missing index header in " + dir);
    std::vector<PairSample> pairs;
    size_t lineno = 1;
    while (std::getline(idx, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) f.push_back(field);
        if (f.size() != 7)
            throw FormatError("pair set: expected 7 fields at index line " +
                              std::to_string(lineno));
        PairSample p;
        size_t w = std::stoul(f[3]), h = std::stoul(f[4]);
        p.rgb = read_rgb_raw((fs::path(dir) / f[1]).string(), w, h);
        p.hsi = read_cube((fs::path(dir) / f[2]).string());
        p.norm_constant = std::stof(f[6]);
        if (p.hsi.width != w || p.hsi.height != h)
            throw FormatError("pair set: rgb/hsi extent mismatch at line " +
                              std::to_string(lineno));
        pairs.push_back(std::move(p));
    }
    if (pairs.empty()) throw FormatError("pair set: empty index in " + dir);
    return pairs;
}

}  // namespace hsr
