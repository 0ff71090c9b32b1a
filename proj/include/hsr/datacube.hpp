#pragma once

// Hyperspectral data model: dimension-tagged 3D volumes, transpositions,
// normalization, patch extraction, and the "HSC1" on-disk format.
//
// HSC1 layout: magic "HSC1", little-endian u32 W, H, n_lambda, then n_lambda
// float32 wavelengths in nm, then band-sequential float32 values (a full
// W x H plane per band, row-major: y rows of W pixels).

#include <cstdint>
#include <string>
#include <vector>

#include "hsr/errors.hpp"

namespace hsr {

// Axis ordering of the flat value array (row-major, last axis fastest).
enum class CubeLayout {
    WHL,  // (x, y, lambda)
    WLH,  // (x, lambda, y)
    LHW,  // (lambda, y, x)  -- canonical band-sequential order
};

std::string layout_name(CubeLayout layout);

struct Datacube {
    size_t width = 0;   // W, pixels
    size_t height = 0;  // H, pixels
    size_t bands = 0;   // n_lambda
    std::vector<float> wavelengths;  // nm, strictly increasing
    CubeLayout layout = CubeLayout::LHW;
    std::vector<float> values;  // flat array in layout order

    size_t numel() const { return width * height * bands; }

    // Value at logical coordinate (x, y, band) regardless of layout.
    float at(size_t x, size_t y, size_t band) const;
    float& at(size_t x, size_t y, size_t band);

    // Validates extents, wavelength monotonicity, and value-array size.
    void validate() const;
};

Datacube make_cube(size_t width, size_t height, std::vector<float> wavelengths,
                   CubeLayout layout = CubeLayout::LHW);

// Relabels storage order; the value at every (x, y, lambda) is preserved.
Datacube transpose_cube(const Datacube& cube, CubeLayout target_layout);

// Non-overlapping patches in row-major tile order; patch extents must divide
// the cube extents.
std::vector<Datacube> extract_patches(const Datacube& cube, size_t patch_w, size_t patch_h);

// Divides all values by the global maximum; the result has max exactly 1.
Datacube normalize(const Datacube& cube);

Datacube read_cube(const std::string& path);
void write_cube(const Datacube& cube, const std::string& path);

}  // namespace hsr
