#pragma once

// Synthesizes virtual RGB images from hyperspectral datacubes:
// I(x,y,c) = sum_l cube(x,y,l) * css(l,c), then divided by the image's global
// maximum. The normalization constant is kept with each simulated image so
// pairs stay reproducible.

#include <string>
#include <vector>

#include "hsr/calibration.hpp"
#include "hsr/datacube.hpp"
#include "hsr/rgb_image.hpp"

namespace hsr {

struct SimulatedRgb {
    RgbImage image;
    float norm_constant = 1.0f;  // pre-normalization global maximum
};

// Cube and CSS wavelength grids must agree exactly; use resample_css to
// coerce a CSS onto a cube grid deliberately.
SimulatedRgb simulate_rgb_full(const Datacube& cube, const CssMatrix& css);

inline RgbImage simulate_rgb(const Datacube& cube, const CssMatrix& css) {
    return simulate_rgb_full(cube, css).image;
}

struct PairSample {
    RgbImage rgb;
    Datacube hsi;
    float norm_constant = 1.0f;  // shared across all patches of one source cube
};

// Simulation runs on the full image before patching so the patch pairs are
// spatially aligned crops of the same scene.
std::vector<PairSample> build_pair_set(const std::vector<Datacube>& cubes, const CssMatrix& css,
                                       size_t patch_w, size_t patch_h);

RgbImage crop_rgb(const RgbImage& im, size_t x0, size_t y0, size_t w, size_t h);

// Pair-set archive: a directory with "index.csv"
// (pair_id,rgb_raw,hsi_file,width,height,bands,norm_constant), raw float32
// band-sequential RGB planes, HSC1 cubes, and a 16-bit PNG per pair for
// inspection.
void write_pair_set(const std::vector<PairSample>& pairs, const std::string& dir);
std::vector<PairSample> read_pair_set(const std::string& dir);

}  // namespace hsr
