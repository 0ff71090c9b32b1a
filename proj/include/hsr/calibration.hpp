#pragma once

// Camera spectral sensitivity recovery from a monochromator wavelength sweep.
// The pipeline assumes a linear camera response: gamma correction and white
// balance must be off (RGB gain fixed at 1:1:1) during the sweep.

#include <array>
#include <string>
#include <vector>

#include "hsr/rgb_image.hpp"

namespace hsr {

struct SweepCapture {
    float wavelength = 0.0f;  // nm
    RgbImage frame;
    float exposure_ms = 0.0f;
    std::array<float, 3> rgb_gain{1.0f, 1.0f, 1.0f};
};

struct LampSpectrum {
    std::vector<float> wavelengths;     // nm, strictly increasing
    std::vector<float> relative_power;  // arbitrary units, positive

    void validate() const;
    // Linear interpolation on the tabulated grid; throws CalibrationError if
    // the wavelength is outside the grid or the interpolated power is <= 0.
    float power_at(float wavelength_nm) const;
};

struct CssMatrix {
    std::vector<float> wavelengths;            // n_lambda nm values
    std::vector<std::array<float, 3>> sensitivity;  // n_lambda rows, R/G/B columns

    size_t bands() const { return wavelengths.size(); }
    void validate() const;
};

struct Roi {
    size_t x = 0, y = 0, width = 0, height = 0;
};

// Passes iff capture wavelengths equal the expected grid exactly, exposures
// are uniform, and every gain is 1:1:1. Each violation throws a
// CalibrationError naming the offending capture.
void validate_sweep(const std::vector<SweepCapture>& captures,
                    const std::vector<float>& expected_grid_nm);

// Per-channel mean gray scale over the ROI, dark level subtracted first and
// clamped at 0. saturated (when given) reports a fully saturated ROI.
std::array<float, 3> extract_response(const SweepCapture& capture, const Roi& roi,
                                      float dark_level = 0.0f, bool* saturated = nullptr);

// CSS(l, c) = response(l, c) / lamp_power(l), scaled so the global maximum
// entry is 1.
CssMatrix compensate_and_assemble(
    const std::vector<std::pair<float, std::array<float, 3>>>& responses,
    const LampSpectrum& lamp);

// Linear interpolation of a CSS onto a new wavelength grid; refuses to
// extrapolate outside the source grid.
CssMatrix resample_css(const CssMatrix& css, const std::vector<float>& target_wavelengths);

// CSV: header "wavelength_nm,R,G,B", one row per wavelength.
CssMatrix read_css(const std::string& path);
void write_css(const CssMatrix& css, const std::string& path);

// CSV: header "wavelength_nm,power".
LampSpectrum read_lamp(const std::string& path);
void write_lamp(const LampSpectrum& lamp, const std::string& path);

// Sweep directory: frames named "wl_<nm>.png" plus a "sweep_meta.csv" sidecar
// with header "wavelength_nm,exposure_ms,gain_r,gain_g,gain_b".
std::vector<SweepCapture> load_sweep(const std::string& dir);
void write_sweep_meta(const std::vector<SweepCapture>& captures, const std::string& dir);

}  // namespace hsr
