#pragma once

// Reconstruction quality metrics and evaluation artifacts: MRAE, RMSE,
// per-band error profiles, rendered error heatmaps, and spectral traces.
//
// MRAE divides by the ground truth; a configurable floor (default 1e-4)
// guards zero ground-truth values. MRAE is not symmetric in its arguments;
// RMSE is.

#include <string>
#include <vector>

#include "hsr/datacube.hpp"
#include "hsr/rgb_image.hpp"

namespace hsr {

constexpr float kMraeFloor = 1e-4f;

double mrae(const Datacube& p, const Datacube& gt, float floor = kMraeFloor);
double rmse(const Datacube& p, const Datacube& gt);

// One MRAE value per band; their element-weighted mean equals the aggregate.
std::vector<double> per_band_mrae(const Datacube& p, const Datacube& gt,
                                  float floor = kMraeFloor);

// Per-pixel |p - gt| / max(gt, floor) for one band, row-major (y*W+x).
std::vector<float> band_error_map(const Datacube& p, const Datacube& gt, size_t band,
                                  float floor = kMraeFloor);

// Fixed false-color ramp (black -> blue -> cyan -> yellow -> red) so rendered
// heatmaps are byte-comparable; errors are clipped to [0, max_error].
RgbImage render_heatmap(const std::vector<float>& error_map, size_t width, size_t height,
                        float max_error = 1.0f);

// Full spectrum at one pixel, paired with wavelengths.
std::vector<std::pair<float, float>> spectral_trace(const Datacube& cube, size_t x, size_t y);

void write_trace_csv(const std::vector<std::pair<float, float>>& trace, const std::string& path);

struct EvalReport {
    std::vector<std::string> names;   // one entry per image
    std::vector<double> image_mrae;
    std::vector<double> image_rmse;
    std::vector<double> band_mrae;    // aggregate per-band profile
    double aggregate_mrae = 0.0;
    double aggregate_rmse = 0.0;
    size_t element_count = 0;
};

EvalReport evaluate_set(const std::vector<Datacube>& pred, const std::vector<Datacube>& gt,
                        const std::vector<std::string>& names, float floor = kMraeFloor);

void write_report_text(const EvalReport& report, const std::string& path);
void write_report_csv(const EvalReport& report, const std::string& path);

}  // namespace hsr
