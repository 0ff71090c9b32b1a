#include "hsr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace hsr {

namespace {

void check_pair(const Datacube& p, const Datacube& gt, const char* what) {
    if (p.width != gt.width || p.height != gt.height || p.bands != gt.bands)
        throw DimensionError(std::string(what) + ": shape mismatch " +
                             std::to_string(p.width) + "x" + std::to_string(p.height) + "x" +
                             std::to_string(p.bands) + " vs " + std::to_string(gt.width) + "x" +
                             std::to_string(gt.height) + "x" + std::to_string(gt.bands));
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

double mrae(const Datacube& p, const Datacube& gt, float floor) {
    check_pair(p, gt, "mrae");
    if (!(floor > 0.0f)) throw ConfigError("mrae: floor must be positive");
    double acc = 0.0;
    for (size_t b = 0; b < p.bands; ++b)
        for (size_t y = 0; y < p.height; ++y)
            for (size_t x = 0; x < p.width; ++x) {
                double g = gt.at(x, y, b);
                acc += std::abs(double(p.at(x, y, b)) - g) / std::max(g, double(floor));
            }
    return acc / double(p.numel());
}

double rmse(const Datacube& p, const Datacube& gt) {
    check_pair(p, gt, "rmse");
    double acc = 0.0;
    for (size_t b = 0; b < p.bands; ++b)
        for (size_t y = 0; y < p.height; ++y)
            for (size_t x = 0; x < p.width; ++x) {
                double d = double(p.at(x, y, b)) - double(gt.at(x, y, b));
                acc += d * d;
            }
    return std::sqrt(acc / double(p.numel()));
}

std::vector<double> per_band_mrae(const Datacube& p, const Datacube& gt, float floor) {
    check_pair(p, gt, "per_band_mrae");
    std::vector<double> out(p.bands, 0.0);
    for (size_t b = 0; b < p.bands; ++b) {
        double acc = 0.0;
        for (size_t y = 0; y < p.height; ++y)
            for (size_t x = 0; x < p.width; ++x) {
                double g = gt.at(x, y, b);
                acc += std::abs(double(p.at(x, y, b)) - g) / std::max(g, double(floor));
            }
        out[b] = acc / double(p.width * p.height);
    }
    return out;
}

std::vector<float> band_error_map(const Datacube& p, const Datacube& gt, size_t band,
                                  float floor) {
    check_pair(p, gt, "band_error_map");
    if (band >= p.bands)
        throw BoundsError("band_error_map: band " + std::to_string(band) + " out of range [0," +
                          std::to_string(p.bands) + ")");
    std::vector<float> out(p.width * p.height);
    for (size_t y = 0; y < p.height; ++y)
        for (size_t x = 0; x < p.width; ++x) {
            float g = gt.at(x, y, band);
            out[y * p.width + x] =
                std::abs(p.at(x, y, band) - g) / std::max(g, floor);
        }
    return out;
}

RgbImage render_heatmap(const std::vector<float>& error_map, size_t width, size_t height,
                        float max_error) {
    if (error_map.size() != width * height)
        throw DimensionError("render_heatmap: map size does not match extents");
    if (!(max_error > 0.0f)) throw ConfigError("render_heatmap: max_error must be positive");
    RgbImage im = make_rgb(width, height);
    for (size_t i = 0; i < error_map.size(); ++i) {
        float t = std::clamp(error_map[i] / max_error, 0.0f, 1.0f);
        // piecewise ramp: black (0) -> blue (.25) -> cyan (.5) -> yellow (.75) -> red (1)
        float r, g, b;
        if (t < 0.25f) {
            float u = t / 0.25f;
            r = 0.0f; g = 0.0f; b = u;
        } else if (t < 0.5f) {
            float u = (t - 0.25f) / 0.25f;
            r = 0.0f; g = u; b = 1.0f;
        } else if (t < 0.75f) {
            float u = (t - 0.5f) / 0.25f;
            r = u; g = 1.0f; b = 1.0f - u;
        } else {
            float u = (t - 0.75f) / 0.25f;
            r = 1.0f; g = 1.0f - u; b = 0.0f;
        }
        im.values[i * 3 + 0] = r;
        im.values[i * 3 + 1] = g;
        im.values[i * 3 + 2] = b;
    }
    return im;
}

std::vector<std::pair<float, float>> spectral_trace(const Datacube& cube, size_t x, size_t y) {
    if (x >= cube.width || y >= cube.height)
        throw BoundsError("spectral_trace: pixel (" + std::to_string(x) + "," +
                          std::to_string(y) + ") out of bounds");
    std::vector<std::pair<float, float>> out;
    out.reserve(cube.bands);
    for (size_t b = 0; b < cube.bands; ++b)
        out.emplace_back(cube.wavelengths[b], cube.at(x, y, b));
    return out;
}

void write_trace_csv(const std::vector<std::pair<float, float>>& trace, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw FormatError("trace: cannot open " + path + " for writing");
    os << "wavelength_nm,value\n";
    for (const auto& [wl, v] : trace) os << fmt(wl) << "," << fmt(v) << "\n";
}

EvalReport evaluate_set(const std::vector<Datacube>& pred, const std::vector<Datacube>& gt,
                        const std::vector<std::string>& names, float floor) {
    if (pred.size() != gt.size() || pred.size() != names.size() || pred.empty())
        throw ConfigError("evaluate_set: pred/gt/name counts must match and be non-empty");
    EvalReport rep;
    rep.names = names;
    rep.band_mrae.assign(pred[0].bands, 0.0);
    double mrae_acc = 0.0, sq_acc = 0.0;
    std::vector<double> band_acc(pred[0].bands, 0.0);
    size_t band_elems = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        check_pair(pred[i], gt[i], "evaluate_set");
        if (pred[i].bands != pred[0].bands)
            throw DimensionError("evaluate_set: images disagree on band count");
        rep.image_mrae.push_back(mrae(pred[i], gt[i], floor));
        rep.image_rmse.push_back(rmse(pred[i], gt[i]));
        size_t n = pred[i].numel();
        mrae_acc += rep.image_mrae.back() * double(n);
        double r = rep.image_rmse.back();
        sq_acc += r * r * double(n);
        auto pb = per_band_mrae(pred[i], gt[i], floor);
        size_t plane = pred[i].width * pred[i].height;
        for (size_t b = 0; b < pb.size(); ++b) band_acc[b] += pb[b] * double(plane);
        band_elems += plane;
        rep.element_count += n;
    }
    rep.aggregate_mrae = mrae_acc / double(rep.element_count);
    rep.aggregate_rmse = std::sqrt(sq_acc / double(rep.element_count));
    for (size_t b = 0; b < band_acc.size(); ++b)
        rep.band_mrae[b] = band_acc[b] / double(band_elems);
    return rep;
}

void write_report_text(const EvalReport& rep, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw FormatError("report: cannot open " + path + " for writing");
    os << "evaluation report\n";
    os << "images: " << rep.names.size() << "  elements: " << rep.element_count << "\n";
    os << "aggregate MRAE: " << fmt(rep.aggregate_mrae) << "\n";
    os << "aggregate RMSE: " << fmt(rep.aggregate_rmse) << "\n\n";
    for (size_t i = 0; i < rep.names.size(); ++i)
        os << rep.names[i] << "  MRAE " << fmt(rep.image_mrae[i]) << "  RMSE "
           << fmt(rep.image_rmse[i]) << "\n";
    os << "\nper-band MRAE:\n";
    for (size_t b = 0; b < rep.band_mrae.size(); ++b)
        os << "band " << b << ": " << fmt(rep.band_mrae[b]) << "\n";
}

void write_report_csv(const EvalReport& rep, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw FormatError("report: cannot open " + path + " for writing");
    os << "name,mrae,rmse\n";
    for (size_t i = 0; i < rep.names.size(); ++i)
        os << rep.names[i] << "," << fmt(rep.image_mrae[i]) << "," << fmt(rep.image_rmse[i])
           << "\n";
    os << "aggregate," << fmt(rep.aggregate_mrae) << "," << fmt(rep.aggregate_rmse) << "\n";
}

}  // namespace hsr
