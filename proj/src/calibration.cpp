#include "hsr/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace hsr {

namespace {

std::string fmt_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", double(v));
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    return out;
}

float parse_float(const std::string& s, const std::string& context) {
    try {
        size_t pos = 0;
        float v = std::stof(s, &pos);
        while (pos < s.size() && std::isspace((unsigned char)s[pos])) ++pos;
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError(context + ": cannot parse number '" + s + "'");
    }
}

}  // namespace

void LampSpectrum::validate() const {
    if (wavelengths.empty()) throw FormatError("lamp spectrum: empty table");
    if (wavelengths.size() != relative_power.size())
        throw DimensionError("lamp spectrum: wavelength/power count mismatch");
    for (size_t i = 1; i < wavelengths.size(); ++i)
        if (!(wavelengths[i] > wavelengths[i - 1]))
            throw FormatError("lamp spectrum: wavelengths not strictly increasing at index " +
                              std::to_string(i));
    for (size_t i = 0; i < relative_power.size(); ++i)
        if (!(relative_power[i] > 0.0f))
            throw FormatError("lamp spectrum: non-positive power at " +
                              fmt_float(wavelengths[i]) + " nm");
}

float LampSpectrum::power_at(float wl) const {
    if (wl < wavelengths.front() || wl > wavelengths.back())
        throw CalibrationError("lamp spectrum: wavelength " + fmt_float(wl) +
                               " nm outside tabulated range");
    auto it = std::lower_bound(wavelengths.begin(), wavelengths.end(), wl);
    size_t i = size_t(it - wavelengths.begin());
    float p;
    if (i < wavelengths.size() && wavelengths[i] == wl) {
        p = relative_power[i];
    } else {
        float w0 = wavelengths[i - 1], w1 = wavelengths[i];
        float t = (wl - w0) / (w1 - w0);
        p = relative_power[i - 1] * (1.0f - t) + relative_power[i] * t;
    }
    if (!(p > 0.0f))
        throw CalibrationError("lamp spectrum: power not positive at " + fmt_float(wl) + " nm");
    return p;
}

void CssMatrix::validate() const {
    if (wavelengths.empty()) throw FormatError("css: empty matrix");
    if (wavelengths.size() != sensitivity.size())
        throw DimensionError("css: wavelength/row count mismatch");
    for (size_t i = 1; i < wavelengths.size(); ++i)
        if (!(wavelengths[i] > wavelengths[i - 1]))
            throw FormatError("css: wavelengths not strictly increasing at index " +
                              std::to_string(i));
    bool positive[3] = {false, false, false};
    for (size_t i = 0; i < sensitivity.size(); ++i)
        for (size_t c = 0; c < 3; ++c) {
            if (sensitivity[i][c] < 0.0f)
                throw FormatError("css: negative sensitivity at " + fmt_float(wavelengths[i]) +
                                  " nm");
            if (sensitivity[i][c] > 0.0f) positive[c] = true;
        }
    for (size_t c = 0; c < 3; ++c)
        if (!positive[c])
            throw FormatError(std::string("css: column ") + "RGB"[c] +
                              " has no positive entry");
}

void validate_sweep(const std::vector<SweepCapture>& captures,
                    const std::vector<float>& expected_grid_nm) {
    std::vector<float> seen;
    for (const auto& cap : captures) seen.push_back(cap.wavelength);
    std::vector<float> sorted = seen;
    std::sort(sorted.begin(), sorted.end());
    for (size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i] == sorted[i - 1])
            throw CalibrationError("sweep: duplicate capture at " + fmt_float(sorted[i]) + " nm");
    std::vector<float> missing;
    for (float wl : expected_grid_nm)
        if (!std::binary_search(sorted.begin(), sorted.end(), wl)) missing.push_back(wl);
    if (!missing.empty()) {
        std::string msg = "sweep: missing wavelengths:";
        for (float wl : missing) msg += " " + fmt_float(wl);
        throw CalibrationError(msg);
    }
    for (float wl : sorted)
        if (!std::binary_search(expected_grid_nm.begin(), expected_grid_nm.end(), wl))
            throw CalibrationError("sweep: unexpected capture at " + fmt_float(wl) + " nm");
    for (const auto& cap : captures) {
        if (cap.rgb_gain != std::array<float, 3>{1.0f, 1.0f, 1.0f})
            throw CalibrationError("sweep: capture at " + fmt_float(cap.wavelength) +
                                   " nm has RGB gain " + fmt_float(cap.rgb_gain[0]) + ":" +
                                   fmt_float(cap.rgb_gain[1]) + ":" + fmt_float(cap.rgb_gain[2]) +
                                   ", calibration requires 1:1:1");
        if (cap.exposure_ms != captures.front().exposure_ms)
            throw CalibrationError("sweep: exposure drift at " + fmt_float(cap.wavelength) +
                                   " nm (" + fmt_float(cap.exposure_ms) + " ms vs " +
                                   fmt_float(captures.front().exposure_ms) + " ms)");
    }
}

std::array<float, 3> extract_response(const SweepCapture& capture, const Roi& roi,
                                      float dark_level, bool* saturated) {
    const RgbImage& f = capture.frame;
    if (roi.width == 0 || roi.height == 0 || roi.x + roi.width > f.width ||
        roi.y + roi.height > f.height)
        throw BoundsError("extract_response: ROI outside frame bounds");
    double acc[3] = {0, 0, 0};
    bool all_max = true;
    for (size_t y = roi.y; y < roi.y + roi.height; ++y)
        for (size_t x = roi.x; x < roi.x + roi.width; ++x)
            for (size_t c = 0; c < 3; ++c) {
                float v = f.at(x, y, c);
                if (v < 1.0f) all_max = false;
                acc[c] += std::max(0.0f, v - dark_level);
            }
    if (saturated) *saturated = all_max;
    const double n = double(roi.width) * double(roi.height);
    return {float(acc[0] / n), float(acc[1] / n), float(acc[2] / n)};
}

CssMatrix compensate_and_assemble(
    const std::vector<std::pair<float, std::array<float, 3>>>& responses,
    const LampSpectrum& lamp) {
    if (responses.empty()) throw CalibrationError("compensate_and_assemble: no responses");
    lamp.validate();
    CssMatrix css;
    float mx = 0.0f;
    for (const auto& [wl, rgb] : responses) {
        float p = lamp.power_at(wl);
        css.wavelengths.push_back(wl);
        std::array<float, 3> row{rgb[0] / p, rgb[1] / p, rgb[2] / p};
        for (float v : row) mx = std::max(mx, v);
        css.sensitivity.push_back(row);
    }
    if (!(mx > 0.0f))
        throw DegenerateInputError("compensate_and_assemble: all responses are zero");
    for (auto& row : css.sensitivity)
        for (auto& v : row) v /= mx;
    css.validate();
    return css;
}

CssMatrix resample_css(const CssMatrix& css, const std::vector<float>& target) {
    css.validate();
    CssMatrix out;
    for (float wl : target) {
        if (wl < css.wavelengths.front() || wl > css.wavelengths.back())
            throw CalibrationError("resample_css: target wavelength " + fmt_float(wl) +
                                   " nm outside source grid");
        auto it = std::lower_bound(css.wavelengths.begin(), css.wavelengths.end(), wl);
        size_t i = size_t(it - css.wavelengths.begin());
        std::array<float, 3> row;
        if (i < css.wavelengths.size() && css.wavelengths[i] == wl) {
            row = css.sensitivity[i];
        } else {
            float w0 = css.wavelengths[i - 1], w1 = css.wavelengths[i];
            float t = (wl - w0) / (w1 - w0);
            for (size_t c = 0; c < 3; ++c)
                row[c] = css.sensitivity[i - 1][c] * (1.0f - t) + css.sensitivity[i][c] * t;
        }
        out.wavelengths.push_back(wl);
        out.sensitivity.push_back(row);
    }
    out.validate();
    return out;
}

CssMatrix read_css(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("css: cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line != "wavelength_nm,R,G,B")
        throw FormatError("css: bad or missing header in " + path);
    CssMatrix css;
    size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 4)
            throw FormatError("css: expected 4 fields at line " + std::to_string(lineno));
        std::string ctx = path + ":" + std::to_string(lineno);
        css.wavelengths.push_back(parse_float(fields[0], ctx));
        css.sensitivity.push_back({parse_float(fields[1], ctx), parse_float(fields[2], ctx),
                                   parse_float(fields[3], ctx)});
    }
    css.validate();
    return css;
}

void write_css(const CssMatrix& css, const std::string& path) {
    css.validate();
    std::ofstream os(path);
    if (!os) throw FormatError("css: cannot open " + path + " for writing");
    os << "wavelength_nm,R,G,B\n";
    for (size_t i = 0; i < css.bands(); ++i)
        os << fmt_float(css.wavelengths[i]) << "," << fmt_float(css.sensitivity[i][0]) << ","
           << fmt_float(css.sensitivity[i][1]) << "," << fmt_float(css.sensitivity[i][2]) << "\n";
    if (!os) throw FormatError("css: write failed for " + path);
}

LampSpectrum read_lamp(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("lamp spectrum: cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line != "wavelength_nm,power")
        throw FormatError("lamp spectrum: bad or missing header in " + path);
    LampSpectrum lamp;
    size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 2)
            throw FormatError("lamp spectrum: expected 2 fields at line " +
                              std::to_string(lineno));
        std::string ctx = path + ":" + std::to_string(lineno);
        lamp.wavelengths.push_back(parse_float(fields[0], ctx));
        lamp.relative_power.push_back(parse_float(fields[1], ctx));
    }
    lamp.validate();
    return lamp;
}

void write_lamp(const LampSpectrum& lamp, const std::string& path) {
    lamp.validate();
    std::ofstream os(path);
    if (!os) throw FormatError("lamp spectrum: cannot open " + path + " for writing");
    os << "wavelength_nm,power\n";
    for (size_t i = 0; i < lamp.wavelengths.size(); ++i)
        os << fmt_float(lamp.wavelengths[i]) << "," << fmt_float(lamp.relative_power[i]) << "\n";
    if (!os) throw FormatError("lamp spectrum: write failed for " + path);
}

std::vector<SweepCapture> load_sweep(const std::string& dir) {
    fs::path meta_path = fs::path(dir) / "sweep_meta.csv";
    std::ifstream is(meta_path);
    if (!is) throw FormatError("sweep: cannot open " + meta_path.string());
    std::string line;
    if (!std::getline(is, line) || line != "wavelength_nm,exposure_ms,gain_r,gain_g,gain_b")
        throw FormatError("sweep: bad or missing header in " + meta_path.string());
    std::vector<SweepCapture> captures;
    size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 5)
            throw FormatError("sweep: expected 5 fields at line " + std::to_string(lineno));
        std::string ctx = meta_path.string() + ":" + std::to_string(lineno);
        SweepCapture cap;
        cap.wavelength = parse_float(fields[0], ctx);
        cap.exposure_ms = parse_float(fields[1], ctx);
        cap.rgb_gain = {parse_float(fields[2], ctx), parse_float(fields[3], ctx),
                        parse_float(fields[4], ctx)};
        char name[64];
        std::snprintf(name, sizeof name, "wl_%g.png", double(cap.wavelength));
        fs::path frame_path = fs::path(dir) / name;
        if (!fs::exists(frame_path))
            throw FormatError("sweep: missing frame " + frame_path.string());
        cap.frame = read_png(frame_path.string());
        captures.push_back(std::move(cap));
    }
    if (captures.empty()) throw FormatError("sweep: no captures listed in " + meta_path.string());
    return captures;
}

void write_sweep_meta(const std::vector<SweepCapture>& captures, const std::string& dir) {
    fs::path meta_path = fs::path(dir) / "sweep_meta.csv";
    std::ofstream os(meta_path);
    if (!os) throw FormatError("sweep: cannot open " + meta_path.string() + " for writing");
    os << "wavelength_nm,exposure_ms,gain_r,gain_g,gain_b\n";
    for (const auto& cap : captures)
        os << fmt_float(cap.wavelength) << "," << fmt_float(cap.exposure_ms) << ","
           << fmt_float(cap.rgb_gain[0]) << "," << fmt_float(cap.rgb_gain[1]) << ","
           << fmt_float(cap.rgb_gain[2]) << "\n";
}

}  // namespace hsr
