#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "hsr/calibration.hpp"

using namespace hsr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("hsr_cal_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::vector<float> grid_400_650() {
    std::vector<float> g;
    for (int nm = 400; nm <= 650; ++nm) g.push_back(float(nm));
    return g;
}

// smooth strictly positive per-channel sensitivity model used as ground truth
float gt_sensitivity(float wl, size_t c) {
    static const float center[3] = {610.0f, 540.0f, 460.0f};
    static const float width[3] = {55.0f, 60.0f, 45.0f};
    float d = (wl - center[c]) / width[c];
    return 0.05f + std::exp(-0.5f * d * d);
}

SweepCapture make_capture(float wl, float level_r, float level_g, float level_b,
                          float exposure = 20.0f) {
    SweepCapture cap;
    cap.wavelength = wl;
    cap.exposure_ms = exposure;
    cap.frame = make_rgb(8, 6);
    for (size_t i = 0; i < 48; ++i) {
        cap.frame.values[i * 3 + 0] = level_r;
        cap.frame.values[i * 3 + 1] = level_g;
        cap.frame.values[i * 3 + 2] = level_b;
    }
    return cap;
}

}  // namespace

TEST_CASE("sweep validation accepts a complete uniform sweep on the 251-point grid") {
    auto grid = grid_400_650();
    std::vector<SweepCapture> caps;
    for (float wl : grid) caps.push_back(make_capture(wl, 0.1f, 0.1f, 0.1f));
    CHECK_NOTHROW(validate_sweep(caps, grid));
}

TEST_CASE("sweep validation rejects a non-unity gain naming the capture") {
    auto grid = grid_400_650();
    std::vector<SweepCapture> caps;
    for (float wl : grid) caps.push_back(make_capture(wl, 0.1f, 0.1f, 0.1f));
    caps[37].rgb_gain = {1.0f, 1.5f, 1.0f};
    CHECK_THROWS_WITH_AS(validate_sweep(caps, grid), doctest::Contains("437"),
                         CalibrationError);
    CHECK_THROWS_WITH_AS(validate_sweep(caps, grid), doctest::Contains("1.5"),
                         CalibrationError);
}

TEST_CASE("sweep validation reports a missing wavelength") {
    auto grid = grid_400_650();
    std::vector<SweepCapture> caps;
    for (float wl : grid)
        if (wl != 450.0f) caps.push_back(make_capture(wl, 0.1f, 0.1f, 0.1f));
    CHECK_THROWS_WITH_AS(validate_sweep(caps, grid), doctest::Contains("450"),
                         CalibrationError);
}

TEST_CASE("sweep validation rejects duplicates, extras and exposure drift") {
    std::vector<float> grid{500.0f, 501.0f, 502.0f};
    std::vector<SweepCapture> caps;
    for (float wl : grid) caps.push_back(make_capture(wl, 0.1f, 0.1f, 0.1f));

    auto dup = caps;
    dup.push_back(make_capture(501.0f, 0.1f, 0.1f, 0.1f));
    CHECK_THROWS_WITH_AS(validate_sweep(dup, grid), doctest::Contains("duplicate"),
                         CalibrationError);

    auto extra = caps;
    extra.push_back(make_capture(700.0f, 0.1f, 0.1f, 0.1f));
    CHECK_THROWS_WITH_AS(validate_sweep(extra, grid), doctest::Contains("unexpected"),
                         CalibrationError);

    auto drift = caps;
    drift[2].exposure_ms = 25.0f;
    CHECK_THROWS_WITH_AS(validate_sweep(drift, grid), doctest::Contains("exposure"),
                         CalibrationError);
}

TEST_CASE("ROI mean matches a direct average and dark level subtracts with clamp") {
    SweepCapture cap;
    cap.frame = make_rgb(4, 4);
    std::mt19937 rng(11);
    std::uniform_real_distribution<float> d(0.0f, 0.9f);
    for (auto& v : cap.frame.values) v = d(rng);
    Roi roi{1, 1, 2, 3};
    auto resp = extract_response(cap, roi);
    for (size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (size_t y = 1; y < 4; ++y)
            for (size_t x = 1; x < 3; ++x) acc += cap.frame.at(x, y, c);
        CHECK(resp[c] == doctest::Approx(acc / 6.0).epsilon(1e-6));
    }

    auto dark = extract_response(cap, roi, 0.05f);
    for (size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (size_t y = 1; y < 4; ++y)
            for (size_t x = 1; x < 3; ++x)
                acc += std::max(0.0f, cap.frame.at(x, y, c) - 0.05f);
        CHECK(dark[c] == doctest::Approx(acc / 6.0).epsilon(1e-6));
    }

    // dark level above every pixel clamps to zero, never negative
    auto clamped = extract_response(cap, roi, 2.0f);
    for (size_t c = 0; c < 3; ++c) CHECK(clamped[c] == 0.0f);

    CHECK_THROWS_AS(extract_response(cap, Roi{3, 3, 2, 2}), BoundsError);
}

TEST_CASE("saturation flag fires only when the whole ROI is at full scale") {
    SweepCapture cap;
    cap.frame = make_rgb(2, 2);
    for (auto& v : cap.frame.values) v = 1.0f;
    bool sat = false;
    extract_response(cap, Roi{0, 0, 2, 2}, 0.0f, &sat);
    CHECK(sat);
    cap.frame.values[0] = 0.5f;
    extract_response(cap, Roi{0, 0, 2, 2}, 0.0f, &sat);
    CHECK_FALSE(sat);
}

TEST_CASE("closed loop on the 251-point grid recovers the sensitivity to 1e-6") {
    auto grid = grid_400_650();

    LampSpectrum lamp;
    for (float wl : grid) {
        lamp.wavelengths.push_back(wl);
        lamp.relative_power.push_back(0.4f + 0.5f * std::sin((wl - 400.0f) * 0.011f) *
                                                  std::sin((wl - 400.0f) * 0.011f));
    }

    std::vector<SweepCapture> caps;
    const float k = 0.6f;  // arbitrary camera scale, cancelled by normalization
    for (size_t i = 0; i < grid.size(); ++i) {
        float wl = grid[i];
        float p = lamp.relative_power[i];
        caps.push_back(make_capture(wl, k * p * gt_sensitivity(wl, 0),
                                    k * p * gt_sensitivity(wl, 1),
                                    k * p * gt_sensitivity(wl, 2)));
    }
    validate_sweep(caps, grid);

    std::vector<std::pair<float, std::array<float, 3>>> responses;
    for (const auto& cap : caps)
        responses.emplace_back(cap.wavelength, extract_response(cap, Roi{0, 0, 8, 6}));
    auto css = compensate_and_assemble(responses, lamp);

    REQUIRE(css.bands() == 251);
    float gt_max = 0.0f;
    for (float wl : grid)
        for (size_t c = 0; c < 3; ++c) gt_max = std::max(gt_max, gt_sensitivity(wl, c));
    for (size_t i = 0; i < grid.size(); ++i)
        for (size_t c = 0; c < 3; ++c) {
            float expect = gt_sensitivity(grid[i], c) / gt_max;
            CHECK(std::abs(css.sensitivity[i][c] - expect) / expect < 1e-6f);
        }
}

TEST_CASE("recovered sensitivity is invariant to the lamp and to global response scale") {
    std::vector<float> grid{500.0f, 510.0f, 520.0f, 530.0f};
    auto build = [&](float scale, std::vector<float> powers) {
        LampSpectrum lamp{grid, powers};
        std::vector<std::pair<float, std::array<float, 3>>> responses;
        for (size_t i = 0; i < grid.size(); ++i) {
            std::array<float, 3> r;
            for (size_t c = 0; c < 3; ++c)
                r[c] = scale * powers[i] * gt_sensitivity(grid[i], c);
            responses.emplace_back(grid[i], r);
        }
        return compensate_and_assemble(responses, lamp);
    };
    auto a = build(1.0f, {1.0f, 1.0f, 1.0f, 1.0f});
    auto b = build(3.7f, {0.3f, 1.1f, 0.8f, 0.5f});
    for (size_t i = 0; i < grid.size(); ++i)
        for (size_t c = 0; c < 3; ++c)
            CHECK(a.sensitivity[i][c] ==
                  doctest::Approx(b.sensitivity[i][c]).epsilon(1e-5));
}

TEST_CASE("assembly rejects all-zero responses and out-of-range wavelengths") {
    LampSpectrum lamp{{500.0f, 510.0f}, {1.0f, 1.0f}};
    std::vector<std::pair<float, std::array<float, 3>>> zero{
        {500.0f, {0.0f, 0.0f, 0.0f}}, {510.0f, {0.0f, 0.0f, 0.0f}}};
    CHECK_THROWS_AS(compensate_and_assemble(zero, lamp), DegenerateInputError);

    std::vector<std::pair<float, std::array<float, 3>>> outside{
        {490.0f, {0.1f, 0.1f, 0.1f}}};
    CHECK_THROWS_AS(compensate_and_assemble(outside, lamp), CalibrationError);
}

TEST_CASE("lamp interpolation is linear between grid points") {
    LampSpectrum lamp{{500.0f, 510.0f}, {1.0f, 3.0f}};
    CHECK(lamp.power_at(500.0f) == 1.0f);
    CHECK(lamp.power_at(510.0f) == 3.0f);
    CHECK(lamp.power_at(505.0f) == doctest::Approx(2.0f));
    CHECK(lamp.power_at(502.5f) == doctest::Approx(1.5f));
    CHECK_THROWS_AS(lamp.power_at(499.0f), CalibrationError);
}

TEST_CASE("css resampling interpolates linearly and refuses extrapolation") {
    CssMatrix css;
    css.wavelengths = {500.0f, 510.0f};
    css.sensitivity = {{1.0f, 0.2f, 0.0f}, {0.0f, 0.6f, 1.0f}};
    auto r = resample_css(css, {505.0f});
    CHECK(r.sensitivity[0][0] == doctest::Approx(0.5f));
    CHECK(r.sensitivity[0][1] == doctest::Approx(0.4f));
    CHECK(r.sensitivity[0][2] == doctest::Approx(0.5f));
    CHECK_THROWS_AS(resample_css(css, {515.0f}), CalibrationError);
}

TEST_CASE("css csv round trip and validation errors") {
    TempDir dir;
    CssMatrix css;
    for (int i = 0; i < 5; ++i) {
        css.wavelengths.push_back(400.0f + 10.0f * float(i));
        css.sensitivity.push_back({0.125f * float(i), 1.0f - 0.125f * float(i), 0.25f});
    }
    auto path = (dir.path / "css.csv").string();
    write_css(css, path);
    auto r = read_css(path);
    CHECK(r.wavelengths == css.wavelengths);
    CHECK(r.sensitivity == css.sensitivity);

    auto bad = (dir.path / "neg.csv").string();
    std::ofstream(bad) << "wavelength_nm,R,G,B\n500,0.5,-0.1,0.5\n";
    CHECK_THROWS_WITH_AS(read_css(bad), doctest::Contains("negative"), FormatError);

    auto header_only = (dir.path / "empty.csv").string();
    std::ofstream(header_only) << "wavelength_nm,R,G,B\n";
    CHECK_THROWS_AS(read_css(header_only), FormatError);

    auto bad_header = (dir.path / "hdr.csv").string();
    std::ofstream(bad_header) << "nm,R,G,B\n500,1,1,1\n";
    CHECK_THROWS_WITH_AS(read_css(bad_header), doctest::Contains("header"), FormatError);

    CssMatrix dead = css;
    for (auto& row : dead.sensitivity) row[2] = 0.0f;
    CHECK_THROWS_WITH_AS(dead.validate(), doctest::Contains("B"), FormatError);
}

TEST_CASE("lamp csv round trip") {
    TempDir dir;
    LampSpectrum lamp{{400.0f, 405.0f, 410.0f}, {0.5f, 0.75f, 1.0f}};
    auto path = (dir.path / "lamp.csv").string();
    write_lamp(lamp, path);
    auto r = read_lamp(path);
    CHECK(r.wavelengths == lamp.wavelengths);
    CHECK(r.relative_power == lamp.relative_power);
}

TEST_CASE("sweep directory round trip preserves metadata and frames") {
    TempDir dir;
    std::vector<SweepCapture> caps;
    // use values on the 16-bit grid so the png round trip is exact
    caps.push_back(make_capture(500.0f, 8192.0f / 65535.0f, 16384.0f / 65535.0f,
                                32768.0f / 65535.0f));
    caps.push_back(make_capture(501.0f, 4096.0f / 65535.0f, 2048.0f / 65535.0f,
                                1024.0f / 65535.0f));
    write_sweep_meta(caps, dir.path.string());
    for (const auto& cap : caps) {
        char name[64];
        std::snprintf(name, sizeof name, "wl_%g.png", double(cap.wavelength));
        write_png16(cap.frame, (dir.path / name).string());
    }
    auto loaded = load_sweep(dir.path.string());
    REQUIRE(loaded.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(loaded[i].wavelength == caps[i].wavelength);
        CHECK(loaded[i].exposure_ms == caps[i].exposure_ms);
        CHECK(loaded[i].rgb_gain == caps[i].rgb_gain);
        CHECK(loaded[i].frame.values == caps[i].frame.values);
    }

    // a listed frame with no file on disk is an error naming the file
    fs::remove(dir.path / "wl_501.png");
    CHECK_THROWS_WITH_AS(load_sweep(dir.path.string()), doctest::Contains("wl_501.png"),
                         FormatError);
}
