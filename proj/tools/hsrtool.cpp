// hsrtool: command-line front end for the hyperspectral reconstruction
// pipeline. Subcommands: calibrate, simulate, train, reconstruct, evaluate,
// css-study, plus rerun (replays a previously written run manifest).
//
// Every run stages its outputs in a temporary sibling directory and renames it
// into place on success, so failed runs never leave partial outputs. Each
// output directory carries a manifest.json with the fully resolved
// configuration; "hsrtool rerun <manifest>" repeats the run.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hsr/calibration.hpp"
#include "hsr/forward_model.hpp"
#include "hsr/metrics.hpp"
#include "hsr/ptnet.hpp"
#include "hsr/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace hsr;

namespace {

constexpr const char* kToolVersion = "1.0.0";

// ------------------------------------------------------------ configuration

struct ToolConfig {
    PtnetConfig net;
    TrainConfig train;
};

void apply_config_field(ToolConfig& cfg, const std::string& key, const std::string& value) {
    auto as_size = [&](size_t& dst) { dst = size_t(std::stoull(value)); };
    auto as_double = [&](double& dst) { dst = std::stod(value); };
    auto as_bool = [&](bool& dst) {
        if (value == "true" || value == "1")
            dst = true;
        else if (value == "false" || value == "0")
            dst = false;
        else
            throw ConfigError("config: field '" + key + "' expects true/false, got '" + value +
                              "'");
    };
    try {
        if (key == "n_lambda") as_size(cfg.net.n_lambda);
        else if (key == "base_channels") as_size(cfg.net.base_channels);
        else if (key == "downsample_factor") as_size(cfg.net.downsample_factor);
        else if (key == "ra_blocks_per_branch") as_size(cfg.net.ra_blocks_per_branch);
        else if (key == "ra_inner_channels") as_size(cfg.net.ra_inner_channels);
        else if (key == "eca_kernel") as_size(cfg.net.eca_kernel);
        else if (key == "input_h") as_size(cfg.net.input_h);
        else if (key == "input_w") as_size(cfg.net.input_w);
        else if (key == "num_branches") as_size(cfg.net.num_branches);
        else if (key == "batch_size") as_size(cfg.train.batch_size);
        else if (key == "beta1") as_double(cfg.train.beta1);
        else if (key == "beta2") as_double(cfg.train.beta2);
        else if (key == "eps") as_double(cfg.train.eps);
        else if (key == "weight_decay") as_double(cfg.train.weight_decay);
        else if (key == "lr_init") as_double(cfg.train.lr_init);
        else if (key == "epochs") as_size(cfg.train.epochs);
        else if (key == "restart_period") as_size(cfg.train.restart_period);
        else if (key == "loss_alpha") as_double(cfg.train.loss_alpha);
        else if (key == "loss_quant_bits") {
            cfg.train.loss_quant_bits = std::stoi(value);
        } else if (key == "seed") {
            cfg.train.seed = uint32_t(std::stoul(value));
        } else if (key == "max_steps") as_size(cfg.train.max_steps);
        else if (key == "use_gradient_centralization")
            as_bool(cfg.train.use_gradient_centralization);
        else if (key == "use_lookahead") as_bool(cfg.train.use_lookahead);
        else if (key == "lookahead_k") as_size(cfg.train.lookahead_k);
        else if (key == "lookahead_alpha") as_double(cfg.train.lookahead_alpha);
        else
            throw ConfigError("config: unknown field '" + key + "'");
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("config: field '" + key + "' has invalid value '" + value + "'");
    }
}

ToolConfig load_config_file(const std::string& path) {
    ToolConfig cfg;
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                              " expected key=value");
        auto trim = [](std::string s) {
            auto a = s.find_first_not_of(" \t");
            auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        apply_config_field(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

json config_to_json(const ToolConfig& cfg) {
    json j;
    j["n_lambda"] = cfg.net.n_lambda;
    j["base_channels"] = cfg.net.base_channels;
    j["downsample_factor"] = cfg.net.downsample_factor;
    j["ra_blocks_per_branch"] = cfg.net.ra_blocks_per_branch;
    j["ra_inner_channels"] = cfg.net.ra_inner_channels;
    j["eca_kernel"] = cfg.net.eca_kernel;
    j["input_h"] = cfg.net.input_h;
    j["input_w"] = cfg.net.input_w;
    j["num_branches"] = cfg.net.num_branches;
    j["batch_size"] = cfg.train.batch_size;
    j["beta1"] = cfg.train.beta1;
    j["beta2"] = cfg.train.beta2;
    j["eps"] = cfg.train.eps;
    j["weight_decay"] = cfg.train.weight_decay;
    j["lr_init"] = cfg.train.lr_init;
    j["epochs"] = cfg.train.epochs;
    j["restart_period"] = cfg.train.restart_period;
    j["loss_alpha"] = cfg.train.loss_alpha;
    j["loss_quant_bits"] = cfg.train.loss_quant_bits;
    j["seed"] = cfg.train.seed;
    j["max_steps"] = cfg.train.max_steps;
    j["use_gradient_centralization"] = cfg.train.use_gradient_centralization;
    j["use_lookahead"] = cfg.train.use_lookahead;
    j["lookahead_k"] = cfg.train.lookahead_k;
    j["lookahead_alpha"] = cfg.train.lookahead_alpha;
    return j;
}

void config_from_json(ToolConfig& cfg, const json& j) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        std::string v;
        if (it->is_boolean())
            v = it->get<bool>() ? "true" : "false";
        else if (it->is_number_float()) {
            char buf[48];
            std::snprintf(buf, sizeof buf, "%.17g", it->get<double>());
            v = buf;
        } else
            v = it->dump();
        apply_config_field(cfg, it.key(), v);
    }
}

// --------------------------------------------------------------- run output

// Outputs are staged under <out>.part and renamed into place on success.
struct StagedOutput {
    fs::path final_dir;
    fs::path tmp_dir;
    bool committed = false;

    explicit StagedOutput(const std::string& out) : final_dir(out) {
        tmp_dir = final_dir;
        tmp_dir += ".part";
        fs::remove_all(tmp_dir);
        fs::create_directories(tmp_dir);
    }
    ~StagedOutput() {
        if (!committed) fs::remove_all(tmp_dir);
    }
    fs::path file(const std::string& name) const { return tmp_dir / name; }
    void commit() {
        fs::path old = final_dir;
        old += ".old";
        fs::remove_all(old);
        if (fs::exists(final_dir)) fs::rename(final_dir, old);
        fs::rename(tmp_dir, final_dir);
        fs::remove_all(old);
        committed = true;
    }
};

struct CommonOpts {
    uint32_t seed = 0;
    bool sequential = false;
    std::string config_file;
    std::string out;
};

json base_manifest(const std::string& subcommand, const CommonOpts& common,
                   const ToolConfig& cfg) {
    json m;
    m["subcommand"] = subcommand;
    m["version"] = kToolVersion;
    m["seed"] = common.seed;
    m["sequential"] = common.sequential;
    m["config"] = config_to_json(cfg);
    m["inputs"] = json::object();
    m["out"] = common.out;
    // A wall-clock timestamp would break byte-identical re-runs, so it is
    // recorded only outside sequential mode.
    if (common.sequential) {
        m["timestamp"] = "";
    } else {
        auto now = std::chrono::system_clock::now();
        auto t = std::chrono::system_clock::to_time_t(now);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
        m["timestamp"] = buf;
    }
    return m;
}

void write_manifest(const json& m, const fs::path& path) {
    std::ofstream os(path);
    os << m.dump(2) << "\n";
    if (!os) throw FormatError("manifest: write failed for " + path.string());
}

std::vector<fs::path> sorted_files(const std::string& dir, const std::string& ext) {
    if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir);
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

// ------------------------------------------------------------ reconstruction

// Mirror index i into [0, n): reflection without edge repetition, with
// wrap-around so arbitrarily large padding stays defined for tiny images.
size_t mirror_index(size_t i, size_t n) {
    if (n == 1) return 0;
    const size_t period = 2 * (n - 1);
    i %= period;
    return i < n ? i : period - i;
}

// The checkpoint fixes a native tile geometry; larger or non-divisible inputs
// are reflect-padded up to a tile multiple, processed tile by tile, and
// cropped back to the input extents.
Datacube tile_reconstruct(Ptnet<float>& model, const RgbImage& rgb,
                          const std::vector<float>& wavelengths) {
    const size_t tw = model.config().input_w, th = model.config().input_h;
    const size_t W = rgb.width, H = rgb.height, nl = model.config().n_lambda;
    const size_t tiles_x = (W + tw - 1) / tw, tiles_y = (H + th - 1) / th;
    Datacube out = make_cube(W, H, wavelengths, CubeLayout::LHW);
    for (size_t ty = 0; ty < tiles_y; ++ty)
        for (size_t tx = 0; tx < tiles_x; ++tx) {
            RgbImage tile = make_rgb(tw, th);
            for (size_t y = 0; y < th; ++y)
                for (size_t x = 0; x < tw; ++x) {
                    size_t sx = mirror_index(tx * tw + x, W);
                    size_t sy = mirror_index(ty * th + y, H);
                    for (size_t c = 0; c < 3; ++c) tile.at(x, y, c) = rgb.at(sx, sy, c);
                }
            auto pred = model.forward(rgb_to_tensor(tile), nullptr, /*train=*/false);
            for (size_t b = 0; b < nl; ++b)
                for (size_t y = 0; y < th && ty * th + y < H; ++y)
                    for (size_t x = 0; x < tw && tx * tw + x < W; ++x)
                        out.at(tx * tw + x, ty * th + y, b) =
                            std::clamp(pred.at({0, b, y, x}), 0.0f, 1.0f);
        }
    return out;
}

std::vector<float> default_wavelengths(size_t nl) {
    std::vector<float> wl(nl);
    for (size_t i = 0; i < nl; ++i) wl[i] = float(i);
    return wl;
}

// ---------------------------------------------------------------- calibrate

struct CalibrateArgs {
    std::string sweep_dir, lamp_csv, roi_spec;
    double dark_level = 0.0;
};

void run_calibrate(const CalibrateArgs& a, const CommonOpts& common, const ToolConfig& cfg) {
    if (!fs::exists(a.lamp_csv))
        throw ConfigError("lamp spectrum not found: " + a.lamp_csv);
    Roi roi;
    if (std::sscanf(a.roi_spec.c_str(), "%zu,%zu,%zu,%zu", &roi.x, &roi.y, &roi.width,
                    &roi.height) != 4)
        throw ConfigError("calibrate: --roi expects x,y,w,h, got '" + a.roi_spec + "'");

    auto lamp = read_lamp(a.lamp_csv);
    auto captures = load_sweep(a.sweep_dir);
    std::vector<float> grid;
    for (const auto& c : captures) grid.push_back(c.wavelength);
    std::sort(grid.begin(), grid.end());
    validate_sweep(captures, grid);

    std::vector<std::pair<float, std::array<float, 3>>> responses;
    size_t saturated_count = 0;
    for (const auto& cap : captures) {
        bool sat = false;
        responses.emplace_back(cap.wavelength,
                               extract_response(cap, roi, float(a.dark_level), &sat));
        if (sat) ++saturated_count;
    }
    std::sort(responses.begin(), responses.end(),
              [](const auto& x, const auto& y) { return x.first < y.first; });
    auto css = compensate_and_assemble(responses, lamp);

    StagedOutput out(common.out);
    write_css(css, out.file("css.csv").string());
    // per-channel curve table for plotting (same grid, one column per channel)
    {
        std::ofstream os(out.file("css_curves.csv"));
        os << "wavelength_nm,channel,sensitivity\n";
        char buf[96];
        for (size_t i = 0; i < css.bands(); ++i)
            for (size_t c = 0; c < 3; ++c) {
                std::snprintf(buf, sizeof buf, "%.9g,%c,%.9g\n", double(css.wavelengths[i]),
                              "RGB"[c], double(css.sensitivity[i][c]));
                os << buf;
            }
    }
    auto m = base_manifest("calibrate", common, cfg);
    m["inputs"]["sweep_dir"] = a.sweep_dir;
    m["inputs"]["lamp_csv"] = a.lamp_csv;
    m["inputs"]["roi"] = a.roi_spec;
    m["inputs"]["dark_level"] = a.dark_level;
    write_manifest(m, out.file("manifest.json"));
    out.commit();
    if (saturated_count)
        std::cerr << "warning: " << saturated_count << " captures have a saturated ROI\n";
    std::cout << "calibrate: wrote " << css.bands() << "-band sensitivity to " << common.out
              << "/css.csv\n";
}

// ----------------------------------------------------------------- simulate

struct SimulateArgs {
    std::string cube_dir, css_csv;
    size_t patch_w = 0, patch_h = 0;
};

void run_simulate(const SimulateArgs& a, const CommonOpts& common, const ToolConfig& cfg) {
    auto css = read_css(a.css_csv);
    auto files = sorted_files(a.cube_dir, ".hsc");
    if (files.empty()) throw ConfigError("simulate: no .hsc cubes in " + a.cube_dir);
    std::vector<Datacube> cubes;
    for (const auto& f : files) {
        auto cube = read_cube(f.string());
        if (cube.wavelengths != css.wavelengths)
            throw ConfigError("simulate: cube " + f.filename().string() +
                              " wavelength grid does not match the sensitivity grid");
        cubes.push_back(std::move(cube));
    }
    size_t pw = a.patch_w ? a.patch_w : cubes.front().width;
    size_t ph = a.patch_h ? a.patch_h : cubes.front().height;
    auto pairs = build_pair_set(cubes, css, pw, ph);

    StagedOutput out(common.out);
    write_pair_set(pairs, out.tmp_dir.string());
    auto m = base_manifest("simulate", common, cfg);
    m["inputs"]["cube_dir"] = a.cube_dir;
    m["inputs"]["css_csv"] = a.css_csv;
    m["inputs"]["patch_w"] = pw;
    m["inputs"]["patch_h"] = ph;
    write_manifest(m, out.file("manifest.json"));
    out.commit();
    std::cout << "simulate: wrote " << pairs.size() << " pairs to " << common.out << "\n";
}

// -------------------------------------------------------------------- train

struct TrainArgs {
    std::string pairs_dir, val_dir;
};

void run_train(const TrainArgs& a, const CommonOpts& common, ToolConfig cfg) {
    cfg.train.seed = common.seed;
    cfg.net.validate();
    cfg.train.validate();
    auto pairs = read_pair_set(a.pairs_dir);
    std::vector<PairSample> val;
    if (!a.val_dir.empty()) val = read_pair_set(a.val_dir);
    if (!pairs.empty()) {
        cfg.net.input_w = pairs.front().rgb.width;
        cfg.net.input_h = pairs.front().rgb.height;
        cfg.net.n_lambda = pairs.front().hsi.bands;
        cfg.net.validate();
    }

    Ptnet<float> model(cfg.net, cfg.train.seed);
    auto report = train(model, pairs, val, cfg.train);

    StagedOutput out(common.out);
    restore_weights(model, report.best_weights);
    save_weights(model, out.file("best.ptn").string());
    restore_weights(model, report.final_weights);
    save_weights(model, out.file("final.ptn").string());
    write_train_log(report, out.file("train_log.csv").string());
    auto m = base_manifest("train", common, cfg);
    m["inputs"]["pairs_dir"] = a.pairs_dir;
    m["inputs"]["val_dir"] = a.val_dir;
    m["inputs"]["config_file"] = common.config_file;
    write_manifest(m, out.file("manifest.json"));
    out.commit();
    std::cout << "train: " << report.total_steps << " steps, best val MRAE "
              << report.best_val_mrae << " at epoch " << report.best_epoch << ", outputs in "
              << common.out << "\n";
}

// -------------------------------------------------------------- reconstruct

struct ReconstructArgs {
    std::string checkpoint, input, css_csv;
};

void run_reconstruct(const ReconstructArgs& a, const CommonOpts& common, ToolConfig cfg) {
    if (!fs::exists(a.checkpoint))
        throw ConfigError("reconstruct: checkpoint not found: " + a.checkpoint);
    // the checkpoint is authoritative for the model geometry
    {
        std::ifstream is(a.checkpoint, std::ios::binary);
        char magic[4];
        if (!is.read(magic, 4) || std::string(magic, 4) != "PTN1")
            throw FormatError("checkpoint: bad magic in " + a.checkpoint);
        detail::read_u32(is, "version");
        cfg.net.n_lambda = detail::read_u32(is, "n_lambda");
        cfg.net.base_channels = detail::read_u32(is, "base_channels");
        cfg.net.downsample_factor = detail::read_u32(is, "downsample_factor");
        cfg.net.ra_blocks_per_branch = detail::read_u32(is, "ra_blocks_per_branch");
        cfg.net.ra_inner_channels = detail::read_u32(is, "ra_inner_channels");
        cfg.net.eca_kernel = detail::read_u32(is, "eca_kernel");
        cfg.net.input_h = detail::read_u32(is, "input_h");
        cfg.net.input_w = detail::read_u32(is, "input_w");
        cfg.net.num_branches = detail::read_u32(is, "num_branches");
    }
    auto model = load_weights<float>(a.checkpoint, cfg.net);

    RgbImage rgb;
    std::vector<float> wavelengths = default_wavelengths(cfg.net.n_lambda);
    if (fs::path(a.input).extension() == ".hsc") {
        auto cube = read_cube(a.input);
        if (a.css_csv.empty())
            throw ConfigError("reconstruct: cube input requires --css to synthesize RGB");
        rgb = simulate_rgb(cube, read_css(a.css_csv));
        if (cube.bands == cfg.net.n_lambda) wavelengths = cube.wavelengths;
    } else {
        rgb = read_png(a.input);
    }

    auto t0 = std::chrono::steady_clock::now();
    auto cube = tile_reconstruct(model, rgb, wavelengths);
    auto t1 = std::chrono::steady_clock::now();
    double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

    StagedOutput out(common.out);
    write_cube(cube, out.file("reconstructed.hsc").string());
    auto m = base_manifest("reconstruct", common, cfg);
    m["inputs"]["checkpoint"] = a.checkpoint;
    m["inputs"]["input"] = a.input;
    m["inputs"]["css_csv"] = a.css_csv;
    write_manifest(m, out.file("manifest.json"));
    out.commit();
    std::cout << "reconstruct: " << cube.width << "x" << cube.height << "x" << cube.bands
              << " cube in " << ms << " ms -> " << common.out << "/reconstructed.hsc\n";
}

// ----------------------------------------------------------------- evaluate

struct EvaluateArgs {
    std::string pred_dir, gt_dir;
    std::vector<size_t> map_bands;
    std::vector<std::string> trace_pixels;  // "x,y"
    double heatmap_max = 1.0;
};

void run_evaluate(const EvaluateArgs& a, const CommonOpts& common, const ToolConfig& cfg) {
    auto pred_files = sorted_files(a.pred_dir, ".hsc");
    auto gt_files = sorted_files(a.gt_dir, ".hsc");
    std::map<std::string, fs::path> preds, gts;
    for (const auto& f : pred_files) preds[f.filename().string()] = f;
    for (const auto& f : gt_files) gts[f.filename().string()] = f;
    std::string orphans;
    for (const auto& [name, p] : preds)
        if (!gts.count(name)) orphans += " " + name + " (prediction only)";
    for (const auto& [name, p] : gts)
        if (!preds.count(name)) orphans += " " + name + " (ground truth only)";
    if (!orphans.empty())
        throw ConfigError("evaluate: unpaired files:" + orphans);
    if (preds.empty()) throw ConfigError("evaluate: no .hsc cubes to compare");

    std::vector<Datacube> pred_cubes, gt_cubes;
    std::vector<std::string> names;
    for (const auto& [name, path] : preds) {
        pred_cubes.push_back(read_cube(path.string()));
        gt_cubes.push_back(read_cube(gts[name].string()));
        names.push_back(name);
    }
    auto report = evaluate_set(pred_cubes, gt_cubes, names);

    StagedOutput out(common.out);
    write_report_text(report, out.file("report.txt").string());
    write_report_csv(report, out.file("report.csv").string());
    for (size_t i = 0; i < names.size(); ++i) {
        auto stem = fs::path(names[i]).stem().string();
        for (size_t band : a.map_bands) {
            auto em = band_error_map(pred_cubes[i], gt_cubes[i], band);
            auto hm = render_heatmap(em, pred_cubes[i].width, pred_cubes[i].height,
                                     float(a.heatmap_max));
            char name[128];
            std::snprintf(name, sizeof name, "heatmap_%s_band%zu.png", stem.c_str(), band);
            write_png8(hm, out.file(name).string());
        }
        for (const auto& px : a.trace_pixels) {
            size_t x = 0, y = 0;
            if (std::sscanf(px.c_str(), "%zu,%zu", &x, &y) != 2)
                throw ConfigError("evaluate: --trace expects x,y, got '" + px + "'");
            char name[128];
            std::snprintf(name, sizeof name, "trace_%s_%zu_%zu_pred.csv", stem.c_str(), x, y);
            write_trace_csv(spectral_trace(pred_cubes[i], x, y), out.file(name).string());
            std::snprintf(name, sizeof name, "trace_%s_%zu_%zu_gt.csv", stem.c_str(), x, y);
            write_trace_csv(spectral_trace(gt_cubes[i], x, y), out.file(name).string());
        }
    }
    auto m = base_manifest("evaluate", common, cfg);
    m["inputs"]["pred_dir"] = a.pred_dir;
    m["inputs"]["gt_dir"] = a.gt_dir;
    m["inputs"]["map_bands"] = a.map_bands;
    m["inputs"]["trace_pixels"] = a.trace_pixels;
    m["inputs"]["heatmap_max"] = a.heatmap_max;
    write_manifest(m, out.file("manifest.json"));
    out.commit();
    std::printf("evaluate: %zu images, MRAE %.6f, RMSE %.6f -> %s\n", names.size(),
                report.aggregate_mrae, report.aggregate_rmse, common.out.c_str());
}

// ---------------------------------------------------------------- css-study

struct CssStudyArgs {
    std::string checkpoint, cube_dir;
    std::vector<std::string> css_files;
};

void run_css_study(const CssStudyArgs& a, const CommonOpts& common, ToolConfig cfg) {
    if (a.css_files.empty()) throw ConfigError("css-study: at least one --css file is required");
    if (!fs::exists(a.checkpoint))
        throw ConfigError("css-study: checkpoint not found: " + a.checkpoint);
    auto cube_files = sorted_files(a.cube_dir, ".hsc");
    if (cube_files.empty()) throw ConfigError("css-study: no .hsc cubes in " + a.cube_dir);
    std::vector<Datacube> cubes;
    for (const auto& f : cube_files) cubes.push_back(read_cube(f.string()));

    {
        std::ifstream is(a.checkpoint, std::ios::binary);
        char magic[4];
        if (!is.read(magic, 4) || std::string(magic, 4) != "PTN1")
            throw FormatError("checkpoint: bad magic in " + a.checkpoint);
        detail::read_u32(is, "version");
        cfg.net.n_lambda = detail::read_u32(is, "n_lambda");
        cfg.net.base_channels = detail::read_u32(is, "base_channels");
        cfg.net.downsample_factor = detail::read_u32(is, "downsample_factor");
        cfg.net.ra_blocks_per_branch = detail::read_u32(is, "ra_blocks_per_branch");
        cfg.net.ra_inner_channels = detail::read_u32(is, "ra_inner_channels");
        cfg.net.eca_kernel = detail::read_u32(is, "eca_kernel");
        cfg.net.input_h = detail::read_u32(is, "input_h");
        cfg.net.input_w = detail::read_u32(is, "input_w");
        cfg.net.num_branches = detail::read_u32(is, "num_branches");
    }
    auto model = load_weights<float>(a.checkpoint, cfg.net);

    StagedOutput out(common.out);
    std::ofstream table(out.file("study.csv"));
    table << "css,mrae,rmse\n";
    std::vector<std::string> summary;
    for (const auto& css_path : a.css_files) {
        auto css = read_css(css_path);
        auto resampled = css.wavelengths == cubes.front().wavelengths
                             ? css
                             : resample_css(css, cubes.front().wavelengths);
        std::vector<Datacube> preds, gts;
        std::vector<std::string> names;
        for (size_t i = 0; i < cubes.size(); ++i) {
            auto rgb = simulate_rgb(cubes[i], resampled);
            preds.push_back(tile_reconstruct(model, rgb, cubes[i].wavelengths));
            gts.push_back(transpose_cube(cubes[i], CubeLayout::LHW));
            names.push_back(cube_files[i].filename().string());
        }
        auto rep = evaluate_set(preds, gts, names);
        auto stem = fs::path(css_path).stem().string();
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g\n", stem.c_str(), rep.aggregate_mrae,
                      rep.aggregate_rmse);
        table << buf;
        summary.push_back(stem + ": MRAE " + std::to_string(rep.aggregate_mrae));
        auto em = band_error_map(preds[0], gts[0], 0);
        auto hm = render_heatmap(em, preds[0].width, preds[0].height);
        write_png8(hm, out.file("heatmap_" + stem + ".png").string());
    }
    table.close();
    auto m = base_manifest("css-study", common, cfg);
    m["inputs"]["checkpoint"] = a.checkpoint;
    m["inputs"]["cube_dir"] = a.cube_dir;
    m["inputs"]["css_files"] = a.css_files;
    write_manifest(m, out.file("manifest.json"));
    out.commit();
    std::cout << "css-study: " << a.css_files.size() << " sensitivities -> " << common.out
              << "/study.csv\n";
    for (const auto& s : summary) std::cout << "  " << s << "\n";
}

// -------------------------------------------------------------------- rerun

void dispatch_manifest(const json& m);

void run_rerun(const std::string& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw ConfigError("rerun: cannot open " + manifest_path);
    json m;
    try {
        is >> m;
    } catch (const std::exception& e) {
        throw FormatError("rerun: cannot parse " + manifest_path + ": " + e.what());
    }
    dispatch_manifest(m);
}

void dispatch_manifest(const json& m) {
    CommonOpts common;
    common.seed = m.at("seed").get<uint32_t>();
    common.sequential = m.at("sequential").get<bool>();
    common.out = m.at("out").get<std::string>();
    ToolConfig cfg;
    config_from_json(cfg, m.at("config"));
    const auto& in = m.at("inputs");
    auto sub = m.at("subcommand").get<std::string>();
    if (sub == "calibrate") {
        CalibrateArgs a;
        a.sweep_dir = in.at("sweep_dir");
        a.lamp_csv = in.at("lamp_csv");
        a.roi_spec = in.at("roi");
        a.dark_level = in.at("dark_level");
        run_calibrate(a, common, cfg);
    } else if (sub == "simulate") {
        SimulateArgs a;
        a.cube_dir = in.at("cube_dir");
        a.css_csv = in.at("css_csv");
        a.patch_w = in.at("patch_w");
        a.patch_h = in.at("patch_h");
        run_simulate(a, common, cfg);
    } else if (sub == "train") {
        TrainArgs a;
        a.pairs_dir = in.at("pairs_dir");
        a.val_dir = in.at("val_dir");
        run_train(a, common, cfg);
    } else if (sub == "reconstruct") {
        ReconstructArgs a;
        a.checkpoint = in.at("checkpoint");
        a.input = in.at("input");
        a.css_csv = in.at("css_csv");
        run_reconstruct(a, common, cfg);
    } else if (sub == "evaluate") {
        EvaluateArgs a;
        a.pred_dir = in.at("pred_dir");
        a.gt_dir = in.at("gt_dir");
        a.map_bands = in.at("map_bands").get<std::vector<size_t>>();
        a.trace_pixels = in.at("trace_pixels").get<std::vector<std::string>>();
        a.heatmap_max = in.at("heatmap_max");
        run_evaluate(a, common, cfg);
    } else if (sub == "css-study") {
        CssStudyArgs a;
        a.checkpoint = in.at("checkpoint");
        a.cube_dir = in.at("cube_dir");
        a.css_files = in.at("css_files").get<std::vector<std::string>>();
        run_css_study(a, common, cfg);
    } else {
        throw ConfigError("rerun: unknown subcommand '" + sub + "' in manifest");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hyperspectral reconstruction toolkit"};
    app.require_subcommand(1);

    CommonOpts common;
    CalibrateArgs cal;
    SimulateArgs sim;
    TrainArgs tr;
    ReconstructArgs rec;
    EvaluateArgs ev;
    CssStudyArgs study;
    std::string rerun_manifest;

    auto add_common = [&](CLI::App* sub, bool needs_out = true) {
        sub->add_option("--seed", common.seed, "Random seed");
        sub->add_flag("--sequential", common.sequential,
                      "Force bitwise-deterministic execution");
        sub->add_option("--config", common.config_file, "Key=value configuration file");
        if (needs_out) sub->add_option("--out", common.out, "Output directory")->required();
    };

    auto* c_cal = app.add_subcommand("calibrate", "Recover sensitivity curves from a sweep");
    c_cal->add_option("--sweep", cal.sweep_dir, "Sweep directory")->required();
    c_cal->add_option("--lamp", cal.lamp_csv, "Lamp spectrum CSV")->required();
    c_cal->add_option("--roi", cal.roi_spec, "Region of interest x,y,w,h")->required();
    c_cal->add_option("--dark", cal.dark_level, "Dark level to subtract");
    add_common(c_cal);

    auto* c_sim = app.add_subcommand("simulate", "Synthesize RGB/HSI training pairs");
    c_sim->add_option("--cubes", sim.cube_dir, "Directory of .hsc cubes")->required();
    c_sim->add_option("--css", sim.css_csv, "Sensitivity CSV")->required();
    c_sim->add_option("--patch-w", sim.patch_w, "Patch width (default: full image)");
    c_sim->add_option("--patch-h", sim.patch_h, "Patch height (default: full image)");
    add_common(c_sim);

    auto* c_tr = app.add_subcommand("train", "Train the reconstruction network");
    c_tr->add_option("--pairs", tr.pairs_dir, "Training pair-set directory")->required();
    c_tr->add_option("--val", tr.val_dir, "Validation pair-set directory");
    add_common(c_tr);

    auto* c_rec = app.add_subcommand("reconstruct", "Reconstruct a datacube from RGB");
    c_rec->add_option("--checkpoint", rec.checkpoint, "PTN1 checkpoint")->required();
    c_rec->add_option("--input", rec.input, "Input PNG image or .hsc cube")->required();
    c_rec->add_option("--css", rec.css_csv, "Sensitivity CSV (required for cube input)");
    add_common(c_rec);

    auto* c_ev = app.add_subcommand("evaluate", "Score predictions against ground truth");
    c_ev->add_option("--pred", ev.pred_dir, "Directory of predicted cubes")->required();
    c_ev->add_option("--gt", ev.gt_dir, "Directory of ground-truth cubes")->required();
    c_ev->add_option("--map-band", ev.map_bands, "Band index to render as a heatmap");
    c_ev->add_option("--trace", ev.trace_pixels, "Pixel x,y to dump spectral traces for");
    c_ev->add_option("--heatmap-max", ev.heatmap_max, "Error mapped to the top of the ramp");
    add_common(c_ev);

    auto* c_study = app.add_subcommand("css-study", "Compare reconstruction across sensitivities");
    c_study->add_option("--checkpoint", study.checkpoint, "PTN1 checkpoint")->required();
    c_study->add_option("--cubes", study.cube_dir, "Directory of ground-truth cubes")->required();
    c_study->add_option("--css", study.css_files, "Sensitivity CSV (repeatable)");
    add_common(c_study);

    auto* c_rerun = app.add_subcommand("rerun", "Replay a run from its manifest");
    c_rerun->add_option("manifest", rerun_manifest, "manifest.json of a previous run")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        ToolConfig cfg;
        if (!common.config_file.empty()) cfg = load_config_file(common.config_file);
        if (c_cal->parsed()) run_calibrate(cal, common, cfg);
        else if (c_sim->parsed()) run_simulate(sim, common, cfg);
        else if (c_tr->parsed()) run_train(tr, common, cfg);
        else if (c_rec->parsed()) run_reconstruct(rec, common, cfg);
        else if (c_ev->parsed()) run_evaluate(ev, common, cfg);
        else if (c_study->parsed()) run_css_study(study, common, cfg);
        else if (c_rerun->parsed()) run_rerun(rerun_manifest);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
