#include "hsr/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "hsr/metrics.hpp"

namespace hsr {

uint64_t hamming_bits(const std::vector<float>& p, const std::vector<float>& gt, int bits) {
    if (p.size() != gt.size()) throw DimensionError("hamming_bits: size mismatch");
    if (bits < 1 || bits > 16) throw ConfigError("hamming_bits: bits must be in [1,16]");
    const double scale = double((1u << bits) - 1u);
    uint64_t total = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        uint32_t a = uint32_t(std::lround(std::clamp(double(p[i]), 0.0, 1.0) * scale));
        uint32_t b = uint32_t(std::lround(std::clamp(double(gt[i]), 0.0, 1.0) * scale));
        total += uint64_t(std::popcount(a ^ b));
    }
    return total;
}

uint64_t hamming_metric(const Datacube& p, const Datacube& gt, int bits) {
    if (p.width != gt.width || p.height != gt.height || p.bands != gt.bands)
        throw DimensionError("hamming_metric: shape mismatch");
    const Datacube& gt_aligned =
        gt.layout == p.layout ? gt : transpose_cube(gt, p.layout);
    return hamming_bits(p.values, gt_aligned.values, bits);
}

double cosine_lr(double t, double lr_init) {
    if (t < 0.0 || t > 1.0)
        throw ConfigError("cosine_lr: cycle position must lie in [0,1]");
    return lr_init * (1.0 + std::cos(M_PI * t)) / 2.0;
}

Tensor<float> rgb_to_tensor(const RgbImage& im) {
    std::vector<float> data(im.width * im.height * 3);
    for (size_t c = 0; c < 3; ++c)
        for (size_t y = 0; y < im.height; ++y)
            for (size_t x = 0; x < im.width; ++x)
                data[(c * im.height + y) * im.width + x] = im.at(x, y, c);
    return Tensor<float>::from_vector({1, 3, im.height, im.width}, std::move(data));
}

Tensor<float> cube_to_tensor(const Datacube& cube) {
    const Datacube& c =
        cube.layout == CubeLayout::LHW ? cube : transpose_cube(cube, CubeLayout::LHW);
    return Tensor<float>::from_vector({1, c.bands, c.height, c.width}, c.values);
}

Datacube tensor_to_cube(const Tensor<float>& t, const std::vector<float>& wavelengths) {
    if (t.rank() != 4 || t.size(0) != 1 || t.size(1) != wavelengths.size())
        throw DimensionError("tensor_to_cube: expected [1,n_lambda,H,W]");
    Datacube c = make_cube(t.size(3), t.size(2), wavelengths, CubeLayout::LHW);
    c.values = t.to_vector();
    return c;
}

WeightSnapshot snapshot_weights(Ptnet<float>& model) {
    WeightSnapshot snap;
    for (auto& [name, t] : model.named_parameters()) snap.emplace_back(name, t.to_vector());
    for (auto& [name, buf] : model.named_buffers()) snap.emplace_back(name, *buf);
    return snap;
}

void restore_weights(Ptnet<float>& model, const WeightSnapshot& snap) {
    auto params = model.named_parameters();
    auto buffers = model.named_buffers();
    for (const auto& [name, data] : snap) {
        bool found = false;
        for (auto& [pname, t] : params) {
            if (pname != name) continue;
            if (t.numel() != data.size()) throw StateError("restore_weights: size mismatch");
            t.storage() = data;
            found = true;
            break;
        }
        if (!found)
            for (auto& [bname, buf] : buffers) {
                if (bname != name) continue;
                *buf = data;
                found = true;
                break;
            }
        if (!found) throw StateError("restore_weights: unknown entry " + name);
    }
}

namespace {

// Stack samples into one batch tensor pair ([B,3,H,W], [B,nl,H,W]).
std::pair<Tensor<float>, Tensor<float>> make_batch(const std::vector<PairSample>& pairs,
                                                   const std::vector<size_t>& idx, size_t begin,
                                                   size_t count) {
    const auto& first = pairs[idx[begin]];
    const size_t H = first.rgb.height, W = first.rgb.width, nl = first.hsi.bands;
    std::vector<float> rgb(count * 3 * H * W), hsi(count * nl * H * W);
    for (size_t s = 0; s < count; ++s) {
        const auto& p = pairs[idx[begin + s]];
        if (p.rgb.height != H || p.rgb.width != W || p.hsi.bands != nl)
            throw DimensionError("train: pair set has inconsistent patch shapes");
        for (size_t c = 0; c < 3; ++c)
            for (size_t y = 0; y < H; ++y)
                for (size_t x = 0; x < W; ++x)
                    rgb[((s * 3 + c) * H + y) * W + x] = p.rgb.at(x, y, c);
        auto t = cube_to_tensor(p.hsi);
        std::copy(t.storage().begin(), t.storage().end(), hsi.begin() + s * nl * H * W);
    }
    return {Tensor<float>::from_vector({count, 3, H, W}, std::move(rgb)),
            Tensor<float>::from_vector({count, nl, H, W}, std::move(hsi))};
}

}  // namespace

TrainReport train(Ptnet<float>& model, const std::vector<PairSample>& pairs,
                  const std::vector<PairSample>& val_set, const TrainConfig& config) {
    config.validate();
    if (pairs.empty()) throw ConfigError("train: empty training set");
    for (const auto& p : pairs)
        if (p.rgb.width != p.hsi.width || p.rgb.height != p.hsi.height)
            throw ConfigError("train: misaligned RGB/HSI pair");

    TrainReport report;
    RangerOptimizer<float> opt(model.named_parameters(), config);
    std::mt19937 rng(config.seed);
    std::vector<size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);

    const size_t steps_per_epoch = (pairs.size() + config.batch_size - 1) / config.batch_size;
    const size_t cycle_steps = config.restart_period * steps_per_epoch;
    size_t global_step = 0;
    bool budget_hit = false;

    auto validate_now = [&]() -> std::pair<double, double> {
        if (val_set.empty()) return {0.0, 0.0};
        std::vector<Datacube> preds, gts;
        std::vector<std::string> names;
        for (size_t i = 0; i < val_set.size(); ++i) {
            auto x = rgb_to_tensor(val_set[i].rgb);
            auto y = model.forward(x, nullptr, /*train=*/false);
            preds.push_back(tensor_to_cube(y, val_set[i].hsi.wavelengths));
            gts.push_back(transpose_cube(val_set[i].hsi, CubeLayout::LHW));
            names.push_back("val_" + std::to_string(i));
        }
        auto rep = evaluate_set(preds, gts, names);
        return {rep.aggregate_mrae, rep.aggregate_rmse};
    };

    for (size_t epoch = 0; epoch < config.epochs && !budget_hit; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        EpochLogEntry entry;
        entry.epoch = epoch;
        entry.step = global_step;
        entry.lr = cosine_lr(double(global_step % cycle_steps) / double(cycle_steps),
                             config.lr_init);
        double loss_acc = 0.0;
        uint64_t ham_acc = 0;
        size_t batches = 0;
        for (size_t b = 0; b < pairs.size(); b += config.batch_size) {
            size_t count = std::min(config.batch_size, pairs.size() - b);
            auto [x, gt] = make_batch(pairs, order, b, count);
            double lr = cosine_lr(double(global_step % cycle_steps) / double(cycle_steps),
                                  config.lr_init);
            Tape<float> tape;
            auto pred = model.forward(x, &tape, /*train=*/true);
            auto loss = training_loss<float>(pred, gt, float(config.loss_alpha),
                                             config.loss_quant_bits, &tape);
            double lv = double(loss.value(0));
            if (!std::isfinite(lv))
                throw StateError("train: non-finite loss at step " +
                                 std::to_string(global_step));
            ham_acc += hamming_bits(pred.to_vector(), gt.to_vector(), config.loss_quant_bits);
            tape.backward(loss);
            opt.step(lr);
            for (auto& [name, t] : model.named_parameters()) t.zero_grad();
            loss_acc += lv;
            report.step_losses.push_back(lv);
            ++batches;
            ++global_step;
            if (config.max_steps && global_step >= config.max_steps) {
                budget_hit = true;
                break;
            }
        }
        entry.loss = loss_acc / double(batches);
        entry.hamming = ham_acc / batches;
        auto [vm, vr] = validate_now();
        entry.val_mrae = vm;
        entry.val_rmse = vr;
        report.log.push_back(entry);
        if (!val_set.empty() &&
            (report.best_weights.empty() || vm < report.best_val_mrae)) {
            report.best_val_mrae = vm;
            report.best_epoch = epoch;
            report.best_weights = snapshot_weights(model);
        }
    }
    report.total_steps = global_step;
    report.final_weights = snapshot_weights(model);
    if (report.best_weights.empty()) {
        report.best_weights = report.final_weights;
        report.best_epoch = report.log.empty() ? 0 : report.log.back().epoch;
    }
    return report;
}

void write_train_log(const TrainReport& report, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw FormatError("train log: cannot open " + path + " for writing");
    os << "epoch,step,lr,loss,hamming,val_mrae,val_rmse\n";
    char buf[160];
    for (const auto& e : report.log) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%llu,%.9g,%.9g\n", e.epoch, e.step,
                      e.lr, e.loss, (unsigned long long)e.hamming, e.val_mrae, e.val_rmse);
        os << buf;
    }
}

}  // namespace hsr
