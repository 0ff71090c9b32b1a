#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "gradcheck.hpp"
#include "hsr/metrics.hpp"
#include "hsr/training.hpp"

using namespace hsr;
namespace fs = std::filesystem;

namespace {

std::vector<float> grid(size_t bands) {
    std::vector<float> g(bands);
    for (size_t i = 0; i < bands; ++i) g[i] = 400.0f + 10.0f * float(i);
    return g;
}

std::vector<PairSample> toy_pairs(size_t count, size_t w, size_t h, size_t bands,
                                  unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> d(0.1f, 0.9f);
    std::vector<PairSample> pairs;
    for (size_t i = 0; i < count; ++i) {
        PairSample p;
        p.rgb = make_rgb(w, h);
        for (auto& v : p.rgb.values) v = d(rng);
        p.hsi = make_cube(w, h, grid(bands));
        for (auto& v : p.hsi.values) v = d(rng);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

PtnetConfig tiny_config() {
    PtnetConfig cfg;
    cfg.n_lambda = 2;
    cfg.base_channels = 4;
    cfg.downsample_factor = 2;
    cfg.ra_blocks_per_branch = 1;
    cfg.ra_inner_channels = 4;
    cfg.eca_kernel = 3;
    cfg.input_h = 4;
    cfg.input_w = 4;
    return cfg;
}

}  // namespace

TEST_CASE("hamming distance closed forms") {
    CHECK(hamming_bits({0.5f, 0.25f}, {0.5f, 0.25f}, 8) == 0);
    // 0 vs 1 with 8 bits: codes 0 and 255 differ in all 8 bits
    CHECK(hamming_bits({0.0f}, {1.0f}, 8) == 8);
    CHECK(hamming_bits({0.0f, 0.0f}, {1.0f, 1.0f}, 8) == 16);
    // clamping: out-of-range values behave as the nearest endpoint
    CHECK(hamming_bits({-3.0f}, {2.0f}, 8) == 8);
    CHECK(hamming_bits({0.0f}, {1.0f}, 4) == 4);
    CHECK_THROWS_AS(hamming_bits({0.0f}, {0.0f, 0.0f}, 8), DimensionError);
    CHECK_THROWS_AS(hamming_bits({0.0f}, {0.0f}, 0), ConfigError);
}

TEST_CASE("hamming distance matches an independent popcount oracle") {
    std::mt19937 rng(3);
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    std::vector<float> p(200), gt(200);
    for (auto& v : p) v = d(rng);
    for (auto& v : gt) v = d(rng);
    for (int bits : {4, 8, 12}) {
        uint64_t expect = 0;
        const double scale = double((1u << bits) - 1u);
        for (size_t i = 0; i < p.size(); ++i) {
            uint32_t a = uint32_t(std::lround(double(p[i]) * scale));
            uint32_t b = uint32_t(std::lround(double(gt[i]) * scale));
            expect += uint64_t(std::popcount(a ^ b));
        }
        CHECK(hamming_bits(p, gt, bits) == expect);
    }
}

TEST_CASE("hamming metric aligns cube layouts before comparing") {
    auto pairs = toy_pairs(1, 3, 2, 2, 5);
    auto& c = pairs[0].hsi;
    auto t = transpose_cube(c, CubeLayout::WHL);
    CHECK(hamming_metric(c, t, 8) == 0);
}

TEST_CASE("surrogate loss closed forms") {
    auto p = Tensor<float>::from_vector({2, 2}, {0.1f, 0.2f, 0.3f, 0.4f});
    CHECK(training_loss<float>(p, p, 1.0f, 8).value(0) == 0.0f);

    auto a = Tensor<float>::from_vector({1}, {1.0f});
    auto b = Tensor<float>::from_vector({1}, {0.0f});
    CHECK(training_loss<float>(a, b, 1.0f, 8).value(0) ==
          doctest::Approx(std::log10(256.0)).epsilon(1e-6));
    CHECK(training_loss<float>(a, b, 2.5f, 8).value(0) ==
          doctest::Approx(2.5 * std::log10(256.0)).epsilon(1e-6));

    auto c = Tensor<float>::from_vector({2}, {0.0f, 0.0f});
    CHECK_THROWS_AS(training_loss<float>(a, c, 1.0f, 8), DimensionError);
    CHECK_THROWS_AS(training_loss<float>(a, b, -1.0f, 8), ConfigError);
    CHECK_THROWS_AS(training_loss<float>(a, b, 1.0f, 17), ConfigError);
}

TEST_CASE("surrogate loss gradient agrees with finite differences") {
    // keep every |p - gt| away from zero so the kink is never crossed
    auto p = Tensor<double>::from_vector({2, 3}, {0.9, 0.8, 0.7, 0.1, 0.2, 0.15});
    auto gt = Tensor<double>::from_vector({2, 3}, {0.3, 0.2, 0.25, 0.6, 0.7, 0.65});
    auto res = gradcheck::check({p}, [&](Tape<double>* tape) {
        return training_loss<double>(p, gt, 1.3, 8, tape);
    });
    CHECK(res.checked == 6);
    CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("cosine schedule endpoints and midpoint") {
    CHECK(cosine_lr(0.0, 6e-4) == doctest::Approx(6e-4).epsilon(1e-12));
    CHECK(cosine_lr(1.0, 6e-4) == doctest::Approx(0.0).scale(1.0).epsilon(1e-18));
    CHECK(cosine_lr(0.5, 6e-4) == doctest::Approx(3e-4).epsilon(1e-12));
    CHECK(cosine_lr(0.25, 1.0) == doctest::Approx((1.0 + std::cos(M_PI * 0.25)) / 2.0));
    CHECK_THROWS_AS(cosine_lr(-0.1, 6e-4), ConfigError);
    CHECK_THROWS_AS(cosine_lr(1.1, 6e-4), ConfigError);
}

TEST_CASE("optimizer with zero gradients and no decay is a fixed point") {
    auto p = Tensor<float>::from_vector({4}, {0.1f, -0.2f, 0.3f, -0.4f});
    p.set_requires_grad(true);
    p.grad_ref();  // materialize an all-zero gradient
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    RangerOptimizer<float> opt({{"p", p}}, cfg);
    auto before = p.to_vector();
    for (int i = 0; i < 10; ++i) opt.step(1e-3);
    CHECK(p.to_vector() == before);
}

TEST_CASE("optimizer trace matches a hand-stepped reference over 100 steps") {
    auto p = Tensor<float>::from_vector({3}, {0.5f, -0.25f, 0.125f});
    p.set_requires_grad(true);
    TrainConfig cfg;
    cfg.use_gradient_centralization = false;  // rank-1 param: no effect anyway
    cfg.use_lookahead = false;
    RangerOptimizer<float> opt({{"p", p}}, cfg);

    std::vector<float> ref = {0.5f, -0.25f, 0.125f};
    std::vector<float> m(3, 0.0f), v(3, 0.0f);
    std::mt19937 rng(7);
    std::uniform_real_distribution<float> d(-1.0f, 1.0f);
    const float b1 = float(cfg.beta1), b2 = float(cfg.beta2);
    for (int t = 1; t <= 100; ++t) {
        std::array<float, 3> g;
        for (auto& x : g) x = d(rng);
        auto& grad = p.grad_ref();
        for (size_t i = 0; i < 3; ++i) grad[i] = g[i];
        double lr = cosine_lr(double(t - 1) / 100.0, cfg.lr_init);
        opt.step(lr);

        const float bc1 = 1.0f - float(std::pow(cfg.beta1, double(t)));
        const float bc2 = 1.0f - float(std::pow(cfg.beta2, double(t)));
        for (size_t i = 0; i < 3; ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * g[i];
            v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
            float mhat = m[i] / bc1;
            float vhat = v[i] / bc2;
            ref[i] -= float(lr) * mhat / (std::sqrt(vhat) + float(cfg.eps));
            ref[i] -= float(lr) * float(cfg.weight_decay) * ref[i];
        }
        auto cur = p.to_vector();
        for (size_t i = 0; i < 3; ++i) CHECK(std::abs(double(cur[i]) - double(ref[i])) <= 1e-9);
    }
}

TEST_CASE("decoupled decay shrinks weights by (1 - lr*wd) per step") {
    auto p = Tensor<float>::from_vector({2}, {1.0f, -2.0f});
    p.set_requires_grad(true);
    p.grad_ref();  // materialize an all-zero gradient
    TrainConfig cfg;
    cfg.weight_decay = 0.01;
    cfg.use_lookahead = false;
    RangerOptimizer<float> opt({{"p", p}}, cfg);
    const double lr = 0.1;
    for (int t = 0; t < 5; ++t) opt.step(lr);
    const float factor = std::pow(1.0f - float(lr) * 0.01f, 5.0f);
    auto cur = p.to_vector();
    CHECK(cur[0] == doctest::Approx(factor).epsilon(1e-6));
    CHECK(cur[1] == doctest::Approx(-2.0f * factor).epsilon(1e-6));
}

TEST_CASE("gradient centralization removes a constant per-filter gradient") {
    auto p = Tensor<float>::from_vector({2, 3}, {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f});
    p.set_requires_grad(true);
    auto& g = p.grad_ref();
    for (auto& v : g) v = 0.7f;  // constant over each filter -> centralized to zero
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    cfg.use_lookahead = false;
    RangerOptimizer<float> opt({{"p", p}}, cfg);
    auto before = p.to_vector();
    opt.step(1e-3);
    CHECK(p.to_vector() == before);
}

TEST_CASE("lookahead changes the trajectory only at the sync step") {
    auto make = [](bool la) {
        auto p = Tensor<float>::from_vector({2}, {0.4f, -0.6f});
        p.set_requires_grad(true);
        TrainConfig cfg;
        cfg.use_lookahead = la;
        cfg.use_gradient_centralization = false;
        return std::pair(p, RangerOptimizer<float>({{"p", p}}, cfg));
    };
    auto [pa, oa] = make(true);
    auto [pb, ob] = make(false);
    for (int t = 1; t <= 5; ++t) {
        for (auto* p : {&pa, &pb}) {
            auto& g = p->grad_ref();
            g[0] = 0.3f;
            g[1] = -0.2f;
        }
        oa.step(1e-2);
        ob.step(1e-2);
        if (t < 5)
            CHECK(pa.to_vector() == pb.to_vector());
        else
            CHECK(pa.to_vector() != pb.to_vector());
    }
    // at the sync step the lookahead weights are the halfway interpolation
    // between the start (slow) weights and the fast trajectory
    auto fast = pb.to_vector();
    auto synced = pa.to_vector();
    CHECK(synced[0] == doctest::Approx(0.4f + 0.5f * (fast[0] - 0.4f)).epsilon(1e-6));
    CHECK(synced[1] == doctest::Approx(-0.6f + 0.5f * (fast[1] + 0.6f)).epsilon(1e-6));
}

TEST_CASE("missing gradient is reported with the parameter path") {
    auto p = Tensor<float>::from_vector({2}, {0.1f, 0.2f});
    p.set_requires_grad(true);
    TrainConfig cfg;
    RangerOptimizer<float> opt({{"branch_a.proj_in.weight", p}}, cfg);
    CHECK_THROWS_WITH_AS(opt.step(1e-3), doctest::Contains("branch_a.proj_in.weight"),
                         StateError);
}

TEST_CASE("tensor conversions round trip images and cubes") {
    auto pairs = toy_pairs(1, 3, 2, 4, 13);
    auto t = rgb_to_tensor(pairs[0].rgb);
    CHECK(t.shape() == Shape{1, 3, 2, 3});
    for (size_t c = 0; c < 3; ++c)
        for (size_t y = 0; y < 2; ++y)
            for (size_t x = 0; x < 3; ++x)
                CHECK(t.at({0, c, y, x}) == pairs[0].rgb.at(x, y, c));

    auto ct = cube_to_tensor(pairs[0].hsi);
    CHECK(ct.shape() == Shape{1, 4, 2, 3});
    auto back = tensor_to_cube(ct, pairs[0].hsi.wavelengths);
    CHECK(back.values == pairs[0].hsi.values);
    CHECK(back.layout == CubeLayout::LHW);
}

TEST_CASE("training is deterministic under a fixed seed") {
    auto pairs = toy_pairs(4, 4, 4, 2, 17);
    auto val = toy_pairs(2, 4, 4, 2, 18);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.restart_period = 2;
    cfg.seed = 5;

    auto run = [&]() {
        Ptnet<float> model(tiny_config(), 3);
        auto rep = train(model, pairs, val, cfg);
        return std::pair(rep, snapshot_weights(model));
    };
    auto [r1, w1] = run();
    auto [r2, w2] = run();
    CHECK(r1.step_losses == r2.step_losses);
    REQUIRE(w1.size() == w2.size());
    for (size_t i = 0; i < w1.size(); ++i) CHECK(w1[i].second == w2[i].second);

    auto cfg2 = cfg;
    cfg2.seed = 6;
    Ptnet<float> m3(tiny_config(), 3);
    auto r3 = train(m3, pairs, val, cfg2);
    CHECK(r1.step_losses != r3.step_losses);
}

TEST_CASE("training tracks the best validation epoch and respects step budgets") {
    auto pairs = toy_pairs(4, 4, 4, 2, 19);
    auto val = toy_pairs(2, 4, 4, 2, 20);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.restart_period = 3;
    Ptnet<float> model(tiny_config(), 3);
    auto rep = train(model, pairs, val, cfg);
    CHECK(rep.log.size() == 3);
    CHECK(rep.total_steps == 6);  // 4 pairs / batch 2 = 2 steps per epoch
    double best = rep.log[rep.best_epoch].val_mrae;
    for (const auto& e : rep.log) CHECK(best <= e.val_mrae);
    CHECK(rep.best_val_mrae == best);
    CHECK_FALSE(rep.best_weights.empty());

    TrainConfig capped = cfg;
    capped.max_steps = 3;
    Ptnet<float> m2(tiny_config(), 3);
    auto rep2 = train(m2, pairs, val, capped);
    CHECK(rep2.total_steps == 3);
}

TEST_CASE("a non-finite loss aborts naming the step") {
    auto pairs = toy_pairs(2, 4, 4, 2, 21);
    Ptnet<float> model(tiny_config(), 3);
    auto params = model.named_parameters();
    params[0].second.storage()[0] = std::numeric_limits<float>::infinity();
    TrainConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_WITH_AS(train(model, pairs, {}, cfg), doctest::Contains("step 0"),
                         StateError);
}

TEST_CASE("training rejects bad inputs") {
    TrainConfig cfg;
    Ptnet<float> model(tiny_config(), 3);
    CHECK_THROWS_AS(train(model, {}, {}, cfg), ConfigError);
    TrainConfig bad;
    bad.lr_init = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.loss_quant_bits = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("train log csv has the documented header and one row per epoch") {
    auto pairs = toy_pairs(2, 4, 4, 2, 23);
    auto val = toy_pairs(1, 4, 4, 2, 24);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.restart_period = 2;
    Ptnet<float> model(tiny_config(), 3);
    auto rep = train(model, pairs, val, cfg);
    auto path = (fs::temp_directory_path() / "hsr_train_log_test.csv").string();
    write_train_log(rep, path);
    std::ifstream is(path);
    std::string line;
    REQUIRE(std::getline(is, line));
    CHECK(line == "epoch,step,lr,loss,hamming,val_mrae,val_rmse");
    size_t rows = 0;
    while (std::getline(is, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
    fs::remove(path);
}
