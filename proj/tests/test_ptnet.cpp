#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "gradcheck.hpp"
#include "hsr/ptnet.hpp"

using namespace hsr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("hsr_net_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

template <class T>
Tensor<T> random_input(const Shape& shape, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = T(d(rng));
    return Tensor<T>::from_vector(shape, std::move(v));
}

template <class T>
void zero_params(nn::Conv2dLayer<T>& layer) {
    for (auto& v : layer.weight.storage()) v = T(0);
    for (auto& v : layer.bias.storage()) v = T(0);
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

TEST_CASE("config validation") {
    PtnetConfig cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.eca_kernel = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.downsample_factor = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.input_h = 5;  // not divisible by factor 2
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.n_lambda = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("residual attention block with zeroed weights is the identity") {
    std::mt19937 rng(1);
    RaBlock<float> block(4, 3, rng);
    zero_params(block.conv1);
    zero_params(block.conv2);
    for (auto& v : block.eca.weight.storage()) v = 0.0f;
    auto x = random_input<float>({1, 4, 5, 5}, 2);
    auto y = block.forward(x, nullptr);
    CHECK(y.to_vector() == x.to_vector());
}

TEST_CASE("residual attention block preserves shape over a channel/extent sweep") {
    for (size_t c : {4u, 8u})
        for (size_t h : {6u, 10u})
            for (size_t w : {6u, 10u}) {
                std::mt19937 rng(unsigned(c * 100 + h * 10 + w));
                RaBlock<float> block(c, 3, rng);
                auto x = random_input<float>({2, c, h, w}, 3);
                auto y = block.forward(x, nullptr);
                CHECK(y.shape() == Shape{2, c, h, w});
            }
}

TEST_CASE("forward maps [1,3,16,16] to [1,n_lambda,16,16]") {
    PtnetConfig cfg;  // defaults: n_lambda 8, input 16x16
    Ptnet<float> model(cfg, 7);
    auto x = random_input<float>({1, 3, 16, 16}, 4);
    auto y = model.forward(x, nullptr, false);
    CHECK(y.shape() == Shape{1, 8, 16, 16});
    for (float v : y.to_vector()) CHECK(std::isfinite(v));
}

TEST_CASE("input validation names shape and geometry problems") {
    Ptnet<float> model(tiny_config(), 7);
    auto bad_rank = random_input<float>({3, 4, 4}, 5);
    CHECK_THROWS_AS(model.forward(bad_rank, nullptr, false), DimensionError);
    auto bad_channels = random_input<float>({1, 4, 4, 4}, 5);
    CHECK_THROWS_AS(model.forward(bad_channels, nullptr, false), DimensionError);
    auto wrong_geometry = random_input<float>({1, 3, 8, 8}, 5);
    CHECK_THROWS_WITH_AS(model.forward(wrong_geometry, nullptr, false),
                         doctest::Contains("8x8"), ConfigError);
}

TEST_CASE("zeroing the output block reduces the model to its stage-1 head") {
    Ptnet<float> model(tiny_config(), 11);
    zero_params(model.output_conv2());
    auto x = random_input<float>({1, 3, 4, 4}, 6);
    auto act = model.forward_detail(x, nullptr, false);
    CHECK(act.output.to_vector() == act.stage1.to_vector());
}

TEST_CASE("silencing one branch zeroes exactly its slice of the fused stack") {
    auto cfg = tiny_config();
    Ptnet<float> model(cfg, 13);
    zero_params(model.branches()[1].proj_out);
    auto x = random_input<float>({1, 3, 4, 4}, 7);
    auto act = model.forward_detail(x, nullptr, false);
    const size_t nl = cfg.n_lambda, hw = cfg.input_h * cfg.input_w;
    auto v = act.pre_batchnorm.to_vector();
    REQUIRE(v.size() == 3 * nl * hw);
    bool a_nonzero = false, c_nonzero = false;
    for (size_t i = 0; i < nl * hw; ++i) {
        if (v[i] != 0.0f) a_nonzero = true;
        CHECK(v[nl * hw + i] == 0.0f);
        if (v[2 * nl * hw + i] != 0.0f) c_nonzero = true;
    }
    CHECK(a_nonzero);
    CHECK(c_nonzero);
}

TEST_CASE("the three branches see transposed views of the same datacube") {
    auto cfg = tiny_config();
    Ptnet<float> model(cfg, 17);
    auto x = random_input<float>({1, 3, 4, 4}, 8);
    auto act = model.forward_detail(x, nullptr, false);
    CHECK(act.downsampled.shape() == Shape{1, 2, 2, 2});
    REQUIRE(act.branch_resized.size() == 3);
    for (const auto& b : act.branch_resized)
        CHECK(b.shape() == Shape{1, cfg.n_lambda, 4, 4});
}

TEST_CASE("every parameter receives gradient from a scalar loss") {
    Ptnet<double> model(tiny_config(), 19);
    auto x = random_input<double>({2, 3, 4, 4}, 9);
    Tape<double> tape;
    auto y = model.forward(x, &tape, true);
    auto loss = ops::sum(ops::unary_map(
        y, [](double v) { return v * v; }, [](double v) { return 2.0 * v; }, &tape), &tape);
    tape.backward(loss);
    for (auto& [name, p] : model.named_parameters()) {
        const auto& g = p.grad();
        REQUIRE_MESSAGE(g.size() == p.numel(), name);
        bool any = false;
        for (double v : g)
            if (v != 0.0) any = true;
        CHECK_MESSAGE(any, "no gradient reached " << name);
    }
}

TEST_CASE("parameter count matches a shape-sum oracle") {
    std::mt19937 rng(23);
    nn::Conv2dLayer<float> proj(3, 8, 1, 1, 0, rng);
    nn::NamedParams<float> ps;
    proj.collect("p", ps);
    size_t n = 0;
    for (auto& [name, t] : ps) n += t.numel();
    CHECK(n == 32);  // 8*3*1*1 weights + 8 biases

    Ptnet<float> model(tiny_config(), 29);
    size_t total = 0;
    for (auto& [name, t] : model.named_parameters()) {
        size_t e = 1;
        for (size_t d : t.shape()) e *= d;
        total += e;
    }
    CHECK(model.count_parameters() == total);
}

TEST_CASE("checkpoint round trip is bitwise and reproduces the forward pass") {
    TempDir dir;
    auto cfg = tiny_config();
    Ptnet<float> model(cfg, 31);
    // run one training pass so the running stats are non-trivial
    auto warm = random_input<float>({2, 3, 4, 4}, 10);
    model.forward(warm, nullptr, true);

    auto path = (dir.path / "model.ptn").string();
    save_weights(model, path);
    auto loaded = load_weights<float>(path, cfg);

    auto orig = model.named_parameters();
    auto back = loaded.named_parameters();
    REQUIRE(orig.size() == back.size());
    for (size_t i = 0; i < orig.size(); ++i) {
        CHECK(orig[i].first == back[i].first);
        CHECK(orig[i].second.to_vector() == back[i].second.to_vector());
    }
    auto ob = model.named_buffers();
    auto lb = loaded.named_buffers();
    for (size_t i = 0; i < ob.size(); ++i) CHECK(*ob[i].second == *lb[i].second);

    auto x = random_input<float>({1, 3, 4, 4}, 11);
    CHECK(model.forward(x, nullptr, false).to_vector() ==
          loaded.forward(x, nullptr, false).to_vector());
}

TEST_CASE("checkpoint config mismatch names the differing fields") {
    TempDir dir;
    auto cfg = tiny_config();
    Ptnet<float> model(cfg, 37);
    auto path = (dir.path / "model.ptn").string();
    save_weights(model, path);
    auto other = cfg;
    other.n_lambda = 4;
    CHECK_THROWS_WITH_AS(load_weights<float>(path, other), doctest::Contains("n_lambda"),
                         FormatError);
}

TEST_CASE("truncated and corrupt checkpoints are rejected") {
    TempDir dir;
    auto cfg = tiny_config();
    Ptnet<float> model(cfg, 41);
    auto path = (dir.path / "model.ptn").string();
    save_weights(model, path);
    auto size = fs::file_size(path);
    fs::resize_file(path, size / 2);
    CHECK_THROWS_AS(load_weights<float>(path, cfg), FormatError);

    auto bad = (dir.path / "bad.ptn").string();
    std::ofstream(bad) << "NOPE";
    CHECK_THROWS_WITH_AS(load_weights<float>(bad, cfg), doctest::Contains("magic"),
                         FormatError);
    CHECK_THROWS_AS(load_weights<float>((dir.path / "missing.ptn").string(), cfg),
                    FormatError);
}

TEST_CASE("whole-model gradients agree with finite differences") {
    Ptnet<double> model(tiny_config(), 43);
    auto x = random_input<double>({1, 3, 4, 4}, 12);
    std::vector<Tensor<double>> leaves;
    for (auto& [name, p] : model.named_parameters()) leaves.push_back(p);
    auto res = gradcheck::check(leaves, [&](Tape<double>* tape) {
        auto y = model.forward(x, tape, false);
        return ops::sum(ops::unary_map(
            y, [](double v) { return v * v; }, [](double v) { return 2.0 * v; }, tape), tape);
    });
    CHECK(res.checked > 500);
    CHECK(res.max_rel_error < 1e-4);
}
