#pragma once

// The parallel-transposed reconstruction network. Three residual-attention
// branches process the downsampled stage-1 datacube under three dimension
// orderings (wavelength-, height-, and width-as-channel); their outputs are
// transposed back, resized, concatenated along the wavelength axis, and fused
// through batchnorm + an output block with the stage-1 datacube as a global
// residual.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hsr/nn.hpp"

namespace hsr {

struct PtnetConfig {
    size_t n_lambda = 8;
    size_t base_channels = 32;
    size_t downsample_factor = 2;
    size_t ra_blocks_per_branch = 1;
    size_t ra_inner_channels = 64;
    size_t eca_kernel = 3;
    // Geometry the model is built for: the transposed branches project H/f and
    // W/f channel counts, so the weights are tied to one patch size. Larger
    // inputs are handled by tiling at the CLI level.
    size_t input_h = 16;
    size_t input_w = 16;
    // 3 = full parallel-transposed model; smaller values keep only the first
    // branches (used for ablation studies).
    size_t num_branches = 3;

    void validate() const {
        if (n_lambda == 0 || base_channels == 0 || ra_blocks_per_branch == 0 ||
            ra_inner_channels == 0 || input_h == 0 || input_w == 0)
            throw ConfigError("ptnet config: all counts must be positive");
        if (num_branches < 1 || num_branches > 3)
            throw ConfigError("ptnet config: num_branches must be 1, 2 or 3");
        if (eca_kernel % 2 == 0) throw ConfigError("ptnet config: eca_kernel must be odd");
        if (downsample_factor != 1 && downsample_factor != 2 && downsample_factor != 4)
            throw ConfigError("ptnet config: downsample_factor must be 1, 2 or 4");
        if (input_h % downsample_factor || input_w % downsample_factor)
            throw ConfigError("ptnet config: input extents must be divisible by downsample_factor");
    }

    bool operator==(const PtnetConfig&) const = default;
};

template <class T>
struct RaBlock {
    nn::Conv2dLayer<T> conv1, conv2;
    nn::Conv1dLayer<T> eca;

    RaBlock() = default;
    RaBlock(size_t channels, size_t eca_kernel, std::mt19937& rng)
        : conv1(channels, channels, 3, 1, 1, rng),
          conv2(channels, channels, 3, 1, 1, rng),
          eca(eca_kernel, rng) {}

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
        auto h = conv2.forward(ops::relu(conv1.forward(x, tape), tape), tape);
        const size_t N = h.size(0), C = h.size(1);
        auto desc = ops::reshape(ops::global_avg_pool(h, tape), {N, 1, C}, tape);
        auto gate = ops::reshape(ops::sigmoid(eca.forward(desc, tape), tape), {N, C, 1, 1}, tape);
        return ops::add(ops::channel_scale(h, gate, tape), x, tape);
    }

    void collect(const std::string& prefix, nn::NamedParams<T>& out) {
        conv1.collect(prefix + ".conv1", out);
        conv2.collect(prefix + ".conv2", out);
        eca.collect(prefix + ".eca", out);
    }
};

template <class T>
struct PtnetBranch {
    std::vector<size_t> perm;      // applied to the downsampled datacube
    std::vector<size_t> inv_perm;  // restores wavelength-as-channel
    nn::Conv2dLayer<T> proj_in;    // native channels -> ra_inner_channels
    std::vector<RaBlock<T>> blocks;
    nn::Conv2dLayer<T> proj_out;  // ra_inner_channels -> native channels

    PtnetBranch() = default;
    PtnetBranch(std::vector<size_t> perm_, std::vector<size_t> inv_, size_t native_channels,
                const PtnetConfig& cfg, std::mt19937& rng)
        : perm(std::move(perm_)),
          inv_perm(std::move(inv_)),
          proj_in(native_channels, cfg.ra_inner_channels, 1, 1, 0, rng),
          proj_out(cfg.ra_inner_channels, native_channels, 1, 1, 0, rng) {
        for (size_t i = 0; i < cfg.ra_blocks_per_branch; ++i)
            blocks.emplace_back(cfg.ra_inner_channels, cfg.eca_kernel, rng);
    }

    Tensor<T> forward(const Tensor<T>& down, Tape<T>* tape) const {
        auto t = ops::permute(down, perm, tape);
        t = proj_in.forward(t, tape);
        for (const auto& b : blocks) t = b.forward(t, tape);
        t = proj_out.forward(t, tape);
        return ops::permute(t, inv_perm, tape);
    }

    void collect(const std::string& prefix, nn::NamedParams<T>& out) {
        proj_in.collect(prefix + ".proj_in", out);
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect(prefix + ".ra" + std::to_string(i), out);
        proj_out.collect(prefix + ".proj_out", out);
    }
};

// Intermediate activations exposed for ablation and branch-independence tests.
template <class T>
struct PtnetActivations {
    Tensor<T> stage1;       // D, [N, n_lambda, H, W]
    Tensor<T> downsampled;  // [N, n_lambda, H/f, W/f]
    std::vector<Tensor<T>> branch_resized;
    Tensor<T> pre_batchnorm;  // concat of the three branches
    Tensor<T> output;
};

template <class T>
class Ptnet {
public:
    Ptnet(const PtnetConfig& cfg, uint32_t seed) : cfg_(cfg) {
        cfg.validate();
        std::mt19937 rng(seed);
        const size_t nl = cfg.n_lambda, f = cfg.downsample_factor;
        expand_ = nn::Conv2dLayer<T>(3, cfg.base_channels, 3, 1, 1, rng);
        project_ = nn::Conv2dLayer<T>(cfg.base_channels, nl, 3, 1, 1, rng);
        down_ = nn::Conv2dLayer<T>(nl, nl, 3, 1, 1, rng);
        branches_.emplace_back(std::vector<size_t>{0, 1, 2, 3}, std::vector<size_t>{0, 1, 2, 3},
                               nl, cfg, rng);
        if (cfg.num_branches >= 2)
            branches_.emplace_back(std::vector<size_t>{0, 2, 1, 3},
                                   std::vector<size_t>{0, 2, 1, 3}, cfg.input_h / f, cfg, rng);
        if (cfg.num_branches >= 3)
            branches_.emplace_back(std::vector<size_t>{0, 3, 2, 1},
                                   std::vector<size_t>{0, 3, 2, 1}, cfg.input_w / f, cfg, rng);
        bn_ = nn::BatchNormLayer<T>(cfg.num_branches * nl);
        out1_ = nn::Conv2dLayer<T>(cfg.num_branches * nl, cfg.base_channels, 3, 1, 1, rng);
        out2_ = nn::Conv2dLayer<T>(cfg.base_channels, nl, 3, 1, 1, rng);
    }

    const PtnetConfig& config() const { return cfg_; }

    PtnetActivations<T> forward_detail(const Tensor<T>& rgb, Tape<T>* tape, bool train) {
        if (rgb.rank() != 4 || rgb.size(1) != 3)
            throw DimensionError("ptnet: expected input [N,3,H,W], got " + shape_str(rgb.shape()));
        const size_t H = rgb.size(2), W = rgb.size(3);
        if (H != cfg_.input_h || W != cfg_.input_w)
            throw ConfigError("ptnet: input extents " + std::to_string(W) + "x" +
                              std::to_string(H) + " do not match model geometry " +
                              std::to_string(cfg_.input_w) + "x" + std::to_string(cfg_.input_h));
        PtnetActivations<T> act;
        // Stage 1: channel expansion, projection to n_lambda, then downsampling.
        act.stage1 = project_.forward(ops::relu(expand_.forward(rgb, tape), tape), tape);
        act.downsampled =
            ops::decimate(down_.forward(act.stage1, tape), cfg_.downsample_factor, tape);
        // Stage 2/3: parallel branches, un-transpose, resize, concatenate.
        for (const auto& br : branches_) {
            auto t = br.forward(act.downsampled, tape);
            act.branch_resized.push_back(ops::bilinear_resize(t, H, W, tape));
        }
        act.pre_batchnorm = ops::concat(act.branch_resized, 1, tape);
        auto fused = bn_.forward(act.pre_batchnorm, tape, train);
        auto y = out2_.forward(ops::relu(out1_.forward(fused, tape), tape), tape);
        act.output = ops::add(y, act.stage1, tape);
        return act;
    }

    Tensor<T> forward(const Tensor<T>& rgb, Tape<T>* tape, bool train) {
        return forward_detail(rgb, tape, train).output;
    }

    nn::NamedParams<T> named_parameters() {
        nn::NamedParams<T> out;
        expand_.collect("stage1.expand", out);
        project_.collect("stage1.project", out);
        down_.collect("stage1.down", out);
        static const char* names[3] = {"branch_a", "branch_b", "branch_c"};
        for (size_t i = 0; i < branches_.size(); ++i) branches_[i].collect(names[i], out);
        bn_.collect("fuse.bn", out);
        out1_.collect("out.conv1", out);
        out2_.collect("out.conv2", out);
        return out;
    }

    nn::NamedBuffers<T> named_buffers() {
        nn::NamedBuffers<T> out;
        bn_.collect_buffers("fuse.bn", out);
        return out;
    }

    size_t count_parameters() {
        size_t n = 0;
        for (auto& [name, t] : named_parameters()) n += t.numel();
        return n;
    }

    nn::BatchNormLayer<T>& batchnorm() { return bn_; }
    std::vector<PtnetBranch<T>>& branches() { return branches_; }
    nn::Conv2dLayer<T>& output_conv1() { return out1_; }
    nn::Conv2dLayer<T>& output_conv2() { return out2_; }

private:
    PtnetConfig cfg_;
    nn::Conv2dLayer<T> expand_, project_, down_;
    std::vector<PtnetBranch<T>> branches_;
    nn::BatchNormLayer<T> bn_;
    nn::Conv2dLayer<T> out1_, out2_;
};

// ------------------------------------------------------------- checkpoint I/O
// Format "PTN1": magic, u32 version, the config block, then length-prefixed
// named records (path string, shape, float32 values), little-endian.

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                          (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(std::string("checkpoint: truncated file reading ") + what);
    return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
           (uint32_t(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32(os, u);
}

inline float read_f32(std::istream& is, const char* what) {
    uint32_t u = read_u32(is, what);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

}  // namespace detail

template <class T>
void save_weights(Ptnet<T>& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("checkpoint: cannot open " + path + " for writing");
    os.write("PTN1", 4);
    detail::write_u32(os, 1);
    const auto& c = model.config();
    for (size_t v : {c.n_lambda, c.base_channels, c.downsample_factor, c.ra_blocks_per_branch,
                     c.ra_inner_channels, c.eca_kernel, c.input_h, c.input_w, c.num_branches})
        detail::write_u32(os, uint32_t(v));
    auto params = model.named_parameters();
    auto buffers = model.named_buffers();
    detail::write_u32(os, uint32_t(params.size() + buffers.size()));
    auto write_record = [&](const std::string& name, const Shape& shape,
                            const std::vector<T>& data) {
        detail::write_u32(os, uint32_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        detail::write_u32(os, uint32_t(shape.size()));
        for (size_t d : shape) detail::write_u32(os, uint32_t(d));
        for (T v : data) detail::write_f32(os, float(v));
    };
    for (auto& [name, t] : params) write_record(name, t.shape(), t.to_vector());
    for (auto& [name, buf] : buffers) write_record(name, {buf->size()}, *buf);
    if (!os) throw FormatError("checkpoint: write failed for " + path);
}

template <class T>
Ptnet<T> load_weights(const std::string& path, const PtnetConfig& config) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("checkpoint: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "PTN1")
        throw FormatError("checkpoint: bad magic in " + path);
    uint32_t version = detail::read_u32(is, "version");
    if (version != 1) throw FormatError("checkpoint: unsupported version");
    PtnetConfig file_cfg;
    file_cfg.n_lambda = detail::read_u32(is, "n_lambda");
    file_cfg.base_channels = detail::read_u32(is, "base_channels");
    file_cfg.downsample_factor = detail::read_u32(is, "downsample_factor");
    file_cfg.ra_blocks_per_branch = detail::read_u32(is, "ra_blocks_per_branch");
    file_cfg.ra_inner_channels = detail::read_u32(is, "ra_inner_channels");
    file_cfg.eca_kernel = detail::read_u32(is, "eca_kernel");
    file_cfg.input_h = detail::read_u32(is, "input_h");
    file_cfg.input_w = detail::read_u32(is, "input_w");
    file_cfg.num_branches = detail::read_u32(is, "num_branches");
    if (!(file_cfg == config)) {
        std::ostringstream os;
        os << "checkpoint: config mismatch:";
        auto diff = [&](const char* f, size_t a, size_t b) {
            if (a != b) os << " " << f << " file=" << a << " expected=" << b;
        };
        diff("n_lambda", file_cfg.n_lambda, config.n_lambda);
        diff("base_channels", file_cfg.base_channels, config.base_channels);
        diff("downsample_factor", file_cfg.downsample_factor, config.downsample_factor);
        diff("ra_blocks_per_branch", file_cfg.ra_blocks_per_branch, config.ra_blocks_per_branch);
        diff("ra_inner_channels", file_cfg.ra_inner_channels, config.ra_inner_channels);
        diff("eca_kernel", file_cfg.eca_kernel, config.eca_kernel);
        diff("input_h", file_cfg.input_h, config.input_h);
        diff("input_w", file_cfg.input_w, config.input_w);
        diff("num_branches", file_cfg.num_branches, config.num_branches);
        throw FormatError(os.str());
    }
    Ptnet<T> model(config, 0);
    auto params = model.named_parameters();
    auto buffers = model.named_buffers();
    uint32_t count = detail::read_u32(is, "record count");
    if (count != params.size() + buffers.size())
        throw FormatError("checkpoint: record count mismatch");
    for (uint32_t r = 0; r < count; ++r) {
        uint32_t name_len = detail::read_u32(is, "name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw FormatError("checkpoint: truncated name");
        uint32_t rank = detail::read_u32(is, "rank");
        Shape shape(rank);
        size_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = detail::read_u32(is, "dim");
            numel *= shape[d];
        }
        std::vector<T> data(numel);
        for (size_t i = 0; i < numel; ++i) data[i] = T(detail::read_f32(is, name.c_str()));
        bool found = false;
        for (auto& [pname, t] : params) {
            if (pname != name) continue;
            if (t.shape() != shape)
                throw FormatError("checkpoint: shape mismatch for " + name);
            auto& st = t.storage();
            for (size_t i = 0; i < numel; ++i) st[i] = data[i];
            found = true;
            break;
        }
        if (!found) {
            for (auto& [bname, buf] : buffers) {
                if (bname != name) continue;
                if (buf->size() != numel)
                    throw FormatError("checkpoint: shape mismatch for " + name);
                *buf = std::move(data);
                found = true;
                break;
            }
        }
        if (!found) throw FormatError("checkpoint: unknown record " + name);
    }
    return model;
}

}  // namespace hsr
