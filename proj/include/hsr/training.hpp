#pragma once

// Loss, optimizer, cosine learning-rate schedule with restarts, and the
// training loop over simulated RGB/HSI pairs.
//
// The bit-count distance of the loss is not differentiable; training uses the
// surrogate  alpha * log10(1 + (2^b - 1) * sum|p - gt|)  whose scaled L1 term
// upper-bounds the per-element quantization-code difference. The exact
// Hamming bit count is logged alongside every loss evaluation so the
// surrogate's fidelity stays observable.

#include <cstdint>
#include <string>
#include <vector>

#include "hsr/datacube.hpp"
#include "hsr/forward_model.hpp"
#include "hsr/ops.hpp"
#include "hsr/ptnet.hpp"

namespace hsr {

struct TrainConfig {
    size_t batch_size = 2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-3;
    double lr_init = 6e-4;
    size_t epochs = 300;
    size_t restart_period = 50;  // epochs per cosine cycle
    double loss_alpha = 1.0;
    int loss_quant_bits = 8;
    uint32_t seed = 0;
    size_t max_steps = 0;  // 0 = no cap; toy runs set a step budget
    bool use_gradient_centralization = true;
    bool use_lookahead = true;
    size_t lookahead_k = 5;
    double lookahead_alpha = 0.5;

    void validate() const {
        if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
        if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1))
            throw ConfigError("train config: betas must be in (0,1)");
        if (!(lr_init > 0)) throw ConfigError("train config: lr_init must be positive");
        if (!(loss_alpha > 0)) throw ConfigError("train config: loss_alpha must be positive");
        if (loss_quant_bits < 1 || loss_quant_bits > 16)
            throw ConfigError("train config: loss_quant_bits must be in [1,16]");
        if (restart_period < 1) throw ConfigError("train config: restart_period must be >= 1");
    }
};

// Exact quantized Hamming distance: each value is rounded to a b-bit code and
// differing bits are counted over all elements. Values are clamped to [0,1].
uint64_t hamming_bits(const std::vector<float>& p, const std::vector<float>& gt, int bits);
uint64_t hamming_metric(const Datacube& p, const Datacube& gt, int bits);

// Differentiable surrogate of the log-Hamming loss.
template <class T>
Tensor<T> training_loss(const Tensor<T>& p, const Tensor<T>& gt, T alpha, int bits,
                        Tape<T>* tape = nullptr) {
    if (p.shape() != gt.shape())
        throw DimensionError("training_loss: shape mismatch " + shape_str(p.shape()) + " vs " +
                             shape_str(gt.shape()));
    if (!(alpha > T(0))) throw ConfigError("training_loss: alpha must be positive");
    if (bits < 1 || bits > 16) throw ConfigError("training_loss: bits must be in [1,16]");
    const T k = T((1u << bits) - 1u);
    auto diff = ops::sub(p, gt, tape);
    auto l1 = ops::unary_map(
        diff, [](T v) { return std::abs(v); },
        [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); }, tape);
    auto s = ops::sum(l1, tape);
    const T ln10 = T(std::log(10.0));
    return ops::unary_map(
        s, [alpha, k](T v) { return alpha * std::log10(T(1) + k * v); },
        [alpha, k, ln10](T v) { return alpha * k / (ln10 * (T(1) + k * v)); }, tape);
}

// lr(t) = lr_init * (1 + cos(pi*t)) / 2 for cycle position t in [0,1].
double cosine_lr(double cycle_position, double lr_init);

// Adam with bias correction + decoupled weight decay + optional gradient
// centralization (per-filter mean subtraction on rank>=2 weights) + optional
// lookahead slow-weight synchronization.
template <class T>
class RangerOptimizer {
public:
    RangerOptimizer(nn::NamedParams<T> params, const TrainConfig& cfg)
        : params_(std::move(params)), cfg_(cfg) {
        for (auto& [name, t] : params_) {
            m_.emplace_back(t.numel(), T(0));
            v_.emplace_back(t.numel(), T(0));
            slow_.push_back(t.to_vector());
        }
    }

    size_t step_count() const { return t_; }

    void step(double lr) {
        ++t_;
        const T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
        const T bc1 = T(1) - T(std::pow(cfg_.beta1, double(t_)));
        const T bc2 = T(1) - T(std::pow(cfg_.beta2, double(t_)));
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            auto& [name, p] = params_[pi];
            if (!p.has_grad())
                throw StateError("optimizer: missing gradient for parameter " + name);
            std::vector<T> g = p.grad();
            if (cfg_.use_gradient_centralization && p.rank() >= 2) {
                // subtract the mean over each output filter
                size_t filters = p.size(0), per = p.numel() / filters;
                for (size_t f = 0; f < filters; ++f) {
                    T mean = T(0);
                    for (size_t i = 0; i < per; ++i) mean += g[f * per + i];
                    mean /= T(per);
                    for (size_t i = 0; i < per; ++i) g[f * per + i] -= mean;
                }
            }
            auto& st = p.storage();
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (size_t i = 0; i < st.size(); ++i) {
                m[i] = b1 * m[i] + (T(1) - b1) * g[i];
                v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
                T mhat = m[i] / bc1;
                T vhat = v[i] / bc2;
                st[i] -= T(lr) * mhat / (std::sqrt(vhat) + T(cfg_.eps));
                st[i] -= T(lr) * T(cfg_.weight_decay) * st[i];
            }
            if (cfg_.use_lookahead && t_ % cfg_.lookahead_k == 0) {
                auto& slow = slow_[pi];
                for (size_t i = 0; i < st.size(); ++i) {
                    slow[i] += T(cfg_.lookahead_alpha) * (st[i] - slow[i]);
                    st[i] = slow[i];
                }
            }
        }
    }

private:
    nn::NamedParams<T> params_;
    TrainConfig cfg_;
    std::vector<std::vector<T>> m_, v_, slow_;
    size_t t_ = 0;
};

struct EpochLogEntry {
    size_t epoch = 0;
    size_t step = 0;  // global optimizer step at epoch start
    double lr = 0.0;
    double loss = 0.0;       // mean loss over the epoch
    uint64_t hamming = 0;    // mean exact bit count over the epoch
    double val_mrae = 0.0;
    double val_rmse = 0.0;
};

using WeightSnapshot = std::vector<std::pair<std::string, std::vector<float>>>;

struct TrainReport {
    std::vector<EpochLogEntry> log;
    std::vector<double> step_losses;
    size_t total_steps = 0;
    size_t best_epoch = 0;
    double best_val_mrae = 0.0;
    WeightSnapshot best_weights;   // parameters + buffers at the best epoch
    WeightSnapshot final_weights;
};

// Tensor conversion helpers shared by training, reconstruction, and tests.
Tensor<float> rgb_to_tensor(const RgbImage& im);                 // [1,3,H,W]
Tensor<float> cube_to_tensor(const Datacube& cube);              // [1,nl,H,W]
Datacube tensor_to_cube(const Tensor<float>& t, const std::vector<float>& wavelengths);

WeightSnapshot snapshot_weights(Ptnet<float>& model);
void restore_weights(Ptnet<float>& model, const WeightSnapshot& snap);

// Runs shuffled mini-batch epochs, evaluates MRAE/RMSE on the validation set
// after each epoch, and snapshots the best-MRAE weights. Deterministic under
// a fixed seed. The model is left at its final weights.
TrainReport train(Ptnet<float>& model, const std::vector<PairSample>& pairs,
                  const std::vector<PairSample>& val_set, const TrainConfig& config);

void write_train_log(const TrainReport& report, const std::string& path);

}  // namespace hsr
