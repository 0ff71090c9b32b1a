#pragma once

// Thin layer wrappers over the op kernels: they own parameters, expose them
// under stable path names, and forward through ops with an optional tape.
// Conv weights use Kaiming fan-in initialization, biases start at zero,
// batchnorm starts at gamma=1 / beta=0.

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hsr/ops.hpp"

namespace hsr::nn {

template <class T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <class T>
using NamedBuffers = std::vector<std::pair<std::string, std::vector<T>*>>;

template <class T>
Tensor<T> kaiming_conv_weight(const Shape& shape, std::mt19937& rng) {
    size_t fan_in = 1;
    for (size_t d = 1; d < shape.size(); ++d) fan_in *= shape[d];
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(fan_in)));
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = T(dist(rng));
    auto t = Tensor<T>::from_vector(shape, std::move(data));
    t.set_requires_grad(true);
    return t;
}

template <class T>
struct Conv2dLayer {
    Tensor<T> weight;  // [Cout, Cin, k, k]
    Tensor<T> bias;    // [Cout]
    size_t stride = 1;
    size_t padding = 0;

    Conv2dLayer() = default;
    Conv2dLayer(size_t cin, size_t cout, size_t k, size_t stride_, size_t padding_,
                std::mt19937& rng)
        : stride(stride_), padding(padding_) {
        weight = kaiming_conv_weight<T>({cout, cin, k, k}, rng);
        bias = Tensor<T>::zeros({cout});
        bias.set_requires_grad(true);
    }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
        return ops::conv2d(x, weight, bias, stride, padding, tape);
    }

    void collect(const std::string& prefix, NamedParams<T>& out) {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }
};

template <class T>
struct Conv1dLayer {
    Tensor<T> weight;  // [1,1,k]

    Conv1dLayer() = default;
    Conv1dLayer(size_t k, std::mt19937& rng) {
        weight = kaiming_conv_weight<T>({1, 1, k}, rng);
    }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
        return ops::conv1d(x, weight, (weight.size(2) - 1) / 2, tape);
    }

    void collect(const std::string& prefix, NamedParams<T>& out) {
        out.emplace_back(prefix + ".weight", weight);
    }
};

template <class T>
struct BatchNormLayer {
    Tensor<T> gamma;
    Tensor<T> beta;
    ops::BatchNormStats<T> stats;
    T momentum = T(0.1);
    T eps = T(1e-5);

    BatchNormLayer() = default;
    explicit BatchNormLayer(size_t channels) : stats(channels) {
        gamma = Tensor<T>::full({channels}, T(1));
        beta = Tensor<T>::zeros({channels});
        gamma.set_requires_grad(true);
        beta.set_requires_grad(true);
    }

    Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape, bool train) {
        return ops::batchnorm2d(x, gamma, beta, stats, train, momentum, eps, tape);
    }

    void collect(const std::string& prefix, NamedParams<T>& out) {
        out.emplace_back(prefix + ".gamma", gamma);
        out.emplace_back(prefix + ".beta", beta);
    }
    void collect_buffers(const std::string& prefix, NamedBuffers<T>& out) {
        out.emplace_back(prefix + ".running_mean", &stats.running_mean);
        out.emplace_back(prefix + ".running_var", &stats.running_var);
    }
};

}  // namespace hsr::nn
