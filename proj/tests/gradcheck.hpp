#pragma once

// Central finite-difference gradient checking at 64-bit precision.

#include <functional>
#include <vector>

#include "hsr/ops.hpp"

namespace gradcheck {

using hsr::Tensor;
using hsr::Tape;

struct Result {
    double max_rel_error = 0.0;
    size_t checked = 0;
};

// forward must rebuild the computation from the current leaf values and
// return a scalar; it receives the tape (nullptr during FD evaluation).
inline Result check(std::vector<Tensor<double>> leaves,
                    const std::function<Tensor<double>(Tape<double>*)>& forward,
                    double step = 1e-5) {
    for (auto& l : leaves) {
        l.set_requires_grad(true);
        l.zero_grad();
    }
    Tape<double> tape;
    auto loss = forward(&tape);
    tape.backward(loss);

    Result res;
    for (auto& leaf : leaves) {
        auto& st = leaf.storage();
        const auto& g = leaf.grad();
        for (size_t i = 0; i < st.size(); ++i) {
            double orig = st[i];
            st[i] = orig + step;
            double fp = forward(nullptr).value(0);
            st[i] = orig - step;
            double fm = forward(nullptr).value(0);
            st[i] = orig;
            double fd = (fp - fm) / (2.0 * step);
            double rel = std::abs(g[i] - fd) / std::max(1.0, std::abs(fd));
            res.max_rel_error = std::max(res.max_rel_error, rel);
            ++res.checked;
        }
    }
    return res;
}

}  // namespace gradcheck
