#pragma once

// Differentiable operations over Tensor<T>. Every op optionally records its
// backward pass on a Tape; pass tape = nullptr for inference.
//
// Convolution is cross-correlation (no kernel flip). Bilinear resize uses
// corner-aligned sampling. relu subgradient at 0 is 0.

#include <algorithm>
#include <cmath>
#include <vector>

#include "hsr/tensor.hpp"

namespace hsr::ops {

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    if (a.shape() != b.shape())
        throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    auto out = Tensor<T>::zeros(a.shape());
    auto& o = out.storage();
    for (size_t i = 0; i < o.size(); ++i) o[i] = a.value(i) + b.value(i);
    if (detail::track(tape, a, b)) {
        out.set_requires_grad(true);
        Tensor<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad_ref();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad_ref();
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    if (a.shape() != b.shape())
        throw DimensionError("sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    auto out = Tensor<T>::zeros(a.shape());
    auto& o = out.storage();
    for (size_t i = 0; i < o.size(); ++i) o[i] = a.value(i) - b.value(i);
    if (detail::track(tape, a, b)) {
        out.set_requires_grad(true);
        Tensor<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad_ref();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad_ref();
                for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s, Tape<T>* tape = nullptr) {
    auto out = Tensor<T>::zeros(a.shape());
    auto& o = out.storage();
    for (size_t i = 0; i < o.size(); ++i) o[i] = a.value(i) * s;
    if (detail::track(tape, a)) {
        out.set_requires_grad(true);
        Tensor<T> ac = a, oc = out;
        tape->record([ac, oc, s]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& ga = ac.grad_ref();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
        });
    }
    return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& a, Tape<T>* tape = nullptr) {
    auto out = Tensor<T>::zeros(a.shape());
    auto& o = out.storage();
    for (size_t i = 0; i < o.size(); ++i) {
        T v = a.value(i);
        o[i] = v > T(0) ? v : T(0);
    }
    if (detail::track(tape, a)) {
        out.set_requires_grad(true);
        Tensor<T> ac = a, oc = out;
        tape->record([ac, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& ga = ac.grad_ref();
            for (size_t i = 0; i < g.size(); ++i)
                if (ac.value(i) > T(0)) ga[i] += g[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a, Tape<T>* tape = nullptr) {
    auto out = Tensor<T>::zeros(a.shape());
    auto& o = out.storage();
    for (size_t i = 0; i < o.size(); ++i) o[i] = T(1) / (T(1) + std::exp(-a.value(i)));
    if (detail::track(tape, a)) {
        out.set_requires_grad(true);
        Tensor<T> ac = a, oc = out;
        tape->record([ac, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& ga = ac.grad_ref();
            for (size_t i = 0; i < g.size(); ++i) {
                T y = oc.value(i);
                ga[i] += g[i] * y * (T(1) - y);
            }
        });
    }
    return out;
}

// Generic differentiable elementwise map; df receives the input value.
template <class T, class F, class DF>
Tensor<T> unary_map(const Tensor<T>& a, F f, DF df, Tape<T>* tape = nullptr) {
    auto out = Tensor<T>::zeros(a.shape());
    auto& o = out.storage();
    for (size_t i = 0; i < o.size(); ++i) o[i] = f(a.value(i));
    if (detail::track(tape, a)) {
        out.set_requires_grad(true);
        Tensor<T> ac = a, oc = out;
        tape->record([ac, oc, df]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& ga = ac.grad_ref();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(ac.value(i));
        });
    }
    return out;
}

// out[n,c,h,w] = x[n,c,h,w] * gate[n,c,0,0]  (per-channel attention rescale)
template <class T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& gate, Tape<T>* tape = nullptr) {
    if (x.rank() != 4 || gate.rank() != 4 || gate.size(2) != 1 || gate.size(3) != 1 ||
        gate.size(0) != x.size(0) || gate.size(1) != x.size(1))
        throw DimensionError("channel_scale: x " + shape_str(x.shape()) + " gate " +
                             shape_str(gate.shape()));
    const size_t N = x.size(0), C = x.size(1), HW = x.size(2) * x.size(3);
    auto out = Tensor<T>::zeros(x.shape());
    auto& o = out.storage();
    for (size_t n = 0; n < N; ++n)
        for (size_t c = 0; c < C; ++c) {
            T gv = gate.value(n * C + c);
            for (size_t i = 0; i < HW; ++i) {
                size_t idx = (n * C + c) * HW + i;
                o[idx] = x.value(idx) * gv;
            }
        }
    if (detail::track(tape, x, gate)) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, gc = gate, oc = out;
        tape->record([xc, gc, oc, N, C, HW]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            for (size_t n = 0; n < N; ++n)
                for (size_t c = 0; c < C; ++c) {
                    T gv = gc.value(n * C + c);
                    T acc = T(0);
                    for (size_t i = 0; i < HW; ++i) {
                        size_t idx = (n * C + c) * HW + i;
                        if (xc.requires_grad()) xc.grad_ref()[idx] += g[idx] * gv;
                        acc += g[idx] * xc.value(idx);
                    }
                    if (gc.requires_grad()) gc.grad_ref()[n * C + c] += acc;
                }
        });
    }
    return out;
}

// ------------------------------------------------------------------ reductions

template <class T>
Tensor<T> sum(const Tensor<T>& a, Tape<T>* tape = nullptr) {
    T acc = T(0);
    for (size_t i = 0; i < a.numel(); ++i) acc += a.value(i);
    auto out = Tensor<T>::scalar(acc);
    if (detail::track(tape, a)) {
        out.set_requires_grad(true);
        Tensor<T> ac = a, oc = out;
        tape->record([ac, oc]() mutable {
            if (!oc.has_grad()) return;
            T g = oc.grad()[0];
            auto& ga = ac.grad_ref();
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    }
    return out;
}

template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    if (x.rank() != 4) throw DimensionError("global_avg_pool: expected rank 4");
    const size_t N = x.size(0), C = x.size(1), HW = x.size(2) * x.size(3);
    auto out = Tensor<T>::zeros({N, C, 1, 1});
    auto& o = out.storage();
    for (size_t n = 0; n < N; ++n)
        for (size_t c = 0; c < C; ++c) {
            T acc = T(0);
            for (size_t i = 0; i < HW; ++i) acc += x.value((n * C + c) * HW + i);
            o[n * C + c] = acc / T(HW);
        }
    if (detail::track(tape, x)) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc, N, C, HW]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& gx = xc.grad_ref();
            for (size_t n = 0; n < N; ++n)
                for (size_t c = 0; c < C; ++c) {
                    T gv = g[n * C + c] / T(HW);
                    for (size_t i = 0; i < HW; ++i) gx[(n * C + c) * HW + i] += gv;
                }
        });
    }
    return out;
}

// ----------------------------------------------------------- shape operations

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<size_t>& axes, Tape<T>* tape = nullptr) {
    const size_t r = x.rank();
    if (axes.size() != r) throw ConfigError("permute: axes rank mismatch");
    std::vector<bool> seen(r, false);
    for (size_t a : axes) {
        if (a >= r || seen[a]) throw ConfigError("permute: invalid permutation");
        seen[a] = true;
    }
    Shape nshape(r), nstrides(r);
    for (size_t i = 0; i < r; ++i) {
        nshape[i] = x.shape()[axes[i]];
        nstrides[i] = x.strides()[axes[i]];
    }
    auto out = Tensor<T>::view_of(x, nshape, nstrides);
    if (detail::track(tape, x)) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        auto ax = axes;
        tape->record([xc, oc, ax]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& gx = xc.grad_ref();
            const auto& oshape = oc.shape();
            Shape rm_in = row_major_strides(xc.shape());
            // coefficient of out-axis k in the input's logical flat index
            std::vector<size_t> coef(ax.size());
            for (size_t k = 0; k < ax.size(); ++k) coef[k] = rm_in[ax[k]];
            for (size_t flat = 0; flat < g.size(); ++flat) {
                size_t rem = flat, fin = 0;
                for (size_t k = oshape.size(); k-- > 0;) {
                    fin += (rem % oshape[k]) * coef[k];
                    rem /= oshape[k];
                }
                gx[fin] += g[flat];
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& nshape, Tape<T>* tape = nullptr) {
    if (shape_numel(nshape) != x.numel())
        throw DimensionError("reshape: element count mismatch");
    auto out = Tensor<T>::from_vector(nshape, x.to_vector());
    if (detail::track(tape, x)) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& gx = xc.grad_ref();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

// Spatial subsampling by factor f: out[h,w] = in[f*h, f*w].
template <class T>
Tensor<T> decimate(const Tensor<T>& x, size_t f, Tape<T>* tape = nullptr) {
    if (x.rank() != 4) throw DimensionError("decimate: expected rank 4");
    if (f == 0 || x.size(2) % f || x.size(3) % f)
        throw ConfigError("decimate: factor " + std::to_string(f) + " does not divide extents");
    const size_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    const size_t oH = H / f, oW = W / f;
    auto out = Tensor<T>::zeros({N, C, oH, oW});
    auto& o = out.storage();
    for (size_t n = 0; n < N; ++n)
        for (size_t c = 0; c < C; ++c)
            for (size_t h = 0; h < oH; ++h)
                for (size_t w = 0; w < oW; ++w)
                    o[((n * C + c) * oH + h) * oW + w] =
                        x.value(((n * C + c) * H + h * f) * W + w * f);
    if (detail::track(tape, x)) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc, N, C, H, W, oH, oW, f]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& gx = xc.grad_ref();
            for (size_t n = 0; n < N; ++n)
                for (size_t c = 0; c < C; ++c)
                    for (size_t h = 0; h < oH; ++h)
                        for (size_t w = 0; w < oW; ++w)
                            gx[((n * C + c) * H + h * f) * W + w * f] +=
                                g[((n * C + c) * oH + h) * oW + w];
        });
    }
    return out;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& inputs, size_t axis, Tape<T>* tape = nullptr) {
    if (inputs.empty()) throw ConfigError("concat: empty input list");
    const size_t r = inputs[0].rank();
    if (axis >= r) throw ConfigError("concat: axis out of range");
    size_t total = 0;
    for (const auto& t : inputs) {
        if (t.rank() != r) throw DimensionError("concat: rank mismatch");
        for (size_t d = 0; d < r; ++d)
            if (d != axis && t.shape()[d] != inputs[0].shape()[d])
                throw DimensionError("concat: extent mismatch on axis " + std::to_string(d));
        total += t.shape()[axis];
    }
    Shape oshape = inputs[0].shape();
    oshape[axis] = total;
    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= oshape[d];
    for (size_t d = axis + 1; d < r; ++d) inner *= oshape[d];
    auto out = Tensor<T>::zeros(oshape);
    auto& o = out.storage();
    size_t off = 0;
    for (const auto& t : inputs) {
        size_t e = t.shape()[axis];
        for (size_t u = 0; u < outer; ++u)
            for (size_t j = 0; j < e; ++j)
                for (size_t i = 0; i < inner; ++i)
                    o[(u * total + off + j) * inner + i] = t.value((u * e + j) * inner + i);
        off += e;
    }
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (tape && any) {
        out.set_requires_grad(true);
        auto ins = inputs;
        Tensor<T> oc = out;
        tape->record([ins, oc, axis, outer, inner, total]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            size_t off = 0;
            for (auto& t : ins) {
                size_t e = t.shape()[axis];
                if (t.requires_grad()) {
                    auto& gt = t.grad_ref();
                    for (size_t u = 0; u < outer; ++u)
                        for (size_t j = 0; j < e; ++j)
                            for (size_t i = 0; i < inner; ++i)
                                gt[(u * e + j) * inner + i] += g[(u * total + off + j) * inner + i];
                }
                off += e;
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, size_t axis, size_t start, size_t len,
                Tape<T>* tape = nullptr) {
    const size_t r = x.rank();
    if (axis >= r) throw ConfigError("slice: axis out of range");
    if (start + len > x.shape()[axis] || len == 0)
        throw BoundsError("slice: range [" + std::to_string(start) + "," +
                          std::to_string(start + len) + ") exceeds extent " +
                          std::to_string(x.shape()[axis]));
    Shape oshape = x.shape();
    oshape[axis] = len;
    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= x.shape()[d];
    for (size_t d = axis + 1; d < r; ++d) inner *= x.shape()[d];
    const size_t e = x.shape()[axis];
    auto out = Tensor<T>::zeros(oshape);
    auto& o = out.storage();
    for (size_t u = 0; u < outer; ++u)
        for (size_t j = 0; j < len; ++j)
            for (size_t i = 0; i < inner; ++i)
                o[(u * len + j) * inner + i] = x.value((u * e + start + j) * inner + i);
    if (detail::track(tape, x)) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc, outer, inner, e, start, len]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& gx = xc.grad_ref();
            for (size_t u = 0; u < outer; ++u)
                for (size_t j = 0; j < len; ++j)
                    for (size_t i = 0; i < inner; ++i)
                        gx[(u * e + start + j) * inner + i] += g[(u * len + j) * inner + i];
        });
    }
    return out;
}

// Corner-aligned bilinear interpolation: output corner samples map to input
// corners; resizing to the input's own shape is the exact identity.
template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& x, size_t outH, size_t outW, Tape<T>* tape = nullptr) {
    if (x.rank() != 4) throw DimensionError("bilinear_resize: expected rank 4");
    if (outH < 1 || outW < 1) throw ConfigError("bilinear_resize: output extents must be >= 1");
    const size_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    const double sh = outH > 1 ? double(H - 1) / double(outH - 1) : 0.0;
    const double sw = outW > 1 ? double(W - 1) / double(outW - 1) : 0.0;
    auto out = Tensor<T>::zeros({N, C, outH, outW});
    auto& o = out.storage();
    auto sample = [&](auto&& emit) {
        for (size_t oh = 0; oh < outH; ++oh) {
            double src_h = oh * sh;
            size_t h0 = size_t(std::floor(src_h));
            size_t h1 = std::min(h0 + 1, H - 1);
            double fh = src_h - double(h0);
            for (size_t ow = 0; ow < outW; ++ow) {
                double src_w = ow * sw;
                size_t w0 = size_t(std::floor(src_w));
                size_t w1 = std::min(w0 + 1, W - 1);
                double fw = src_w - double(w0);
                emit(oh, ow, h0, h1, w0, w1, T((1 - fh) * (1 - fw)), T((1 - fh) * fw),
                     T(fh * (1 - fw)), T(fh * fw));
            }
        }
    };
    for (size_t n = 0; n < N; ++n)
        for (size_t c = 0; c < C; ++c) {
            size_t base = (n * C + c) * H * W;
            size_t obase = (n * C + c) * outH * outW;
            sample([&](size_t oh, size_t ow, size_t h0, size_t h1, size_t w0, size_t w1, T c00,
                       T c01, T c10, T c11) {
                o[obase + oh * outW + ow] = c00 * x.value(base + h0 * W + w0) +
                                            c01 * x.value(base + h0 * W + w1) +
                                            c10 * x.value(base + h1 * W + w0) +
                                            c11 * x.value(base + h1 * W + w1);
            });
        }
    if (detail::track(tape, x)) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc, N, C, H, W, outH, outW, sh, sw]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& gx = xc.grad_ref();
            for (size_t n = 0; n < N; ++n)
                for (size_t c = 0; c < C; ++c) {
                    size_t base = (n * C + c) * H * W;
                    size_t obase = (n * C + c) * outH * outW;
                    for (size_t oh = 0; oh < outH; ++oh) {
                        double src_h = oh * sh;
                        size_t h0 = size_t(std::floor(src_h));
                        size_t h1 = std::min(h0 + 1, H - 1);
                        double fh = src_h - double(h0);
                        for (size_t ow = 0; ow < outW; ++ow) {
                            double src_w = ow * sw;
                            size_t w0 = size_t(std::floor(src_w));
                            size_t w1 = std::min(w0 + 1, W - 1);
                            double fw = src_w - double(w0);
                            T gv = g[obase + oh * outW + ow];
                            gx[base + h0 * W + w0] += T((1 - fh) * (1 - fw)) * gv;
                            gx[base + h0 * W + w1] += T((1 - fh) * fw) * gv;
                            gx[base + h1 * W + w0] += T(fh * (1 - fw)) * gv;
                            gx[base + h1 * W + w1] += T(fh * fw) * gv;
                        }
                    }
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------- convolution

// Cross-correlation with zero padding. Output extents must divide exactly:
// H' = (H + 2*pad - kH)/stride + 1 must be a positive integer.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 size_t stride, size_t padding, Tape<T>* tape = nullptr) {
    if (input.rank() != 4 || weight.rank() != 4)
        throw DimensionError("conv2d: expected rank-4 input and weight");
    const size_t N = input.size(0), Cin = input.size(1), H = input.size(2), W = input.size(3);
    const size_t Cout = weight.size(0), kH = weight.size(2), kW = weight.size(3);
    if (weight.size(1) != Cin)
        throw DimensionError("conv2d: input channels " + std::to_string(Cin) +
                             " vs weight channels " + std::to_string(weight.size(1)));
    if (bias.rank() != 1 || bias.size(0) != Cout)
        throw DimensionError("conv2d: bias shape mismatch");
    if (kH % 2 == 0 || kW % 2 == 0) throw ConfigError("conv2d: kernel extents must be odd");
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    const long long numH = (long long)H + 2 * (long long)padding - (long long)kH;
    const long long numW = (long long)W + 2 * (long long)padding - (long long)kW;
    if (numH < 0 || numW < 0 || numH % (long long)stride || numW % (long long)stride)
        throw ConfigError("conv2d: non-integral output extent for input " +
                          shape_str(input.shape()) + " kernel " + shape_str(weight.shape()) +
                          " stride " + std::to_string(stride) + " pad " +
                          std::to_string(padding));
    const size_t oH = size_t(numH / (long long)stride) + 1;
    const size_t oW = size_t(numW / (long long)stride) + 1;

    auto out = Tensor<T>::zeros({N, Cout, oH, oW});
    auto& o = out.storage();
    const auto& ist = input.strides();
    const T* ip = input.data_ptr();
    const T* wp = weight.data_ptr();
    for (size_t n = 0; n < N; ++n)
        for (size_t co = 0; co < Cout; ++co)
            for (size_t oh = 0; oh < oH; ++oh)
                for (size_t ow = 0; ow < oW; ++ow) {
                    T acc = bias.value(co);
                    for (size_t ci = 0; ci < Cin; ++ci)
                        for (size_t kh = 0; kh < kH; ++kh) {
                            long long ih = (long long)(oh * stride + kh) - (long long)padding;
                            if (ih < 0 || ih >= (long long)H) continue;
                            for (size_t kw = 0; kw < kW; ++kw) {
                                long long iw = (long long)(ow * stride + kw) - (long long)padding;
                                if (iw < 0 || iw >= (long long)W) continue;
                                acc += ip[n * ist[0] + ci * ist[1] + size_t(ih) * ist[2] +
                                          size_t(iw) * ist[3]] *
                                       wp[((co * Cin + ci) * kH + kh) * kW + kw];
                            }
                        }
                    o[((n * Cout + co) * oH + oh) * oW + ow] = acc;
                }

    if (detail::track(tape, input, weight, bias)) {
        out.set_requires_grad(true);
        Tensor<T> ic = input, wc = weight, bc = bias, oc = out;
        tape->record([ic, wc, bc, oc, N, Cin, Cout, H, W, kH, kW, oH, oW, stride,
                      padding]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            const auto& ist = ic.strides();
            const T* ip = ic.data_ptr();
            const T* wp = wc.data_ptr();
            std::vector<T>* gi = ic.requires_grad() ? &ic.grad_ref() : nullptr;
            std::vector<T>* gw = wc.requires_grad() ? &wc.grad_ref() : nullptr;
            std::vector<T>* gb = bc.requires_grad() ? &bc.grad_ref() : nullptr;
            for (size_t n = 0; n < N; ++n)
                for (size_t co = 0; co < Cout; ++co)
                    for (size_t oh = 0; oh < oH; ++oh)
                        for (size_t ow = 0; ow < oW; ++ow) {
                            T gv = g[((n * Cout + co) * oH + oh) * oW + ow];
                            if (gv == T(0)) continue;
                            if (gb) (*gb)[co] += gv;
                            for (size_t ci = 0; ci < Cin; ++ci)
                                for (size_t kh = 0; kh < kH; ++kh) {
                                    long long ih =
                                        (long long)(oh * stride + kh) - (long long)padding;
                                    if (ih < 0 || ih >= (long long)H) continue;
                                    for (size_t kw = 0; kw < kW; ++kw) {
                                        long long iw =
                                            (long long)(ow * stride + kw) - (long long)padding;
                                        if (iw < 0 || iw >= (long long)W) continue;
                                        size_t widx = ((co * Cin + ci) * kH + kh) * kW + kw;
                                        if (gi)
                                            (*gi)[((n * Cin + ci) * H + size_t(ih)) * W +
                                                  size_t(iw)] += gv * wp[widx];
                                        if (gw)
                                            (*gw)[widx] +=
                                                gv * ip[n * ist[0] + ci * ist[1] +
                                                        size_t(ih) * ist[2] + size_t(iw) * ist[3]];
                                    }
                                }
                        }
        });
    }
    return out;
}

// Length-preserving 1D cross-correlation over the channel descriptor.
// padding must equal (k-1)/2.
template <class T>
Tensor<T> conv1d(const Tensor<T>& input, const Tensor<T>& weight, size_t padding,
                 Tape<T>* tape = nullptr) {
    if (input.rank() != 3 || input.size(1) != 1)
        throw DimensionError("conv1d: expected input [N,1,L]");
    if (weight.rank() != 3 || weight.size(0) != 1 || weight.size(1) != 1)
        throw DimensionError("conv1d: expected weight [1,1,k]");
    const size_t N = input.size(0), L = input.size(2), k = weight.size(2);
    if (k % 2 == 0) throw ConfigError("conv1d: kernel extent must be odd");
    if (padding != (k - 1) / 2)
        throw ConfigError("conv1d: padding must be (k-1)/2 to preserve length");
    auto out = Tensor<T>::zeros({N, 1, L});
    auto& o = out.storage();
    for (size_t n = 0; n < N; ++n)
        for (size_t l = 0; l < L; ++l) {
            T acc = T(0);
            for (size_t j = 0; j < k; ++j) {
                long long s = (long long)(l + j) - (long long)padding;
                if (s < 0 || s >= (long long)L) continue;
                acc += input.value(n * L + size_t(s)) * weight.value(j);
            }
            o[n * L + l] = acc;
        }
    if (detail::track(tape, input, weight)) {
        out.set_requires_grad(true);
        Tensor<T> ic = input, wc = weight, oc = out;
        tape->record([ic, wc, oc, N, L, k, padding]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            std::vector<T>* gi = ic.requires_grad() ? &ic.grad_ref() : nullptr;
            std::vector<T>* gw = wc.requires_grad() ? &wc.grad_ref() : nullptr;
            for (size_t n = 0; n < N; ++n)
                for (size_t l = 0; l < L; ++l) {
                    T gv = g[n * L + l];
                    if (gv == T(0)) continue;
                    for (size_t j = 0; j < k; ++j) {
                        long long s = (long long)(l + j) - (long long)padding;
                        if (s < 0 || s >= (long long)L) continue;
                        if (gi) (*gi)[n * L + size_t(s)] += gv * wc.value(j);
                        if (gw) (*gw)[j] += gv * ic.value(n * L + size_t(s));
                    }
                }
        });
    }
    return out;
}

// ------------------------------------------------------------------ batchnorm

template <class T>
struct BatchNormStats {
    std::vector<T> running_mean;
    std::vector<T> running_var;

    explicit BatchNormStats(size_t channels = 0)
        : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

// Train mode normalizes by batch statistics over N,H,W per channel and updates
// the running stats by exponential moving average; eval mode uses the running
// stats. Differentiable in both modes.
template <class T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormStats<T>& stats, bool train, T momentum, T eps,
                      Tape<T>* tape = nullptr) {
    if (x.rank() != 4) throw DimensionError("batchnorm2d: expected rank-4 input");
    const size_t N = x.size(0), C = x.size(1), HW = x.size(2) * x.size(3);
    if (gamma.rank() != 1 || gamma.size(0) != C || beta.rank() != 1 || beta.size(0) != C)
        throw DimensionError("batchnorm2d: gamma/beta channel mismatch (C=" + std::to_string(C) +
                             ")");
    if (stats.running_mean.size() != C)
        throw DimensionError("batchnorm2d: running stats channel mismatch");
    if (!(eps > T(0))) throw ConfigError("batchnorm2d: epsilon must be positive");

    const size_t M = N * HW;
    std::vector<T> mean(C), invstd(C);
    if (train) {
        for (size_t c = 0; c < C; ++c) {
            T m = T(0);
            for (size_t n = 0; n < N; ++n)
                for (size_t i = 0; i < HW; ++i) m += x.value((n * C + c) * HW + i);
            m /= T(M);
            T v = T(0);
            for (size_t n = 0; n < N; ++n)
                for (size_t i = 0; i < HW; ++i) {
                    T d = x.value((n * C + c) * HW + i) - m;
                    v += d * d;
                }
            v /= T(M);
            mean[c] = m;
            invstd[c] = T(1) / std::sqrt(v + eps);
            stats.running_mean[c] = (T(1) - momentum) * stats.running_mean[c] + momentum * m;
            stats.running_var[c] = (T(1) - momentum) * stats.running_var[c] + momentum * v;
        }
    } else {
        for (size_t c = 0; c < C; ++c) {
            mean[c] = stats.running_mean[c];
            invstd[c] = T(1) / std::sqrt(stats.running_var[c] + eps);
        }
    }

    auto out = Tensor<T>::zeros(x.shape());
    auto& o = out.storage();
    std::vector<T> xhat(x.numel());
    for (size_t n = 0; n < N; ++n)
        for (size_t c = 0; c < C; ++c)
            for (size_t i = 0; i < HW; ++i) {
                size_t idx = (n * C + c) * HW + i;
                T xh = (x.value(idx) - mean[c]) * invstd[c];
                xhat[idx] = xh;
                o[idx] = gamma.value(c) * xh + beta.value(c);
            }

    if (detail::track(tape, x, gamma, beta)) {
        out.set_requires_grad(true);
        Tensor<T> xc = x, gc = gamma, bc = beta, oc = out;
        tape->record([xc, gc, bc, oc, xhat = std::move(xhat), invstd = std::move(invstd), N, C, HW,
                      M, train]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            for (size_t c = 0; c < C; ++c) {
                T sum_g = T(0), sum_gx = T(0);
                for (size_t n = 0; n < N; ++n)
                    for (size_t i = 0; i < HW; ++i) {
                        size_t idx = (n * C + c) * HW + i;
                        sum_g += g[idx];
                        sum_gx += g[idx] * xhat[idx];
                    }
                if (gc.requires_grad()) gc.grad_ref()[c] += sum_gx;
                if (bc.requires_grad()) bc.grad_ref()[c] += sum_g;
                if (xc.requires_grad()) {
                    auto& gx = xc.grad_ref();
                    T gm = gc.value(c);
                    for (size_t n = 0; n < N; ++n)
                        for (size_t i = 0; i < HW; ++i) {
                            size_t idx = (n * C + c) * HW + i;
                            if (train) {
                                gx[idx] += gm * invstd[c] *
                                           (g[idx] - sum_g / T(M) - xhat[idx] * sum_gx / T(M));
                            } else {
                                gx[idx] += gm * invstd[c] * g[idx];
                            }
                        }
                }
            }
        });
    }
    return out;
}

}  // namespace hsr::ops
