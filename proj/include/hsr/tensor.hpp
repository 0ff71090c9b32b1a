#pragma once

// Strided n-dimensional tensor with reverse-mode automatic differentiation.
// Two precision modes are supported by instantiating on float (training) or
// double (gradient checking). All kernels run sequentially so that identical
// inputs give bitwise-identical outputs.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hsr/errors.hpp"

namespace hsr {

using Shape = std::vector<size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t e : s) n *= e;
    return n;
}

inline Shape row_major_strides(const Shape& shape) {
    Shape st(shape.size());
    size_t acc = 1;
    for (size_t i = shape.size(); i-- > 0;) {
        st[i] = acc;
        acc *= shape[i];
    }
    return st;
}

template <class T>
class Tensor {
    struct Node {
        Shape shape;
        Shape strides;  // element strides into *buf (row-major unless a view)
        std::shared_ptr<std::vector<T>> buf;
        bool contig = true;
        bool requires_grad = false;
        std::vector<T> grad;  // logical row-major order; empty until needed
    };
    std::shared_ptr<Node> n_;

    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape) {
        return full(shape, T(0));
    }

    static Tensor full(const Shape& shape, T v) {
        auto n = std::make_shared<Node>();
        n->shape = shape;
        n->strides = row_major_strides(shape);
        n->buf = std::make_shared<std::vector<T>>(shape_numel(shape), v);
        return Tensor(std::move(n));
    }

    static Tensor from_vector(const Shape& shape, std::vector<T> data) {
        if (data.size() != shape_numel(shape))
            throw DimensionError("from_vector: data size " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = shape;
        n->strides = row_major_strides(shape);
        n->buf = std::make_shared<std::vector<T>>(std::move(data));
        return Tensor(std::move(n));
    }

    static Tensor scalar(T v) { return from_vector({}, {v}); }

    // View over the same buffer with the given shape/strides.
    static Tensor view_of(const Tensor& src, Shape shape, Shape strides) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->strides = std::move(strides);
        n->buf = src.n_->buf;
        n->contig = (n->strides == row_major_strides(n->shape));
        return Tensor(std::move(n));
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    const Shape& strides() const { return n_->strides; }
    size_t rank() const { return n_->shape.size(); }
    size_t numel() const { return shape_numel(n_->shape); }
    size_t size(size_t axis) const { return n_->shape.at(axis); }

    bool same_node(const Tensor& other) const { return n_ == other.n_; }

    bool is_contiguous() const { return n_->contig; }

    const T* data_ptr() const { return n_->buf->data(); }
    T* data_ptr() { return n_->buf->data(); }

    // Value at a logical row-major flat index, honoring data strides.
    T value(size_t flat) const {
        if (is_contiguous()) return (*n_->buf)[flat];
        size_t off = 0;
        for (size_t ax = n_->shape.size(); ax-- > 0;) {
            off += (flat % n_->shape[ax]) * n_->strides[ax];
            flat /= n_->shape[ax];
        }
        return (*n_->buf)[off];
    }

    T at(std::initializer_list<size_t> idx) const {
        size_t off = 0, ax = 0;
        for (size_t i : idx) off += i * n_->strides[ax++];
        return (*n_->buf)[off];
    }

    std::vector<T> to_vector() const {
        std::vector<T> out(numel());
        for (size_t i = 0; i < out.size(); ++i) out[i] = value(i);
        return out;
    }

    // Direct storage access; only meaningful for contiguous tensors.
    std::vector<T>& storage() {
        if (!is_contiguous()) throw StateError("storage() on non-contiguous tensor");
        return *n_->buf;
    }
    const std::vector<T>& storage() const {
        if (!is_contiguous()) throw StateError("storage() on non-contiguous tensor");
        return *n_->buf;
    }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool b) { n_->requires_grad = b; }

    bool has_grad() const { return !n_->grad.empty(); }
    const std::vector<T>& grad() const {
        if (n_->grad.empty()) throw StateError("grad not populated");
        return n_->grad;
    }
    // Lazily allocated, logical row-major order.
    std::vector<T>& grad_ref() {
        if (n_->grad.empty()) n_->grad.assign(numel(), T(0));
        return n_->grad;
    }
    void zero_grad() { n_->grad.clear(); }
};

// Records executed operations; replaying in reverse order propagates
// gradients from a scalar loss to every requires_grad leaf.
template <class T>
class Tape {
    std::vector<std::function<void()>> records_;
    bool consumed_ = false;

public:
    void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }

    size_t num_records() const { return records_.size(); }
    bool consumed() const { return consumed_; }

    void backward(Tensor<T>& loss) {
        if (consumed_) throw StateError("backward called twice on a consumed tape");
        if (loss.rank() != 0)
            throw StateError("backward requires a 0-dimensional loss, got shape " +
                             shape_str(loss.shape()));
        loss.grad_ref()[0] = T(1);
        for (size_t i = records_.size(); i-- > 0;) records_[i]();
        consumed_ = true;
    }
};

namespace detail {

template <class T>
inline bool track(Tape<T>* tape, const Tensor<T>& a) {
    return tape && a.requires_grad();
}
template <class T>
inline bool track(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    return tape && (a.requires_grad() || b.requires_grad());
}
template <class T>
inline bool track(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c) {
    return tape && (a.requires_grad() || b.requires_grad() || c.requires_grad());
}

}  // namespace detail

}  // namespace hsr
