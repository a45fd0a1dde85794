#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dsprune/errors.hpp"

namespace dsprune {

namespace detail {

inline std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

}  // namespace detail

// Dense row-major tensor. The precision parameter selects 32-bit float for
// training and 64-bit double for oracle/test paths. A TensorT is a handle to
// shared storage: copies alias the same buffer (gradients must accumulate
// into one place during backprop), clone() makes a deep copy. Shape is fixed
// at construction.
template <class T>
class TensorT {
public:
    struct Storage {
        std::vector<int> shape;
        std::vector<T> data;
        std::vector<T> grad;           // empty until ensure_grad()
        bool requires_grad = false;
        const void* tape = nullptr;    // tape that recorded this tensor, if any
        std::uint64_t tape_gen = 0;
    };

    TensorT() : s_(std::make_shared<Storage>()) {}

    explicit TensorT(std::vector<int> shape) : s_(std::make_shared<Storage>()) {
        s_->data.assign(detail::shape_numel(shape), T(0));
        s_->shape = std::move(shape);
    }

    TensorT(std::vector<int> shape, std::vector<T> values) : s_(std::make_shared<Storage>()) {
        if (values.size() != detail::shape_numel(shape)) {
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not match shape " + detail::shape_str(shape));
        }
        s_->shape = std::move(shape);
        s_->data = std::move(values);
    }

    static TensorT zeros(std::vector<int> shape) { return TensorT(std::move(shape)); }

    static TensorT full(std::vector<int> shape, T value) {
        TensorT t(std::move(shape));
        for (T& v : t.s_->data) v = value;
        return t;
    }

    const std::vector<int>& shape() const { return s_->shape; }
    int rank() const { return static_cast<int>(s_->shape.size()); }
    int dim(int i) const { return s_->shape[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return s_->data.size(); }

    T* data() { return s_->data.data(); }
    const T* data() const { return s_->data.data(); }
    std::span<T> values() { return s_->data; }
    std::span<const T> values() const { return s_->data; }

    T& at(std::size_t i) { return s_->data[i]; }
    T at(std::size_t i) const { return s_->data[i]; }

    bool requires_grad() const { return s_->requires_grad; }
    void set_requires_grad(bool v) { s_->requires_grad = v; }

    bool has_grad() const { return !s_->grad.empty(); }

    /// Allocates (zero-filled) the gradient buffer if not present.
    std::span<T> ensure_grad() {
        if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
        return s_->grad;
    }

    std::span<T> grad() {
        if (s_->grad.empty()) throw StateError("tensor has no gradient");
        return s_->grad;
    }
    std::span<const T> grad() const {
        if (s_->grad.empty()) throw StateError("tensor has no gradient");
        return s_->grad;
    }

    void zero_grad() {
        for (T& g : s_->grad) g = T(0);
    }

    /// Deep copy of values (gradient buffer is not copied).
    TensorT clone() const {
        TensorT t;
        t.s_->shape = s_->shape;
        t.s_->data = s_->data;
        t.s_->requires_grad = s_->requires_grad;
        return t;
    }

    bool same_storage(const TensorT& other) const { return s_ == other.s_; }

    std::shared_ptr<Storage> storage() const { return s_; }

private:
    std::shared_ptr<Storage> s_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

/// Elementwise copy into a different precision.
template <class To, class From>
TensorT<To> tensor_cast(const TensorT<From>& t) {
    std::vector<To> v(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) v[i] = static_cast<To>(t.data()[i]);
    return TensorT<To>(t.shape(), std::move(v));
}

template <class T>
bool same_shape(const TensorT<T>& a, const TensorT<T>& b) {
    return a.shape() == b.shape();
}

template <class T>
bool bitwise_equal(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

/// max_i |a_i - b_i| / max(1, |a_i|, |b_i|)
template <class T>
double max_rel_err(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape()) throw ShapeError("max_rel_err: shape mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = static_cast<double>(a.data()[i]);
        const double y = static_cast<double>(b.data()[i]);
        const double denom = std::max({1.0, std::fabs(x), std::fabs(y)});
        worst = std::max(worst, std::fabs(x - y) / denom);
    }
    return worst;
}

}  // namespace dsprune
