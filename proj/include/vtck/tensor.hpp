#pragma once

#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "vtck/errors.hpp"
#include "vtck/rng.hpp"

namespace vtck {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Trailing-dimension broadcast of two shapes. Throws DimError when a pair of
// aligned dims differs and neither is 1.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const size_t nd = std::max(a.size(), b.size());
    Shape out(nd, 1);
    for (size_t i = 0; i < nd; ++i) {
        const int64_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
        const int64_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw DimError("broadcast: incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

// Dense row-major tensor. Data is shared between copies; the convention is
// that a tensor handed to another component is not mutated afterwards, except
// for optimizer updates on parameters which happen between graph lifetimes.
// The grad buffer is shared the same way so that every holder of a parameter
// handle observes accumulated gradients.
template <class Real>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<std::vector<Real>>(static_cast<size_t>(shape_numel(t.shape_)), Real(0));
        return t;
    }

    static Tensor full(Shape shape, Real v) {
        Tensor t = zeros(std::move(shape));
        for (auto& x : *t.data_) x = v;
        return t;
    }

    static Tensor from(Shape shape, std::vector<Real> data) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
            throw DimError("tensor: shape " + shape_str(shape) + " does not match buffer of " +
                           std::to_string(data.size()) + " values");
        }
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<std::vector<Real>>(std::move(data));
        return t;
    }

    static Tensor scalar(Real v) { return from({1}, {v}); }

    static Tensor randn(Shape shape, Rng& rng, Real mean = Real(0), Real stddev = Real(1)) {
        Tensor t = zeros(std::move(shape));
        for (auto& x : *t.data_) x = static_cast<Real>(rng.normal(mean, stddev));
        return t;
    }

    bool defined() const { return static_cast<bool>(data_); }
    const Shape& shape() const { return shape_; }
    int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int64_t axis) const { return shape_.at(static_cast<size_t>(axis)); }
    int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

    const Real* data() const { return data_->data(); }
    Real* data() { return data_->data(); }
    const std::vector<Real>& vec() const { return *data_; }

    Real operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }
    Real& operator[](int64_t i) { return (*data_)[static_cast<size_t>(i)]; }

    // 2D convenience accessor.
    Real at(int64_t r, int64_t c) const { return (*data_)[static_cast<size_t>(r * shape_.back() + c)]; }

    bool requires_grad() const { return requires_grad_; }

    // Enabling grad allocates the buffer immediately so that every copy of
    // this handle shares it; copies taken later all see accumulated grads.
    Tensor& set_requires_grad(bool v) {
        requires_grad_ = v;
        if (v && !grad_) grad_ = std::make_shared<std::vector<Real>>(data_->size(), Real(0));
        return *this;
    }

    bool has_grad() const { return static_cast<bool>(grad_); }

    // Allocates the grad buffer (zeros) on first use.
    std::vector<Real>& grad() {
        if (!grad_) grad_ = std::make_shared<std::vector<Real>>(data_->size(), Real(0));
        return *grad_;
    }
    const std::vector<Real>& grad() const { return *grad_; }

    void zero_grad() {
        if (grad_) std::fill(grad_->begin(), grad_->end(), Real(0));
    }

    void accumulate_grad(const Real* g, int64_t n) {
        auto& buf = grad();
        for (int64_t i = 0; i < n; ++i) buf[static_cast<size_t>(i)] += g[i];
    }

    // Deep copy: fresh data buffer, fresh (zero) grad when grad is enabled.
    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<Real>>(*data_);
        t.requires_grad_ = requires_grad_;
        if (requires_grad_) t.grad_ = std::make_shared<std::vector<Real>>(data_->size(), Real(0));
        return t;
    }

    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel()) {
            throw DimError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape) + " changes element count");
        }
        Tensor t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

    template <class To>
    Tensor<To> cast() const {
        Tensor<To> t = Tensor<To>::zeros(shape_);
        for (int64_t i = 0; i < numel(); ++i) t[i] = static_cast<To>((*data_)[static_cast<size_t>(i)]);
        t.set_requires_grad(requires_grad_);
        return t;
    }

    bool same_values(const Tensor& other) const {
        if (shape_ != other.shape_) return false;
        return std::memcmp(data_->data(), other.data_->data(), data_->size() * sizeof(Real)) == 0;
    }

private:
    Shape shape_;
    std::shared_ptr<std::vector<Real>> data_;
    bool requires_grad_ = false;
    std::shared_ptr<std::vector<Real>> grad_;
};

}  // namespace vtck
