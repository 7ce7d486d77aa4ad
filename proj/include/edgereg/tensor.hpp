#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "edgereg/errors.hpp"

namespace edgereg {

// Dense row-major tensor. The last axis is fastest; volumes use (C, Z, Y, X).
// Copies are shallow (shared storage) -- use clone() for a deep copy.
template <class T>
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        store_ = std::make_shared<std::vector<T>>(numel_of(shape_), T(0));
    }

    Tensor(std::vector<int> shape, std::vector<T> values) : shape_(std::move(shape)) {
        require_shape(values.size() == numel_of(shape_), "tensor: value count does not match shape");
        store_ = std::make_shared<std::vector<T>>(std::move(values));
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.begin(), t.end(), v);
        return t;
    }

    bool empty() const { return !store_; }
    const std::vector<int>& shape() const { return shape_; }
    int dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }

    size_t numel() const { return store_ ? store_->size() : 0; }

    T* data() { return store_->data(); }
    const T* data() const { return store_->data(); }
    T* begin() { return data(); }
    T* end() { return data() + numel(); }
    const T* begin() const { return data(); }
    const T* end() const { return data() + numel(); }

    T& operator[](size_t i) { return (*store_)[i]; }
    const T& operator[](size_t i) const { return (*store_)[i]; }

    // index helpers for up to 4 axes (tests and glue code; hot loops index manually)
    T& at(int a) { return (*store_)[check_index({a})]; }
    T& at(int a, int b) { return (*store_)[check_index({a, b})]; }
    T& at(int a, int b, int c) { return (*store_)[check_index({a, b, c})]; }
    T& at(int a, int b, int c, int d) { return (*store_)[check_index({a, b, c, d})]; }
    const T& at(int a) const { return (*store_)[check_index({a})]; }
    const T& at(int a, int b) const { return (*store_)[check_index({a, b})]; }
    const T& at(int a, int b, int c) const { return (*store_)[check_index({a, b, c})]; }
    const T& at(int a, int b, int c, int d) const { return (*store_)[check_index({a, b, c, d})]; }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        if (store_) t.store_ = std::make_shared<std::vector<T>>(*store_);
        return t;
    }

    Tensor reshaped(std::vector<int> shape) const {
        require_shape(numel_of(shape) == numel(), "reshape: element count mismatch");
        Tensor t;
        t.shape_ = std::move(shape);
        t.store_ = store_;
        return t;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> t(shape_);
        const T* s = data();
        U* d = t.data();
        for (size_t i = 0; i < numel(); ++i) d[i] = static_cast<U>(s[i]);
        return t;
    }

    void fill(T v) { std::fill(begin(), end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    static size_t numel_of(const std::vector<int>& shape) {
        size_t n = 1;
        for (int d : shape) {
            require_shape(d >= 0, "tensor: negative dimension");
            n *= size_t(d);
        }
        return n;
    }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + ")";
    }

  private:
    size_t check_index(std::initializer_list<int> idx) const {
        require_shape(idx.size() == shape_.size(), "tensor: index rank mismatch");
        size_t off = 0;
        size_t k = 0;
        for (int i : idx) {
            require_shape(i >= 0 && i < shape_[k], "tensor: index out of range");
            off = off * size_t(shape_[k]) + size_t(i);
            ++k;
        }
        return off;
    }

    std::vector<int> shape_;
    std::shared_ptr<std::vector<T>> store_;
};

template <class T>
void axpy(T a, const Tensor<T>& x, Tensor<T>& y) {
    require_shape(x.same_shape(y), "axpy: shape mismatch");
    const T* xs = x.data();
    T* ys = y.data();
    for (size_t i = 0; i < x.numel(); ++i) ys[i] += a * xs[i];
}

} // namespace edgereg
