#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace tws {

// Planar CHW image tensor. Values are nominally in [0,1] but solver
// iterates are allowed to leave that range.
template <typename T>
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int c, int h, int w) : channels(c), height(h), width(w), v(static_cast<size_t>(c) * h * w, T(0)) {}

    size_t size() const { return v.size(); }
    bool same_dims(const Tensor& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }

    T& at(int c, int y, int x) { return v[(static_cast<size_t>(c) * height + y) * width + x]; }
    T at(int c, int y, int x) const { return v[(static_cast<size_t>(c) * height + y) * width + x]; }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    void fill(T value) { std::fill(v.begin(), v.end(), value); }

    Tensor& operator+=(const Tensor& o) {
        assert(same_dims(o));
        for (size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        assert(same_dims(o));
        for (size_t i = 0; i < v.size(); ++i) v[i] -= o.v[i];
        return *this;
    }
    Tensor& operator*=(T s) {
        for (auto& x : v) x *= s;
        return *this;
    }

    // this += s * o
    void axpy(T s, const Tensor& o) {
        assert(same_dims(o));
        for (size_t i = 0; i < v.size(); ++i) v[i] += s * o.v[i];
    }

    T norm2() const {
        double acc = 0;
        for (auto x : v) acc += double(x) * double(x);
        return T(std::sqrt(acc));
    }

    T max_abs() const {
        T m = 0;
        for (auto x : v) m = std::max(m, std::abs(x));
        return m;
    }

    bool all_finite() const {
        for (auto x : v)
            if (!std::isfinite(double(x))) return false;
        return true;
    }

    Tensor clamped(T lo, T hi) const {
        Tensor out = *this;
        for (auto& x : out.v) x = std::min(hi, std::max(lo, x));
        return out;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(channels, height, width);
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

template <typename T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b) { a += b; return a; }
template <typename T>
Tensor<T> operator-(Tensor<T> a, const Tensor<T>& b) { a -= b; return a; }
template <typename T>
Tensor<T> operator*(T s, Tensor<T> a) { a *= s; return a; }

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
    assert(a.same_dims(b));
    double acc = 0;
    for (size_t i = 0; i < a.v.size(); ++i) acc += double(a.v[i]) * double(b.v[i]);
    return acc;
}

// Mean squared difference over all channels and pixels, accumulated in double.
template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_dims(b)) throw std::invalid_argument("mse: dimension mismatch");
    double acc = 0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        double d = double(a.v[i]) - double(b.v[i]);
        acc += d * d;
    }
    return acc / double(a.size());
}

}  // namespace tws
