#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "d3sr/errors.hpp"

namespace d3sr {

inline int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << shape[i] << (i + 1 < shape.size() ? "," : "");
    os << ")";
    return os.str();
}

// Dense row-major tensor. Images and latents use (C,H,W); batches use (N,C,H,W).
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), T(0)) {}
    Tensor(std::vector<int> s, T fill) : shape(std::move(s)), data(numel_of(shape), fill) {}

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, T v) { return Tensor(std::move(s), v); }
    static Tensor scalar(T v) { return Tensor({1}, v); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool empty() const { return data.empty(); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // (C,H,W) indexing
    T& at3(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    const T& at3(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    // (N,C,H,W) indexing
    T& at4(int n, int c, int y, int x) {
        return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    const T& at4(int n, int c, int y, int x) const {
        return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    T max_abs() const {
        T m = 0;
        for (const T& v : data) m = std::max(m, static_cast<T>(std::abs(static_cast<double>(v))));
        return m;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* ctx) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(ctx) + ": shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    assert(a.same_shape(b));
    T m = 0;
    for (size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, static_cast<T>(std::abs(static_cast<double>(a.data[i] - b.data[i]))));
    return m;
}

// (C,H,W) images -> (N,C,H,W)
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
    if (items.empty()) throw std::invalid_argument("stack_batch: empty batch");
    std::vector<int> shape = {static_cast<int>(items.size())};
    shape.insert(shape.end(), items[0].shape.begin(), items[0].shape.end());
    Tensor<T> out(shape);
    const int64_t stride = items[0].numel();
    for (size_t n = 0; n < items.size(); ++n) {
        if (!items[n].same_shape(items[0]))
            throw std::invalid_argument("stack_batch: ragged batch");
        std::copy(items[n].data.begin(), items[n].data.end(),
                  out.data.begin() + static_cast<int64_t>(n) * stride);
    }
    return out;
}

// item n of (N,...) -> (...)
template <typename T>
Tensor<T> batch_item(const Tensor<T>& batch, int n) {
    if (batch.rank() < 2 || n < 0 || n >= batch.dim(0))
        throw std::invalid_argument("batch_item: bad index");
    std::vector<int> shape(batch.shape.begin() + 1, batch.shape.end());
    Tensor<T> out(shape);
    const int64_t stride = out.numel();
    std::copy(batch.data.begin() + n * stride, batch.data.begin() + (n + 1) * stride,
              out.data.begin());
    return out;
}

}  // namespace d3sr
