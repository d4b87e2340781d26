#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sinkcache/errors.hpp"

namespace sinkcache {

// Row-major dense matrix. No strides or views; the flat buffer is the
// public contract. Templated so the same kernels run in float (deployment)
// and double (oracles / gradient checks).
template <typename T>
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, T(0)) {}

    T& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    const T& operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    std::span<T> row(int r) { return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
    std::span<const T> row(int r) const {
        return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
    }

    size_t size() const { return data.size(); }
    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// Dot product with four independent accumulators. The summation order is
// fixed in source, so results are identical on every IEEE platform.
template <typename T>
inline T dot(const T* a, const T* b, int n) {
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    T tail = 0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((s0 + s1) + (s2 + s3)) + tail;
}

template <typename T>
inline T dot(std::span<const T> a, std::span<const T> b) {
    return dot(a.data(), b.data(), static_cast<int>(a.size()));
}

// y += s * x
template <typename T>
inline void axpy(T s, const T* x, T* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += s * x[i];
}

// C = A * B  (or += with accumulate). Loop order i-k-j: the inner loop is a
// saxpy over contiguous rows, which vectorizes without reordering the
// per-element accumulation sequence.
template <typename T>
void matmul(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate = false) {
    if (a.cols != b.rows || c.rows != a.rows || c.cols != b.cols)
        throw ShapeError("matmul: incompatible shapes");
    if (!accumulate) c.fill(T(0));
    for (int i = 0; i < a.rows; ++i) {
        const T* arow = a.data.data() + static_cast<size_t>(i) * a.cols;
        T* crow = c.data.data() + static_cast<size_t>(i) * c.cols;
        for (int k = 0; k < a.cols; ++k) {
            const T s = arow[k];
            if (s == T(0)) continue;
            axpy(s, b.data.data() + static_cast<size_t>(k) * b.cols, crow, b.cols);
        }
    }
}

// C (+)= A^T * B, used for weight gradients (A holds activations).
template <typename T>
void matmul_at_b(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate = true) {
    if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols)
        throw ShapeError("matmul_at_b: incompatible shapes");
    if (!accumulate) c.fill(T(0));
    for (int i = 0; i < a.rows; ++i) {
        const T* arow = a.data.data() + static_cast<size_t>(i) * a.cols;
        const T* brow = b.data.data() + static_cast<size_t>(i) * b.cols;
        for (int k = 0; k < a.cols; ++k) {
            const T s = arow[k];
            if (s == T(0)) continue;
            axpy(s, brow, c.data.data() + static_cast<size_t>(k) * c.cols, b.cols);
        }
    }
}

// C (+)= A * B^T, used for input gradients (B holds weights).
template <typename T>
void matmul_a_bt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate = false) {
    if (a.cols != b.cols || c.rows != a.rows || c.cols != b.rows)
        throw ShapeError("matmul_a_bt: incompatible shapes");
    if (!accumulate) c.fill(T(0));
    for (int i = 0; i < a.rows; ++i) {
        const T* arow = a.data.data() + static_cast<size_t>(i) * a.cols;
        T* crow = c.data.data() + static_cast<size_t>(i) * c.cols;
        for (int j = 0; j < b.rows; ++j)
            crow[j] += dot(arow, b.data.data() + static_cast<size_t>(j) * b.cols, a.cols);
    }
}

// y (+)= x^T * W for a single row vector x (1 x in), W (in x out).
template <typename T>
void vecmat(std::span<const T> x, const Matrix<T>& w, std::span<T> y, bool accumulate = false) {
    if (static_cast<int>(x.size()) != w.rows || static_cast<int>(y.size()) != w.cols)
        throw ShapeError("vecmat: incompatible shapes");
    if (!accumulate) std::fill(y.begin(), y.end(), T(0));
    for (int k = 0; k < w.rows; ++k) {
        const T s = x[k];
        if (s == T(0)) continue;
        axpy(s, w.data.data() + static_cast<size_t>(k) * w.cols, y.data(), w.cols);
    }
}

}  // namespace sinkcache
