#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "sinkcache/errors.hpp"
#include "sinkcache/matrix.hpp"

namespace sinkcache {

template <typename T>
inline void check_finite(std::span<const T> x, const char* what) {
    for (T v : x)
        if (!std::isfinite(v)) throw NonFiniteError(std::string(what) + ": non-finite input");
}

// Standard softmax, stabilized by max-subtraction. Output sums to 1.
template <typename T>
inline void softmax_inplace(T* x, int n) {
    T m = x[0];
    for (int i = 1; i < n; ++i) m = std::max(m, x[i]);
    T denom = 0;
    for (int i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - m);
        denom += x[i];
    }
    const T inv = T(1) / denom;
    for (int i = 0; i < n; ++i) x[i] *= inv;
}

template <typename T>
std::vector<T> softmax(std::span<const T> x) {
    if (x.empty()) throw EmptyInputError("softmax: empty input");
    check_finite(x, "softmax");
    std::vector<T> out(x.begin(), x.end());
    softmax_inplace(out.data(), static_cast<int>(out.size()));
    return out;
}

// Softmax with an implicit extra score of zero in the denominator, so the
// outputs sum to at most 1 and may all vanish. Stabilized with
// m = max(0, max x): the implicit term becomes e^{-m} and never overflows.
// The denominator is accumulated in the same order as softmax over
// [0, x...], so the two routes agree bit-for-bit.
template <typename T>
inline void softmax1_inplace(T* x, int n) {
    T m = T(0);
    for (int i = 0; i < n; ++i) m = std::max(m, x[i]);
    T denom = std::exp(-m);
    for (int i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - m);
        denom += x[i];
    }
    const T inv = T(1) / denom;
    for (int i = 0; i < n; ++i) x[i] *= inv;
}

template <typename T>
std::vector<T> softmax1(std::span<const T> x) {
    check_finite(x, "softmax1");
    std::vector<T> out(x.begin(), x.end());
    if (!out.empty()) softmax1_inplace(out.data(), static_cast<int>(out.size()));
    return out;
}

// Jacobian-vector product shared by both softmax variants:
//   dz_i = p_i * (dp_i - sum_j p_j dp_j).
// For softmax1 the same formula applies with p summing to <= 1 (the implicit
// slot has zero value, so it contributes nothing to the inner sum).
template <typename T>
inline void softmax_backward(std::span<const T> p, std::span<const T> dp, std::span<T> dz) {
    const int n = static_cast<int>(p.size());
    T s = 0;
    for (int i = 0; i < n; ++i) s += p[i] * dp[i];
    for (int i = 0; i < n; ++i) dz[i] = p[i] * (dp[i] - s);
}

template <typename T>
inline T log_sum_exp(std::span<const T> x) {
    T m = x[0];
    for (size_t i = 1; i < x.size(); ++i) m = std::max(m, x[i]);
    T s = 0;
    for (T v : x) s += std::exp(v - m);
    return m + std::log(s);
}

// Negative log-likelihood of `target` under softmax(logits).
template <typename T>
T cross_entropy(std::span<const T> logits, int target) {
    if (logits.empty()) throw EmptyInputError("cross_entropy: empty logits");
    if (target < 0 || target >= static_cast<int>(logits.size()))
        throw IndexError("cross_entropy: target out of range");
    const T nll = log_sum_exp(logits) - logits[target];
    return std::max(nll, T(0));
}

inline constexpr double kInvSqrt2 = 0.7071067811865476;

template <typename T>
inline T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(kInvSqrt2)));
}

template <typename T>
inline T gelu_grad(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x * T(kInvSqrt2)));
    const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
    return cdf + x * pdf;
}

inline constexpr double kRmsNormEps = 1e-5;

// y_i = g_i * x_i / sqrt(mean(x^2) + eps). Returns 1/rms for the backward.
template <typename T>
inline T rmsnorm(std::span<const T> x, std::span<const T> gain, std::span<T> y) {
    const int n = static_cast<int>(x.size());
    T ms = 0;
    for (int i = 0; i < n; ++i) ms += x[i] * x[i];
    const T inv = T(1) / std::sqrt(ms / T(n) + T(kRmsNormEps));
    for (int i = 0; i < n; ++i) y[i] = gain[i] * x[i] * inv;
    return inv;
}

// Accumulates into dx and dgain.
template <typename T>
inline void rmsnorm_backward(std::span<const T> x, std::span<const T> gain, T inv_rms,
                             std::span<const T> dy, std::span<T> dx, std::span<T> dgain) {
    const int n = static_cast<int>(x.size());
    T s = 0;  // sum_i dy_i * g_i * x_i
    for (int i = 0; i < n; ++i) s += dy[i] * gain[i] * x[i];
    const T c = s * inv_rms * inv_rms * inv_rms / T(n);
    for (int i = 0; i < n; ++i) {
        dx[i] += dy[i] * gain[i] * inv_rms - c * x[i];
        dgain[i] += dy[i] * x[i] * inv_rms;
    }
}

}  // namespace sinkcache
