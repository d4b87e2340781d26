#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sinkcache/errors.hpp"
#include "sinkcache/matrix.hpp"

namespace sinkcache {

// Rotary embedding: rotate each adjacent pair (v[2i], v[2i+1]) by
// position * base^(-2i/d). Angles are always computed in double so the
// float and double evaluation paths see the same rotations.
template <typename T>
void rope_rotate_pair_angles(int d_head, double rope_base, int64_t position, std::span<T> cos_out,
                             std::span<T> sin_out) {
    const int half = d_head / 2;
    for (int i = 0; i < half; ++i) {
        const double theta = std::pow(rope_base, -2.0 * i / d_head);
        const double angle = static_cast<double>(position) * theta;
        cos_out[i] = static_cast<T>(std::cos(angle));
        sin_out[i] = static_cast<T>(std::sin(angle));
    }
}

template <typename T>
inline void rope_apply_tabled(std::span<const T> v, std::span<const T> cos_row,
                              std::span<const T> sin_row, std::span<T> out) {
    const int half = static_cast<int>(v.size()) / 2;
    for (int i = 0; i < half; ++i) {
        const T c = cos_row[i], s = sin_row[i];
        const T a = v[2 * i], b = v[2 * i + 1];
        out[2 * i] = c * a - s * b;
        out[2 * i + 1] = s * a + c * b;
    }
}

template <typename T>
std::vector<T> apply_rope(std::span<const T> v, int64_t position, double rope_base = 10000.0) {
    if (v.size() % 2 != 0) throw ConfigError("apply_rope: head dimension must be even");
    if (position < 0) throw IndexError("apply_rope: negative position");
    const int d = static_cast<int>(v.size());
    std::vector<T> c(d / 2), s(d / 2), out(d);
    rope_rotate_pair_angles<T>(d, rope_base, position, c, s);
    rope_apply_tabled<T>(v, c, s, out);
    return out;
}

// Precomputed cos/sin rows per position. Rows are (d_head/2) wide.
template <typename T>
struct RopeTable {
    int d_head = 0;
    double base = 10000.0;
    Matrix<T> cos_rows, sin_rows;

    RopeTable() = default;
    RopeTable(int d_head_, double base_) : d_head(d_head_), base(base_) {}

    void ensure(int64_t n_positions) {
        if (cos_rows.rows >= n_positions) return;
        int64_t n = std::max<int64_t>(n_positions, std::max<int64_t>(64, cos_rows.rows * 2));
        Matrix<T> c(static_cast<int>(n), d_head / 2), s(static_cast<int>(n), d_head / 2);
        for (int64_t p = 0; p < n; ++p) rope_rotate_pair_angles<T>(d_head, base, p, c.row(p), s.row(p));
        cos_rows = std::move(c);
        sin_rows = std::move(s);
    }

    void rotate(std::span<const T> v, int64_t position, std::span<T> out) const {
        rope_apply_tabled<T>(v, cos_rows.row(position), sin_rows.row(position), out);
    }

    // Inverse rotation (used when back-propagating through the rotation).
    void rotate_inverse(std::span<const T> v, int64_t position, std::span<T> out) const {
        const int half = d_head / 2;
        auto c_row = cos_rows.row(position);
        auto s_row = sin_rows.row(position);
        for (int i = 0; i < half; ++i) {
            const T c = c_row[i], s = s_row[i];
            const T a = v[2 * i], b = v[2 * i + 1];
            out[2 * i] = c * a + s * b;
            out[2 * i + 1] = -s * a + c * b;
        }
    }
};

// ALiBi head slopes follow the geometric schedule 2^(-8(h+1)/H).
inline double alibi_slope(int head, int n_heads) {
    return std::exp2(-8.0 * (head + 1) / n_heads);
}

// Linear distance penalty on attention scores. Positions are cache
// positions, so the bias over a rolling cache stays contiguous instead of
// jumping when tokens are evicted.
template <typename T = float>
T alibi_bias(int head, int64_t query_pos, int64_t key_pos, int n_heads) {
    if (key_pos > query_pos) throw CausalityError("alibi_bias: key position after query");
    return static_cast<T>(-alibi_slope(head, n_heads) * static_cast<double>(query_pos - key_pos));
}

}  // namespace sinkcache
