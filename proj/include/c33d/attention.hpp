#pragma once

#include <cstddef>
#include <vector>

namespace c33d {

// Dense row-major matrix; rows are token features.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

Matrix matmul(const Matrix& a, const Matrix& b);  // throws ShapeError

struct AttentionProjections {
    Matrix w_q;  // in_dim x key_dim
    Matrix w_k;  // in_dim x key_dim
    Matrix w_v;  // in_dim x value_dim
};

struct AttentionResult {
    Matrix output;   // queries x value_dim
    Matrix weights;  // queries x keys, row-stochastic
};

// Softmax(Q K^T / sqrt(d)) V with Q = query_rows W_q, K = kv_rows W_k,
// V = kv_rows W_v. Passing the same rows for both sources gives ordinary
// self-attention; passing reference rows as kv_rows injects their keys and
// values.
AttentionResult mself_attn(const Matrix& query_rows, const Matrix& kv_rows, const AttentionProjections& proj,
                           double key_dim);

}  // namespace c33d
