#include "c33d/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "c33d/error.hpp"

namespace c33d {

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) + " times " +
                         std::to_string(b.rows) + "x" + std::to_string(b.cols));
    Matrix out(a.rows, b.cols);
    const std::size_t n = b.cols;
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* __restrict o = out.data.data() + i * n;
        const double* arow = a.data.data() + i * a.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            const double* __restrict brow = b.data.data() + k * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += aik * brow[j];
        }
    }
    return out;
}

AttentionResult mself_attn(const Matrix& query_rows, const Matrix& kv_rows, const AttentionProjections& proj,
                           double key_dim) {
    if (!(key_dim > 0.0)) throw ShapeError("mself_attn: key dimension must be positive");
    if (proj.w_q.cols != proj.w_k.cols) throw ShapeError("mself_attn: W_Q and W_K key widths differ");
    if (kv_rows.rows == 0) throw ShapeError("mself_attn: no key/value rows");
    const Matrix q = matmul(query_rows, proj.w_q);
    const Matrix k = matmul(kv_rows, proj.w_k);
    const Matrix v = matmul(kv_rows, proj.w_v);

    AttentionResult res;
    res.weights = Matrix(q.rows, k.rows);
    res.output = Matrix(q.rows, v.cols);
    const double inv_scale = 1.0 / std::sqrt(key_dim);
    const std::size_t kd = q.cols;
    const std::size_t nk = k.rows;
    const std::size_t vd = v.cols;
    for (std::size_t i = 0; i < q.rows; ++i) {
        const double* qi = q.data.data() + i * kd;
        double* w = res.weights.data.data() + i * nk;
        double row_max = -INFINITY;
        for (std::size_t j = 0; j < nk; ++j) {
            const double* kj = k.data.data() + j * kd;
            double s = 0.0;
            for (std::size_t c = 0; c < kd; ++c) s += qi[c] * kj[c];
            w[j] = s * inv_scale;
            row_max = std::max(row_max, w[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < nk; ++j) {
            w[j] = std::exp(w[j] - row_max);
            total += w[j];
        }
        const double inv_total = 1.0 / total;
        double* o = res.output.data.data() + i * vd;
        for (std::size_t j = 0; j < nk; ++j) {
            w[j] *= inv_total;
            const double* vj = v.data.data() + j * vd;
            for (std::size_t c = 0; c < vd; ++c) o[c] += w[j] * vj[c];
        }
    }
    return res;
}

}  // namespace c33d
