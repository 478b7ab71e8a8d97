#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ssfam/error.hpp"

namespace ssfam {

/// Dense row-major float matrix. Every activation in the network is a
/// (tokens x channels) matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols, float fill = 0.0f)
        : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
        if (rows < 0 || cols < 0) throw ShapeError("negative matrix dimension");
    }
    Matrix(int rows, int cols, std::vector<float> values) : rows_(rows), cols_(cols), data_(std::move(values)) {
        if (data_.size() != static_cast<std::size_t>(rows) * cols) {
            throw ShapeError("matrix data size " + std::to_string(data_.size()) + " does not match " +
                             std::to_string(rows) + "x" + std::to_string(cols));
        }
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    float operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    std::span<float> row(int r) { return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)}; }
    std::span<const float> row(int r) const {
        return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)};
    }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }
    std::vector<float>& storage() { return data_; }
    const std::vector<float>& storage() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    std::string shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

    Matrix& operator+=(const Matrix& o) {
        require_same(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
    }

    void require_same(const Matrix& o, const char* op) const {
        if (!same_shape(o)) throw ShapeError(std::string(op) + ": " + shape_string() + " vs " + o.shape_string());
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<float> data_;
};

inline float max_abs_diff(const Matrix& a, const Matrix& b) {
    a.require_same(b, "max_abs_diff");
    float m = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

namespace kernels {

/// c (n x m) += a (n x k) * b (k x m)
inline void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c) {
    const int n = a.rows(), k = a.cols(), m = b.cols();
    for (int i = 0; i < n; ++i) {
        float* ci = c.row(i).data();
        const float* ai = a.row(i).data();
        for (int p = 0; p < k; ++p) {
            const float av = ai[p];
            if (av == 0.0f) continue;
            const float* bp = b.row(p).data();
            for (int j = 0; j < m; ++j) ci[j] += av * bp[j];
        }
    }
}

/// c (n x m) += a (n x k) * b^T, b is (m x k)
inline void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c) {
    const int n = a.rows(), k = a.cols(), m = b.rows();
    for (int i = 0; i < n; ++i) {
        const float* ai = a.row(i).data();
        float* ci = c.row(i).data();
        for (int j = 0; j < m; ++j) {
            const float* bj = b.row(j).data();
            float acc0 = 0.0f, acc1 = 0.0f, acc2 = 0.0f, acc3 = 0.0f;
            int p = 0;
            for (; p + 3 < k; p += 4) {
                acc0 += ai[p] * bj[p];
                acc1 += ai[p + 1] * bj[p + 1];
                acc2 += ai[p + 2] * bj[p + 2];
                acc3 += ai[p + 3] * bj[p + 3];
            }
            for (; p < k; ++p) acc0 += ai[p] * bj[p];
            ci[j] += (acc0 + acc1) + (acc2 + acc3);
        }
    }
}

/// c (k x m) += a^T * b, a is (n x k), b is (n x m)
inline void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c) {
    const int n = a.rows(), k = a.cols(), m = b.cols();
    for (int i = 0; i < n; ++i) {
        const float* ai = a.row(i).data();
        const float* bi = b.row(i).data();
        for (int p = 0; p < k; ++p) {
            const float av = ai[p];
            if (av == 0.0f) continue;
            float* cp = c.row(p).data();
            for (int j = 0; j < m; ++j) cp[j] += av * bi[j];
        }
    }
}

}  // namespace kernels

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: " + a.shape_string() + " * " + b.shape_string());
    Matrix c(a.rows(), b.cols());
    kernels::gemm_nn(a, b, c);
    return c;
}

inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw ShapeError("matmul_nt: " + a.shape_string() + " * (" + b.shape_string() + ")^T");
    Matrix c(a.rows(), b.rows());
    kernels::gemm_nt(a, b, c);
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
    return t;
}

}  // namespace ssfam
