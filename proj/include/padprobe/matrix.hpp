#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "padprobe/error.hpp"

namespace padprobe {

// Dense row-major binary32 matrix. Rows are token or patch vectors.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            fail(ErrorCode::ShapeMismatch, "matrix data size does not match rows*cols");
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return data_.empty(); }

    float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    const std::vector<float>& values() const noexcept { return data_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

namespace linalg {

// out = a * w, where a is (m x k) and w is (k x n). Accumulates in double.
inline Matrix matmul(const Matrix& a, const Matrix& w) {
    if (a.cols() != w.rows()) fail(ErrorCode::DimensionMismatch, "matmul inner dimension");
    Matrix out(a.rows(), w.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < a.cols(); ++p)
                acc += static_cast<double>(a(i, p)) * static_cast<double>(w(p, j));
            out(i, j) = static_cast<float>(acc);
        }
    }
    return out;
}

inline double dot(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

inline double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

// In-place numerically stable softmax over one row of logits.
inline void softmax(std::span<double> logits) {
    if (logits.empty()) return;
    double mx = logits[0];
    for (double v : logits) mx = v > mx ? v : mx;
    double sum = 0.0;
    for (double& v : logits) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : logits) v /= sum;
}

// Scales each row to unit root-mean-square.
inline void rms_normalize_rows(Matrix& m, double eps = 1e-6) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        double ss = 0.0;
        for (float v : row) ss += static_cast<double>(v) * v;
        const double scale = 1.0 / std::sqrt(ss / static_cast<double>(row.size()) + eps);
        for (float& v : row) v = static_cast<float>(v * scale);
    }
}

inline std::vector<float> normalized(std::span<const float> v) {
    const double n = norm(v);
    std::vector<float> out(v.begin(), v.end());
    if (n > 0.0)
        for (float& x : out) x = static_cast<float>(x / n);
    return out;
}

}  // namespace linalg
}  // namespace padprobe
