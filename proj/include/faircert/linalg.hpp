#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "faircert/errors.hpp"

namespace faircert {

using VecD = std::vector<double>;

/// Dense row-major matrix of doubles. Sizes in this project are tiny
/// (dims of a few hundred at most), so no BLAS backing is needed.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

inline bool all_finite(const VecD& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const Matrix& m) {
    for (double x : m.data)
        if (!std::isfinite(x)) return false;
    return true;
}

/// y = A x
inline VecD matvec(const Matrix& a, const VecD& x) {
    if (a.cols != x.size())
        throw InvalidArgument("matvec: shape mismatch " + std::to_string(a.cols) +
                              " vs " + std::to_string(x.size()));
    VecD y(a.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* r = a.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) acc += r[j] * x[j];
        y[i] = acc;
    }
    return y;
}

/// y = x W + b for a row vector x (x: 1×in, W: in×out).
inline VecD rowvec_mat(const VecD& x, const Matrix& w, const VecD& b) {
    if (w.rows != x.size() || w.cols != b.size())
        throw InvalidArgument("rowvec_mat: shape mismatch");
    VecD y = b;
    for (std::size_t i = 0; i < w.rows; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* r = w.row(i);
        for (std::size_t j = 0; j < w.cols; ++j) y[j] += xi * r[j];
    }
    return y;
}

/// C = A B
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw InvalidArgument("matmul: shape mismatch");
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            const double* br = b.row(k);
            double* cr = c.row(i);
            for (std::size_t j = 0; j < b.cols; ++j) cr[j] += aik * br[j];
        }
    }
    return c;
}

inline double dot(const VecD& a, const VecD& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm_l2(const VecD& v) { return std::sqrt(dot(v, v)); }

inline double norm_linf(const VecD& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

inline VecD sub(const VecD& a, const VecD& b) {
    VecD r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

inline VecD add(const VecD& a, const VecD& b) {
    VecD r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
}

}  // namespace faircert
