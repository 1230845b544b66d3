// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "hyperlab/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include <fmt/format.h>

#include "hyperlab/errors.hpp"

namespace hyperlab {

void require_finite(std::span<const double> values, const char* where) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw NumericError(fmt::format("{}: non-finite value at element {}", where, i), 0);
        }
    }
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionError(
            fmt::format("matrix {}x{} needs {} values, got {}", rows_, cols_, rows_ * cols_,
                        data_.size()));
    }
    require_finite(data_, "Matrix");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) {
            throw DimensionError("ragged matrix literal");
        }
        data_.insert(data_.end(), r.begin(), r.end());
    }
    require_finite(data_, "Matrix");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Vector::Vector(std::vector<double> data) : data_(std::move(data)) {
    require_finite(data_, "Vector");
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError(fmt::format("matmul: {}x{} times {}x{}", a.rows(), a.cols(),
                                         b.rows(), b.cols()));
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) {
                continue;
            }
            auto src = b.row(k);
            for (std::size_t j = 0; j < dst.size(); ++j) {
                dst[j] += aik * src[j];
            }
        }
    }
    require_finite(out.values(), "matmul");
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError(fmt::format("matmul_nt: {}x{} times ({}x{})^T", a.rows(), a.cols(),
                                         b.rows(), b.cols()));
    }
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ai = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            auto bj = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < ai.size(); ++k) {
                acc += ai[k] * bj[k];
            }
            out(i, j) = acc;
        }
    }
    require_finite(out.values(), "matmul_nt");
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError(fmt::format("matmul_tn: ({}x{})^T times {}x{}", a.rows(), a.cols(),
                                         b.rows(), b.cols()));
    }
    Matrix out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        auto ak = a.row(k);
        auto bk = b.row(k);
        for (std::size_t i = 0; i < ak.size(); ++i) {
            const double aki = ak[i];
            if (aki == 0.0) {
                continue;
            }
            auto dst = out.row(i);
            for (std::size_t j = 0; j < bk.size(); ++j) {
                dst[j] += aki * bk[j];
            }
        }
    }
    require_finite(out.values(), "matmul_tn");
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(
            fmt::format("{}: {}x{} vs {}x{}", op, a.rows(), a.cols(), b.rows(), b.cols()));
    }
}

}  // namespace

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix out = a;
    auto dst = out.values();
    auto src = b.values();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
    require_finite(out.values(), "add");
    return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "subtract");
    Matrix out = a;
    auto dst = out.values();
    auto src = b.values();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] -= src[i];
    }
    require_finite(out.values(), "subtract");
    return out;
}

Matrix scaled(const Matrix& a, double factor) {
    Matrix out = a;
    for (double& v : out.values()) {
        v *= factor;
    }
    require_finite(out.values(), "scaled");
    return out;
}

Matrix diag_matrix(const Vector& d) {
    Matrix out(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        out(i, i) = d[i];
    }
    return out;
}

Matrix scale_rows_cols(const Matrix& w0, const Vector& a, const Vector& b) {
    if (a.size() != w0.rows() || b.size() != w0.cols()) {
        throw DimensionError(fmt::format("scale_rows_cols: weight {}x{}, row scale {}, col scale {}",
                                         w0.rows(), w0.cols(), a.size(), b.size()));
    }
    Matrix out(w0.rows(), w0.cols());
    for (std::size_t i = 0; i < w0.rows(); ++i) {
        auto src = w0.row(i);
        auto dst = out.row(i);
        // Same association as the reference forward: (w0 * a) * b.
        for (std::size_t j = 0; j < src.size(); ++j) {
            dst[j] = src[j] * a[i] * b[j];
        }
    }
    require_finite(out.values(), "scale_rows_cols");
    return out;
}

double frobenius_norm(const Matrix& a) {
    // Scaled accumulation avoids overflow for large entries.
    double scale = 0.0;
    for (double v : a.values()) {
        scale = std::max(scale, std::abs(v));
    }
    if (scale == 0.0) {
        return 0.0;
    }
    double acc = 0.0;
    for (double v : a.values()) {
        const double t = v / scale;
        acc += t * t;
    }
    return scale * std::sqrt(acc);
}

double relative_error(const Matrix& a, const Matrix& b) {
    const double diff = frobenius_norm(subtract(a, b));
    const double ref = frobenius_norm(b);
    if (ref == 0.0) {
        return diff;
    }
    return diff / ref;
}

std::vector<double> solve_linear(Matrix m, std::vector<double> rhs) {
    const std::size_t n = m.rows();
    if (m.cols() != n || rhs.size() != n) {
        throw DimensionError("solve_linear: system must be square and conform to rhs");
    }
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(m(r, col)) > std::abs(m(pivot, col))) {
                pivot = r;
            }
        }
        if (m(pivot, col) == 0.0) {
            throw NumericError("solve_linear: singular system", col);
        }
        if (pivot != col) {
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(m(col, j), m(pivot, j));
            }
            std::swap(rhs[col], rhs[pivot]);
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = m(r, col) / m(col, col);
            if (f == 0.0) {
                continue;
            }
            for (std::size_t j = col; j < n; ++j) {
                m(r, j) -= f * m(col, j);
            }
            rhs[r] -= f * rhs[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double acc = rhs[i];
        for (std::size_t j = i + 1; j < n; ++j) {
            acc -= m(i, j) * x[j];
        }
        x[i] = acc / m(i, i);
    }
    require_finite(x, "solve_linear");
    return x;
}

}  // namespace hyperlab
