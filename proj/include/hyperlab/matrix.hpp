// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace hyperlab {

/// Dense row-major matrix of 64-bit floats.
///
/// Every public operation that produces a Matrix guarantees finite entries;
/// a non-finite result raises NumericError instead of propagating silently.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const noexcept {
        return {data_.data() + i * cols_, cols_};
    }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Dense vector; used for the diagonals of row/column scalings and biases.
class Vector {
public:
    Vector() = default;
    explicit Vector(std::size_t len, double fill = 0.0) : data_(len, fill) {}
    explicit Vector(std::vector<double> data);
    Vector(std::initializer_list<double> values) : Vector(std::vector<double>(values)) {}

    std::size_t size() const noexcept { return data_.size(); }
    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    bool operator==(const Vector& other) const = default;

private:
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
// a · bᵀ without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// aᵀ · b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scaled(const Matrix& a, double factor);
Matrix diag_matrix(const Vector& d);

/// W[i][j] = a[i] * w0[i][j] * b[j], i.e. diag(a) · w0 · diag(b) in O(n·m).
Matrix scale_rows_cols(const Matrix& w0, const Vector& a, const Vector& b);

double frobenius_norm(const Matrix& a);
/// ||a - b||_F / max(||b||_F, tiny); 0 when both are zero.
double relative_error(const Matrix& a, const Matrix& b);

/// Solves the square system m · x = rhs by partial-pivot elimination.
std::vector<double> solve_linear(Matrix m, std::vector<double> rhs);

void require_finite(std::span<const double> values, const char* where);

}  // namespace hyperlab
