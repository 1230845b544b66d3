// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "hyperlab/svd.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <fmt/format.h>

#include "hyperlab/errors.hpp"

namespace hyperlab {

namespace {

double dot(const std::vector<double>& x, const std::vector<double>& y) {
    double acc = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        acc += x[k] * y[k];
    }
    return acc;
}

}  // namespace

Spectrum svd_values(const Matrix& m, const SvdOptions& options) {
    require_finite(m.values(), "svd_values");
    // Orthogonalize the shorter dimension: columns of a tall working matrix.
    const bool tall = m.rows() >= m.cols();
    const std::size_t len = tall ? m.rows() : m.cols();
    const std::size_t count = tall ? m.cols() : m.rows();

    std::vector<std::vector<double>> cols(count, std::vector<double>(len));
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (tall) {
                cols[j][i] = m(i, j);
            } else {
                cols[i][j] = m(i, j);
            }
        }
    }

    std::vector<double> norms(count);
    for (std::size_t c = 0; c < count; ++c) {
        norms[c] = dot(cols[c], cols[c]);
    }
    double total = 0.0;
    for (double v : norms) {
        total += v;
    }
    // Columns whose squared norm falls below this are numerically zero.
    const double negligible = total * 1e-32;

    bool converged = count < 2 || total == 0.0;
    std::size_t sweep = 0;
    while (!converged) {
        if (sweep == options.max_sweeps) {
            throw NumericError(
                fmt::format("svd_values: no convergence after {} sweeps", options.max_sweeps),
                sweep);
        }
        ++sweep;
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < count; ++p) {
            for (std::size_t q = p + 1; q < count; ++q) {
                const double alpha = norms[p];
                const double beta = norms[q];
                if (alpha <= negligible || beta <= negligible) {
                    continue;
                }
                const double gamma = dot(cols[p], cols[q]);
                const double coupling = std::abs(gamma) / std::sqrt(alpha * beta);
                off = std::max(off, coupling);
                if (coupling <= options.tolerance) {
                    continue;
                }
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                auto& x = cols[p];
                auto& y = cols[q];
                for (std::size_t k = 0; k < len; ++k) {
                    const double xk = x[k];
                    const double yk = y[k];
                    x[k] = c * xk - s * yk;
                    y[k] = s * xk + c * yk;
                }
                norms[p] = dot(x, x);
                norms[q] = dot(y, y);
            }
        }
        converged = off <= options.tolerance;
    }

    Spectrum out;
    out.values.reserve(count);
    for (std::size_t c = 0; c < count; ++c) {
        out.values.push_back(std::sqrt(dot(cols[c], cols[c])));
    }
    std::sort(out.values.begin(), out.values.end(), std::greater<>());
    return out;
}

std::size_t count_at_or_above(const Spectrum& s, double abs_threshold) {
    return static_cast<std::size_t>(
        std::count_if(s.values.begin(), s.values.end(),
                      [abs_threshold](double v) { return v >= abs_threshold; }));
}

std::size_t numerical_rank(const Matrix& m, double abs_threshold) {
    if (!(abs_threshold > 0.0)) {
        throw std::invalid_argument("numerical_rank: threshold must be positive");
    }
    return count_at_or_above(svd_values(m), abs_threshold);
}

std::size_t exact_rank(const Spectrum& s) {
    const double top = s.largest();
    if (top == 0.0) {
        return 0;
    }
    return count_at_or_above(s, kExactRankRelTol * top);
}

std::size_t exact_rank(const Matrix& m) { return exact_rank(svd_values(m)); }

}  // namespace hyperlab
