// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "hyperlab/matrix.hpp"

namespace hyperlab {

/// Singular values sorted in non-increasing order, all non-negative.
struct Spectrum {
    std::vector<double> values;

    double largest() const noexcept { return values.empty() ? 0.0 : values.front(); }
};

struct SvdOptions {
    // Largest tolerated |<c_i, c_j>| / (|c_i| |c_j|) between working columns.
    double tolerance = 1e-12;
    std::size_t max_sweeps = 100;
};

/// One-sided Jacobi SVD returning all min(n, m) singular values.
/// Throws NumericError (carrying the sweep count) if it does not converge.
Spectrum svd_values(const Matrix& m, const SvdOptions& options = {});

/// Number of singular values >= abs_threshold.
std::size_t numerical_rank(const Matrix& m, double abs_threshold);
std::size_t count_at_or_above(const Spectrum& s, double abs_threshold);

// Relative cutoff used for "exact" rank: sigma >= kExactRankRelTol * sigma_1.
inline constexpr double kExactRankRelTol = 1e-9;

std::size_t exact_rank(const Matrix& m);
std::size_t exact_rank(const Spectrum& s);

}  // namespace hyperlab
