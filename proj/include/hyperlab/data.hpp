// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "hyperlab/matrix.hpp"

namespace hyperlab {

/// Rows of x (count x in_dim) paired with rows of y (count x out_dim).
struct RegressionData {
    Matrix x;
    Matrix y;

    std::size_t size() const noexcept { return x.rows(); }
};

/// `count` token sequences of length `len`, row-major, with per-position targets.
struct SequenceData {
    std::size_t count = 0;
    std::size_t len = 0;
    std::size_t vocab = 0;
    std::vector<int> tokens;
    std::vector<int> targets;

    std::size_t size() const noexcept { return count; }
    std::span<const int> sequence(std::size_t i) const { return {tokens.data() + i * len, len}; }
    std::span<const int> target(std::size_t i) const { return {targets.data() + i * len, len}; }
};

using Dataset = std::variant<RegressionData, SequenceData>;

std::size_t dataset_size(const Dataset& data);
Dataset gather(const Dataset& data, std::span<const std::size_t> indices);
/// Contiguous slice [begin, begin + count).
Dataset slice(const Dataset& data, std::size_t begin, std::size_t count);

/// JSON-lines: {"x":[...],"y":[...]} or {"tokens":[...],"target":[...]} per example.
std::string to_jsonl(const Dataset& data);
Dataset dataset_from_jsonl(const std::string& text);

}  // namespace hyperlab
