// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hyperlab {

// Shape or length disagreement between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Iterative method failed to converge, or a non-finite value appeared.
class NumericError : public std::runtime_error {
public:
    NumericError(const std::string& what, std::size_t iteration)
        : std::runtime_error(what), iteration_(iteration) {}

    std::size_t iteration() const noexcept { return iteration_; }

private:
    std::size_t iteration_;
};

// Invalid or inconsistent configuration. `line` is 0 when unknown.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what, std::size_t line = 0)
        : std::runtime_error(what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Two objects that should share an architecture do not.
class StructuralError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed file content. `byte_offset` points at the failure position.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t byte_offset)
        : std::runtime_error(what), byte_offset_(byte_offset) {}

    std::size_t byte_offset() const noexcept { return byte_offset_; }

private:
    std::size_t byte_offset_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace hyperlab
