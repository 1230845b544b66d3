// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <string_view>

namespace hyperlab {

std::string sha256_hex(std::string_view bytes);
std::string sha256_hex(std::span<const double> values);

/// SHA-256 over "blob <size>\0<content>", mirroring git's object framing.
std::string content_hash(std::string_view content);

}  // namespace hyperlab
