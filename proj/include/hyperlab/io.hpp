// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "hyperlab/model.hpp"

namespace hyperlab {

nlohmann::json to_json(const Architecture& arch);
/// Strict: unknown keys and missing fields raise ConfigError.
Architecture architecture_from_json(const nlohmann::json& j);

// ---- adapter checkpoints ----------------------------------------------------
//
// {"format": "hyperlab-adapter-checkpoint", "version": 1, "layers": [
//    {"name", "kind", "shape": [n, m], "params": {...}, "bias"?: [...]}, ...]}
//
// params: hyper {a, b}; lora {B, A, alpha, r, dropout} with B and A row-major;
// full {W}; frozen {}. Doubles are written in shortest round-trip form.

nlohmann::json layer_to_json(const std::string& name, const AdapterLayer& layer);
std::string checkpoint_to_string(const Model& model);

/// Throws ParseError carrying the byte offset of malformed input.
nlohmann::json parse_checkpoint(std::string_view text);

/// Re-creates the adapted model from its frozen base and a checkpoint.
/// Throws StructuralError when names or shapes disagree.
Model apply_checkpoint(const Model& base, const nlohmann::json& checkpoint);

// ---- dense weight files -----------------------------------------------------
//
// A directory holding manifest.json plus one raw little-endian float64 blob per
// tensor, named "<tensor>.bin". Linear layers store their effective weight as
// "<layer>.weight" (and "<layer>.bias"); aux tensors use their own names.

void save_weights(const Model& model, const std::filesystem::path& dir);
/// Loads a model whose linear layers are all Frozen.
Model load_weights(const std::filesystem::path& dir);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace hyperlab
