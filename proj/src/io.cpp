// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "hyperlab/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <map>
#include <optional>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "hyperlab/errors.hpp"
#include "hyperlab/hash.hpp"

namespace hyperlab {

using nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "weight blobs are written in host order and must be little-endian");

namespace {

constexpr const char* kCheckpointFormat = "hyperlab-adapter-checkpoint";
constexpr const char* kWeightsFormat = "hyperlab-weights";

void reject_unknown(const json& j, std::initializer_list<const char*> allowed,
                    const std::string& where) {
    std::set<std::string> keys(allowed.begin(), allowed.end());
    for (const auto& item : j.items()) {
        if (!keys.contains(item.key())) {
            throw ConfigError(fmt::format("{}: unknown key '{}'", where, item.key()));
        }
    }
}

std::vector<double> values_of(const json& j, std::size_t expected, const std::string& what) {
    auto v = j.get<std::vector<double>>();
    if (v.size() != expected) {
        throw StructuralError(
            fmt::format("{} holds {} values, expected {}", what, v.size(), expected));
    }
    return v;
}

void copy_into(std::span<double> dst, const std::vector<double>& src) {
    std::copy(src.begin(), src.end(), dst.begin());
}

}  // namespace

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(fmt::format("cannot open '{}'", path.string()));
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, std::string_view content) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError(fmt::format("cannot write '{}'", path.string()));
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
        throw IoError(fmt::format("short write to '{}'", path.string()));
    }
}

json to_json(const Architecture& arch) {
    if (const auto* mlp = std::get_if<MlpSpec>(&arch)) {
        return {{"kind", "mlp"},
                {"widths", mlp->widths},
                {"activation", activation_name(mlp->activation)},
                {"bias", mlp->bias}};
    }
    const auto& tf = std::get<TransformerSpec>(arch);
    return {{"kind", "tiny_transformer"}, {"vocab", tf.vocab},     {"d_model", tf.d_model},
            {"n_layers", tf.n_layers},    {"n_heads", tf.n_heads}, {"d_ff", tf.d_ff},
            {"max_seq", tf.max_seq}};
}

Architecture architecture_from_json(const json& j) {
    try {
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "mlp") {
            reject_unknown(j, {"kind", "widths", "activation", "bias"}, "model");
            MlpSpec spec;
            spec.widths = j.at("widths").get<std::vector<std::size_t>>();
            spec.activation = parse_activation(j.value("activation", std::string("identity")));
            spec.bias = j.value("bias", false);
            if (spec.widths.size() < 2 ||
                std::find(spec.widths.begin(), spec.widths.end(), 0) != spec.widths.end()) {
                throw ConfigError("model.widths needs at least two positive entries");
            }
            return spec;
        }
        if (kind == "tiny_transformer") {
            reject_unknown(j, {"kind", "vocab", "d_model", "n_layers", "n_heads", "d_ff", "max_seq"},
                           "model");
            TransformerSpec spec;
            spec.vocab = j.value("vocab", spec.vocab);
            spec.d_model = j.value("d_model", spec.d_model);
            spec.n_layers = j.value("n_layers", spec.n_layers);
            spec.n_heads = j.value("n_heads", spec.n_heads);
            spec.d_ff = j.value("d_ff", spec.d_ff);
            spec.max_seq = j.value("max_seq", spec.max_seq);
            if (spec.n_heads != 1) {
                throw ConfigError("model.n_heads must be 1");
            }
            if (spec.vocab == 0 || spec.d_model == 0 || spec.n_layers == 0 || spec.d_ff == 0 ||
                spec.max_seq == 0) {
                throw ConfigError("model sizes must be positive");
            }
            return spec;
        }
        throw ConfigError(fmt::format("unknown model kind '{}'", kind));
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("model: {}", e.what()));
    }
}

json layer_to_json(const std::string& name, const AdapterLayer& layer) {
    json j = {{"name", name},
              {"kind", layer.kind().type == AdapterType::LoRA ? "lora" : layer.kind().label()},
              {"shape", {layer.rows(), layer.cols()}}};
    json params = json::object();
    bool train_bias = false;
    std::visit(
        [&](const auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, HyperAdaptLinear>) {
                params["a"] = l.a().storage();
                params["b"] = l.b().storage();
                train_bias = l.train_bias();
            } else if constexpr (std::is_same_v<T, LoRALinear>) {
                params["B"] = l.up().storage();
                params["A"] = l.down().storage();
                params["alpha"] = l.alpha();
                params["r"] = l.rank();
                params["dropout"] = l.dropout();
                train_bias = l.train_bias();
            } else if constexpr (std::is_same_v<T, FullLinear>) {
                params["W"] = l.weight().storage();
                train_bias = l.train_bias();
            }
        },
        layer.impl());
    j["params"] = std::move(params);
    if (layer.bias()) {
        j["bias"] = layer.bias()->storage();
        j["train_bias"] = train_bias;
    }
    return j;
}

std::string checkpoint_to_string(const Model& model) {
    json layers = json::array();
    for (std::size_t i = 0; i < model.linear_count(); ++i) {
        layers.push_back(layer_to_json(model.linear_names()[i], model.linear(i)));
    }
    json doc = {{"format", kCheckpointFormat}, {"version", 1}, {"layers", layers}};
    return doc.dump(1) + "\n";
}

json parse_checkpoint(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(fmt::format("checkpoint: {}", e.what()), e.byte);
    }
    if (!doc.is_object() || doc.value("format", std::string()) != kCheckpointFormat ||
        !doc.contains("layers") || !doc["layers"].is_array()) {
        throw ParseError("checkpoint: not a hyperlab adapter checkpoint", 0);
    }
    return doc;
}

Model apply_checkpoint(const Model& base, const json& checkpoint) {
    const auto& layers = checkpoint.at("layers");
    if (layers.size() != base.linear_count()) {
        throw StructuralError(fmt::format("checkpoint has {} layers, base model has {}",
                                          layers.size(), base.linear_count()));
    }
    std::vector<AdapterLayer> out;
    try {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const json& lj = layers[i];
            const std::string name = lj.at("name").get<std::string>();
            if (name != base.linear_names()[i]) {
                throw StructuralError(fmt::format("checkpoint layer {} is '{}', base has '{}'", i,
                                                  name, base.linear_names()[i]));
            }
            const AdapterLayer& base_layer = base.linear(i);
            const auto shape = lj.at("shape").get<std::vector<std::size_t>>();
            const std::size_t n = base_layer.rows();
            const std::size_t m = base_layer.cols();
            if (shape.size() != 2 || shape[0] != n || shape[1] != m) {
                throw StructuralError(fmt::format("layer '{}': checkpoint shape does not match "
                                                  "base {}x{}",
                                                  name, n, m));
            }
            std::optional<Vector> bias = base_layer.bias();
            if (lj.contains("bias")) {
                if (!bias) {
                    throw StructuralError(fmt::format("layer '{}': base has no bias", name));
                }
                bias = Vector(values_of(lj["bias"], n, name + ".bias"));
            }
            const json& p = lj.at("params");
            const std::string kind = lj.at("kind").get<std::string>();
            AdapterOptions options;
            options.train_bias = lj.value("train_bias", false);
            if (kind == "lora") {
                options.kind = AdapterKind::lora(p.at("r").get<std::size_t>());
                options.lora_alpha = p.at("alpha").get<double>();
                options.lora_dropout = p.at("dropout").get<double>();
            } else {
                options.kind = AdapterKind::parse(kind);
            }
            AdapterLayer layer = AdapterLayer::make(base_layer.effective_weight(), bias, options);
            std::visit(
                [&](auto& l) {
                    using T = std::decay_t<decltype(l)>;
                    if constexpr (std::is_same_v<T, HyperAdaptLinear>) {
                        copy_into(l.a().values(), values_of(p.at("a"), n, name + ".a"));
                        copy_into(l.b().values(), values_of(p.at("b"), m, name + ".b"));
                    } else if constexpr (std::is_same_v<T, LoRALinear>) {
                        copy_into(l.up().values(), values_of(p.at("B"), n * l.rank(), name + ".B"));
                        copy_into(l.down().values(),
                                  values_of(p.at("A"), l.rank() * m, name + ".A"));
                    } else if constexpr (std::is_same_v<T, FullLinear>) {
                        copy_into(l.weight().values(), values_of(p.at("W"), n * m, name + ".W"));
                    }
                },
                layer.impl());
            for (const auto& slot : layer.trainable_params()) {
                require_finite(slot.values, "checkpoint");
            }
            out.push_back(std::move(layer));
        }
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("checkpoint: {}", e.what()), 0);
    }
    return Model(base.architecture(), base.linear_names(), std::move(out), base.aux());
}

void save_weights(const Model& model, const fs::path& dir) {
    fs::create_directories(dir);
    json tensors = json::array();
    auto emit = [&](const std::string& name, std::size_t rows, std::size_t cols,
                    std::span<const double> values) {
        const std::string file = name + ".bin";
        write_file(dir / file, std::string_view(reinterpret_cast<const char*>(values.data()),
                                                values.size_bytes()));
        tensors.push_back({{"name", name},
                           {"shape", {rows, cols}},
                           {"file", file},
                           {"sha256", sha256_hex(values)}});
    };
    for (std::size_t i = 0; i < model.linear_count(); ++i) {
        const auto& layer = model.linear(i);
        const std::string& name = model.linear_names()[i];
        const Matrix w = layer.effective_weight();
        emit(name + ".weight", w.rows(), w.cols(), w.values());
        if (layer.bias()) {
            emit(name + ".bias", 1, layer.bias()->size(), layer.bias()->values());
        }
    }
    for (const auto& t : model.aux()) {
        emit(t.name, t.value.rows(), t.value.cols(), t.value.values());
    }
    json manifest = {{"format", kWeightsFormat},
                     {"version", 1},
                     {"architecture", to_json(model.architecture())},
                     {"tensors", tensors}};
    write_file(dir / "manifest.json", manifest.dump(1) + "\n");
}

Model load_weights(const fs::path& dir) {
    const std::string text = read_file(dir / "manifest.json");
    json manifest;
    try {
        manifest = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(fmt::format("weights manifest: {}", e.what()), e.byte);
    }
    if (manifest.value("format", std::string()) != kWeightsFormat) {
        throw ParseError("weights manifest: unexpected format tag", 0);
    }
    const Architecture arch = architecture_from_json(manifest.at("architecture"));
    std::map<std::string, Matrix> tensors;
    for (const auto& t : manifest.at("tensors")) {
        const auto shape = t.at("shape").get<std::vector<std::size_t>>();
        const std::string blob = read_file(dir / t.at("file").get<std::string>());
        if (shape.size() != 2 || blob.size() != shape[0] * shape[1] * sizeof(double)) {
            throw ParseError(fmt::format("tensor '{}': blob size does not match its shape",
                                         t.at("name").get<std::string>()),
                             blob.size());
        }
        std::vector<double> values(shape[0] * shape[1]);
        std::memcpy(values.data(), blob.data(), blob.size());
        if (sha256_hex(values) != t.at("sha256").get<std::string>()) {
            throw ParseError(fmt::format("tensor '{}': checksum mismatch",
                                         t.at("name").get<std::string>()),
                             0);
        }
        tensors.emplace(t.at("name").get<std::string>(),
                        Matrix(shape[0], shape[1], std::move(values)));
    }
    auto take = [&](const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) {
            throw StructuralError(fmt::format("weights lack tensor '{}'", name));
        }
        Matrix m = std::move(it->second);
        tensors.erase(it);
        return m;
    };
    const Model reference = Model::init(arch, 0);
    std::vector<AdapterLayer> linears;
    for (std::size_t i = 0; i < reference.linear_count(); ++i) {
        const std::string& name = reference.linear_names()[i];
        Matrix w = take(name + ".weight");
        std::optional<Vector> bias;
        if (reference.linear(i).bias()) {
            bias = Vector(take(name + ".bias").storage());
        }
        linears.emplace_back(FrozenLinear(std::move(w), std::move(bias)));
    }
    std::vector<AuxTensor> aux;
    for (const auto& t : reference.aux()) {
        aux.push_back({t.name, take(t.name)});
    }
    if (!tensors.empty()) {
        throw StructuralError(fmt::format("weights contain unexpected tensor '{}'",
                                          tensors.begin()->first));
    }
    return Model(arch, reference.linear_names(), std::move(linears), std::move(aux));
}

}  // namespace hyperlab
