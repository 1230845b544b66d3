// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "hyperlab/adapters.hpp"
#include "hyperlab/data.hpp"
#include "hyperlab/matrix.hpp"

namespace hyperlab {

enum class Activation { Identity, Relu, Tanh, Gelu };

std::string activation_name(Activation a);
Activation parse_activation(const std::string& name);

/// Fully connected stack; widths = {in, hidden..., out}. Layers are fc0, fc1, ...
struct MlpSpec {
    std::vector<std::size_t> widths;
    Activation activation = Activation::Identity;
    bool bias = false;

    bool operator==(const MlpSpec&) const = default;
};

/// Single-head, pre-norm encoder with a GELU-gated feed-forward block and
/// learned positional embeddings. Attention is bidirectional.
struct TransformerSpec {
    std::size_t vocab = 8;
    std::size_t d_model = 32;
    std::size_t n_layers = 1;
    std::size_t n_heads = 1;
    std::size_t d_ff = 64;
    std::size_t max_seq = 8;

    bool operator==(const TransformerSpec&) const = default;
};

using Architecture = std::variant<MlpSpec, TransformerSpec>;

using AdapterMap = std::map<std::string, AdapterKind>;

/// Target-layer suffixes inside each transformer block.
inline constexpr const char* kBlockLinearNames[] = {"q_proj",    "k_proj",  "v_proj",   "o_proj",
                                                    "gate_proj", "up_proj", "down_proj"};

/// Names of every linear layer, in forward order.
std::vector<std::string> linear_layer_names(const Architecture& arch);

/// Map assigning `kind` to every block projection and `head_kind` to any output
/// head (the transformer's lm_head). For an MLP every layer receives `kind`.
AdapterMap uniform_adapter_map(const Architecture& arch, AdapterKind kind,
                               AdapterKind head_kind = AdapterKind::frozen());

/// A non-linear-layer tensor such as an embedding table or a norm gain.
struct AuxTensor {
    std::string name;
    Matrix value;
};

struct LossAndGrad {
    double loss = 0.0;
    GradientBundle grads;
};

class Model {
public:
    /// Fresh model with deterministic random weights; every linear layer Frozen.
    static Model init(const Architecture& arch, std::uint64_t seed);

    /// Assembles a model from explicit tensors (used by the weight-file loader).
    Model(Architecture arch, std::vector<std::string> names, std::vector<AdapterLayer> linears,
          std::vector<AuxTensor> aux);

    const Architecture& architecture() const noexcept { return arch_; }
    bool is_sequence_model() const noexcept {
        return std::holds_alternative<TransformerSpec>(arch_);
    }

    const std::vector<std::string>& linear_names() const noexcept { return names_; }
    std::size_t linear_count() const noexcept { return linears_.size(); }
    const AdapterLayer& linear(std::size_t i) const { return linears_.at(i); }
    AdapterLayer& linear(std::size_t i) { return linears_.at(i); }
    const AdapterLayer& linear(const std::string& name) const;
    AdapterLayer& linear(const std::string& name);
    AdapterMap adapter_map() const;

    const std::vector<AuxTensor>& aux() const noexcept { return aux_; }
    std::vector<AuxTensor>& aux() noexcept { return aux_; }
    bool aux_trainable() const noexcept { return aux_trainable_; }
    void set_aux_trainable(bool on) noexcept { aux_trainable_ = on; }

    /// Rewraps each linear layer around its current effective weight with the
    /// kind from `map` (keys must match linear_names exactly). `base` supplies
    /// the LoRA/bias options; its kind field is ignored.
    Model adapted(const AdapterMap& map, const AdapterOptions& base = {},
                  std::uint64_t seed = 0) const;

    /// Every layer folded into its dense effective weight and marked Frozen.
    Model merged() const;

    /// Linear layers in order followed by aux tensors (when trainable).
    std::vector<ParamSlot> trainable_params();
    std::size_t trainable_count() const;
    /// All stored base parameters: linear weights, biases and aux tensors.
    std::size_t total_param_count() const;

    /// MLP output for a batch of inputs.
    Matrix predict(const Matrix& x, const ForwardContext& ctx = {}) const;
    /// Transformer logits, one row per (sequence, position).
    Matrix logits(const SequenceData& batch, const ForwardContext& ctx = {}) const;

    /// Mean squared error (regression) or mean token cross-entropy (sequences).
    double loss(const Dataset& batch, const ForwardContext& ctx = {}) const;
    LossAndGrad loss_and_grad(const Dataset& batch, const ForwardContext& ctx = {}) const;

    /// Fraction of positions whose arg-max logit equals the target.
    double accuracy(const SequenceData& batch) const;

private:
    Model() = default;

    const AuxTensor& aux_tensor(const std::string& name) const;

    Architecture arch_;
    std::vector<std::string> names_;
    std::vector<AdapterLayer> linears_;
    std::vector<AuxTensor> aux_;
    bool aux_trainable_ = false;
};

}  // namespace hyperlab
