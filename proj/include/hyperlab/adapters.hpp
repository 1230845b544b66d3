// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "hyperlab/matrix.hpp"

namespace hyperlab {

enum class AdapterType { Frozen, Full, Hyper, LoRA };

/// Which parameterization wraps a linear layer. `rank` is used by LoRA only.
struct AdapterKind {
    AdapterType type = AdapterType::Frozen;
    std::size_t rank = 0;

    static AdapterKind frozen() { return {AdapterType::Frozen, 0}; }
    static AdapterKind full() { return {AdapterType::Full, 0}; }
    static AdapterKind hyper() { return {AdapterType::Hyper, 0}; }
    static AdapterKind lora(std::size_t r) { return {AdapterType::LoRA, r}; }

    // "frozen", "full", "hyper", "lora:<r>"
    std::string label() const;
    static AdapterKind parse(std::string_view text);

    bool operator==(const AdapterKind&) const = default;
};

/// Construction options shared by every kind.
struct AdapterOptions {
    AdapterKind kind;
    // LoRA scale numerator; <= 0 selects the default alpha = 2 r.
    double lora_alpha = 0.0;
    double lora_dropout = 0.0;
    bool train_bias = false;
    std::uint64_t init_seed = 0;
};

/// Closed-form number of trainable scalars for an n x m layer.
std::size_t trainable_count(const AdapterKind& kind, std::size_t n, std::size_t m,
                            bool train_bias = false, bool has_bias = false);

/// A named view onto trainable storage. `identity_value` is the entry value at
/// which the slot leaves its layer unchanged (1 for Hyper scales, else 0).
struct ParamSlot {
    std::string name;
    std::span<double> values;
    double identity_value = 0.0;
};

struct ConstParamSlot {
    std::string name;
    std::span<const double> values;
};

/// Per-slot gradients, aligned with the ordering of trainable_params().
struct GradientBundle {
    std::vector<std::vector<double>> slots;

    std::size_t scalar_count() const;
    void append(GradientBundle&& other);
};

/// Everything a forward pass needs besides its input.
struct ForwardContext {
    bool training = false;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    std::uint64_t layer_id = 0;
};

struct LayerGrad {
    GradientBundle params;
    Matrix g_x;
};

class FrozenLinear {
public:
    explicit FrozenLinear(Matrix w0, std::optional<Vector> bias = std::nullopt);

    const Matrix& w0() const noexcept { return w0_; }
    const std::optional<Vector>& bias() const noexcept { return bias_; }

private:
    Matrix w0_;
    std::optional<Vector> bias_;
};

class FullLinear {
public:
    FullLinear(Matrix w0, std::optional<Vector> bias = std::nullopt, bool train_bias = false);

    const Matrix& w0() const noexcept { return w0_; }
    const Matrix& weight() const noexcept { return w_; }
    Matrix& weight() noexcept { return w_; }
    const std::optional<Vector>& bias() const noexcept { return bias_; }
    std::optional<Vector>& bias() noexcept { return bias_; }
    bool train_bias() const noexcept { return train_bias_; }

private:
    Matrix w0_;
    Matrix w_;
    std::optional<Vector> bias_;
    bool train_bias_;
};

/// W' = diag(a) · W0 · diag(b), with a and b stored as vectors.
class HyperAdaptLinear {
public:
    HyperAdaptLinear(Matrix w0, std::optional<Vector> bias = std::nullopt,
                     bool train_bias = false);

    const Matrix& w0() const noexcept { return w0_; }
    const Vector& a() const noexcept { return a_; }
    const Vector& b() const noexcept { return b_; }
    Vector& a() noexcept { return a_; }
    Vector& b() noexcept { return b_; }
    const std::optional<Vector>& bias() const noexcept { return bias_; }
    std::optional<Vector>& bias() noexcept { return bias_; }
    bool train_bias() const noexcept { return train_bias_; }

private:
    Matrix w0_;
    Vector a_;
    Vector b_;
    std::optional<Vector> bias_;
    bool train_bias_;
};

/// W' = W0 + (alpha / r) · B · A, dropout on the adapter branch input.
class LoRALinear {
public:
    LoRALinear(Matrix w0, std::size_t rank, double alpha, double dropout,
               std::uint64_t init_seed, std::optional<Vector> bias = std::nullopt,
               bool train_bias = false);

    const Matrix& w0() const noexcept { return w0_; }
    const Matrix& up() const noexcept { return up_; }      // B, n x r
    const Matrix& down() const noexcept { return down_; }  // A, r x m
    Matrix& up() noexcept { return up_; }
    Matrix& down() noexcept { return down_; }
    std::size_t rank() const noexcept { return rank_; }
    double alpha() const noexcept { return alpha_; }
    double dropout() const noexcept { return dropout_; }
    double scaling() const noexcept { return alpha_ / static_cast<double>(rank_); }
    const std::optional<Vector>& bias() const noexcept { return bias_; }
    std::optional<Vector>& bias() noexcept { return bias_; }
    bool train_bias() const noexcept { return train_bias_; }

private:
    Matrix w0_;
    Matrix up_;
    Matrix down_;
    std::size_t rank_;
    double alpha_;
    double dropout_;
    std::optional<Vector> bias_;
    bool train_bias_;
};

GradientBundle grad_hyper_params(const HyperAdaptLinear& layer, const Matrix& x,
                                 const Matrix& g_y);
/// Parameter gradients (a, b[, bias]) and the input gradient g_y · W'.
LayerGrad grad_hyper(const HyperAdaptLinear& layer, const Matrix& x, const Matrix& g_y);
LayerGrad grad_lora(const LoRALinear& layer, const Matrix& x, const Matrix& g_y,
                    const ForwardContext& ctx = {});
LayerGrad grad_full(const FullLinear& layer, const Matrix& x, const Matrix& g_y);

/// Applies LoRA branch dropout; the mask is a pure function of (seed, step, layer, element).
Matrix lora_dropout_input(const LoRALinear& layer, const Matrix& x, const ForwardContext& ctx);

/// Value-semantic wrapper over the four parameterizations.
class AdapterLayer {
public:
    using Impl = std::variant<FrozenLinear, FullLinear, HyperAdaptLinear, LoRALinear>;

    explicit AdapterLayer(Impl impl) : impl_(std::move(impl)) {}

    /// Wraps a frozen base weight with the requested parameterization at its
    /// identity initialization.
    static AdapterLayer make(Matrix w0, std::optional<Vector> bias, const AdapterOptions& options);

    AdapterKind kind() const;
    std::size_t rows() const { return base_weight().rows(); }
    std::size_t cols() const { return base_weight().cols(); }

    const Matrix& base_weight() const;
    const std::optional<Vector>& bias() const;

    /// y = x · W'ᵀ (+ bias). Under training, LoRA applies dropout per ctx.
    Matrix forward(const Matrix& x, const ForwardContext& ctx = {}) const;
    LayerGrad backward(const Matrix& x, const Matrix& g_y, const ForwardContext& ctx = {}) const;

    Matrix effective_weight() const;
    Matrix delta_weight() const;

    std::vector<ParamSlot> trainable_params();
    std::vector<ConstParamSlot> trainable_params() const;
    std::size_t trainable_count() const;

    const Impl& impl() const noexcept { return impl_; }
    Impl& impl() noexcept { return impl_; }

private:
    Impl impl_;
};

struct RankBound {
    std::size_t rank_dw = 0;
    std::size_t bound = 0;
    bool holds = false;
};

/// Checks rank(diag(a) W0 diag(b) - W0) <= min(2 rank(W0), n, m) with exact ranks.
RankBound verify_rank_bound(const Matrix& w0, const Vector& a, const Vector& b);

}  // namespace hyperlab
