// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "hyperlab/adapters.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include <fmt/format.h>

#include "hyperlab/errors.hpp"
#include "hyperlab/rng.hpp"
#include "hyperlab/svd.hpp"

namespace hyperlab {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_bias(const Matrix& w0, const std::optional<Vector>& bias) {
    if (bias && bias->size() != w0.rows()) {
        throw DimensionError(
            fmt::format("bias length {} does not match {} output rows", bias->size(), w0.rows()));
    }
}

void check_input(const Matrix& w, const Matrix& x) {
    if (x.cols() != w.cols()) {
        throw DimensionError(
            fmt::format("layer expects {} input features, got {}", w.cols(), x.cols()));
    }
}

void check_upstream(const Matrix& w, const Matrix& x, const Matrix& g_y) {
    check_input(w, x);
    if (g_y.rows() != x.rows() || g_y.cols() != w.rows()) {
        throw DimensionError(fmt::format("upstream gradient {}x{} does not match output {}x{}",
                                         g_y.rows(), g_y.cols(), x.rows(), w.rows()));
    }
}

void add_bias(Matrix& y, const std::optional<Vector>& bias) {
    if (!bias) {
        return;
    }
    for (std::size_t r = 0; r < y.rows(); ++r) {
        auto row = y.row(r);
        for (std::size_t i = 0; i < row.size(); ++i) {
            row[i] += (*bias)[i];
        }
    }
}

std::vector<double> column_sums(const Matrix& g) {
    std::vector<double> out(g.cols(), 0.0);
    for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) {
            out[j] += row[j];
        }
    }
    return out;
}

std::vector<double> to_vec(const Matrix& m) { return m.storage(); }

std::span<double> mutable_values(std::optional<Vector>& v) { return v->values(); }

}  // namespace

std::string AdapterKind::label() const {
    switch (type) {
    case AdapterType::Frozen:
        return "frozen";
    case AdapterType::Full:
        return "full";
    case AdapterType::Hyper:
        return "hyper";
    case AdapterType::LoRA:
        return fmt::format("lora:{}", rank);
    }
    return "unknown";
}

AdapterKind AdapterKind::parse(std::string_view text) {
    if (text == "frozen") {
        return frozen();
    }
    if (text == "full") {
        return full();
    }
    if (text == "hyper") {
        return hyper();
    }
    if (text.starts_with("lora:")) {
        std::string_view digits = text.substr(5);
        std::size_t r = 0;
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), r);
        if (ec == std::errc() && ptr == digits.data() + digits.size() && r > 0) {
            return lora(r);
        }
    }
    throw ConfigError(fmt::format("unknown adapter kind '{}'", text));
}

std::size_t trainable_count(const AdapterKind& kind, std::size_t n, std::size_t m,
                            bool train_bias, bool has_bias) {
    const std::size_t bias = (train_bias && has_bias) ? n : 0;
    switch (kind.type) {
    case AdapterType::Frozen:
        return 0;
    case AdapterType::Full:
        return n * m + bias;
    case AdapterType::Hyper:
        return n + m + bias;
    case AdapterType::LoRA:
        return kind.rank * (n + m) + bias;
    }
    return 0;
}

std::size_t GradientBundle::scalar_count() const {
    std::size_t total = 0;
    for (const auto& s : slots) {
        total += s.size();
    }
    return total;
}

void GradientBundle::append(GradientBundle&& other) {
    for (auto& s : other.slots) {
        slots.push_back(std::move(s));
    }
}

FrozenLinear::FrozenLinear(Matrix w0, std::optional<Vector> bias)
    : w0_(std::move(w0)), bias_(std::move(bias)) {
    check_bias(w0_, bias_);
}

FullLinear::FullLinear(Matrix w0, std::optional<Vector> bias, bool train_bias)
    : w0_(std::move(w0)), w_(w0_), bias_(std::move(bias)), train_bias_(train_bias) {
    check_bias(w0_, bias_);
}

HyperAdaptLinear::HyperAdaptLinear(Matrix w0, std::optional<Vector> bias, bool train_bias)
    : w0_(std::move(w0)),
      a_(w0_.rows(), 1.0),
      b_(w0_.cols(), 1.0),
      bias_(std::move(bias)),
      train_bias_(train_bias) {
    check_bias(w0_, bias_);
}

LoRALinear::LoRALinear(Matrix w0, std::size_t rank, double alpha, double dropout,
                       std::uint64_t init_seed, std::optional<Vector> bias, bool train_bias)
    : w0_(std::move(w0)),
      up_(w0_.rows(), rank, 0.0),
      down_(rank, w0_.cols()),
      rank_(rank),
      alpha_(alpha),
      dropout_(dropout),
      bias_(std::move(bias)),
      train_bias_(train_bias) {
    if (rank == 0) {
        throw DimensionError("LoRA rank must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw std::invalid_argument("LoRA dropout must lie in [0, 1)");
    }
    check_bias(w0_, bias_);
    Rng rng(init_seed);
    const double stddev = 1.0 / static_cast<double>(rank);
    for (double& v : down_.values()) {
        v = rng.normal(0.0, stddev);
    }
}

Matrix lora_dropout_input(const LoRALinear& layer, const Matrix& x, const ForwardContext& ctx) {
    if (!ctx.training || layer.dropout() == 0.0) {
        return x;
    }
    const double keep_scale = 1.0 / (1.0 - layer.dropout());
    Matrix out = x;
    auto values = out.values();
    for (std::size_t k = 0; k < values.size(); ++k) {
        const double u = counter_uniform(derive_seed({ctx.seed, ctx.step, ctx.layer_id, k}));
        values[k] = u < layer.dropout() ? 0.0 : values[k] * keep_scale;
    }
    return out;
}

GradientBundle grad_hyper_params(const HyperAdaptLinear& layer, const Matrix& x,
                                 const Matrix& g_y) {
    const Matrix& w0 = layer.w0();
    check_upstream(w0, x, g_y);
    const Matrix g = matmul_tn(g_y, x);  // dL/dW', n x m
    std::vector<double> ga(w0.rows(), 0.0);
    std::vector<double> gb(w0.cols(), 0.0);
    for (std::size_t i = 0; i < w0.rows(); ++i) {
        for (std::size_t j = 0; j < w0.cols(); ++j) {
            const double gw = g(i, j) * w0(i, j);
            ga[i] += gw * layer.b()[j];
            gb[j] += gw * layer.a()[i];
        }
    }
    GradientBundle out;
    out.slots.push_back(std::move(ga));
    out.slots.push_back(std::move(gb));
    if (layer.bias() && layer.train_bias()) {
        out.slots.push_back(column_sums(g_y));
    }
    return out;
}

LayerGrad grad_hyper(const HyperAdaptLinear& layer, const Matrix& x, const Matrix& g_y) {
    LayerGrad out;
    out.params = grad_hyper_params(layer, x, g_y);
    out.g_x = matmul(g_y, scale_rows_cols(layer.w0(), layer.a(), layer.b()));
    return out;
}

LayerGrad grad_lora(const LoRALinear& layer, const Matrix& x, const Matrix& g_y,
                    const ForwardContext& ctx) {
    check_upstream(layer.w0(), x, g_y);
    const double s = layer.scaling();
    const Matrix xd = lora_dropout_input(layer, x, ctx);
    const Matrix h = matmul_nt(xd, layer.down());                 // batch x r
    const Matrix g_h = scaled(matmul(g_y, layer.up()), s);       // batch x r
    LayerGrad out;
    out.params.slots.push_back(to_vec(scaled(matmul_tn(g_y, h), s)));  // dB, n x r
    out.params.slots.push_back(to_vec(matmul_tn(g_h, xd)));            // dA, r x m
    if (layer.bias() && layer.train_bias()) {
        out.params.slots.push_back(column_sums(g_y));
    }
    Matrix g_branch = matmul(g_h, layer.down());
    if (ctx.training && layer.dropout() > 0.0) {
        // Replays the forward mask: xd = mask * x / (1 - p).
        const double keep_scale = 1.0 / (1.0 - layer.dropout());
        auto values = g_branch.values();
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double u = counter_uniform(derive_seed({ctx.seed, ctx.step, ctx.layer_id, k}));
            values[k] = u < layer.dropout() ? 0.0 : values[k] * keep_scale;
        }
    }
    out.g_x = add(matmul(g_y, layer.w0()), g_branch);
    return out;
}

LayerGrad grad_full(const FullLinear& layer, const Matrix& x, const Matrix& g_y) {
    check_upstream(layer.weight(), x, g_y);
    LayerGrad out;
    out.params.slots.push_back(to_vec(matmul_tn(g_y, x)));
    if (layer.bias() && layer.train_bias()) {
        out.params.slots.push_back(column_sums(g_y));
    }
    out.g_x = matmul(g_y, layer.weight());
    return out;
}

AdapterLayer AdapterLayer::make(Matrix w0, std::optional<Vector> bias,
                                const AdapterOptions& options) {
    switch (options.kind.type) {
    case AdapterType::Frozen:
        return AdapterLayer(FrozenLinear(std::move(w0), std::move(bias)));
    case AdapterType::Full:
        return AdapterLayer(FullLinear(std::move(w0), std::move(bias), options.train_bias));
    case AdapterType::Hyper:
        return AdapterLayer(HyperAdaptLinear(std::move(w0), std::move(bias), options.train_bias));
    case AdapterType::LoRA: {
        const double alpha = options.lora_alpha > 0.0
                                 ? options.lora_alpha
                                 : 2.0 * static_cast<double>(options.kind.rank);
        return AdapterLayer(LoRALinear(std::move(w0), options.kind.rank, alpha,
                                       options.lora_dropout, options.init_seed, std::move(bias),
                                       options.train_bias));
    }
    }
    throw std::logic_error("unhandled adapter type");
}

AdapterKind AdapterLayer::kind() const {
    return std::visit(overloaded{
                          [](const FrozenLinear&) { return AdapterKind::frozen(); },
                          [](const FullLinear&) { return AdapterKind::full(); },
                          [](const HyperAdaptLinear&) { return AdapterKind::hyper(); },
                          [](const LoRALinear& l) { return AdapterKind::lora(l.rank()); },
                      },
                      impl_);
}

const Matrix& AdapterLayer::base_weight() const {
    return std::visit([](const auto& l) -> const Matrix& { return l.w0(); }, impl_);
}

const std::optional<Vector>& AdapterLayer::bias() const {
    return std::visit([](const auto& l) -> const std::optional<Vector>& { return l.bias(); },
                      impl_);
}

Matrix AdapterLayer::forward(const Matrix& x, const ForwardContext& ctx) const {
    check_input(base_weight(), x);
    Matrix y = std::visit(
        overloaded{
            [&](const FrozenLinear& l) { return matmul_nt(x, l.w0()); },
            [&](const FullLinear& l) { return matmul_nt(x, l.weight()); },
            [&](const HyperAdaptLinear& l) {
                return matmul_nt(x, scale_rows_cols(l.w0(), l.a(), l.b()));
            },
            [&](const LoRALinear& l) {
                Matrix base = matmul_nt(x, l.w0());
                const Matrix xd = lora_dropout_input(l, x, ctx);
                const Matrix branch = matmul_nt(matmul_nt(xd, l.down()), l.up());
                auto dst = base.values();
                auto src = branch.values();
                const double s = l.scaling();
                for (std::size_t k = 0; k < dst.size(); ++k) {
                    dst[k] += s * src[k];
                }
                return base;
            },
        },
        impl_);
    add_bias(y, bias());
    require_finite(y.values(), "forward");
    return y;
}

LayerGrad AdapterLayer::backward(const Matrix& x, const Matrix& g_y,
                                 const ForwardContext& ctx) const {
    return std::visit(overloaded{
                          [&](const FrozenLinear& l) {
                              check_upstream(l.w0(), x, g_y);
                              return LayerGrad{{}, matmul(g_y, l.w0())};
                          },
                          [&](const FullLinear& l) { return grad_full(l, x, g_y); },
                          [&](const HyperAdaptLinear& l) { return grad_hyper(l, x, g_y); },
                          [&](const LoRALinear& l) { return grad_lora(l, x, g_y, ctx); },
                      },
                      impl_);
}

Matrix AdapterLayer::effective_weight() const {
    return std::visit(
        overloaded{
            [](const FrozenLinear& l) { return l.w0(); },
            [](const FullLinear& l) { return l.weight(); },
            [](const HyperAdaptLinear& l) { return scale_rows_cols(l.w0(), l.a(), l.b()); },
            [](const LoRALinear& l) {
                return add(l.w0(), scaled(matmul(l.up(), l.down()), l.scaling()));
            },
        },
        impl_);
}

Matrix AdapterLayer::delta_weight() const { return subtract(effective_weight(), base_weight()); }

std::vector<ParamSlot> AdapterLayer::trainable_params() {
    std::vector<ParamSlot> out;
    std::visit(overloaded{
                   [](FrozenLinear&) {},
                   [&](FullLinear& l) {
                       out.push_back({"W", l.weight().values(), 0.0});
                       if (l.bias() && l.train_bias()) {
                           out.push_back({"bias", mutable_values(l.bias()), 0.0});
                       }
                   },
                   [&](HyperAdaptLinear& l) {
                       out.push_back({"a", l.a().values(), 1.0});
                       out.push_back({"b", l.b().values(), 1.0});
                       if (l.bias() && l.train_bias()) {
                           out.push_back({"bias", mutable_values(l.bias()), 0.0});
                       }
                   },
                   [&](LoRALinear& l) {
                       out.push_back({"B", l.up().values(), 0.0});
                       out.push_back({"A", l.down().values(), 0.0});
                       if (l.bias() && l.train_bias()) {
                           out.push_back({"bias", mutable_values(l.bias()), 0.0});
                       }
                   },
               },
               impl_);
    return out;
}

std::vector<ConstParamSlot> AdapterLayer::trainable_params() const {
    auto& self = const_cast<AdapterLayer&>(*this);
    std::vector<ConstParamSlot> out;
    for (auto& slot : self.trainable_params()) {
        out.push_back({std::move(slot.name), slot.values});
    }
    return out;
}

std::size_t AdapterLayer::trainable_count() const {
    std::size_t total = 0;
    for (const auto& slot : trainable_params()) {
        total += slot.values.size();
    }
    return total;
}

RankBound verify_rank_bound(const Matrix& w0, const Vector& a, const Vector& b) {
    const Matrix delta = subtract(scale_rows_cols(w0, a, b), w0);
    RankBound out;
    out.rank_dw = exact_rank(delta);
    out.bound = std::min({2 * exact_rank(w0), w0.rows(), w0.cols()});
    out.holds = out.rank_dw <= out.bound;
    return out;
}

}  // namespace hyperlab
