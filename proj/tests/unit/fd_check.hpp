// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

// Central finite-difference comparisons shared by the gradient tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "hyperlab/adapters.hpp"
#include "hyperlab/model.hpp"
#include "hyperlab/rng.hpp"
#include "test_support.hpp"

namespace hyperlab::testing {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdRelTol = 1e-6;
inline constexpr double kFdAbsFloor = 1e-8;

inline bool fd_agrees(double analytic, double numeric) {
    const double diff = std::abs(analytic - numeric);
    return diff <= kFdAbsFloor || diff <= kFdRelTol * std::max(std::abs(analytic), std::abs(numeric));
}

struct FdMismatch {
    std::string slot;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Perturbs each selected coordinate by ±h and compares against `grads`.
/// `pick` chooses which coordinates of each slot to probe (all by default).
inline std::vector<FdMismatch> fd_compare(std::vector<ParamSlot> slots, const GradientBundle& grads,
                                          const std::function<double()>& loss,
                                          std::size_t max_per_slot = static_cast<std::size_t>(-1),
                                          std::uint64_t pick_seed = 0) {
    std::vector<FdMismatch> bad;
    Rng rng(pick_seed);
    for (std::size_t s = 0; s < slots.size(); ++s) {
        auto& values = slots[s].values;
        std::vector<std::size_t> coords;
        if (values.size() <= max_per_slot) {
            for (std::size_t k = 0; k < values.size(); ++k) {
                coords.push_back(k);
            }
        } else {
            for (std::size_t k = 0; k < max_per_slot; ++k) {
                coords.push_back(rng.index(values.size()));
            }
        }
        for (std::size_t k : coords) {
            const double saved = values[k];
            values[k] = saved + kFdStep;
            const double up = loss();
            values[k] = saved - kFdStep;
            const double down = loss();
            values[k] = saved;
            const double numeric = (up - down) / (2.0 * kFdStep);
            const double analytic = grads.slots.at(s).at(k);
            if (!fd_agrees(analytic, numeric)) {
                bad.push_back({slots[s].name, k, analytic, numeric});
            }
        }
    }
    return bad;
}


// L = Σ c ⊙ y, so ∂L/∂y = c.
inline double linear_functional(const Matrix& y, const Matrix& c) {
    double acc = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        acc += y.values()[k] * c.values()[k];
    }
    return acc;
}

inline std::string describe(const std::string& where, const FdMismatch& bad) {
    std::ostringstream os;
    os.precision(17);
    os << where << " slot " << bad.slot << "[" << bad.index << "] analytic " << bad.analytic
       << " numeric " << bad.numeric;
    return os.str();
}

/// Random single layers (with optional bias and dropout) against a random
/// linear functional of the output; also checks the input gradient.
inline std::optional<std::string> layer_fd_failure(AdapterKind kind, std::uint64_t seed, int configs) {
    Rng rng(seed);
    for (int trial = 0; trial < configs; ++trial) {
        const std::size_t n = 1 + rng.index(9);
        const std::size_t m = 1 + rng.index(9);
        const std::size_t batch = 1 + rng.index(6);
        std::optional<Vector> bias;
        const bool with_bias = rng.index(2) == 0;
        if (with_bias) {
            bias = random_vector(rng, n, -1, 1);
        }
        AdapterOptions opts;
        opts.kind = kind;
        opts.train_bias = with_bias && rng.index(2) == 0;
        opts.lora_dropout = kind.type == AdapterType::LoRA ? 0.3 : 0.0;
        opts.init_seed = rng.next();
        AdapterLayer layer = AdapterLayer::make(random_matrix(rng, n, m), bias, opts);
        for (auto& slot : layer.trainable_params()) {
            for (double& v : slot.values) {
                v = slot.identity_value + rng.normal(0.0, 0.5);
            }
        }
        const Matrix x = random_matrix(rng, batch, m);
        const Matrix c = random_matrix(rng, batch, n);
        const ForwardContext ctx{true, rng.next(), rng.index(100), rng.index(4)};
        const LayerGrad g = layer.backward(x, c, ctx);
        auto loss = [&] { return linear_functional(layer.forward(x, ctx), c); };
        const auto bad = fd_compare(layer.trainable_params(), g.params, loss);
        const std::string where = kind.label() + " trial " + std::to_string(trial);
        if (!bad.empty()) {
            return describe(where, bad.front());
        }
        Matrix xp = x;
        for (std::size_t k = 0; k < xp.size(); ++k) {
            const double saved = xp.values()[k];
            xp.values()[k] = saved + kFdStep;
            const double up = linear_functional(layer.forward(xp, ctx), c);
            xp.values()[k] = saved - kFdStep;
            const double down = linear_functional(layer.forward(xp, ctx), c);
            xp.values()[k] = saved;
            const double numeric = (up - down) / (2 * kFdStep);
            if (!fd_agrees(g.g_x.values()[k], numeric)) {
                return describe(where, {"x", k, g.g_x.values()[k], numeric});
            }
        }
    }
    return std::nullopt;
}

inline Model random_model_for_fd(Rng& rng, bool transformer) {
    if (!transformer) {
        const Activation acts[] = {Activation::Identity, Activation::Tanh, Activation::Gelu};
        MlpSpec spec;
        spec.widths = {2 + rng.index(5), 2 + rng.index(5), 1 + rng.index(4)};
        spec.activation = acts[rng.index(3)];
        spec.bias = rng.index(2) == 0;
        return Model::init(spec, rng.next());
    }
    TransformerSpec spec;
    spec.vocab = 4 + rng.index(3);
    spec.d_model = 4 + rng.index(5);
    spec.n_layers = 1 + rng.index(2);
    spec.d_ff = 4 + rng.index(6);
    spec.max_seq = 2 + rng.index(4);
    return Model::init(spec, rng.next());
}

inline AdapterMap random_adapter_map(const Architecture& arch, Rng& rng) {
    const AdapterKind kinds[] = {AdapterKind::frozen(), AdapterKind::full(), AdapterKind::hyper(),
                                 AdapterKind::lora(1), AdapterKind::lora(2)};
    AdapterMap map;
    for (const auto& name : linear_layer_names(arch)) {
        map[name] = kinds[rng.index(5)];
    }
    return map;
}

inline Dataset random_batch(const Model& model, Rng& rng) {
    const std::size_t count = 1 + rng.index(4);
    if (const auto* tf = std::get_if<TransformerSpec>(&model.architecture())) {
        SequenceData d;
        d.count = count;
        d.len = 2 + rng.index(tf->max_seq - 1);
        d.vocab = tf->vocab;
        for (std::size_t k = 0; k < count * d.len; ++k) {
            d.tokens.push_back(static_cast<int>(rng.index(tf->vocab)));
            d.targets.push_back(static_cast<int>(rng.index(tf->vocab)));
        }
        return d;
    }
    const auto& mlp = std::get<MlpSpec>(model.architecture());
    return RegressionData{random_matrix(rng, count, mlp.widths.front()),
                          random_matrix(rng, count, mlp.widths.back())};
}

/// Whole-model checks with a random adapter kind per layer. Transformer runs
/// probe a random subset of each slot.
inline std::optional<std::string> model_fd_failure(bool transformer, std::uint64_t seed, int configs) {
    Rng rng(seed);
    for (int trial = 0; trial < configs; ++trial) {
        const Model base = random_model_for_fd(rng, transformer);
        AdapterOptions opts;
        opts.lora_dropout = rng.index(2) == 0 ? 0.0 : 0.2;
        opts.train_bias = rng.index(2) == 0;
        Model model = base.adapted(random_adapter_map(base.architecture(), rng), opts, rng.next());
        model.set_aux_trainable(rng.index(2) == 0);
        // Softmax attention has large third derivatives under big perturbations,
        // which central differences at h = 1e-5 cannot resolve to 1e-6.
        const double spread = transformer ? 0.05 : 0.2;
        for (auto& slot : model.trainable_params()) {
            for (double& v : slot.values) {
                v += rng.normal(0.0, spread);
            }
        }
        const Dataset batch = random_batch(model, rng);
        const ForwardContext ctx{true, rng.next(), rng.index(50), 0};
        const LossAndGrad lg = model.loss_and_grad(batch, ctx);
        const std::string where = std::string(transformer ? "transformer" : "mlp") + " trial " +
                                  std::to_string(trial);
        if (std::abs(lg.loss - model.loss(batch, ctx)) > 1e-14 * std::max(1.0, std::abs(lg.loss))) {
            return where + ": loss_and_grad disagrees with loss";
        }
        auto loss = [&] { return model.loss(batch, ctx); };
        const auto slots = model.trainable_params();
        if (lg.grads.slots.size() != slots.size()) {
            return where + ": gradient slot count mismatch";
        }
        const auto bad = fd_compare(slots, lg.grads, loss, transformer ? 12 : 1000, trial);
        if (!bad.empty()) {
            return describe(where, bad.front());
        }
    }
    return std::nullopt;
}

}  // namespace hyperlab::testing
