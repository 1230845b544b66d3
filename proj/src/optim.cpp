// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "hyperlab/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

#include "hyperlab/errors.hpp"

namespace hyperlab {

double lr_at(std::size_t step, const LrSchedule& schedule) {
    if (step > schedule.total_steps) {
        throw std::out_of_range(
            fmt::format("lr_at: step {} beyond {} total steps", step, schedule.total_steps));
    }
    if (step < schedule.warmup_steps) {
        return schedule.peak_lr * static_cast<double>(step) /
               static_cast<double>(schedule.warmup_steps);
    }
    if (schedule.kind == ScheduleKind::Constant || schedule.total_steps == schedule.warmup_steps) {
        return schedule.peak_lr;
    }
    const double progress = static_cast<double>(step - schedule.warmup_steps) /
                            static_cast<double>(schedule.total_steps - schedule.warmup_steps);
    return schedule.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamWState AdamWState::zeros_like(std::span<const ParamSlot> params) {
    AdamWState state;
    for (const auto& p : params) {
        state.first_moment.emplace_back(p.values.size(), 0.0);
        state.second_moment.emplace_back(p.values.size(), 0.0);
    }
    return state;
}

void adamw_step(AdamWState& state, std::span<ParamSlot> params, const GradientBundle& grads,
                double lr, const AdamWParams& hyper) {
    if (grads.slots.size() != params.size() || state.first_moment.size() != params.size()) {
        throw DimensionError("adamw_step: parameter, gradient and state slot counts differ");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(hyper.beta1, t);
    const double correction2 = 1.0 - std::pow(hyper.beta2, t);
    for (std::size_t s = 0; s < params.size(); ++s) {
        auto values = params[s].values;
        const auto& g = grads.slots[s];
        auto& m = state.first_moment[s];
        auto& v = state.second_moment[s];
        if (g.size() != values.size() || m.size() != values.size()) {
            throw DimensionError(fmt::format("adamw_step: slot '{}' size mismatch", params[s].name));
        }
        const double center = hyper.decay_to_identity ? params[s].identity_value : 0.0;
        for (std::size_t k = 0; k < values.size(); ++k) {
            if (hyper.weight_decay != 0.0) {
                values[k] -= lr * hyper.weight_decay * (values[k] - center);
            }
            m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g[k];
            v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g[k] * g[k];
            const double m_hat = m[k] / correction1;
            const double v_hat = v[k] / correction2;
            values[k] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
        }
    }
}

double global_norm(const GradientBundle& grads) {
    double acc = 0.0;
    for (const auto& slot : grads.slots) {
        for (double g : slot) {
            acc += g * g;
        }
    }
    return std::sqrt(acc);
}

double clip_global_norm(GradientBundle& grads, double max_norm) {
    if (!(max_norm > 0.0)) {
        throw std::invalid_argument("clip_global_norm: max_norm must be positive");
    }
    const double norm = global_norm(grads);
    if (norm > max_norm) {
        const double factor = max_norm / norm;
        for (auto& slot : grads.slots) {
            for (double& g : slot) {
                g *= factor;
            }
        }
    }
    return norm;
}

}  // namespace hyperlab
