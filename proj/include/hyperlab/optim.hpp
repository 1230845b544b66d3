// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hyperlab/adapters.hpp"

namespace hyperlab {

enum class ScheduleKind { Constant, Cosine };

/// Linear warmup from 0 to peak_lr, then constant or cosine decay to 0.
struct LrSchedule {
    double peak_lr = 3e-3;
    ScheduleKind kind = ScheduleKind::Cosine;
    std::size_t warmup_steps = 100;
    std::size_t total_steps = 0;
};

double lr_at(std::size_t step, const LrSchedule& schedule);

struct AdamWParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    // Decay toward each slot's identity value instead of zero.
    bool decay_to_identity = false;
};

struct AdamWState {
    std::size_t step = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;

    static AdamWState zeros_like(std::span<const ParamSlot> params);
};

/// One decoupled-weight-decay Adam update with bias-corrected moments.
void adamw_step(AdamWState& state, std::span<ParamSlot> params, const GradientBundle& grads,
                double lr, const AdamWParams& hyper);

double global_norm(const GradientBundle& grads);

/// Rescales all gradients by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the norm measured before clipping.
double clip_global_norm(GradientBundle& grads, double max_norm);

}  // namespace hyperlab
