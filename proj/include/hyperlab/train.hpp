// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyperlab/data.hpp"
#include "hyperlab/model.hpp"
#include "hyperlab/optim.hpp"

namespace hyperlab {

struct TrainConfig {
    AdamWParams adamw;
    double lr = 3e-3;
    ScheduleKind schedule = ScheduleKind::Cosine;
    std::size_t warmup_steps = 100;
    double max_grad_norm = 1.0;
    std::size_t batch_size = 128;
    std::size_t epochs = 3;
    std::uint64_t seed = 0;

    /// Learning rates used for the Hyper and LoRA regimens at LLM scale.
    static constexpr double kHyperLr = 3e-3;
    static constexpr double kLoraLr = 1e-4;

    std::size_t steps_per_epoch(std::size_t n_examples) const;
    std::size_t total_steps(std::size_t n_examples) const;
    LrSchedule schedule_for(std::size_t n_examples) const;
    /// Throws ConfigError on lr <= 0, batch_size == 0, max_grad_norm <= 0 or
    /// warmup longer than the run.
    void validate(std::size_t n_examples) const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainResult {
    std::vector<double> loss_curve;  // one entry per optimizer step
    std::vector<double> lr_curve;
    std::vector<std::vector<double>> final_params;
    double wallclock_seconds = 0.0;
    double initial_loss = 0.0;  // whole training set, before any update
    double final_loss = 0.0;    // whole training set, after the last update
    std::optional<double> eval_loss;
    std::optional<double> eval_accuracy;
    std::string frozen_checksum_before;
    std::string frozen_checksum_after;
    std::string trainable_checksum;
};

/// Mean loss over a whole dataset, evaluated without dropout.
double dataset_loss(const Model& model, const Dataset& data);

/// SHA-256 over every frozen tensor: base weights of all linear layers and,
/// unless trainable, the aux tensors.
std::string frozen_checksum(const Model& model);
std::string trainable_checksum(Model& model);

/// Deterministic single-threaded AdamW loop over shuffled mini-batches.
/// Throws NumericError (iteration = step index) on a non-finite loss.
TrainResult train(Model& model, const Dataset& train_data, const TrainConfig& config,
                  const Dataset* eval_data = nullptr);

nlohmann::json to_json(const TrainResult& result, const TrainConfig& config);
/// "step,lr,loss" rows.
std::string loss_curve_csv(const TrainResult& result);

}  // namespace hyperlab
