// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "hyperlab/data.hpp"
#include "hyperlab/model.hpp"
#include "hyperlab/train.hpp"

namespace hyperlab {

enum class TaskKind { ScaledTeacher, LowRankTeacher, SeqCopy, SeqSort };

std::string task_kind_name(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);

struct TaskSpec {
    TaskKind kind = TaskKind::ScaledTeacher;
    // Teacher tasks: layer is n x m (m inputs, n outputs).
    std::size_t n = 16;
    std::size_t m = 16;
    std::size_t r_true = 1;
    // Sequence tasks.
    std::size_t vocab = 8;
    std::size_t seq_len = 6;
    std::size_t n_train = 256;
    std::size_t n_eval = 256;
    double noise_std = 0.0;
};

/// Synthetic regression task around a frozen base weight W0 (drawn with
/// per-entry standard deviation 1/sqrt(m) and checked to be full rank).
struct TeacherTask {
    Matrix w0;
    Matrix teacher;
    // Scaled teacher: teacher = diag(a_star) W0 diag(b_star).
    Vector a_star;
    Vector b_star;
    // Low-rank teacher: teacher = W0 + b_factor a_factor.
    Matrix b_factor;
    Matrix a_factor;
    RegressionData train;
    RegressionData eval;
};

TeacherTask make_scaled_teacher(std::size_t n, std::size_t m, std::uint64_t seed,
                                std::size_t n_train = 256, std::size_t n_eval = 256,
                                double noise_std = 0.0);

TeacherTask make_lowrank_teacher(std::size_t n, std::size_t m, std::size_t r_true,
                                 std::uint64_t seed, std::size_t n_train = 256,
                                 std::size_t n_eval = 256, double noise_std = 0.0);

/// Uniform random token sequences; target is the input (copy) or its sorted
/// order (sort). Sequences listed in `exclude` are never emitted.
SequenceData make_seq_task(TaskKind kind, std::size_t vocab, std::size_t seq_len,
                           std::size_t n_examples, std::uint64_t seed,
                           const SequenceData* exclude = nullptr);

struct TaskInstance {
    TaskSpec spec;
    Dataset train;
    Dataset eval;
    std::optional<TeacherTask> teacher;
};

/// Builds the task for one seed; train and eval come from separate derived streams.
TaskInstance make_task(const TaskSpec& spec, std::uint64_t seed);

/// Best (a, b) in the Hyper class by alternating exact least squares, started
/// from a = b = 1. Loss is the training-set MSE of diag(a) W0 diag(b).
struct HyperFit {
    Vector a;
    Vector b;
    double mse = 0.0;
    std::size_t iterations = 0;
};

HyperFit fit_hyper_alternating(const Matrix& w0, const RegressionData& data,
                               std::size_t max_iterations = 500, double tolerance = 1e-15);

struct ModelSpec {
    Architecture arch;
    AdapterMap adapter_map;

    /// Throws ConfigError unless adapter_map keys equal the layer names.
    void validate() const;
};

struct AdaptConfigs {
    TrainConfig pretrain;
    TrainConfig adapt;
    AdapterOptions options;
};

struct PairedAdaptResult {
    TrainResult pretrain;
    TrainResult from_pretrained;
    TrainResult from_random;
};

/// Trains a fresh model fully on `pretrain_task`, then adapts both it and an
/// identically initialized untrained copy to `adapt_task` with the given
/// adapter map and identical configs.
PairedAdaptResult pretrain_then_adapt(const ModelSpec& spec, const TaskInstance& pretrain_task,
                                      const TaskInstance& adapt_task, const AdaptConfigs& configs,
                                      std::uint64_t init_seed);

}  // namespace hyperlab
