// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyperlab/adapters.hpp"
#include "hyperlab/model.hpp"
#include "hyperlab/rank_analysis.hpp"
#include "hyperlab/tasks.hpp"
#include "hyperlab/train.hpp"

namespace hyperlab {

/// One entry of the comparison list, with optional per-adapter overrides.
struct AdapterChoice {
    AdapterKind kind;
    std::optional<double> lora_alpha;
    double lora_dropout = 0.0;
    std::optional<double> lr;

    std::string label() const { return kind.label(); }
};

struct AnalysisConfig {
    double rank_threshold = kDefaultRankThreshold;
    bool emit_svg = true;
};

/// Optional full-training stage run on the base model before any adapter is attached.
struct PretrainStage {
    TaskSpec task;
    TrainConfig train;
};

struct ExperimentConfig {
    Architecture model;
    // Kind given to an output head (the transformer's lm_head).
    AdapterKind head = AdapterKind::frozen();
    TaskSpec task;
    std::vector<AdapterChoice> adapters;
    TrainConfig train;
    AnalysisConfig analysis;
    std::filesystem::path output_dir = "runs";
    std::vector<std::uint64_t> seeds;
    std::optional<PretrainStage> pretrain;

    /// Throws ConfigError on empty adapters/seeds or a model/task size mismatch.
    void validate() const;
};

/// Strict parse: unknown keys are rejected, errors carry the 1-based source line.
ExperimentConfig parse_experiment_config(const std::string& text);
nlohmann::json to_json(const ExperimentConfig& config);

/// TrainConfig from a partial object; absent keys keep their defaults.
TrainConfig train_config_from_partial_json(const nlohmann::json& j);

struct RunOptions {
    std::optional<std::filesystem::path> output_dir;
    std::optional<std::vector<std::uint64_t>> seeds;
    std::size_t threads = 1;
    bool no_svg = false;
};

struct SummaryRow {
    std::string adapter;
    std::size_t trainable_params = 0;
    double param_fraction = 0.0;
    double mean_metric = 0.0;  // eval MSE for regression, eval accuracy for sequences
    double std_metric = 0.0;
    double mean_r_hat = 0.0;
};

struct RunOutcome {
    std::vector<SummaryRow> rows;
    std::vector<std::string> failures;  // "<adapter>/seed_<s>: message"
    std::filesystem::path output_dir;

    bool ok() const noexcept { return failures.empty(); }
};

/// Directory name for one adapter inside a run, e.g. "lora_8".
std::string cell_dir_name(const AdapterChoice& choice);

/// Trains every (adapter, seed) cell and writes the run directory. Cells that
/// hit a numeric failure leave a `.failed` marker; summary.csv is written only
/// when every cell succeeded.
RunOutcome run_experiment(const ExperimentConfig& config, const std::string& config_text,
                          const RunOptions& options = {});

std::string summary_csv(const std::vector<SummaryRow>& rows);

/// Human-readable per-layer report of an adapter checkpoint.
std::string inspect_checkpoint(std::string_view checkpoint_text);

/// Folds a checkpoint into its base weights and writes a dense weight directory.
void merge_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& base,
                      const std::filesystem::path& out);

/// Rank report between two dense weight directories.
RankReport rank_between(const std::filesystem::path& before, const std::filesystem::path& after,
                        double threshold = kDefaultRankThreshold);

/// Worker count from an explicit flag, else HYPERLAB_THREADS, else 1.
std::size_t resolve_threads(std::optional<std::size_t> flag);

}  // namespace hyperlab
